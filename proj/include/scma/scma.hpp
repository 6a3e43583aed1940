#ifndef SCMA_SCMA_HPP
#define SCMA_SCMA_HPP

#include "scma/channel.hpp"
#include "scma/codec.hpp"
#include "scma/common.hpp"
#include "scma/detector_mpa.hpp"
#include "scma/eval.hpp"
#include "scma/parallel.hpp"
#include "scma/training.hpp"
#include "scma/unfolded_net.hpp"

#endif  // SCMA_SCMA_HPP
