#ifndef SCMA_CHANNEL_HPP
#define SCMA_CHANNEL_HPP

// Superposition channel y = sum_j diag(h_j) x_j + n with complex AWGN.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scma/codec.hpp"
#include "scma/common.hpp"

namespace scma {

/// Per-(user, resource) complex gains plus the noise level.
///
/// sigma2 is the total complex noise variance per resource (sigma2/2 per real
/// dimension). beta = ln(1/sqrt(2 pi sigma2)) is the likelihood offset added to
/// every resource-to-user message.
class ChannelRealization {
 public:
  ChannelRealization(int J, int K, double sigma2) : J_(J), K_(K), gains_(static_cast<std::size_t>(J) * K, cplx{1.0, 0.0}) {
    set_sigma2(sigma2);
  }

  ChannelRealization(int J, int K, std::vector<cplx> gains, double sigma2) : J_(J), K_(K), gains_(std::move(gains)) {
    if (gains_.size() != static_cast<std::size_t>(J) * K) throw ValidationError("channel gain matrix must be J x K");
    set_sigma2(sigma2);
  }

  int J() const { return J_; }
  int K() const { return K_; }
  double sigma2() const { return sigma2_; }
  double beta() const { return beta_; }

  cplx gain(int j, int k) const { return gains_[static_cast<std::size_t>(j) * K_ + k]; }
  void set_gain(int j, int k, cplx h) { gains_[static_cast<std::size_t>(j) * K_ + k] = h; }

  void set_sigma2(double sigma2) {
    if (!(sigma2 >= 0.0)) throw ValidationError("noise variance must be non-negative");
    sigma2_ = sigma2;
    beta_ = std::log(1.0 / std::sqrt(2.0 * std::numbers::pi * sigma2_));
  }

 private:
  int J_;
  int K_;
  std::vector<cplx> gains_;
  double sigma2_ = 0.0;
  double beta_ = 0.0;
};

/// Average received signal power per resource under unit gains:
/// sum_j (1/M) sum_m ||x_{j,m}||^2 / K.
inline double signal_power(const Codebook& cb) {
  double p = 0.0;
  for (int j = 0; j < cb.J(); ++j) p += cb.user_energy(j);
  return p / cb.K();
}

inline double snr_to_sigma2(double snr_db, const Codebook& cb) {
  return signal_power(cb) / std::pow(10.0, snr_db / 10.0);
}

/// Noiseless superposition y0[k] = sum_j h[j][k] x_j[k].
inline std::vector<cplx> superpose(std::span<const std::span<const cplx>> codewords, const ChannelRealization& chan) {
  if (static_cast<int>(codewords.size()) != chan.J()) {
    throw ValidationError("dimension mismatch: " + std::to_string(codewords.size()) + " codewords for " +
                          std::to_string(chan.J()) + " users");
  }
  std::vector<cplx> y(static_cast<std::size_t>(chan.K()), cplx{});
  for (int j = 0; j < chan.J(); ++j) {
    if (static_cast<int>(codewords[j].size()) != chan.K()) {
      throw ValidationError("dimension mismatch: codeword of user " + std::to_string(j + 1) + " has length " +
                            std::to_string(codewords[j].size()));
    }
    for (int k = 0; k < chan.K(); ++k) y[k] += chan.gain(j, k) * codewords[j][k];
  }
  return y;
}

/// Noiseless received vector for a full label assignment.
inline std::vector<cplx> transmit(const Codebook& cb, std::span<const int> labels, const ChannelRealization& chan) {
  if (static_cast<int>(labels.size()) != cb.J()) throw ValidationError("label vector must have one entry per user");
  std::vector<std::span<const cplx>> words;
  words.reserve(labels.size());
  for (int j = 0; j < cb.J(); ++j) words.push_back(encode(cb, j, labels[j]));
  return superpose(words, chan);
}

/// Circularly-symmetric complex Gaussian vector with total variance sigma2 per entry.
inline std::vector<cplx> awgn_vector(int K, double sigma2, Rng& rng) {
  if (!(sigma2 >= 0.0)) throw ValidationError("noise variance must be non-negative");
  std::vector<cplx> n(static_cast<std::size_t>(K), cplx{});
  if (sigma2 == 0.0) return n;
  std::normal_distribution<double> gauss(0.0, std::sqrt(sigma2 / 2.0));
  for (auto& z : n) {
    const double re = gauss(rng);
    const double im = gauss(rng);
    z = {re, im};
  }
  return n;
}

/// Labels for enumeration index `index`; user 0 is the most significant digit.
inline std::vector<int> labels_from_index(std::uint64_t index, int J, int M) {
  std::vector<int> labels(static_cast<std::size_t>(J));
  for (int j = J - 1; j >= 0; --j) {
    labels[j] = static_cast<int>(index % static_cast<std::uint64_t>(M));
    index /= static_cast<std::uint64_t>(M);
  }
  return labels;
}

struct LabeledSample {
  std::vector<int> labels;
  std::vector<cplx> y;
  const ChannelRealization* chan = nullptr;
};

enum class BatchMode { exhaustive, random };

/// One received sample: transmit `labels` and add fresh noise from `rng`.
inline LabeledSample make_sample(const Codebook& cb, const ChannelRealization& chan, std::vector<int> labels, Rng& rng) {
  LabeledSample s;
  s.y = transmit(cb, labels, chan);
  const auto noise = awgn_vector(cb.K(), chan.sigma2(), rng);
  for (int k = 0; k < cb.K(); ++k) s.y[k] += noise[k];
  s.labels = std::move(labels);
  s.chan = &chan;
  return s;
}

inline std::vector<int> random_labels(int J, int M, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, M - 1);
  std::vector<int> labels(static_cast<std::size_t>(J));
  for (auto& l : labels) l = pick(rng);
  return labels;
}

/// Exhaustive mode enumerates every label combination once (size must equal
/// M^J); random mode draws `size` i.i.d. uniform label vectors. Every sample
/// gets fresh noise.
inline std::vector<LabeledSample> generate_batch(const Codebook& cb, const ChannelRealization& chan, BatchMode mode,
                                                 std::size_t size, Rng& rng) {
  std::vector<LabeledSample> batch;
  if (mode == BatchMode::exhaustive) {
    const auto total = combination_count(cb.M(), cb.J(), kEnumerationLimit);
    if (total == 0) throw ConfigError("exhaustive batch refused: M^J exceeds the enumeration limit 2^24");
    if (size != total) {
      throw ConfigError("exhaustive batch size must equal M^J = " + std::to_string(total));
    }
    batch.reserve(size);
    for (std::uint64_t i = 0; i < total; ++i) batch.push_back(make_sample(cb, chan, labels_from_index(i, cb.J(), cb.M()), rng));
    return batch;
  }
  batch.reserve(size);
  for (std::size_t i = 0; i < size; ++i) batch.push_back(make_sample(cb, chan, random_labels(cb.J(), cb.M(), rng), rng));
  return batch;
}

}  // namespace scma

#endif  // SCMA_CHANNEL_HPP
