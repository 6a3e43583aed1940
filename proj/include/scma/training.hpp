#ifndef SCMA_TRAINING_HPP
#define SCMA_TRAINING_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "scma/channel.hpp"
#include "scma/codec.hpp"
#include "scma/common.hpp"
#include "scma/detector_mpa.hpp"
#include "scma/parallel.hpp"
#include "scma/unfolded_net.hpp"

namespace scma {

/// Softmax cross-entropy summed over users: sum_j -log softmax(logit_j)[label_j].
inline double loss(const Logits& logits, std::span<const int> labels) {
  if (static_cast<int>(labels.size()) != logits.J) throw ValidationError("one label per user required");
  double total = 0.0;
  for (int j = 0; j < logits.J; ++j) {
    const auto row = logits.user(j);
    const int label = labels[j];
    if (label < 0 || label >= logits.M) throw ValidationError("label out of range");
    for (double v : row) {
      if (std::isnan(v)) throw NumericError("NaN logit for user " + std::to_string(j + 1));
    }
    const double mx = *std::max_element(row.begin(), row.end());
    if (row[label] == mx) {
      // log1p keeps precision when the true class dominates.
      double rest = 0.0;
      for (int m = 0; m < logits.M; ++m) {
        if (m != label) rest += std::exp(row[m] - row[label]);
      }
      total += std::log1p(rest);
    } else {
      double acc = 0.0;
      for (double v : row) acc += std::exp(v - mx);
      total += mx + std::log(acc) - row[label];
    }
  }
  return total;
}

/// Adds scale * d(loss)/d(params) for one sample to `grad`. At every max node
/// the gradient goes only to the combination recorded on the tape.
inline void accumulate_gradient(const Tape& tape, std::span<const int> labels, const NetworkParams& params,
                                const Codebook& cb, double scale, NetworkParams& grad) {
  const auto& layout = cb.layout();
  const int M = cb.M();
  const int E = static_cast<int>(layout.edges.size());
  if (static_cast<int>(labels.size()) != cb.J()) throw ValidationError("tape/label mismatch: one label per user required");
  if (tape.T != params.blocks() || static_cast<int>(tape.LI.size()) != tape.T || !grad.same_shape(params)) {
    throw ValidationError("tape/parameter shape mismatch");
  }

  // Output stage: logit_j = ln p_j + sum_{k in C(j)} LI_{(k,j)}.
  MessageState final_state(E, M);
  final_state.LI = tape.LI.back();
  const auto probs = softmax(output_logits(final_state, cb, tape.log_prior));
  std::vector<double> d_logit(probs.values.size());
  for (int j = 0; j < cb.J(); ++j) {
    for (int m = 0; m < M; ++m) {
      const auto idx = static_cast<std::size_t>(j) * M + m;
      d_logit[idx] = scale * (probs.values[idx] - (m == labels[j] ? 1.0 : 0.0));
    }
  }
  std::vector<double> d_li(static_cast<std::size_t>(E) * M);
  for (int e = 0; e < E; ++e) {
    for (int m = 0; m < M; ++m) d_li[static_cast<std::size_t>(e) * M + m] = d_logit[static_cast<std::size_t>(layout.edges[e].j) * M + m];
  }

  std::vector<double> d_lq(static_cast<std::size_t>(E) * M);
  for (int l = tape.T - 1; l >= 0; --l) {
    // Pooling-concat layer.
    std::fill(d_lq.begin(), d_lq.end(), 0.0);
    const auto& lq = tape.LQ[l];
    const auto& win = tape.winner[l];
    for (int e = 0; e < E; ++e) {
      const auto& el = layout.edges[e];
      const auto& t = tape.scaled[el.k];
      const auto w = params.wi(l, e);
      auto gw = grad.wi(l, e);
      const std::size_t n_others = el.others.size();
      for (int m = 0; m < M; ++m) {
        const double g = d_li[static_cast<std::size_t>(e) * M + m];
        if (g == 0.0) continue;
        const int cmb = win[static_cast<std::size_t>(e) * M + m];
        grad.a(l, e) += g * tape.beta;
        grad.c(l, e) -= g * t[el.hypothesis[static_cast<std::size_t>(m) * el.combos + cmb]];
        for (std::size_t i = 0; i < n_others; ++i) {
          const auto src = static_cast<std::size_t>(el.other_edges[i]) * M + el.other_symbols[cmb * n_others + i];
          gw[i] += g * lq[src];
          d_lq[src] += g * w[i];
        }
      }
    }
    // User layer. The first block's LI inputs are the zero placeholders, so
    // its wQ receive no gradient and nothing propagates further.
    std::fill(d_li.begin(), d_li.end(), 0.0);
    for (int e = 0; e < E; ++e) {
      const auto& el = layout.edges[e];
      const auto w = params.wq(l, e);
      auto gw = grad.wq(l, e);
      for (int m = 0; m < M; ++m) {
        const double g = d_lq[static_cast<std::size_t>(e) * M + m];
        if (g == 0.0) continue;
        grad.b(l, e) += g * tape.log_prior[static_cast<std::size_t>(el.j) * M + m];
        if (l == 0) continue;
        const auto& prev = tape.LI[l - 1];
        for (std::size_t i = 0; i < el.sibling_edges.size(); ++i) {
          const auto src = static_cast<std::size_t>(el.sibling_edges[i]) * M + m;
          gw[i] += g * prev[src];
          d_li[src] += g * w[i];
        }
      }
    }
  }
}

/// Gradient of loss(forward(...).logits, labels) with respect to params.
inline NetworkParams backward(const Tape& tape, std::span<const int> labels, const NetworkParams& params,
                              const Codebook& cb) {
  auto grad = params.zeros_like();
  accumulate_gradient(tape, labels, params, cb, 1.0, grad);
  return grad;
}

/// Sums the per-block gradients of a into every block so tied copies stay equal.
inline void tie_a_gradient(NetworkParams& grad) {
  const int E = grad.layout().edges;
  for (int e = 0; e < E; ++e) {
    double sum = 0.0;
    for (int l = 0; l < grad.blocks(); ++l) sum += grad.a(l, e);
    for (int l = 0; l < grad.blocks(); ++l) grad.a(l, e) = sum;
  }
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  AdamState() = default;
  explicit AdamState(const NetworkParams& params) : m(params.size(), 0.0), v(params.size(), 0.0) {}
};

inline void adam_step(NetworkParams& params, const NetworkParams& grad, AdamState& state, double lr,
                      const AdamHyper& hyper = {}) {
  if (!grad.same_shape(params) || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ValidationError("Adam shape mismatch between parameters, gradient and moments");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  auto& p = params.values();
  const auto& g = grad.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    p[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
  }
}

struct TrainConfig {
  int blocks = 4;
  double lr = 0.001;
  int steps = 2000;
  double train_snr_db = 16.0;
  std::uint64_t seed = 1;
  AdamHyper adam;
  bool tie_a_across_blocks = false;
  int workers = 1;

  void validate() const {
    if (blocks < 1) throw ConfigError("blocks must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
  }
};

/// Samples per gradient chunk. Chunks are reduced in index order, so the
/// summed gradient is bit-identical for any worker count.
inline constexpr std::size_t kTrainChunk = 256;

struct BatchEvaluation {
  double mean_loss = 0.0;
  NetworkParams grad;  // batch-mean gradient
};

/// Forward/backward over the full exhaustive batch for one training step.
/// Noise for chunk c comes from substream(seed, {step, c}).
inline BatchEvaluation evaluate_exhaustive_batch(const Codebook& cb, const ChannelRealization& chan,
                                                 const NetworkParams& params, std::uint64_t seed, std::uint64_t step,
                                                 int workers, bool want_grad = true) {
  const auto total = combination_count(cb.M(), cb.J(), kEnumerationLimit);
  if (total == 0) throw ConfigError("exhaustive batch refused: M^J exceeds the enumeration limit 2^24");
  const std::size_t chunks = (total + kTrainChunk - 1) / kTrainChunk;
  const double scale = 1.0 / static_cast<double>(total);
  std::vector<double> chunk_loss(chunks, 0.0);
  std::vector<NetworkParams> chunk_grad(want_grad ? chunks : 0);
  parallel_for(chunks, workers, [&](std::size_t c) {
    Rng rng = substream(seed, {step, c});
    if (want_grad) chunk_grad[c] = params.zeros_like();
    const std::uint64_t begin = c * kTrainChunk;
    const std::uint64_t end = std::min<std::uint64_t>(total, begin + kTrainChunk);
    for (std::uint64_t i = begin; i < end; ++i) {
      const auto sample = make_sample(cb, chan, labels_from_index(i, cb.J(), cb.M()), rng);
      auto report = [&](const std::string& what) {
        std::ostringstream os;
        os.precision(17);
        os << what << " at step " << step << ", sample " << i << " (labels";
        for (int v : sample.labels) os << ' ' << v;
        os << "; y";
        for (const auto& z : sample.y) os << ' ' << z;
        os << ')';
        return NumericError(os.str());
      };
      ForwardResult fr;
      double l = 0.0;
      try {
        fr = forward(sample.y, cb, chan, params);
        l = loss(fr.logits, sample.labels);
      } catch (const NumericError& e) {
        throw report(e.what());
      }
      if (!std::isfinite(l)) throw report("non-finite loss");
      chunk_loss[c] += l;
      if (want_grad) accumulate_gradient(fr.tape, sample.labels, params, cb, scale, chunk_grad[c]);
    }
  });
  BatchEvaluation out;
  double sum = 0.0;
  for (double l : chunk_loss) sum += l;
  out.mean_loss = sum * scale;
  if (want_grad) {
    out.grad = params.zeros_like();
    for (const auto& g : chunk_grad) {
      for (std::size_t i = 0; i < g.size(); ++i) out.grad.values()[i] += g.values()[i];
    }
  }
  return out;
}

struct TrainResult {
  NetworkParams params;
  std::vector<double> loss_history;  // batch-mean loss at each step, before its update
  std::vector<double> wall_ms;       // cumulative wall time after each step
};

/// Full-batch training from the all-ones initialization. Every step sees all
/// M^J label combinations with fresh noise at the training SNR.
inline TrainResult train(const Codebook& cb, const TrainConfig& cfg,
                         const std::function<void(int, double, const NetworkParams&)>& on_step = {}) {
  cfg.validate();
  ChannelRealization chan(cb.J(), cb.K(), snr_to_sigma2(cfg.train_snr_db, cb));
  TrainResult r;
  r.params = init_all_ones(cb.graph(), cfg.blocks);
  r.params.tie_a = cfg.tie_a_across_blocks;
  AdamState adam(r.params);
  const auto t0 = std::chrono::steady_clock::now();
  for (int s = 0; s < cfg.steps; ++s) {
    auto batch = evaluate_exhaustive_batch(cb, chan, r.params, cfg.seed, static_cast<std::uint64_t>(s), cfg.workers);
    if (cfg.tie_a_across_blocks) tie_a_gradient(batch.grad);
    adam_step(r.params, batch.grad, adam, cfg.lr, cfg.adam);
    r.loss_history.push_back(batch.mean_loss);
    r.wall_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    if (on_step) on_step(s, batch.mean_loss, r.params);
  }
  return r;
}

struct GradcheckConfig {
  int probes = 50;
  double h = 1e-5;
  /// Routes are compared at +-tie_radius to detect probes sitting on a max tie.
  double tie_radius = 1e-5;
  /// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor)
  double tolerance = 1e-4;
  double abs_floor = 1e-6;
  int max_attempts_per_probe = 20;
};

struct GradcheckProbe {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckResult {
  std::vector<GradcheckProbe> probes;
  int ties_skipped = 0;
  double worst = 0.0;
  bool passed = false;
};

/// Compares accumulate_gradient against central differences of the batch-mean
/// loss on randomly chosen parameters. Probes whose +-tie_radius perturbation
/// changes any max route are resampled; failing to gather enough clean probes
/// counts as a failure.
inline GradcheckResult gradient_check(const Codebook& cb, const ChannelRealization& chan, const NetworkParams& params,
                                      const std::vector<LabeledSample>& batch, const GradcheckConfig& cfg, Rng& rng) {
  if (cfg.probes < 1) throw ConfigError("gradcheck needs at least one probe");
  if (batch.empty()) throw ConfigError("gradcheck needs a non-empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());

  auto batch_loss = [&](const NetworkParams& p, std::vector<std::vector<int>>* routes) {
    double sum = 0.0;
    if (routes != nullptr) routes->clear();
    for (const auto& s : batch) {
      const auto fr = forward(s.y, cb, chan, p);
      sum += loss(fr.logits, s.labels);
      if (routes != nullptr) {
        for (const auto& w : fr.tape.winner) routes->push_back(w);
      }
    }
    return sum * scale;
  };

  auto grad = params.zeros_like();
  std::vector<std::vector<int>> base_routes;
  for (const auto& s : batch) {
    const auto fr = forward(s.y, cb, chan, params);
    accumulate_gradient(fr.tape, s.labels, params, cb, scale, grad);
    for (const auto& w : fr.tape.winner) base_routes.push_back(w);
  }

  GradcheckResult result;
  std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
  const int max_attempts = cfg.probes * cfg.max_attempts_per_probe;
  int attempts = 0;
  std::vector<std::vector<int>> routes;
  while (static_cast<int>(result.probes.size()) < cfg.probes && attempts < max_attempts) {
    ++attempts;
    const std::size_t idx = pick(rng);
    NetworkParams p = params;
    bool tie = false;
    for (double sign : {1.0, -1.0}) {
      p.values()[idx] = params.values()[idx] + sign * cfg.tie_radius;
      batch_loss(p, &routes);
      tie = tie || routes != base_routes;
    }
    if (tie) {
      ++result.ties_skipped;
      continue;
    }
    p.values()[idx] = params.values()[idx] + cfg.h;
    const double up = batch_loss(p, nullptr);
    p.values()[idx] = params.values()[idx] - cfg.h;
    const double down = batch_loss(p, nullptr);
    GradcheckProbe probe;
    probe.index = idx;
    probe.analytic = grad.values()[idx];
    probe.numeric = (up - down) / (2.0 * cfg.h);
    const double denom = std::max({std::abs(probe.analytic), std::abs(probe.numeric), cfg.abs_floor});
    probe.rel_error = std::abs(probe.analytic - probe.numeric) / denom;
    result.worst = std::max(result.worst, probe.rel_error);
    result.probes.push_back(probe);
  }
  result.passed = static_cast<int>(result.probes.size()) == cfg.probes && result.worst < cfg.tolerance;
  return result;
}

/// Gradient check at a generic operating point: weights 1 + U(-0.5, 0.5),
/// `batch_size` random samples at `snr_db`. Everything derives from `seed`.
inline GradcheckResult run_gradcheck(const Codebook& cb, int blocks, const GradcheckConfig& cfg, std::uint64_t seed,
                                     double snr_db = 10.0, std::size_t batch_size = 16) {
  if (blocks < 1) throw ConfigError("blocks must be >= 1");
  Rng rng = substream(seed, {0x67726164ULL});
  auto params = init_all_ones(cb.graph(), blocks);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  for (double& v : params.values()) v += jitter(rng);
  const ChannelRealization chan(cb.J(), cb.K(), snr_to_sigma2(snr_db, cb));
  const auto batch = generate_batch(cb, chan, BatchMode::random, batch_size, rng);
  return gradient_check(cb, chan, params, batch, cfg, rng);
}

}  // namespace scma

#endif  // SCMA_TRAINING_HPP
