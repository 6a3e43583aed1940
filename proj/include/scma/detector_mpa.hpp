#ifndef SCMA_DETECTOR_MPA_HPP
#define SCMA_DETECTOR_MPA_HPP

// Message passing detectors (sum-product and max-log) plus exhaustive
// oracles for the joint ML decision and the exact per-user marginals.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "scma/channel.hpp"
#include "scma/codec.hpp"
#include "scma/common.hpp"

namespace scma {

enum class MpaVariant { sum_product, max_log };

struct DetectorConfig {
  int iterations = 4;
  MpaVariant variant = MpaVariant::max_log;
  /// Subtract each message's maximum after every update. Decisions are unchanged.
  bool normalize = true;
  /// Per-user symbol priors; empty means uniform 1/M.
  std::vector<std::vector<double>> prior;

  void validate(const Codebook& cb) const {
    if (iterations < 1) throw ConfigError("iteration count must be at least 1");
    if (prior.empty()) return;
    if (static_cast<int>(prior.size()) != cb.J()) throw ConfigError("prior must have one row per user");
    for (const auto& row : prior) {
      if (static_cast<int>(row.size()) != cb.M()) throw ConfigError("prior rows must have M entries");
      double sum = 0.0;
      for (double p : row) {
        if (!(p > 0.0)) throw ConfigError("prior entries must be positive");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("prior rows must sum to 1");
    }
  }

  /// ln p(x_j = m), flat [j * M + m].
  std::vector<double> log_prior(const Codebook& cb) const {
    std::vector<double> lp(static_cast<std::size_t>(cb.J()) * cb.M(), std::log(1.0 / cb.M()));
    if (!prior.empty()) {
      for (int j = 0; j < cb.J(); ++j) {
        for (int m = 0; m < cb.M(); ++m) lp[static_cast<std::size_t>(j) * cb.M() + m] = std::log(prior[j][m]);
      }
    }
    return lp;
  }
};

/// Per-user scores, flat [j * M + m].
struct Logits {
  int J = 0;
  int M = 0;
  std::vector<double> values;

  Logits() = default;
  Logits(int users, int alphabet) : J(users), M(alphabet), values(static_cast<std::size_t>(users) * alphabet, 0.0) {}

  std::span<double> user(int j) { return {values.data() + static_cast<std::size_t>(j) * M, static_cast<std::size_t>(M)}; }
  std::span<const double> user(int j) const {
    return {values.data() + static_cast<std::size_t>(j) * M, static_cast<std::size_t>(M)};
  }
};

/// Log-domain edge messages. LI[e] is resource k -> user j and LQ[e] is
/// user j -> resource k for edge e = (k, j); both flat [e * M + m].
struct MessageState {
  int M = 0;
  int t = 0;
  std::vector<double> LI;
  std::vector<double> LQ;

  MessageState() = default;
  MessageState(int edges, int alphabet)
      : M(alphabet), LI(static_cast<std::size_t>(edges) * alphabet, 0.0), LQ(static_cast<std::size_t>(edges) * alphabet, 0.0) {}

  std::span<double> li(int e) { return {LI.data() + static_cast<std::size_t>(e) * M, static_cast<std::size_t>(M)}; }
  std::span<double> lq(int e) { return {LQ.data() + static_cast<std::size_t>(e) * M, static_cast<std::size_t>(M)}; }
  std::span<const double> li(int e) const { return {LI.data() + static_cast<std::size_t>(e) * M, static_cast<std::size_t>(M)}; }
  std::span<const double> lq(int e) const { return {LQ.data() + static_cast<std::size_t>(e) * M, static_cast<std::size_t>(M)}; }
};

/// A_k = |y_k - sum_{j in V(k)} h[j][k] x_{j, m_j}[k]|^2, where hypothesis[p]
/// is the symbol of the p-th user of V(k).
inline double compute_ak(cplx y_k, std::span<const int> hypothesis, const Codebook& cb, const ChannelRealization& chan,
                         int k) {
  const auto& g = cb.graph();
  if (k < 0 || k >= g.K) throw ValidationError("resource index " + std::to_string(k) + " out of range");
  const auto& users = g.V[k];
  if (hypothesis.size() != users.size()) {
    throw ValidationError("hypothesis must assign a symbol to each of the " + std::to_string(users.size()) +
                          " users of resource " + std::to_string(k + 1));
  }
  cplx s{};
  for (std::size_t p = 0; p < users.size(); ++p) {
    const int m = hypothesis[p];
    if (m < 0 || m >= cb.M()) throw ValidationError("hypothesis symbol out of range");
    s += chan.gain(users[p], k) * cb.entry(users[p], m, k);
  }
  return std::norm(y_k - s);
}

/// A_k for every hypothesis on every resource, and the scaled channel term
/// A_k / (2 sigma2) consumed by the message updates.
struct ChannelMetrics {
  std::vector<std::vector<double>> residual;  // [k][hypothesis] -> A_k
  std::vector<std::vector<double>> scaled;    // [k][hypothesis] -> A_k / (2 sigma2); empty when sigma2 == 0
};

inline ChannelMetrics channel_metrics(std::span<const cplx> y, const Codebook& cb, const ChannelRealization& chan) {
  const auto& g = cb.graph();
  if (static_cast<int>(y.size()) != g.K) throw ValidationError("received vector must have length K");
  const auto& layout = cb.layout();
  ChannelMetrics out;
  out.residual.resize(g.K);
  const double denom = 2.0 * chan.sigma2();
  if (chan.sigma2() > 0.0) out.scaled.resize(g.K);
  std::vector<int> hyp;
  for (int k = 0; k < g.K; ++k) {
    const int n = layout.hypotheses[k];
    hyp.assign(g.V[k].size(), 0);
    out.residual[k].resize(n);
    for (int h = 0; h < n; ++h) {
      int rem = h;
      for (int p = static_cast<int>(hyp.size()) - 1; p >= 0; --p) {
        hyp[p] = rem % cb.M();
        rem /= cb.M();
      }
      out.residual[k][h] = compute_ak(y[k], hyp, cb, chan, k);
    }
    if (chan.sigma2() > 0.0) {
      out.scaled[k].resize(n);
      for (int h = 0; h < n; ++h) out.scaled[k][h] = out.residual[k][h] / denom;
    }
  }
  return out;
}

namespace detail {

inline void require_noise(const ChannelRealization& chan) {
  if (!(chan.sigma2() > 0.0)) throw ValidationError("message passing needs sigma2 > 0");
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline void subtract_max(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  for (double& x : v) x -= mx;
}

inline std::string edge_name(const Edge& e) {
  return "(resource " + std::to_string(e.k + 1) + ", user " + std::to_string(e.j + 1) + ")";
}

// Shared I-update body. For every symbol m of user j, reduces
// -t(hyp) + sum_i LQ[other_i](sym_i) over the competing combinations with
// either log-sum-exp or max, then adds beta.
template <bool kMax>
void resource_update(const MessageState& state, const ChannelMetrics& metrics, const Codebook& cb,
                     const ChannelRealization& chan, int e, std::span<double> out) {
  const auto& el = cb.layout().edges[e];
  const auto& t = metrics.scaled[el.k];
  const int M = cb.M();
  const std::size_t n_others = el.others.size();
  std::vector<double> terms(static_cast<std::size_t>(el.combos));
  for (int m = 0; m < M; ++m) {
    for (int c = 0; c < el.combos; ++c) {
      double v = -t[el.hypothesis[static_cast<std::size_t>(m) * el.combos + c]];
      for (std::size_t i = 0; i < n_others; ++i) {
        v += state.LQ[static_cast<std::size_t>(el.other_edges[i]) * M + el.other_symbols[c * n_others + i]];
      }
      terms[c] = v;
    }
    const double mx = *std::max_element(terms.begin(), terms.end());
    if constexpr (kMax) {
      out[m] = mx + chan.beta();
    } else {
      double acc = 0.0;
      for (double v : terms) acc += std::exp(v - mx);
      out[m] = mx + std::log(acc) + chan.beta();
    }
  }
}

inline void user_update(const MessageState& state, const Codebook& cb, std::span<const double> log_prior, int e,
                        std::span<double> out) {
  const auto& el = cb.layout().edges[e];
  const int M = cb.M();
  for (int m = 0; m < M; ++m) {
    double v = log_prior[static_cast<std::size_t>(el.j) * M + m];
    for (int e2 : el.sibling_edges) v += state.LI[static_cast<std::size_t>(e2) * M + m];
    out[m] = v;
  }
}

}  // namespace detail

/// Sum-product resource-to-user message on edge (k, j), in the log domain.
inline std::vector<double> sum_product_i(const MessageState& state, const ChannelMetrics& metrics, const Codebook& cb,
                                         const ChannelRealization& chan, int k, int j) {
  detail::require_noise(chan);
  std::vector<double> out(static_cast<std::size_t>(cb.M()));
  detail::resource_update<false>(state, metrics, cb, chan, cb.graph().edge(k, j), out);
  return out;
}

/// Max-log resource-to-user message on edge (k, j). The max runs over the
/// competing users' combinations with x_j held fixed.
inline std::vector<double> maxlog_i(const MessageState& state, const ChannelMetrics& metrics, const Codebook& cb,
                                    const ChannelRealization& chan, int k, int j) {
  detail::require_noise(chan);
  std::vector<double> out(static_cast<std::size_t>(cb.M()));
  detail::resource_update<true>(state, metrics, cb, chan, cb.graph().edge(k, j), out);
  return out;
}

/// User-to-resource message: ln p(x_j) + sum over the other resources of user j.
inline std::vector<double> sum_product_q(const MessageState& state, const Codebook& cb, const DetectorConfig& cfg, int j,
                                         int k) {
  const auto lp = cfg.log_prior(cb);
  std::vector<double> out(static_cast<std::size_t>(cb.M()));
  detail::user_update(state, cb, lp, cb.graph().edge(k, j), out);
  return out;
}

/// Same as sum_product_q: both variants add log messages on the user side.
inline std::vector<double> maxlog_q(const MessageState& state, const Codebook& cb, const DetectorConfig& cfg, int j,
                                    int k) {
  return sum_product_q(state, cb, cfg, j, k);
}

/// Output stage shared with the unfolded network:
/// logit_j(m) = ln p_j(m) + sum_{k in C(j)} LI_{k->j}(m).
inline Logits output_logits(const MessageState& state, const Codebook& cb, std::span<const double> log_prior) {
  const auto& g = cb.graph();
  Logits out(g.J, cb.M());
  for (int j = 0; j < g.J; ++j) {
    auto row = out.user(j);
    for (int m = 0; m < cb.M(); ++m) {
      double v = log_prior[static_cast<std::size_t>(j) * cb.M() + m];
      for (int k : g.C[j]) v += state.LI[static_cast<std::size_t>(g.edge_index[k][j]) * cb.M() + m];
      row[m] = v;
    }
  }
  return out;
}

/// Runs T flooding iterations (all resource updates, then all user updates)
/// starting from LQ = ln p, then applies the output stage.
inline Logits run_mpa(std::span<const cplx> y, const Codebook& cb, const ChannelRealization& chan,
                      const DetectorConfig& cfg, MessageState* final_state = nullptr) {
  cfg.validate(cb);
  detail::require_noise(chan);
  const auto& g = cb.graph();
  const int E = g.num_edges();
  const int M = cb.M();
  const auto metrics = channel_metrics(y, cb, chan);
  const auto lp = cfg.log_prior(cb);

  MessageState state(E, M);
  for (int e = 0; e < E; ++e) {
    for (int m = 0; m < M; ++m) state.LQ[static_cast<std::size_t>(e) * M + m] = lp[static_cast<std::size_t>(g.edges[e].j) * M + m];
  }

  // Resource updates read only LQ and user updates read only LI, so both
  // can be written in place without breaking the flooding schedule.
  for (int it = 1; it <= cfg.iterations; ++it) {
    for (int e = 0; e < E; ++e) {
      auto out = state.li(e);
      if (cfg.variant == MpaVariant::max_log) {
        detail::resource_update<true>(state, metrics, cb, chan, e, out);
      } else {
        detail::resource_update<false>(state, metrics, cb, chan, e, out);
      }
      if (!detail::all_finite(out)) {
        throw NumericError("non-finite resource message on edge " + detail::edge_name(g.edges[e]) + " at iteration " +
                           std::to_string(it));
      }
      if (cfg.normalize) detail::subtract_max(out);
    }
    state.t = it;
    if (it == cfg.iterations) break;
    for (int e = 0; e < E; ++e) {
      auto out = state.lq(e);
      detail::user_update(state, cb, lp, e, out);
      if (!detail::all_finite(out)) {
        throw NumericError("non-finite user message on edge " + detail::edge_name(g.edges[e]) + " at iteration " +
                           std::to_string(it));
      }
      if (cfg.normalize) detail::subtract_max(out);
    }
  }
  auto logits = output_logits(state, cb, lp);
  if (final_state != nullptr) *final_state = std::move(state);
  return logits;
}

/// Per-user argmax; ties go to the lowest symbol index.
inline std::vector<int> decide(const Logits& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.J));
  for (int j = 0; j < logits.J; ++j) {
    const auto row = logits.user(j);
    int best = 0;
    for (int m = 0; m < logits.M; ++m) {
      if (std::isnan(row[m])) throw NumericError("NaN logit for user " + std::to_string(j + 1));
      if (row[m] > row[best]) best = m;
    }
    out[j] = best;
  }
  return out;
}

/// Per-user softmax of a logit table.
inline Logits softmax(const Logits& logits) {
  Logits out = logits;
  for (int j = 0; j < logits.J; ++j) {
    auto row = out.user(j);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  return out;
}

namespace detail {

// Calls fn(labels, hypothesis_per_resource) for every label combination in
// enumeration order (user 0 most significant).
template <typename Fn>
void enumerate_combinations(const Codebook& cb, Fn&& fn) {
  const auto total = combination_count(cb.M(), cb.J(), kEnumerationLimit);
  if (total == 0) throw ConfigError("exhaustive enumeration refused: M^J exceeds the limit 2^24");
  const auto& g = cb.graph();
  std::vector<int> hyp(static_cast<std::size_t>(g.K));
  for (std::uint64_t i = 0; i < total; ++i) {
    const auto labels = labels_from_index(i, cb.J(), cb.M());
    for (int k = 0; k < g.K; ++k) {
      int h = 0;
      for (int u : g.V[k]) h = h * cb.M() + labels[u];
      hyp[k] = h;
    }
    fn(labels, hyp);
  }
}

}  // namespace detail

/// Joint ML decision by exhaustive search: minimizes sum_k A_k. Ties go to
/// the first combination in enumeration order.
inline std::vector<int> ml_oracle(std::span<const cplx> y, const Codebook& cb, const ChannelRealization& chan) {
  const auto metrics = channel_metrics(y, cb, chan);
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> arg;
  detail::enumerate_combinations(cb, [&](const std::vector<int>& labels, const std::vector<int>& hyp) {
    double cost = 0.0;
    for (std::size_t k = 0; k < hyp.size(); ++k) cost += metrics.residual[k][hyp[k]];
    if (cost < best) {
      best = cost;
      arg = labels;
    }
  });
  return arg;
}

/// Exact per-user posterior marginals under the same Gaussian kernel the
/// message updates use: p(X|y) proportional to prod_j p(x_j) exp(-sum_k A_k / (2 sigma2)).
inline Logits exact_marginals(std::span<const cplx> y, const Codebook& cb, const ChannelRealization& chan,
                              const DetectorConfig& cfg = {}) {
  detail::require_noise(chan);
  const auto metrics = channel_metrics(y, cb, chan);
  const auto lp = cfg.log_prior(cb);
  const int M = cb.M();
  std::vector<double> weights;
  std::vector<std::vector<int>> all_labels;
  detail::enumerate_combinations(cb, [&](const std::vector<int>& labels, const std::vector<int>& hyp) {
    double w = 0.0;
    for (std::size_t k = 0; k < hyp.size(); ++k) w -= metrics.scaled[k][hyp[k]];
    for (int j = 0; j < cb.J(); ++j) w += lp[static_cast<std::size_t>(j) * M + labels[j]];
    weights.push_back(w);
    all_labels.push_back(labels);
  });
  const double mx = *std::max_element(weights.begin(), weights.end());
  Logits out(cb.J(), M);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double p = std::exp(weights[i] - mx);
    for (int j = 0; j < cb.J(); ++j) out.values[static_cast<std::size_t>(j) * M + all_labels[i][j]] += p;
  }
  for (int j = 0; j < cb.J(); ++j) {
    auto row = out.user(j);
    double sum = 0.0;
    for (double v : row) sum += v;
    for (double& v : row) v /= sum;
  }
  return out;
}

}  // namespace scma

#endif  // SCMA_DETECTOR_MPA_HPP
