#ifndef SCMA_UNFOLDED_NET_HPP
#define SCMA_UNFOLDED_NET_HPP

// Max-log MPA unfolded into T trainable blocks. Every block is a weighted
// user layer followed by a weighted pooling-concat (max) resource layer; the
// output stage is shared with run_mpa. With every weight equal to 1 the
// network reproduces max-log MPA with T iterations exactly.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scma/channel.hpp"
#include "scma/codec.hpp"
#include "scma/common.hpp"
#include "scma/detector_mpa.hpp"

namespace scma {

/// Offsets of the five parameter groups inside one block.
///
/// Block layout: [wI | c | a | wQ | b]. wI holds dc(k)-1 weights per edge
/// (one per competing user, ascending), wQ holds dv(j)-1 weights per edge (one
/// per other resource of the user, ascending); c, a and b hold one value per
/// edge. Edges follow the graph's canonical order.
struct ParamLayout {
  int edges = 0;
  std::vector<int> wi_offset;  // size edges + 1
  std::vector<int> wq_offset;  // size edges + 1

  ParamLayout() = default;
  explicit ParamLayout(const FactorGraph& g) : edges(g.num_edges()) {
    wi_offset.push_back(0);
    wq_offset.push_back(0);
    for (const auto& [k, j] : g.edges) {
      wi_offset.push_back(wi_offset.back() + g.dc[k] - 1);
      wq_offset.push_back(wq_offset.back() + g.dv[j] - 1);
    }
  }

  int wi_count() const { return wi_offset.back(); }
  int wq_count() const { return wq_offset.back(); }
  int c_begin() const { return wi_count(); }
  int a_begin() const { return c_begin() + edges; }
  int wq_begin() const { return a_begin() + edges; }
  int b_begin() const { return wq_begin() + wq_count(); }
  int block_size() const { return b_begin() + edges; }
};

/// Trainable weights for T blocks, stored flat so the optimizer can treat
/// them as one vector. Gradients use the same type.
class NetworkParams {
 public:
  NetworkParams() = default;
  NetworkParams(const FactorGraph& g, int T, double fill = 0.0)
      : layout_(g), T_(T), values_(static_cast<std::size_t>(T) * ParamLayout(g).block_size(), fill) {
    if (T < 1) throw ConfigError("network needs at least one block");
  }

  int blocks() const { return T_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  /// When set, the beta coefficient a is one value per edge shared by all blocks.
  bool tie_a = false;

  std::span<double> wi(int l, int e) { return {ptr(l, layout_.wi_offset[e]), count(layout_.wi_offset, e)}; }
  std::span<const double> wi(int l, int e) const { return {ptr(l, layout_.wi_offset[e]), count(layout_.wi_offset, e)}; }
  std::span<double> wq(int l, int e) {
    return {ptr(l, layout_.wq_begin() + layout_.wq_offset[e]), count(layout_.wq_offset, e)};
  }
  std::span<const double> wq(int l, int e) const {
    return {ptr(l, layout_.wq_begin() + layout_.wq_offset[e]), count(layout_.wq_offset, e)};
  }
  double& c(int l, int e) { return *ptr(l, layout_.c_begin() + e); }
  double c(int l, int e) const { return *ptr(l, layout_.c_begin() + e); }
  double& a(int l, int e) { return *ptr(l, layout_.a_begin() + e); }
  double a(int l, int e) const { return *ptr(l, layout_.a_begin() + e); }
  double& b(int l, int e) { return *ptr(l, layout_.b_begin() + e); }
  double b(int l, int e) const { return *ptr(l, layout_.b_begin() + e); }

  NetworkParams zeros_like() const {
    NetworkParams z = *this;
    std::fill(z.values_.begin(), z.values_.end(), 0.0);
    return z;
  }

  bool same_shape(const NetworkParams& other) const {
    return T_ == other.T_ && layout_.wi_offset == other.layout_.wi_offset &&
           layout_.wq_offset == other.layout_.wq_offset && values_.size() == other.values_.size();
  }

 private:
  double* ptr(int l, int offset) { return values_.data() + static_cast<std::size_t>(l) * layout_.block_size() + offset; }
  const double* ptr(int l, int offset) const {
    return values_.data() + static_cast<std::size_t>(l) * layout_.block_size() + offset;
  }
  static std::size_t count(const std::vector<int>& offsets, int e) {
    return static_cast<std::size_t>(offsets[e + 1] - offsets[e]);
  }

  ParamLayout layout_;
  int T_ = 0;
  std::vector<double> values_;
};

inline NetworkParams init_all_ones(const FactorGraph& g, int T) { return NetworkParams(g, T, 1.0); }

/// Everything backward needs from one forward pass.
struct Tape {
  int T = 0;
  int M = 0;
  double beta = 0.0;
  std::vector<std::vector<double>> scaled;  // [k][hypothesis] -> A_k / (2 sigma2)
  std::vector<double> log_prior;            // [j * M + m]
  std::vector<std::vector<double>> LQ;      // per block, [e * M + m]
  std::vector<std::vector<double>> LI;      // per block, [e * M + m]
  std::vector<std::vector<int>> winner;     // per block, [e * M + m] -> winning combination
};

/// Weighted user layer of block l:
/// LQ_e(m) = b ln p_j(m) + sum_{k2 in C(j)\k} wQ_{k2} LI_{(k2,j)}(m).
/// An empty `prev_li` stands for the first block, whose placeholder inputs
/// are the zero log message, so the layer reduces to b ln p_j.
inline std::vector<double> q_layer(std::span<const double> prev_li, const NetworkParams& params, int l,
                                   const Codebook& cb, std::span<const double> log_prior) {
  const auto& layout = cb.layout();
  const int M = cb.M();
  const int E = static_cast<int>(layout.edges.size());
  std::vector<double> lq(static_cast<std::size_t>(E) * M);
  for (int e = 0; e < E; ++e) {
    const auto& el = layout.edges[e];
    const auto w = params.wq(l, e);
    const double b = params.b(l, e);
    for (int m = 0; m < M; ++m) {
      double v = b * log_prior[static_cast<std::size_t>(el.j) * M + m];
      if (!prev_li.empty()) {
        for (std::size_t i = 0; i < el.sibling_edges.size(); ++i) {
          v += w[i] * prev_li[static_cast<std::size_t>(el.sibling_edges[i]) * M + m];
        }
      }
      lq[static_cast<std::size_t>(e) * M + m] = v;
    }
  }
  return lq;
}

/// Weighted pooling-concat layer of block l:
/// LI_e(m) = max_c [ -c_e A_k/(2 sigma2) + sum_i wI_i LQ_{(k,j_i)}(m_i) ] + a_e beta.
/// The winning combination (first maximum in lexicographic order) is written
/// to `winners` when it is non-empty.
inline std::vector<double> pooling_concat_layer(std::span<const double> lq, const ChannelMetrics& metrics,
                                                const NetworkParams& params, int l, const Codebook& cb,
                                                const ChannelRealization& chan, std::span<int> winners = {}) {
  const auto& layout = cb.layout();
  const int M = cb.M();
  const int E = static_cast<int>(layout.edges.size());
  std::vector<double> li(static_cast<std::size_t>(E) * M);
  for (int e = 0; e < E; ++e) {
    const auto& el = layout.edges[e];
    const auto& t = metrics.scaled[el.k];
    const auto w = params.wi(l, e);
    const double c = params.c(l, e);
    const std::size_t n_others = el.others.size();
    for (int m = 0; m < M; ++m) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int cmb = 0; cmb < el.combos; ++cmb) {
        double v = -(c * t[el.hypothesis[static_cast<std::size_t>(m) * el.combos + cmb]]);
        for (std::size_t i = 0; i < n_others; ++i) {
          v += w[i] * lq[static_cast<std::size_t>(el.other_edges[i]) * M + el.other_symbols[cmb * n_others + i]];
        }
        if (v > best) {
          best = v;
          arg = cmb;
        }
      }
      const double out = best + params.a(l, e) * chan.beta();
      if (!std::isfinite(out)) {
        throw NumericError("non-finite pooling output on edge " + detail::edge_name(cb.graph().edges[e]) +
                           " in block " + std::to_string(l + 1));
      }
      li[static_cast<std::size_t>(e) * M + m] = out;
      if (!winners.empty()) winners[static_cast<std::size_t>(e) * M + m] = arg;
    }
  }
  return li;
}

struct ForwardResult {
  Logits logits;
  Tape tape;
};

inline void check_structure(const NetworkParams& params, const Codebook& cb) {
  const ParamLayout expected(cb.graph());
  if (params.layout().wi_offset != expected.wi_offset || params.layout().wq_offset != expected.wq_offset) {
    throw ValidationError("network parameters do not match the codebook's factor graph");
  }
}

inline ForwardResult forward(std::span<const cplx> y, const Codebook& cb, const ChannelRealization& chan,
                             const NetworkParams& params, const DetectorConfig& cfg = {}) {
  check_structure(params, cb);
  detail::require_noise(chan);
  const int T = params.blocks();
  const int M = cb.M();
  const int E = cb.graph().num_edges();
  ForwardResult r;
  auto& tape = r.tape;
  tape.T = T;
  tape.M = M;
  tape.beta = chan.beta();
  tape.scaled = channel_metrics(y, cb, chan).scaled;
  tape.log_prior = cfg.log_prior(cb);
  ChannelMetrics metrics;
  metrics.scaled = tape.scaled;
  tape.LQ.resize(T);
  tape.LI.resize(T);
  tape.winner.assign(T, std::vector<int>(static_cast<std::size_t>(E) * M));
  for (int l = 0; l < T; ++l) {
    const std::span<const double> prev = l == 0 ? std::span<const double>{} : std::span<const double>(tape.LI[l - 1]);
    tape.LQ[l] = q_layer(prev, params, l, cb, tape.log_prior);
    tape.LI[l] = pooling_concat_layer(tape.LQ[l], metrics, params, l, cb, chan, tape.winner[l]);
  }
  MessageState final_state(E, M);
  final_state.LI = tape.LI.back();
  r.logits = output_logits(final_state, cb, tape.log_prior);
  return r;
}

/// Checkpoint document: T, F, tie_a and the five groups as flat arrays,
/// block-major, canonical edge order inside each block.
inline nlohmann::json checkpoint_json(const NetworkParams& params, const FactorGraph& g) {
  nlohmann::json doc;
  doc["T"] = params.blocks();
  doc["F"] = g.F;
  doc["tie_a"] = params.tie_a;
  std::vector<double> wi, c, a, wq, b;
  for (int l = 0; l < params.blocks(); ++l) {
    for (int e = 0; e < g.num_edges(); ++e) {
      for (double v : params.wi(l, e)) wi.push_back(v);
      c.push_back(params.c(l, e));
      a.push_back(params.a(l, e));
      for (double v : params.wq(l, e)) wq.push_back(v);
      b.push_back(params.b(l, e));
    }
  }
  doc["wI"] = wi;
  doc["c"] = c;
  doc["a"] = a;
  doc["wQ"] = wq;
  doc["b"] = b;
  return doc;
}

inline NetworkParams params_from_json(const nlohmann::json& doc, const FactorGraph& g) {
  static const char* const kKeys[] = {"T", "F", "tie_a", "wI", "c", "a", "wQ", "b"};
  if (!doc.is_object()) throw ValidationError("checkpoint must be a JSON object");
  for (const auto& item : doc.items()) {
    bool known = false;
    for (const char* key : kKeys) known = known || item.key() == key;
    if (!known) throw ValidationError("checkpoint has unknown key '" + item.key() + "'");
  }
  for (const char* key : kKeys) {
    if (key != std::string("tie_a") && !doc.contains(key)) {
      throw ValidationError(std::string("checkpoint is missing key '") + key + "'");
    }
  }
  if (!doc["T"].is_number_integer() || doc["T"].get<int>() < 1) throw ValidationError("checkpoint T must be >= 1");
  IndicatorMatrix F;
  try {
    F = doc["F"].get<IndicatorMatrix>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("checkpoint F is not an integer matrix");
  }
  if (F != g.F) throw ValidationError("checkpoint structure mismatch: indicator matrix differs from the codebook's");
  NetworkParams params(g, doc["T"].get<int>());
  params.tie_a = doc.value("tie_a", false);
  const int T = params.blocks();
  const auto& layout = params.layout();
  auto read = [&](const char* key, std::size_t expected) {
    std::vector<double> v;
    try {
      v = doc[key].get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(std::string("checkpoint array '") + key + "' is not numeric");
    }
    if (v.size() != expected) {
      throw ValidationError(std::string("checkpoint structure mismatch: '") + key + "' has " + std::to_string(v.size()) +
                            " values, expected " + std::to_string(expected));
    }
    return v;
  };
  const auto E = static_cast<std::size_t>(layout.edges);
  const auto wi = read("wI", static_cast<std::size_t>(T) * layout.wi_count());
  const auto c = read("c", T * E);
  const auto a = read("a", T * E);
  const auto wq = read("wQ", static_cast<std::size_t>(T) * layout.wq_count());
  const auto b = read("b", T * E);
  std::size_t iwi = 0, iwq = 0, ie = 0;
  for (int l = 0; l < T; ++l) {
    for (int e = 0; e < layout.edges; ++e, ++ie) {
      for (double& v : params.wi(l, e)) v = wi[iwi++];
      for (double& v : params.wq(l, e)) v = wq[iwq++];
      params.c(l, e) = c[ie];
      params.a(l, e) = a[ie];
      params.b(l, e) = b[ie];
    }
  }
  return params;
}

inline void save_checkpoint(const NetworkParams& params, const FactorGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path);
  out << checkpoint_json(params, g).dump(1) << '\n';
  if (!out) throw Error("failed writing checkpoint " + path);
}

inline NetworkParams load_checkpoint(const std::string& path, const FactorGraph& g) {
  std::ifstream in(path);
  if (!in) throw ValidationError("file not found: " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("parse error in " + path + ": " + e.what());
  }
  return params_from_json(doc, g);
}

}  // namespace scma

#endif  // SCMA_UNFOLDED_NET_HPP
