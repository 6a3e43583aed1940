#ifndef SCMA_CODEC_HPP
#define SCMA_CODEC_HPP

// Codebook and factor-graph data model.
//
// Users and resources are 0-indexed throughout the API. Reports and error
// messages print them 1-indexed. The codebook file addresses them by array
// position.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "scma/common.hpp"

namespace scma {

using IndicatorMatrix = std::vector<std::vector<int>>;

struct Edge {
  int k;  // resource
  int j;  // user
};

/// Bipartite resource/user graph induced by a K x J indicator matrix.
///
/// Edges are numbered in canonical order: row-major over resources, users
/// ascending within a resource. Messages and trainable parameters are stored
/// per edge in this order.
struct FactorGraph {
  int K = 0;
  int J = 0;
  IndicatorMatrix F;
  std::vector<std::vector<int>> V;  // users on resource k, ascending
  std::vector<std::vector<int>> C;  // resources of user j, ascending
  std::vector<int> dc;              // |V(k)|
  std::vector<int> dv;              // |C(j)|
  std::vector<Edge> edges;
  std::vector<std::vector<int>> edge_index;  // [k][j] -> edge id, -1 if absent

  int num_edges() const { return static_cast<int>(edges.size()); }

  int edge(int k, int j) const {
    if (k < 0 || k >= K || j < 0 || j >= J || edge_index[k][j] < 0) {
      throw ValidationError("no factor-graph edge between resource " + std::to_string(k + 1) + " and user " +
                            std::to_string(j + 1));
    }
    return edge_index[k][j];
  }

  bool operator==(const FactorGraph& other) const { return F == other.F; }
};

inline FactorGraph build_factor_graph(const IndicatorMatrix& F) {
  if (F.empty() || F.front().empty()) throw ValidationError("indicator matrix is empty");
  FactorGraph g;
  g.K = static_cast<int>(F.size());
  g.J = static_cast<int>(F.front().size());
  for (int k = 0; k < g.K; ++k) {
    if (static_cast<int>(F[k].size()) != g.J) {
      throw ValidationError("indicator matrix row " + std::to_string(k + 1) + " has " + std::to_string(F[k].size()) +
                            " entries, expected " + std::to_string(g.J));
    }
    for (int j = 0; j < g.J; ++j) {
      if (F[k][j] != 0 && F[k][j] != 1) {
        throw ValidationError("indicator matrix entry (" + std::to_string(k + 1) + "," + std::to_string(j + 1) +
                              ") is not binary");
      }
    }
  }
  g.F = F;
  g.V.assign(g.K, {});
  g.C.assign(g.J, {});
  g.edge_index.assign(g.K, std::vector<int>(g.J, -1));
  for (int k = 0; k < g.K; ++k) {
    for (int j = 0; j < g.J; ++j) {
      if (F[k][j] == 1) {
        g.edge_index[k][j] = static_cast<int>(g.edges.size());
        g.edges.push_back({k, j});
        g.V[k].push_back(j);
        g.C[j].push_back(k);
      }
    }
  }
  for (int k = 0; k < g.K; ++k) {
    if (g.V[k].empty()) throw ValidationError("structural: resource " + std::to_string(k + 1) + " has no users");
    g.dc.push_back(static_cast<int>(g.V[k].size()));
  }
  for (int j = 0; j < g.J; ++j) {
    if (g.C[j].empty()) throw ValidationError("structural: user " + std::to_string(j + 1) + " occupies no resource");
    g.dv.push_back(static_cast<int>(g.C[j].size()));
  }
  return g;
}

/// Enumeration tables for the per-resource hypotheses used by every detector.
///
/// A hypothesis on resource k assigns a symbol to each user of V(k). It is
/// indexed mixed-radix with the first user of V(k) most significant. For an
/// edge (k, j) the competing users are V(k)\j; a "combination" is an
/// assignment to them, indexed the same way, so combination 0 is the
/// lexicographically smallest.
struct EdgeLayout {
  int k = 0;
  int j = 0;
  int position = 0;                  // index of j inside V(k)
  std::vector<int> others;           // V(k)\j
  std::vector<int> other_edges;      // edge ids of (k, j2), j2 in others
  std::vector<int> sibling_edges;    // edge ids of (k2, j), k2 in C(j)\k
  int combos = 1;                    // M^(dc-1)
  std::vector<int> hypothesis;       // [m * combos + c] -> hypothesis index on resource k
  std::vector<int> other_symbols;    // [c * others.size() + i] -> symbol of others[i]
};

struct MessageLayout {
  int M = 0;
  std::vector<int> hypotheses;       // per resource: M^dc
  std::vector<EdgeLayout> edges;

  MessageLayout() = default;

  MessageLayout(const FactorGraph& g, int alphabet) : M(alphabet) {
    for (int k = 0; k < g.K; ++k) {
      const auto n = combination_count(M, g.dc[k], kResourceHypothesisLimit);
      if (n == 0) {
        throw ValidationError("resource " + std::to_string(k + 1) + " has M^dc above the message table limit 2^20");
      }
      hypotheses.push_back(static_cast<int>(n));
    }
    edges.reserve(g.edges.size());
    for (const auto& [k, j] : g.edges) {
      EdgeLayout el;
      el.k = k;
      el.j = j;
      const auto& users = g.V[k];
      const int dc = static_cast<int>(users.size());
      for (int p = 0; p < dc; ++p) {
        if (users[p] == j) {
          el.position = p;
        } else {
          el.others.push_back(users[p]);
          el.other_edges.push_back(g.edge_index[k][users[p]]);
        }
      }
      for (int k2 : g.C[j]) {
        if (k2 != k) el.sibling_edges.push_back(g.edge_index[k2][j]);
      }
      const int n_others = dc - 1;
      for (int d = 0; d < n_others; ++d) el.combos *= M;
      el.other_symbols.resize(static_cast<std::size_t>(el.combos) * n_others);
      for (int c = 0; c < el.combos; ++c) {
        int rem = c;
        for (int i = n_others - 1; i >= 0; --i) {
          el.other_symbols[static_cast<std::size_t>(c) * n_others + i] = rem % M;
          rem /= M;
        }
      }
      el.hypothesis.resize(static_cast<std::size_t>(M) * el.combos);
      for (int m = 0; m < M; ++m) {
        for (int c = 0; c < el.combos; ++c) {
          int h = 0;
          int oi = 0;
          for (int p = 0; p < dc; ++p) {
            const int sym = (p == el.position) ? m : el.other_symbols[static_cast<std::size_t>(c) * n_others + oi++];
            h = h * M + sym;
          }
          el.hypothesis[static_cast<std::size_t>(m) * el.combos + c] = h;
        }
      }
      edges.push_back(std::move(el));
    }
  }
};

/// J x M table of length-K complex codewords whose support matches F.
class Codebook {
 public:
  static constexpr double kEnergyTolerance = 1e-9;

  /// `codewords` is flat, indexed [(j * M + m) * K + k]. Throws
  /// ValidationError if any codebook invariant is violated.
  Codebook(FactorGraph graph, int M, std::vector<cplx> codewords)
      : graph_(std::move(graph)), M_(M), codewords_(std::move(codewords)) {
    if (M_ < 1) throw ValidationError("alphabet size M must be positive");
    const auto expected = static_cast<std::size_t>(graph_.J) * M_ * graph_.K;
    if (codewords_.size() != expected) {
      throw ValidationError("dimension mismatch: " + std::to_string(codewords_.size()) + " codeword entries, expected " +
                            std::to_string(expected));
    }
    validate();
    layout_ = MessageLayout(graph_, M_);
  }

  int J() const { return graph_.J; }
  int K() const { return graph_.K; }
  int M() const { return M_; }
  const FactorGraph& graph() const { return graph_; }
  const MessageLayout& layout() const { return layout_; }

  std::span<const cplx> codeword(int j, int m) const {
    return {codewords_.data() + (static_cast<std::size_t>(j) * M_ + m) * graph_.K, static_cast<std::size_t>(graph_.K)};
  }

  cplx entry(int j, int m, int k) const { return codewords_[(static_cast<std::size_t>(j) * M_ + m) * graph_.K + k]; }

  /// (1/M) sum_m ||codeword(j, m)||^2
  double user_energy(int j) const {
    double e = 0.0;
    for (int m = 0; m < M_; ++m) {
      for (const auto& z : codeword(j, m)) e += std::norm(z);
    }
    return e / M_;
  }

 private:
  void validate() const {
    const int J = graph_.J;
    const int K = graph_.K;
    for (int j = 0; j < J; ++j) {
      bool any_nonzero = false;
      for (int m = 0; m < M_; ++m) {
        for (int k = 0; k < K; ++k) {
          const cplx z = entry(j, m, k);
          if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) {
            throw ValidationError("non-finite codeword entry for user " + std::to_string(j + 1));
          }
          if (z != cplx{}) {
            if (graph_.F[k][j] == 0) {
              throw ValidationError("sparsity violation: user " + std::to_string(j + 1) + " symbol " +
                                    std::to_string(m) + " is non-zero on resource " + std::to_string(k + 1) +
                                    " outside its resource set");
            }
            any_nonzero = true;
          }
        }
      }
      if (!any_nonzero) throw ValidationError("user " + std::to_string(j + 1) + " has an all-zero codebook");
      const double e = user_energy(j);
      if (std::abs(e - 1.0) > kEnergyTolerance) {
        std::ostringstream os;
        os.precision(17);
        os << "energy normalization violation: user " << j + 1 << " has average energy " << e << ", expected 1";
        throw ValidationError(os.str());
      }
      for (int m = 0; m < M_; ++m) {
        for (int m2 = m + 1; m2 < M_; ++m2) {
          bool same = true;
          for (int k = 0; k < K && same; ++k) same = entry(j, m, k) == entry(j, m2, k);
          if (same) {
            throw ValidationError("user " + std::to_string(j + 1) + " maps symbols " + std::to_string(m) + " and " +
                                  std::to_string(m2) + " to the same codeword");
          }
        }
      }
    }
  }

  FactorGraph graph_;
  int M_;
  std::vector<cplx> codewords_;
  MessageLayout layout_;
};

namespace detail {

inline int json_int(const nlohmann::json& doc, const char* key) {
  const auto& v = doc.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 1) {
    throw ValidationError(std::string("codebook key '") + key + "' must be a positive integer");
  }
  return v.get<int>();
}

inline void expect_array(const nlohmann::json& v, std::size_t n, const std::string& what) {
  if (!v.is_array()) throw ValidationError("parse error: " + what + " is not an array");
  if (v.size() != n) {
    throw ValidationError("dimension mismatch: " + what + " has " + std::to_string(v.size()) + " entries, expected " +
                          std::to_string(n));
  }
}

}  // namespace detail

inline Codebook parse_codebook(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ValidationError("parse error: codebook document must be a JSON object");
  static const char* const kKeys[] = {"J", "K", "M", "F", "codewords"};
  for (const auto& item : doc.items()) {
    bool known = false;
    for (const char* key : kKeys) known = known || item.key() == key;
    if (!known) throw ValidationError("parse error: unknown top-level key '" + item.key() + "'");
  }
  for (const char* key : kKeys) {
    if (!doc.contains(key)) throw ValidationError(std::string("parse error: missing key '") + key + "'");
  }
  const int J = detail::json_int(doc, "J");
  const int K = detail::json_int(doc, "K");
  const int M = detail::json_int(doc, "M");

  const auto& f = doc.at("F");
  detail::expect_array(f, static_cast<std::size_t>(K), "F");
  IndicatorMatrix F(K, std::vector<int>(J));
  for (int k = 0; k < K; ++k) {
    detail::expect_array(f[k], static_cast<std::size_t>(J), "F row " + std::to_string(k + 1));
    for (int j = 0; j < J; ++j) {
      if (!f[k][j].is_number_integer()) throw ValidationError("parse error: F entries must be integers");
      F[k][j] = f[k][j].get<int>();
    }
  }
  FactorGraph graph = build_factor_graph(F);

  const auto& cw = doc.at("codewords");
  detail::expect_array(cw, static_cast<std::size_t>(J), "codewords (users)");
  std::vector<cplx> flat;
  flat.reserve(static_cast<std::size_t>(J) * M * K);
  for (int j = 0; j < J; ++j) {
    const std::string user = "codewords of user " + std::to_string(j + 1);
    detail::expect_array(cw[j], static_cast<std::size_t>(M), user);
    for (int m = 0; m < M; ++m) {
      detail::expect_array(cw[j][m], static_cast<std::size_t>(K), user + " symbol " + std::to_string(m));
      for (int k = 0; k < K; ++k) {
        const auto& z = cw[j][m][k];
        detail::expect_array(z, 2, user + " symbol " + std::to_string(m) + " entry " + std::to_string(k + 1));
        if (!z[0].is_number() || !z[1].is_number()) throw ValidationError("parse error: codeword entries must be numbers");
        flat.emplace_back(z[0].get<double>(), z[1].get<double>());
      }
    }
  }
  return Codebook(std::move(graph), M, std::move(flat));
}

inline Codebook load_codebook(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("file not found: " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("parse error in " + path + ": " + e.what());
  }
  return parse_codebook(doc);
}

inline nlohmann::json to_json(const Codebook& cb) {
  nlohmann::json doc;
  doc["J"] = cb.J();
  doc["K"] = cb.K();
  doc["M"] = cb.M();
  doc["F"] = cb.graph().F;
  auto users = nlohmann::json::array();
  for (int j = 0; j < cb.J(); ++j) {
    auto symbols = nlohmann::json::array();
    for (int m = 0; m < cb.M(); ++m) {
      auto entries = nlohmann::json::array();
      for (const auto& z : cb.codeword(j, m)) entries.push_back({z.real(), z.imag()});
      symbols.push_back(std::move(entries));
    }
    users.push_back(std::move(symbols));
  }
  doc["codewords"] = std::move(users);
  return doc;
}

inline std::span<const cplx> encode(const Codebook& cb, int j, int m) {
  if (j < 0 || j >= cb.J()) throw ValidationError("user index " + std::to_string(j) + " out of range");
  if (m < 0 || m >= cb.M()) throw ValidationError("symbol index " + std::to_string(m) + " out of range");
  return cb.codeword(j, m);
}

}  // namespace scma

#endif  // SCMA_CODEC_HPP
