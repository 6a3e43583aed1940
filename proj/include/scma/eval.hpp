#ifndef SCMA_EVAL_HPP
#define SCMA_EVAL_HPP

// Monte-Carlo symbol error rate measurement and SNR sweeps.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "scma/channel.hpp"
#include "scma/codec.hpp"
#include "scma/common.hpp"
#include "scma/detector_mpa.hpp"
#include "scma/parallel.hpp"
#include "scma/unfolded_net.hpp"

namespace scma {

/// Anything that maps a received vector to one symbol decision per user.
class SymbolDetector {
 public:
  virtual ~SymbolDetector() = default;
  /// One of mpa-sp, mpa-maxlog, nn, ml-oracle, random.
  virtual std::string id() const = 0;
  /// Iterations or blocks; 0 when not applicable.
  virtual int depth() const = 0;
  virtual std::vector<int> detect(std::span<const cplx> y, const ChannelRealization& chan, Rng& rng) const = 0;
};

class MpaDetector final : public SymbolDetector {
 public:
  MpaDetector(const Codebook& cb, DetectorConfig cfg) : cb_(cb), cfg_(std::move(cfg)) { cfg_.validate(cb_); }
  std::string id() const override { return cfg_.variant == MpaVariant::sum_product ? "mpa-sp" : "mpa-maxlog"; }
  int depth() const override { return cfg_.iterations; }
  std::vector<int> detect(std::span<const cplx> y, const ChannelRealization& chan, Rng&) const override {
    return decide(run_mpa(y, cb_, chan, cfg_));
  }

 private:
  const Codebook& cb_;
  DetectorConfig cfg_;
};

class NetworkDetector final : public SymbolDetector {
 public:
  NetworkDetector(const Codebook& cb, NetworkParams params) : cb_(cb), params_(std::move(params)) {
    check_structure(params_, cb_);
  }
  std::string id() const override { return "nn"; }
  int depth() const override { return params_.blocks(); }
  std::vector<int> detect(std::span<const cplx> y, const ChannelRealization& chan, Rng&) const override {
    return decide(forward(y, cb_, chan, params_).logits);
  }

 private:
  const Codebook& cb_;
  NetworkParams params_;
};

class MlOracleDetector final : public SymbolDetector {
 public:
  explicit MlOracleDetector(const Codebook& cb) : cb_(cb) {}
  std::string id() const override { return "ml-oracle"; }
  int depth() const override { return 0; }
  std::vector<int> detect(std::span<const cplx> y, const ChannelRealization& chan, Rng&) const override {
    return ml_oracle(y, cb_, chan);
  }

 private:
  const Codebook& cb_;
};

/// Ignores the observation; its SER is exactly 1 - 1/M. Used to check the harness.
class RandomGuessDetector final : public SymbolDetector {
 public:
  explicit RandomGuessDetector(const Codebook& cb) : J_(cb.J()), M_(cb.M()) {}
  std::string id() const override { return "random"; }
  int depth() const override { return 0; }
  std::vector<int> detect(std::span<const cplx>, const ChannelRealization&, Rng& rng) const override {
    return random_labels(J_, M_, rng);
  }

 private:
  int J_;
  int M_;
};

struct SerResult {
  double snr_db = 0.0;
  std::string detector;
  int iters_or_blocks = 0;
  std::uint64_t trials = 0;  // symbol decisions (J per channel use)
  std::uint64_t errors = 0;
  double ser = 0.0;
  double ci95 = 0.0;

  bool operator==(const SerResult&) const = default;
};

inline double binomial_ci95(double ser, std::uint64_t trials) {
  if (trials == 0) return 0.0;
  return 1.96 * std::sqrt(ser * (1.0 - ser) / static_cast<double>(trials));
}

struct StopRule {
  std::uint64_t min_errors = 100;
  std::uint64_t max_channel_uses = 10'000'000;

  void validate() const {
    if (min_errors < 1) throw ConfigError("min_errors must be >= 1");
    if (max_channel_uses < 1) throw ConfigError("max_trials must be >= 1");
  }
};

/// Channel uses per Monte-Carlo chunk. Chunk c of a point draws from
/// substream(seed, {bits(snr_db), c}); the detector does not enter the
/// coordinates, so two detectors driven by the same seed see the same
/// labels and noise.
inline constexpr std::uint64_t kSerChunk = 64;

/// Measures SER at one SNR. Chunks are consumed in index order and the stop
/// rule is checked after each chunk, so the result depends only on the seed.
inline SerResult run_ser_point(const SymbolDetector& detector, const Codebook& cb, double snr_db, const StopRule& stop,
                               std::uint64_t seed, int workers = 1) {
  stop.validate();
  const ChannelRealization chan(cb.J(), cb.K(), snr_to_sigma2(snr_db, cb));
  const auto snr_key = std::bit_cast<std::uint64_t>(snr_db);
  const std::uint64_t total_chunks = (stop.max_channel_uses + kSerChunk - 1) / kSerChunk;

  auto run_chunk = [&](std::uint64_t c) -> std::pair<std::uint64_t, std::uint64_t> {
    Rng rng = substream(seed, {snr_key, c});
    const std::uint64_t begin = c * kSerChunk;
    const std::uint64_t end = std::min(stop.max_channel_uses, begin + kSerChunk);
    std::uint64_t errors = 0;
    for (std::uint64_t u = begin; u < end; ++u) {
      const auto sample = make_sample(cb, chan, random_labels(cb.J(), cb.M(), rng), rng);
      std::vector<int> decided;
      try {
        decided = detector.detect(sample.y, chan, rng);
      } catch (const Error& e) {
        std::ostringstream os;
        os << detector.id() << " failed at seed " << seed << ", snr_db " << snr_db << ", chunk " << c << ", use "
           << u - begin << ": " << e.what();
        throw NumericError(os.str());
      }
      for (int j = 0; j < cb.J(); ++j) errors += decided[j] != sample.labels[j] ? 1 : 0;
    }
    return {(end - begin) * static_cast<std::uint64_t>(cb.J()), errors};
  };

  SerResult r;
  r.snr_db = snr_db;
  r.detector = detector.id();
  r.iters_or_blocks = detector.depth();
  const std::uint64_t wave = static_cast<std::uint64_t>(std::max(workers, 1));
  std::vector<std::pair<std::uint64_t, std::uint64_t>> slots;
  bool done = false;
  for (std::uint64_t first = 0; first < total_chunks && !done; first += wave) {
    const std::uint64_t n = std::min(wave, total_chunks - first);
    slots.assign(n, {0, 0});
    parallel_for(n, workers, [&](std::size_t i) { slots[i] = run_chunk(first + i); });
    for (const auto& [trials, errors] : slots) {
      r.trials += trials;
      r.errors += errors;
      if (r.errors >= stop.min_errors) {
        done = true;
        break;
      }
    }
  }
  r.ser = r.trials == 0 ? 0.0 : static_cast<double>(r.errors) / static_cast<double>(r.trials);
  r.ci95 = binomial_ci95(r.ser, r.trials);
  return r;
}

struct SweepConfig {
  double snr_start = 0.0;
  double snr_stop = 21.0;
  double snr_step = 3.0;
  StopRule stop;
  std::uint64_t seed = 1;
  int workers = 1;

  std::vector<double> grid() const {
    if (!(snr_step > 0.0)) throw ConfigError("SNR step must be positive");
    if (snr_stop < snr_start) throw ConfigError("SNR grid is empty (stop < start)");
    std::vector<double> g;
    for (int i = 0;; ++i) {
      const double s = snr_start + i * snr_step;
      if (s > snr_stop + 1e-9 * snr_step) break;
      g.push_back(s);
    }
    return g;
  }
};

inline bool result_order(const SerResult& a, const SerResult& b) {
  return std::tie(a.detector, a.iters_or_blocks, a.snr_db) < std::tie(b.detector, b.iters_or_blocks, b.snr_db);
}

/// One SerResult per (detector, SNR point), sorted by detector then SNR.
inline std::vector<SerResult> run_sweep(const std::vector<const SymbolDetector*>& detectors, const Codebook& cb,
                                        const SweepConfig& cfg) {
  cfg.stop.validate();
  const auto grid = cfg.grid();
  std::vector<SerResult> out;
  for (const auto* d : detectors) {
    for (double snr : grid) out.push_back(run_ser_point(*d, cb, snr, cfg.stop, cfg.seed, cfg.workers));
  }
  std::stable_sort(out.begin(), out.end(), result_order);
  return out;
}

inline constexpr const char* kCsvHeader = "detector,iters_or_blocks,snr_db,trials,errors,ser,ci95";

inline std::string format_g12(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string to_csv(std::vector<SerResult> results) {
  std::stable_sort(results.begin(), results.end(), result_order);
  std::string s = std::string(kCsvHeader) + "\n";
  for (const auto& r : results) {
    s += r.detector + "," + std::to_string(r.iters_or_blocks) + "," + format_g12(r.snr_db) + "," +
         std::to_string(r.trials) + "," + std::to_string(r.errors) + "," + format_g12(r.ser) + "," +
         format_g12(r.ci95) + "\n";
  }
  return s;
}

inline void write_csv(const std::vector<SerResult>& results, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << to_csv(results);
  if (!out) throw Error("failed writing " + path);
}

inline std::vector<SerResult> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw ValidationError("SER CSV: missing or wrong header");
  std::vector<SerResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw ValidationError("SER CSV: expected 7 fields in '" + line + "'");
    SerResult r;
    try {
      r.detector = f[0];
      r.iters_or_blocks = std::stoi(f[1]);
      r.snr_db = std::stod(f[2]);
      r.trials = std::stoull(f[3]);
      r.errors = std::stoull(f[4]);
      r.ser = std::stod(f[5]);
      r.ci95 = std::stod(f[6]);
    } catch (const std::exception&) {
      throw ValidationError("SER CSV: malformed row '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

inline std::vector<SerResult> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

struct EquivalenceReport {
  double worst_rel = 0.0;
  std::size_t worst_sample = 0;
  double worst_snr_db = 0.0;
  std::size_t samples = 0;
};

/// Runs `samples` random inputs through `params` and through max-log MPA
/// with as many iterations as the network has blocks (no renormalization),
/// and reports the largest relative logit deviation. Sample i uses
/// substream(seed, {i}) and SNR snrs[i % snrs.size()].
inline EquivalenceReport verify_equivalence(const Codebook& cb, const NetworkParams& params, std::size_t samples,
                                            std::uint64_t seed, const std::vector<double>& snrs = {0.0, 9.0, 18.0}) {
  if (samples < 1) throw ConfigError("need at least one sample");
  if (snrs.empty()) throw ConfigError("need at least one SNR");
  DetectorConfig cfg;
  cfg.iterations = params.blocks();
  cfg.variant = MpaVariant::max_log;
  cfg.normalize = false;
  EquivalenceReport rep;
  rep.samples = samples;
  for (std::size_t i = 0; i < samples; ++i) {
    const double snr = snrs[i % snrs.size()];
    const ChannelRealization chan(cb.J(), cb.K(), snr_to_sigma2(snr, cb));
    Rng rng = substream(seed, {i});
    const auto sample = make_sample(cb, chan, random_labels(cb.J(), cb.M(), rng), rng);
    const auto nn = forward(sample.y, cb, chan, params).logits;
    const auto mpa = run_mpa(sample.y, cb, chan, cfg);
    for (std::size_t n = 0; n < nn.values.size(); ++n) {
      const double a = nn.values[n];
      const double b = mpa.values[n];
      const double denom = std::max({std::abs(a), std::abs(b), 1e-300});
      const double rel = a == b ? 0.0 : std::abs(a - b) / denom;
      if (rel > rep.worst_rel || std::isnan(rel)) {
        rep.worst_rel = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
        rep.worst_sample = i;
        rep.worst_snr_db = snr;
      }
    }
  }
  return rep;
}

}  // namespace scma

#endif  // SCMA_EVAL_HPP
