// Acceptance gate: one PASS/FAIL line per criterion. Criteria 1-7 run twice
// and criterion 8 compares the CSV/log output of the two passes byte for byte.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "scma/scma.hpp"

namespace {

using namespace scma;

// Pinned tolerances and budgets.
constexpr double kEquivalenceTol = 1e-9;
constexpr std::size_t kEquivalenceSamples = 1000;
constexpr double kEquivalenceBudgetS = 10.0;

constexpr double kAcyclicTol = 1e-9;
constexpr int kAcyclicInputs = 1000;
constexpr int kAcyclicIterations = 2;  // diameter of the 2x2 loop-free graph
constexpr double kAcyclicBudgetS = 5.0;

constexpr double kGradcheckH = 1e-5;
constexpr int kGradcheckProbes = 50;
constexpr double kGradcheckTol = 1e-4;
constexpr int kGradcheckBlocks = 2;
constexpr double kGradcheckBudgetS = 30.0;

constexpr double kIterationSnrDb = 12.0;
constexpr std::uint64_t kMinErrors = 100;
constexpr double kIterationBudgetS = 300.0;

constexpr int kTrainBlocks = 4;
constexpr int kTrainSteps = 2000;
constexpr double kTrainLr = 0.001;
constexpr double kTrainSnrDb = 16.0;
constexpr std::uint64_t kTrainSeeds[] = {1, 2, 3};
constexpr std::uint64_t kSeparationMinErrors = 1000;  // stop rule for the nn/mpa comparison sweep
constexpr int kHeldOutBatches = 16;
constexpr std::uint64_t kHeldOutStepBase = 1'000'000;  // never reached by training steps
constexpr double kTrainingBudgetS = 1800.0;

constexpr double kDominanceSnrDb = 12.0;
constexpr double kDominanceBudgetS = 300.0;

constexpr int kHonestyRuns = 100;
constexpr int kHonestyRequired = 93;
constexpr double kHonestyBudgetS = 60.0;

constexpr std::uint64_t kSweepSeed = 1;

struct Outcome {
  bool pass = false;
  std::string detail;
  std::string log;  // deterministic CSV/log text compared by criterion 8
  double seconds = 0.0;
};

struct Context {
  const Codebook& cb;
  int workers;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string budget_note(double s, double budget) {
  return fmt("%.1f s", s) + " of " + fmt("%.0f s", budget);
}

Outcome equivalence(const Context& ctx) {
  Outcome o;
  std::ostringstream log;
  log << "blocks,samples,max_rel_deviation,worst_sample,worst_snr_db\n";
  double worst = 0.0;
  for (int T : {2, 4}) {
    const auto rep = verify_equivalence(ctx.cb, init_all_ones(ctx.cb.graph(), T), kEquivalenceSamples, kSweepSeed);
    log << T << ',' << rep.samples << ',' << format_g12(rep.worst_rel) << ',' << rep.worst_sample << ','
        << format_g12(rep.worst_snr_db) << '\n';
    worst = std::max(worst, rep.worst_rel);
  }
  o.log = log.str();
  o.pass = worst <= kEquivalenceTol;
  o.detail = "max relative logit deviation " + format_g12(worst) + " (tol 1e-9) over T=2,4";
  return o;
}

Outcome acyclic(const Context&) {
  Outcome o;
  const IndicatorMatrix F = {{1, 1}, {1, 0}};
  const auto g = build_factor_graph(F);
  const int M = 4;
  Rng rng = substream(kSweepSeed, {0xac});
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<cplx> cw(static_cast<std::size_t>(g.J) * M * g.K);
  for (int j = 0; j < g.J; ++j) {
    double energy = 0.0;
    for (int m = 0; m < M; ++m) {
      for (int k : g.C[j]) {
        cplx z{gauss(rng), gauss(rng)};
        cw[(static_cast<std::size_t>(j) * M + m) * g.K + k] = z;
        energy += std::norm(z);
      }
    }
    for (int m = 0; m < M; ++m) {
      for (int k = 0; k < g.K; ++k) cw[(static_cast<std::size_t>(j) * M + m) * g.K + k] *= std::sqrt(M / energy);
    }
  }
  const Codebook cb(g, M, cw);
  DetectorConfig cfg;
  cfg.variant = MpaVariant::sum_product;
  cfg.iterations = kAcyclicIterations;
  std::uniform_real_distribution<double> snr(-5.0, 20.0);
  double worst = 0.0;
  for (int i = 0; i < kAcyclicInputs; ++i) {
    const ChannelRealization chan(g.J, g.K, snr_to_sigma2(snr(rng), cb));
    const auto s = make_sample(cb, chan, random_labels(g.J, M, rng), rng);
    const auto p = softmax(run_mpa(s.y, cb, chan, cfg));
    const auto q = exact_marginals(s.y, cb, chan);
    for (std::size_t n = 0; n < p.values.size(); ++n) worst = std::max(worst, std::abs(p.values[n] - q.values[n]));
  }
  o.log = "inputs,iterations,max_abs_deviation\n" + std::to_string(kAcyclicInputs) + "," +
          std::to_string(kAcyclicIterations) + "," + format_g12(worst) + "\n";
  o.pass = worst <= kAcyclicTol;
  o.detail = "max |softmax(sum-product) - exact marginal| " + format_g12(worst) + " (tol 1e-9)";
  return o;
}

Outcome gradients(const Context& ctx) {
  Outcome o;
  GradcheckConfig cfg;
  cfg.probes = kGradcheckProbes;
  cfg.h = kGradcheckH;
  cfg.tolerance = kGradcheckTol;
  const auto r = run_gradcheck(ctx.cb, kGradcheckBlocks, cfg, kSweepSeed);
  std::ostringstream log;
  log << "index,analytic,numeric,rel_error\n";
  for (const auto& p : r.probes) {
    log << p.index << ',' << format_g12(p.analytic) << ',' << format_g12(p.numeric) << ',' << format_g12(p.rel_error)
        << '\n';
  }
  o.log = log.str();
  o.pass = r.passed && static_cast<int>(r.probes.size()) == kGradcheckProbes && r.worst < kGradcheckTol;
  o.detail = std::to_string(r.probes.size()) + " probes, worst relative error " + format_g12(r.worst) + " (tol 1e-4), " +
             std::to_string(r.ties_skipped) + " tie points skipped";
  return o;
}

SerResult maxlog_point(const Context& ctx, int T, MpaVariant variant, double snr) {
  DetectorConfig cfg;
  cfg.iterations = T;
  cfg.variant = variant;
  const MpaDetector det(ctx.cb, cfg);
  StopRule stop;
  stop.min_errors = kMinErrors;
  return run_ser_point(det, ctx.cb, snr, stop, kSweepSeed, ctx.workers);
}

bool disjoint_above(const SerResult& hi, const SerResult& lo) { return hi.ser - hi.ci95 > lo.ser + lo.ci95; }
bool le_within_ci(const SerResult& a, const SerResult& b) { return a.ser - b.ser <= a.ci95 + b.ci95; }

Outcome iterations(const Context& ctx) {
  Outcome o;
  std::vector<SerResult> rows;
  for (int T : {1, 2, 4, 5}) rows.push_back(maxlog_point(ctx, T, MpaVariant::max_log, kIterationSnrDb));
  const auto &t1 = rows[0], &t2 = rows[1], &t4 = rows[2], &t5 = rows[3];
  const bool order = t1.ser > t2.ser && t2.ser > t4.ser;
  const bool separated = disjoint_above(t1, t4);
  const bool converged = std::abs(t4.ser - t5.ser) <= t4.ci95 + t5.ci95;
  o.log = to_csv(rows);
  o.pass = order && separated && converged;
  o.detail = "SER T=1 " + format_g12(t1.ser) + ", T=2 " + format_g12(t2.ser) + ", T=4 " + format_g12(t4.ser) +
             ", T=5 " + format_g12(t5.ser) + "; order " + (order ? "ok" : "violated") + ", T1/T4 CIs " +
             (separated ? "disjoint" : "overlap") + ", |T4-T5| " + (converged ? "within" : "outside") + " combined CI";
  return o;
}

struct SeedVerdict {
  std::uint64_t seed = 0;
  bool loss_down = false;
  bool ser_better = false;
  double held_out_ones = 0.0;
  double held_out_trained = 0.0;
  double snr = -1.0;
  SerResult nn, mpa;
};

Outcome training(const Context& ctx) {
  Outcome o;
  std::ostringstream log;
  SweepConfig sweep;
  sweep.stop.min_errors = kSeparationMinErrors;
  sweep.seed = kSweepSeed;
  sweep.workers = ctx.workers;
  DetectorConfig mpa_cfg;
  mpa_cfg.iterations = kTrainBlocks;
  const MpaDetector mpa(ctx.cb, mpa_cfg);
  const auto mpa_rows = run_sweep({&mpa}, ctx.cb, sweep);
  log << "# mpa-maxlog sweep\n" << to_csv(mpa_rows);

  const ChannelRealization train_chan(ctx.cb.J(), ctx.cb.K(), snr_to_sigma2(kTrainSnrDb, ctx.cb));
  const auto ones = init_all_ones(ctx.cb.graph(), kTrainBlocks);
  std::vector<SeedVerdict> verdicts;
  for (std::uint64_t seed : kTrainSeeds) {
    TrainConfig cfg;
    cfg.blocks = kTrainBlocks;
    cfg.lr = kTrainLr;
    cfg.steps = kTrainSteps;
    cfg.train_snr_db = kTrainSnrDb;
    cfg.seed = seed;
    cfg.workers = ctx.workers;
    const auto trained = train(ctx.cb, cfg);

    SeedVerdict v;
    v.seed = seed;
    for (int h = 0; h < kHeldOutBatches; ++h) {
      const std::uint64_t step = kHeldOutStepBase + static_cast<std::uint64_t>(h);
      v.held_out_ones += evaluate_exhaustive_batch(ctx.cb, train_chan, ones, seed, step, ctx.workers, false).mean_loss;
      v.held_out_trained +=
          evaluate_exhaustive_batch(ctx.cb, train_chan, trained.params, seed, step, ctx.workers, false).mean_loss;
    }
    v.held_out_ones /= kHeldOutBatches;
    v.held_out_trained /= kHeldOutBatches;
    v.loss_down = v.held_out_trained < v.held_out_ones;

    const NetworkDetector nn(ctx.cb, trained.params);
    const auto nn_rows = run_sweep({&nn}, ctx.cb, sweep);
    for (std::size_t i = 0; i < nn_rows.size(); ++i) {
      if (nn_rows[i].errors >= kMinErrors && mpa_rows[i].errors >= kMinErrors) {
        v.snr = nn_rows[i].snr_db;
        v.nn = nn_rows[i];
        v.mpa = mpa_rows[i];
      }
    }
    // Intervals may touch but not overlap.
    v.ser_better = v.snr >= 0.0 && v.nn.ser <= v.mpa.ser && v.nn.ser + v.nn.ci95 <= v.mpa.ser - v.mpa.ci95;

    log << "# seed " << seed << " training loss\nstep,loss\n";
    for (std::size_t s = 0; s < trained.loss_history.size(); ++s) {
      log << s << ',' << format_g12(trained.loss_history[s]) << '\n';
    }
    log << "# seed " << seed << " held-out loss: all-ones " << format_g12(v.held_out_ones) << ", trained "
        << format_g12(v.held_out_trained) << "\n# seed " << seed << " nn sweep\n"
        << to_csv(nn_rows) << "# seed " << seed << " checkpoint\n"
        << checkpoint_json(trained.params, ctx.cb.graph()).dump() << '\n';
    verdicts.push_back(v);
    std::cerr << "  seed " << seed << ": held-out loss " << format_g12(v.held_out_ones) << " -> "
              << format_g12(v.held_out_trained) << "; at " << format_g12(v.snr) << " dB nn " << format_g12(v.nn.ser)
              << " +- " << format_g12(v.nn.ci95) << " vs mpa " << format_g12(v.mpa.ser) << " +- "
              << format_g12(v.mpa.ci95) << "\n";
    if (seed == kTrainSeeds[0] && v.loss_down && v.ser_better) break;
  }

  const auto& first = verdicts.front();
  const int better = static_cast<int>(std::count_if(verdicts.begin(), verdicts.end(), [](const SeedVerdict& v) { return v.ser_better; }));
  const bool all_loss_down = std::all_of(verdicts.begin(), verdicts.end(), [](const SeedVerdict& v) { return v.loss_down; });
  const bool b = first.ser_better || better >= 2;
  o.pass = all_loss_down && b;
  std::ostringstream d;
  d << "(a) held-out loss " << (all_loss_down ? "decreased" : "did NOT decrease") << " for every trained seed; (b) ";
  for (const auto& v : verdicts) {
    d << "seed " << v.seed << " @" << format_g12(v.snr) << " dB nn " << fmt("%.3e", v.nn.ser) << "+-"
      << fmt("%.1e", v.nn.ci95) << " vs mpa " << fmt("%.3e", v.mpa.ser) << "+-" << fmt("%.1e", v.mpa.ci95) << " "
      << (v.ser_better ? "separated" : "not separated") << "; ";
  }
  d << better << "/" << verdicts.size() << " seeds separated";
  o.detail = d.str();
  o.log = log.str();
  return o;
}

Outcome dominance(const Context& ctx) {
  Outcome o;
  const MlOracleDetector ml(ctx.cb);
  StopRule stop;
  stop.min_errors = kMinErrors;
  const auto r_ml = run_ser_point(ml, ctx.cb, kDominanceSnrDb, stop, kSweepSeed, ctx.workers);
  const auto r_sp = maxlog_point(ctx, 4, MpaVariant::sum_product, kDominanceSnrDb);
  const auto r_ml4 = maxlog_point(ctx, 4, MpaVariant::max_log, kDominanceSnrDb);
  const bool a = le_within_ci(r_ml, r_sp);
  const bool b = le_within_ci(r_sp, r_ml4);
  o.log = to_csv({r_ml, r_sp, r_ml4});
  o.pass = a && b;
  o.detail = "SER ml-oracle " + format_g12(r_ml.ser) + " <= mpa-sp " + format_g12(r_sp.ser) + " (" + (a ? "ok" : "violated") +
             ") <= mpa-maxlog " + format_g12(r_ml4.ser) + " (" + (b ? "ok" : "violated") + ") within 95% CIs";
  return o;
}

Outcome honesty(const Context& ctx) {
  Outcome o;
  const RandomGuessDetector guess(ctx.cb);
  StopRule stop;
  stop.min_errors = kMinErrors;
  std::vector<SerResult> rows;
  int covered = 0;
  for (int i = 0; i < kHonestyRuns; ++i) {
    const auto r = run_ser_point(guess, ctx.cb, 0.0, stop, static_cast<std::uint64_t>(i + 1), ctx.workers);
    covered += std::abs(r.ser - 0.75) <= r.ci95 ? 1 : 0;
    rows.push_back(r);
  }
  std::ostringstream log;
  log << "seed," << kCsvHeader << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    log << i + 1 << ',' << to_csv({rows[i]}).substr(std::string(kCsvHeader).size() + 1);
  }
  o.log = log.str();
  o.pass = covered >= kHonestyRequired;
  o.detail = std::to_string(covered) + "/" + std::to_string(kHonestyRuns) + " runs cover 0.75 (need >= " +
             std::to_string(kHonestyRequired) + ")";
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome(const Context&)> run;
  double budget_s;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance gate"};
  std::string csv_dir = "acceptance_out";
  std::string codebook = SCMA_DEFAULT_CODEBOOK;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::vector<int> only;
  app.add_option("--csv-dir", csv_dir, "Where the per-criterion CSV/log files go")->capture_default_str();
  app.add_option("--codebook", codebook)->capture_default_str();
  app.add_option("--workers", workers)->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--only", only, "Run only these criteria (1-7); criterion 8 still compares two passes");
  CLI11_PARSE(app, argc, argv);

  setvbuf(stdout, nullptr, _IOLBF, 0);
  const auto cb = load_codebook(codebook);
  const Context ctx{cb, workers};
  const std::vector<Criterion> criteria = {
      {1, "all-ones network equals max-log MPA", equivalence, kEquivalenceBudgetS},
      {2, "sum-product exact on a loop-free graph", acyclic, kAcyclicBudgetS},
      {3, "backward matches finite differences", gradients, kGradcheckBudgetS},
      {4, "max-log SER improves then saturates with iterations", iterations, kIterationBudgetS},
      {5, "trained network beats max-log MPA at high SNR", training, kTrainingBudgetS},
      {6, "ML <= sum-product <= max-log", dominance, kDominanceBudgetS},
      {7, "random guessing measures 0.75", honesty, kHonestyBudgetS},
  };

  std::filesystem::create_directories(std::filesystem::path(csv_dir) / "pass1");
  std::filesystem::create_directories(std::filesystem::path(csv_dir) / "pass2");

  bool all = true;
  bool identical = true;
  std::string differing;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    std::vector<Outcome> passes;
    for (int pass = 1; pass <= 2; ++pass) {
      const auto t0 = std::chrono::steady_clock::now();
      Outcome o;
      try {
        o = c.run(ctx);
      } catch (const std::exception& e) {
        o.pass = false;
        o.detail = std::string("exception: ") + e.what();
      }
      o.seconds = seconds_since(t0);
      write_text(std::filesystem::path(csv_dir) / ("pass" + std::to_string(pass)) /
                     ("criterion" + std::to_string(c.id) + ".csv"),
                 o.log);
      passes.push_back(std::move(o));
    }
    const auto& o = passes.front();
    const bool in_budget = o.seconds < c.budget_s;
    const bool ok = o.pass && in_budget;
    all = all && ok;
    if (passes[0].log != passes[1].log || passes[0].pass != passes[1].pass) {
      identical = false;
      differing += " " + std::to_string(c.id);
    }
    std::printf("criterion %d %s: %s | %s | runtime %s%s\n", c.id, c.name, ok ? "PASS" : "FAIL", o.detail.c_str(),
                budget_note(o.seconds, c.budget_s).c_str(), in_budget ? "" : " (over budget)");
  }
  std::printf("criterion 8 determinism across two passes: %s | %s\n", identical ? "PASS" : "FAIL",
              identical ? "CSV/log output byte-identical" : ("differs for criteria" + differing).c_str());
  all = all && identical;
  std::printf("acceptance: %s\n", all ? "PASS" : "FAIL");
  return all ? 0 : 1;
}
