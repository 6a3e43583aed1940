// scma: command-line front end for the SCMA detection library.
//
// Exit codes: 0 success, 1 verification failure, 2 config/validation error,
// 3 runtime numeric failure.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "scma/scma.hpp"

namespace {

enum ExitCode : int { kOk = 0, kVerifyFailed = 1, kConfigError = 2, kNumericError = 3 };

// JSON config files: top-level keys are global flag names, nested objects
// hold the flags of the subcommand with that name.
class ConfigJson : public CLI::ConfigBase {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json doc;
    try {
      input >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(doc, {}, items);
    return items;
  }

 private:
  static void collect(const nlohmann::json& obj, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) {
        auto nested = parents;
        nested.push_back(key);
        collect(value, nested, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v, key));
      } else {
        item.inputs.push_back(scalar(value, key));
      }
      items.push_back(std::move(item));
    }
  }

  static std::string scalar(const nlohmann::json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConversionError("unsupported value for config key '" + key + "'");
  }
};

struct Globals {
  std::uint64_t seed = 1;
  std::string codebook = SCMA_DEFAULT_CODEBOOK;
  int workers = 1;
  std::string out;
};

struct TrainOpts {
  int blocks = 4;
  double snr_db = 16.0;
  double lr = 0.001;
  int steps = 2000;
  bool tie_a = false;
  std::string log;
};

struct SweepOpts {
  std::vector<std::string> detectors;
  int depth = 4;
  std::string ckpt;
  double snr_start = 0.0;
  double snr_stop = 21.0;
  double snr_step = 3.0;
  std::uint64_t min_errors = 100;
  std::uint64_t max_trials = 10'000'000;
};

struct VerifyOpts {
  int blocks = 4;
  std::size_t samples = 1000;
  bool perturb = false;
};

struct GradOpts {
  int blocks = 2;
  int probes = 50;
  double h = 1e-5;
};

std::string one_based(const std::vector<int>& v) {
  std::string s = "{";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i] + 1);
  return s + "}";
}

int cmd_codebook(const Globals& g) {
  const auto cb = scma::load_codebook(g.codebook);
  const auto& fg = cb.graph();
  std::cout << "J=" << cb.J() << " K=" << cb.K() << " M=" << cb.M() << "\n";
  std::cout << "F=\n";
  for (const auto& row : fg.F) {
    std::cout << " ";
    for (int v : row) std::cout << ' ' << v;
    std::cout << "\n";
  }
  for (int k = 0; k < fg.K; ++k) {
    std::cout << "V(" << k + 1 << ")=" << one_based(fg.V[k]) << " dc=" << fg.dc[k] << "\n";
  }
  for (int j = 0; j < fg.J; ++j) {
    std::cout << "C(" << j + 1 << ")=" << one_based(fg.C[j]) << " dv=" << fg.dv[j] << " energy=" << cb.user_energy(j)
              << "\n";
  }
  std::cout << "signal_power_per_resource=" << scma::signal_power(cb) << "\n";
  return kOk;
}

int cmd_train(const Globals& g, const TrainOpts& o) {
  const auto cb = scma::load_codebook(g.codebook);
  scma::TrainConfig cfg;
  cfg.blocks = o.blocks;
  cfg.train_snr_db = o.snr_db;
  cfg.lr = o.lr;
  cfg.steps = o.steps;
  cfg.seed = g.seed;
  cfg.tie_a_across_blocks = o.tie_a;
  cfg.workers = g.workers;
  cfg.validate();
  const std::string ckpt = g.out.empty() ? "checkpoint.json" : g.out;
  const std::string log = o.log.empty() ? ckpt + ".loss.csv" : o.log;
  std::ofstream log_out(log, std::ios::binary);
  if (!log_out) throw scma::ConfigError("cannot open " + log + " for writing");
  log_out << "step,loss,wall_ms\n";

  const auto result = scma::train(cb, cfg, [](int step, double loss, const scma::NetworkParams&) {
    if (step % 100 == 0) std::cerr << "step " << step << " loss " << loss << "\n";
  });
  for (std::size_t s = 0; s < result.loss_history.size(); ++s) {
    log_out << s << ',' << scma::format_g12(result.loss_history[s]) << ',' << scma::format_g12(result.wall_ms[s]) << '\n';
  }
  scma::save_checkpoint(result.params, cb.graph(), ckpt);
  std::cerr << "initial loss " << result.loss_history.front() << ", final loss " << result.loss_history.back() << "\n"
            << "wrote " << ckpt << " (" << result.params.size() << " parameters) and " << log << "\n";
  return kOk;
}

int cmd_sweep(const Globals& g, const SweepOpts& o) {
  const auto cb = scma::load_codebook(g.codebook);
  scma::SweepConfig cfg;
  cfg.snr_start = o.snr_start;
  cfg.snr_stop = o.snr_stop;
  cfg.snr_step = o.snr_step;
  cfg.stop.min_errors = o.min_errors;
  cfg.stop.max_channel_uses = o.max_trials;
  cfg.seed = g.seed;
  cfg.workers = g.workers;
  cfg.grid();
  cfg.stop.validate();

  std::vector<std::unique_ptr<scma::SymbolDetector>> owned;
  for (const auto& id : o.detectors) {
    if (id == "mpa-sp" || id == "mpa-maxlog") {
      scma::DetectorConfig dc;
      dc.iterations = o.depth;
      dc.variant = id == "mpa-sp" ? scma::MpaVariant::sum_product : scma::MpaVariant::max_log;
      owned.push_back(std::make_unique<scma::MpaDetector>(cb, dc));
    } else if (id == "nn") {
      if (o.ckpt.empty()) throw scma::ConfigError("detector nn requires --ckpt");
      owned.push_back(std::make_unique<scma::NetworkDetector>(cb, scma::load_checkpoint(o.ckpt, cb.graph())));
    } else if (id == "ml-oracle") {
      owned.push_back(std::make_unique<scma::MlOracleDetector>(cb));
    } else if (id == "random") {
      owned.push_back(std::make_unique<scma::RandomGuessDetector>(cb));
    } else {
      throw scma::ConfigError("unknown detector '" + id + "'");
    }
  }
  std::vector<const scma::SymbolDetector*> detectors;
  for (const auto& d : owned) detectors.push_back(d.get());
  const auto results = scma::run_sweep(detectors, cb, cfg);
  if (g.out.empty()) {
    std::cout << scma::to_csv(results);
  } else {
    scma::write_csv(results, g.out);
    std::cerr << "wrote " << results.size() << " rows to " << g.out << "\n";
  }
  return kOk;
}

int cmd_verify(const Globals& g, const VerifyOpts& o) {
  const auto cb = scma::load_codebook(g.codebook);
  if (o.blocks < 1) throw scma::ConfigError("--blocks must be >= 1");
  if (o.samples < 1) throw scma::ConfigError("--samples must be >= 1");
  auto params = scma::init_all_ones(cb.graph(), o.blocks);
  if (o.perturb) params.wi(o.blocks - 1, 0)[0] += 1e-3;
  const auto rep = scma::verify_equivalence(cb, params, o.samples, g.seed);
  std::cout << "samples=" << rep.samples << " max_rel_deviation=" << rep.worst_rel << "\n";
  if (rep.worst_rel <= 1e-9) {
    std::cout << "PASS\n";
    return kOk;
  }
  std::cout << "FAIL worst sample: seed=" << g.seed << " index=" << rep.worst_sample << " snr_db=" << rep.worst_snr_db
            << "\n";
  return kVerifyFailed;
}

int cmd_gradcheck(const Globals& g, const GradOpts& o) {
  const auto cb = scma::load_codebook(g.codebook);
  if (o.probes < 1) throw scma::ConfigError("--probes must be >= 1");
  if (o.blocks < 1) throw scma::ConfigError("--blocks must be >= 1");
  if (!(o.h > 0.0)) throw scma::ConfigError("--h must be positive");
  scma::GradcheckConfig cfg;
  cfg.probes = o.probes;
  cfg.h = o.h;
  const auto r = scma::run_gradcheck(cb, o.blocks, cfg, g.seed);
  std::cout << "probes=" << r.probes.size() << " ties_skipped=" << r.ties_skipped << " worst_rel_error=" << r.worst
            << "\n";
  std::cout << (r.passed ? "PASS" : "FAIL") << "\n";
  return r.passed ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SCMA multiuser detection: message passing, unfolded network training and SER sweeps"};
  app.config_formatter(std::make_shared<ConfigJson>());
  app.set_config("--config", "", "JSON config file; command-line flags override it");
  app.allow_config_extras(false);
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Master RNG seed")->capture_default_str();
  app.add_option("--codebook", g.codebook, "Codebook JSON file")->capture_default_str();
  app.add_option("--workers", g.workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output path (checkpoint for train, CSV for sweep)");

  auto* codebook = app.add_subcommand("codebook", "Validate a codebook and print its structure");

  TrainOpts train;
  auto* train_cmd = app.add_subcommand("train", "Train the unfolded network");
  train_cmd->add_option("--blocks", train.blocks)->capture_default_str();
  train_cmd->add_option("--snr-db", train.snr_db)->capture_default_str();
  train_cmd->add_option("--lr", train.lr)->capture_default_str();
  train_cmd->add_option("--steps", train.steps)->capture_default_str();
  train_cmd->add_option("--tie-a", train.tie_a, "Share the beta coefficient across blocks")->capture_default_str();
  train_cmd->add_option("--log", train.log, "Loss CSV (default: <out>.loss.csv)");

  SweepOpts sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Monte-Carlo SER sweep");
  sweep_cmd->add_option("--detector", sweep.detectors, "mpa-sp | mpa-maxlog | nn | ml-oracle | random (repeatable)");
  sweep_cmd->add_option("--iters,--blocks", sweep.depth, "MPA iterations")->capture_default_str();
  sweep_cmd->add_option("--ckpt", sweep.ckpt, "Checkpoint for the nn detector");
  sweep_cmd->add_option("--snr-start", sweep.snr_start)->capture_default_str();
  sweep_cmd->add_option("--snr-stop", sweep.snr_stop)->capture_default_str();
  sweep_cmd->add_option("--snr-step", sweep.snr_step)->capture_default_str();
  sweep_cmd->add_option("--min-errors", sweep.min_errors)->capture_default_str();
  sweep_cmd->add_option("--max-trials", sweep.max_trials, "Channel-use cap per SNR point")->capture_default_str();

  VerifyOpts verify;
  auto* verify_cmd = app.add_subcommand("verify-equivalence", "All-ones network vs max-log MPA");
  verify_cmd->add_option("--blocks", verify.blocks)->capture_default_str();
  verify_cmd->add_option("--samples", verify.samples)->capture_default_str();
  verify_cmd->add_flag("--perturb-weight", verify.perturb, "Test hook: perturb one weight")->group("");

  GradOpts grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Backward pass vs central finite differences");
  grad_cmd->set_help_flag("--help", "Print this help message and exit");  // frees -h for --h
  grad_cmd->add_option("--blocks", grad.blocks)->capture_default_str();
  grad_cmd->add_option("--probes", grad.probes)->capture_default_str();
  grad_cmd->add_option("--h", grad.h, "Finite-difference step")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  std::cerr << "# resolved configuration\n" << app.config_to_str(true, false);

  try {
    if (*codebook) return cmd_codebook(g);
    if (*train_cmd) return cmd_train(g, train);
    if (*sweep_cmd) return cmd_sweep(g, sweep);
    if (*verify_cmd) return cmd_verify(g, verify);
    if (*grad_cmd) return cmd_gradcheck(g, grad);
  } catch (const scma::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const scma::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
  return kConfigError;
}
