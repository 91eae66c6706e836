// todma: run, sweep and summarize token-domain multiple access trials.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "todma/config.hpp"
#include "todma/harness.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> workers;
  std::vector<std::string> sets;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON experiment config (may start with \"preset\": desk|full|text)");
  cmd->add_option("--out", f.out, "output directory (overrides output_dir)");
  cmd->add_option("--seed", f.seed, "master seed (overrides sim.seed)");
  cmd->add_option("--trials", f.trials, "trials per grid point");
  cmd->add_option("--workers", f.workers, "parallel trials");
  cmd->add_option("--set", f.sets, "dotted-path override, e.g. sim.K=20 or sweep.L=[15,30]")->take_all();
  cmd->add_flag("--quiet", f.quiet, "no per-trial progress lines");
}

todma::ExperimentConfig build_config(const CommonFlags& f) {
  todma::ExperimentConfig cfg = f.config.empty() ? todma::preset("desk") : todma::load_config(f.config);
  std::vector<std::string> sets = f.sets;
  if (f.seed) sets.push_back("sim.seed=" + std::to_string(*f.seed));
  if (f.trials) sets.push_back("trials=" + std::to_string(*f.trials));
  if (f.workers) sets.push_back("workers=" + std::to_string(*f.workers));
  cfg = todma::apply_overrides(cfg, sets);
  if (!f.out.empty()) cfg.output_dir = f.out;
  cfg.validate();
  return cfg;
}

int run_sweep_command(todma::ExperimentConfig cfg, const CommonFlags& f) {
  todma::SweepOptions opts;
  if (!f.quiet) {
    opts.on_record = [](const todma::MetricsRecord& r) {
      std::fprintf(stderr, "trial %zu K=%zu L=%zu M=%zu snr=%g: tder=%.4g ter_todma=%.4g ter_nonorth=%.4g (%.1fs)\n",
                   r.trial, r.K, r.L, r.M, r.snr_db, r.tder, r.ter_todma, r.ter_nonorth, r.wall_s);
    };
  }
  const auto summary = todma::run_sweep(cfg, opts);
  std::fprintf(stderr, "%zu trial(s) computed, %zu resumed; results in %s\n", summary.computed, summary.skipped,
               (std::filesystem::path(cfg.output_dir) / "results.csv").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-domain multiple access link simulator"};
  app.set_version_flag("--version", TODMA_VERSION);
  app.require_subcommand(1);

  CommonFlags run_flags, sweep_flags;
  auto* run = app.add_subcommand("run", "run trials at a single configuration (sweep axes ignored)");
  add_common(run, run_flags);
  auto* sweep = app.add_subcommand("sweep", "run the Cartesian sweep grid x trials");
  add_common(sweep, sweep_flags);

  std::string report_in, report_out;
  auto* rep = app.add_subcommand("report", "aggregate results.csv by grid point");
  rep->add_option("input", report_in, "results.csv or a directory containing it")->required();
  rep->add_option("--out", report_out, "write the summary CSV here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      auto cfg = build_config(run_flags);
      cfg.sweep.clear();
      return run_sweep_command(cfg, run_flags);
    }
    if (sweep->parsed()) return run_sweep_command(build_config(sweep_flags), sweep_flags);
    if (rep->parsed()) {
      std::filesystem::path in = report_in;
      if (std::filesystem::is_directory(in)) in /= "results.csv";
      std::vector<todma::MetricsRecord> records;
      try {
        records = todma::read_results(in);
      } catch (const std::exception& e) {
        throw todma::StageError("report", e.what());
      }
      if (records.empty()) throw todma::StageError("report", in.string() + " has no result rows");
      const std::string text = todma::report(records);
      if (report_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(report_out);
        if (!out || !(out << text)) throw todma::StageError("report", "cannot write " + report_out);
      }
      return 0;
    }
  } catch (const todma::StageError& e) {
    std::fprintf(stderr, "todma: error %s\n", e.what());
    return 3;
  } catch (const todma::InvalidArgument& e) {
    std::fprintf(stderr, "todma: error [config] %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "todma: error [internal] %s\n", e.what());
    return 4;
  }
  return 0;
}
