#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dmslam/config.hpp"
#include "dmslam/dataset.hpp"
#include "dmslam/harness.hpp"

namespace fs = std::filesystem;
using namespace dmslam;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string variant = "nzm";
  std::string mode;  // empty: both
  int threads = 1;
  bool timing = false;
};

Variant parse_variant(const std::string& s) { return s == "zm" ? Variant::zm : Variant::nzm; }

int threads_from_env(int fallback) {
  if (const char* env = std::getenv("DMSLAM_THREADS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw ConfigError("DMSLAM_THREADS must be an integer");
    }
  }
  return fallback;
}

int cmd_validate(const ScenarioConfig& cfg) {
  std::cout << "ok: " << cfg.name << " (J=" << cfg.pas() << ", K=" << cfg.surfaces.size()
            << ", N=" << cfg.steps << ", runs=" << cfg.mc_runs << ", P=" << cfg.filter.particles << ")\n";
  return 0;
}

int cmd_simulate(const ScenarioConfig& cfg, const Options& o) {
  const Dataset ds = generate_dataset(cfg, run_seed(cfg.seed, 0));
  write_dataset(ds, cfg, o.out);
  std::cout << "wrote dataset (" << ds.truth.steps() << " steps) to " << o.out << "\n";
  return 0;
}

int cmd_run(const ScenarioConfig& cfg, const Options& o) {
  const std::uint64_t seed = run_seed(cfg.seed, 0);
  const Dataset ds = generate_dataset(cfg, seed);
  write_dataset(ds, cfg, o.out);
  const RunRecord rec = run_slam(cfg, ds, parse_variant(o.variant), seed, o.threads);
  write_run(rec, ds.truth, o.out, o.timing);
  if (rec.aborted) {
    std::cerr << "error: run aborted at " << rec.error << "\n";
    return 1;
  }
  const std::vector<double> err = position_errors(rec, ds.truth);
  std::cout << "final position error " << err.back() << " m\n";
  return 0;
}

int cmd_crlb(const ScenarioConfig& cfg, const Options& o) {
  fs::create_directories(o.out);
  for (PhaseMode m : {PhaseMode::coherent, PhaseMode::noncoherent}) {
    const std::string name = m == PhaseMode::coherent ? "coherent" : "noncoherent";
    if (!o.mode.empty() && o.mode != name) continue;
    const BoundCurves b = run_bounds(cfg, m, o.threads);
    write_bounds(b, (fs::path(o.out) / ("bounds_" + name + ".csv")).string());
    std::cout << name << ": final PEB " << b.peb.back() << " m\n";
  }
  return 0;
}

int cmd_mc(const ScenarioConfig& cfg, const Options& o) {
  const Variant v = parse_variant(o.variant);
  const McResult res = run_mc(cfg, v, o.threads);
  fs::create_directories(o.out);
  for (std::size_t r = 0; r < res.runs.size(); ++r) {
    char name[32];
    std::snprintf(name, sizeof(name), "run_%03zu", r);
    write_run(res.runs[r], res.truths[r], (fs::path(o.out) / name).string(), o.timing);
  }
  write_metrics(res.metrics, (fs::path(o.out) / ("metrics_" + o.variant + ".csv")).string());
  int aborted = 0;
  for (const auto& r : res.runs) aborted += r.aborted ? 1 : 0;
  std::cout << o.variant << ": final RMSE " << res.metrics.rmse.back() << " m over " << res.runs.size()
            << " runs (" << aborted << " aborted)\n";
  return aborted == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coherent direct multipath SLAM: simulation, filtering and bounds"};
  app.require_subcommand(1);
  Options o;
  const auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "scenario file (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "override the scenario seed");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--variant", o.variant, "amplitude prior")->check(CLI::IsMember({"nzm", "zm"}));
    sub->add_option("--mode", o.mode, "bound phase model")->check(CLI::IsMember({"coherent", "noncoherent"}));
    sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--timing", o.timing, "add wall-time columns to run outputs");
    return sub;
  };
  auto* simulate = add_common(app.add_subcommand("simulate", "write one dataset"));
  auto* run = add_common(app.add_subcommand("run", "one SLAM run on a fresh dataset"));
  auto* crlb = add_common(app.add_subcommand("crlb", "PEB/MEB curves"));
  auto* mc = add_common(app.add_subcommand("mc", "Monte-Carlo runs and metrics"));
  auto* validate = add_common(app.add_subcommand("validate", "check a scenario file"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const CLI::App* failed = &app;
    for (const CLI::App* sub : app.get_subcommands())
      if (sub->parsed()) failed = sub;
    std::cerr << "error: " << e.what() << "\n" << failed->help();
    return 2;
  }

  try {
    ScenarioConfig cfg = load_config(o.config);
    if (o.seed) {
      cfg.seed = *o.seed;
      cfg.filter.seed = *o.seed;
    }
    o.threads = threads_from_env(o.threads);
    const auto t0 = std::chrono::steady_clock::now();
    int rc = 0;
    if (validate->parsed()) rc = cmd_validate(cfg);
    else if (simulate->parsed()) rc = cmd_simulate(cfg, o);
    else if (run->parsed()) rc = cmd_run(cfg, o);
    else if (crlb->parsed()) rc = cmd_crlb(cfg, o);
    else if (mc->parsed()) rc = cmd_mc(cfg, o);
    if (o.timing)
      std::cout << "elapsed " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
                << " s\n";
    return rc;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
