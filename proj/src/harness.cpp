#include "dmslam/harness.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>

#include "dmslam/metrics.hpp"

namespace dmslam {

EngineConfig engine_config(const ScenarioConfig& cfg, Variant variant, std::uint64_t seed, int threads) {
  EngineConfig e = cfg.filter;
  e.variant = variant;
  e.seed = seed;
  e.threads = threads;
  return e;
}

RunRecord run_slam(const ScenarioConfig& cfg, const Dataset& ds, Variant variant, std::uint64_t seed,
                   int threads) {
  const Engine engine(cfg.scene, engine_config(cfg, variant, seed, threads));
  RunRecord rec;
  FilterState st;
  for (const auto& obs : ds.obs) {
    const auto t0 = std::chrono::steady_clock::now();
    Estimate est;
    try {
      st = engine.step(st, obs, &est);
    } catch (const std::exception& e) {
      rec.aborted = true;
      rec.error = "step " + std::to_string(st.step + 1) + ": " + e.what();
      break;
    }
    rec.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    rec.steps.push_back(std::move(est));
  }
  return rec;
}

std::vector<Vec3> declared_surfaces(const Estimate& e) {
  std::vector<Vec3> out;
  for (const auto& t : e.tracks)
    if (!t.los && t.declared) out.push_back(t.psfv);
  return out;
}

std::vector<double> position_errors(const RunRecord& run, const Truth& truth) {
  std::vector<double> out;
  for (std::size_t n = 0; n < run.steps.size(); ++n)
    out.push_back((run.steps[n].mt.head<3>() - truth.x[n].head<3>()).norm());
  return out;
}

MetricTable compute_metrics(const std::vector<RunRecord>& runs, const std::vector<Truth>& truths) {
  if (runs.empty() || runs.size() != truths.size()) throw std::invalid_argument("runs and truths must pair up");
  const int N = truths[0].steps();
  const int K = truths[0].sfv.empty() ? 0 : static_cast<int>(truths[0].sfv[0].size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  MetricTable m;
  m.errors.resize(N);
  m.mapping_rmse.assign(N, std::vector<double>(K, nan));
  std::vector<std::vector<std::vector<double>>> map_err(N, std::vector<std::vector<double>>(K));
  for (std::size_t r = 0; r < runs.size(); ++r) {
    if (runs[r].aborted) continue;
    const std::vector<double> e = position_errors(runs[r], truths[r]);
    for (int n = 0; n < N && n < static_cast<int>(e.size()); ++n) {
      m.errors[n].push_back(e[n]);
      const MappingError me = mapping_error(truths[r].sfv[n], declared_surfaces(runs[r].steps[n]));
      for (int k = 0; k < K; ++k)
        if (me.estimate_of[k] >= 0) map_err[n][k].push_back(me.error[k]);
    }
  }
  for (int n = 0; n < N; ++n) {
    if (m.errors[n].empty()) {
      m.rmse.push_back(nan);
      m.q1.push_back(nan);
      m.q3.push_back(nan);
    } else {
      m.rmse.push_back(rmse(m.errors[n]));
      m.q1.push_back(quantile(m.errors[n], 0.25));
      m.q3.push_back(quantile(m.errors[n], 0.75));
    }
    for (int k = 0; k < K; ++k)
      if (!map_err[n][k].empty()) m.mapping_rmse[n][k] = rmse(map_err[n][k]);
  }
  return m;
}

void write_run(const RunRecord& run, const Truth& truth, const std::string& dir, bool timing) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream mt(fs::path(dir) / "mt.csv");
  mt << std::setprecision(17);
  mt << "step,true_px_m,true_py_m,true_pz_m,est_px_m,est_py_m,est_pz_m,est_vx_mps,est_vy_mps,est_vz_mps,"
        "error_m";
  const int J = run.steps.empty() ? 0 : static_cast<int>(run.steps[0].eta.size());
  for (int j = 0; j < J; ++j) mt << ",eta_pa" << j << "_w";
  if (timing) mt << ",step_time_s";
  mt << '\n';
  for (std::size_t n = 0; n < run.steps.size(); ++n) {
    const Estimate& e = run.steps[n];
    mt << e.step;
    for (int i = 0; i < 3; ++i) mt << ',' << truth.x[n][i];
    for (int i = 0; i < 6; ++i) mt << ',' << e.mt[i];
    mt << ',' << (e.mt.head<3>() - truth.x[n].head<3>()).norm();
    for (int j = 0; j < J; ++j) mt << ',' << e.eta[j];
    if (timing) mt << ',' << run.seconds[n];
    mt << '\n';
  }

  std::ofstream tr(fs::path(dir) / "tracks.csv");
  tr << std::setprecision(17);
  tr << "step,id,los,declared,existence,sfv_x_m,sfv_y_m,sfv_z_m,gamma,mu_re,mu_im";
  for (int j = 0; j < J; ++j) tr << ",ppr_pa" << j;
  tr << '\n';
  for (const auto& e : run.steps)
    for (const auto& t : e.tracks) {
      tr << e.step << ',' << t.id << ',' << (t.los ? 1 : 0) << ',' << (t.declared ? 1 : 0) << ','
         << t.existence << ',' << t.psfv.x() << ',' << t.psfv.y() << ',' << t.psfv.z() << ',' << t.gamma
         << ',' << t.mu.real() << ',' << t.mu.imag();
      for (Eigen::Index j = 0; j < t.ppr.size(); ++j) tr << ',' << t.ppr[j];
      tr << '\n';
    }
  if (run.aborted) std::ofstream(fs::path(dir) / "aborted.txt") << run.error << '\n';
}

void write_metrics(const MetricTable& m, const std::string& path) {
  std::ofstream out(path);
  out << std::setprecision(17) << "step,rmse_m,q1_m,q3_m";
  const std::size_t K = m.mapping_rmse.empty() ? 0 : m.mapping_rmse[0].size();
  for (std::size_t k = 0; k < K; ++k) out << ",map_rmse_s" << k + 1 << "_m";
  out << '\n';
  for (std::size_t n = 0; n < m.rmse.size(); ++n) {
    out << n + 1 << ',' << m.rmse[n] << ',' << m.q1[n] << ',' << m.q3[n];
    for (std::size_t k = 0; k < K; ++k) out << ',' << m.mapping_rmse[n][k];
    out << '\n';
  }
}

McResult run_mc(const ScenarioConfig& cfg, Variant variant, int threads) {
  McResult res;
  res.runs.resize(cfg.mc_runs);
  res.truths.resize(cfg.mc_runs);
  // Runs are independent; each owns its streams, so the thread count cannot change results.
  parallel_for(cfg.mc_runs, threads, [&](int r) {
    const std::uint64_t seed = run_seed(cfg.seed, r);
    const Dataset ds = generate_dataset(cfg, seed);
    res.runs[r] = run_slam(cfg, ds, variant, seed, 1);
    res.truths[r] = ds.truth;
  });
  res.metrics = compute_metrics(res.runs, res.truths);
  return res;
}

MatX initial_information(const TransitionModel& t) { return inverse_floor(t.Q); }

BoundCurves run_bounds(const ScenarioConfig& cfg, PhaseMode mode, int threads) {
  const int draws = cfg.crlb_draws > 0 ? cfg.crlb_draws : cfg.mc_runs;
  const int K = static_cast<int>(cfg.surfaces.size());
  const int N = cfg.steps;
  std::vector<Truth> truths(draws);
  parallel_for(draws, threads, [&](int r) { truths[r] = generate_dataset(cfg, run_seed(cfg.seed, r), false).truth; });

  std::vector<MatX> snaps(N);
  for (int n = 0; n < N; ++n) {
    std::vector<GlobalState> states;
    states.reserve(draws);
    for (const auto& t : truths)
      states.push_back(make_global_state(cfg.scene, t.x[n], t.sfv[n], t.amplitude[n], t.eta, t.visible[n], mode));
    snaps[n] = mc_expectation(cfg.scene, states, mode, threads);
  }

  const double sigma_v =
      cfg.trajectory.mode == TrajectoryMode::random ? cfg.trajectory.sigma_v : cfg.filter.sigma_v;
  const TransitionModel tm =
      global_transition(ncv_build(cfg.filter.dt, sigma_v), cfg.sigma_sfv_truth, K, cfg.pas(), mode, cfg.pseudo);
  const std::vector<BoundStep> steps = pcrlb_recursion(snaps, tm.F, tm.Q, initial_information(tm), K);
  BoundCurves out;
  for (const auto& s : steps) {
    out.peb.push_back(s.peb);
    out.meb.emplace_back(s.meb.data(), s.meb.data() + s.meb.size());
    out.floored.push_back(s.floored);
  }
  return out;
}

void write_bounds(const BoundCurves& b, const std::string& path) {
  std::ofstream out(path);
  out << std::setprecision(17) << "step,peb_m";
  const std::size_t K = b.meb.empty() ? 0 : b.meb[0].size();
  for (std::size_t k = 0; k < K; ++k) out << ",meb_s" << k + 1 << "_m";
  out << ",floored_eigenvalues\n";
  for (std::size_t n = 0; n < b.peb.size(); ++n) {
    out << n + 1 << ',' << b.peb[n];
    for (std::size_t k = 0; k < K; ++k) out << ',' << b.meb[n][k];
    out << ',' << b.floored[n] << '\n';
  }
}

}  // namespace dmslam
