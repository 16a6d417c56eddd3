#pragma once

#include <string>
#include <vector>

#include "dmslam/config.hpp"
#include "dmslam/crlb.hpp"
#include "dmslam/dataset.hpp"
#include "dmslam/engine.hpp"

namespace dmslam {

struct RunRecord {
  std::vector<Estimate> steps;
  std::vector<double> seconds;  // wall time per step
  bool aborted = false;
  std::string error;
};

EngineConfig engine_config(const ScenarioConfig& cfg, Variant variant, std::uint64_t seed, int threads);

// Runs the filter over every step; an engine error aborts the run and is recorded.
RunRecord run_slam(const ScenarioConfig& cfg, const Dataset& ds, Variant variant, std::uint64_t seed,
                   int threads = 1);

// Declared non-LOS track positions of one estimate.
std::vector<Vec3> declared_surfaces(const Estimate& e);

struct MetricTable {
  std::vector<double> rmse;       // per step, over runs, m
  std::vector<double> q1;         // per step, first sample quartile of per-run errors, m
  std::vector<double> q3;
  std::vector<std::vector<double>> mapping_rmse;  // [step][surface], NaN when never associated
  std::vector<std::vector<double>> errors;        // [step][run] MT position errors, m
};

MetricTable compute_metrics(const std::vector<RunRecord>& runs, const std::vector<Truth>& truths);

// Per-step MT position error of one run.
std::vector<double> position_errors(const RunRecord& run, const Truth& truth);

// step,... CSVs; timing columns are written only when requested so outputs stay reproducible.
void write_run(const RunRecord& run, const Truth& truth, const std::string& dir, bool timing);
void write_metrics(const MetricTable& m, const std::string& path);

struct McResult {
  std::vector<RunRecord> runs;
  std::vector<Truth> truths;
  MetricTable metrics;
};

McResult run_mc(const ScenarioConfig& cfg, Variant variant, int threads = 1);

struct BoundCurves {
  std::vector<double> peb;                // per step
  std::vector<std::vector<double>> meb;   // [step][surface]
  std::vector<int> floored;               // per step
};

// Snapshot FIMs averaged over one truth draw per MC run (the same draws run_mc uses).
BoundCurves run_bounds(const ScenarioConfig& cfg, PhaseMode mode, int threads = 1);

// Information at step 1 before any measurement: the transition from the fictional start.
MatX initial_information(const TransitionModel& t);

void write_bounds(const BoundCurves& b, const std::string& path);

}  // namespace dmslam
