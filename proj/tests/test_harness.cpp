#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dmslam/config.hpp"
#include "dmslam/dataset.hpp"
#include "dmslam/harness.hpp"
#include "dmslam/metrics.hpp"
#include "test_util.hpp"

using namespace dmslam;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dmslam_test_" + name);
  fs::remove_all(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DMSLAM_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ScenarioConfig tiny() { return load_config(test::source_path("configs/tiny.cfg")); }

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("assignment on small matrices") {
    MatX one(1, 1);
    one << 3.0;
    const Assignment a1 = hungarian_assign(one);
    CHECK(a1.row_to_col == std::vector<int>{0});
    CHECK(a1.cost == 3.0);

    MatX c(2, 2);
    c << 1, 2, 2, 1;
    const Assignment a2 = hungarian_assign(c);
    CHECK(a2.cost == 2.0);
    CHECK(a2.row_to_col == std::vector<int>{0, 1});

    MatX r(2, 3);
    r << 5, 1, 9, 2, 8, 0.5;
    const Assignment a3 = hungarian_assign(r);
    CHECK(a3.cost == doctest::Approx(1.5));
    CHECK(a3.unmatched_cols == std::vector<int>{0});
  }

  TEST_CASE("assignment against exhaustive permutations") {
    CounterRng rng = make_stream(90, 0, Entity::Test);
    for (int trial = 0; trial < 30; ++trial) {
      MatX c(5, 5);
      for (int i = 0; i < 5; ++i)
        for (int k = 0; k < 5; ++k) c(i, k) = rng.uniform(0.0, 10.0);
      std::vector<int> perm(5);
      std::iota(perm.begin(), perm.end(), 0);
      double best = 1e300;
      do {
        double s = 0.0;
        for (int i = 0; i < 5; ++i) s += c(i, perm[i]);
        best = std::min(best, s);
      } while (std::next_permutation(perm.begin(), perm.end()));
      const Assignment a = hungarian_assign(c);
      CHECK(std::abs(a.cost - best) < 1e-12);
      double s = 0.0;
      for (int i = 0; i < 5; ++i) s += c(i, a.row_to_col[i]);
      CHECK(std::abs(s - a.cost) < 1e-12);
    }
  }

  TEST_CASE("error statistics") {
    CHECK(rmse({3.0, 4.0}) == doctest::Approx(5.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(quantile({4.0, 1.0, 3.0, 2.0}, 0.25) == doctest::Approx(1.75));
    CHECK(quantile({4.0, 1.0, 3.0, 2.0}, 0.5) == doctest::Approx(2.5));
    CHECK(quantile({7.0}, 0.75) == 7.0);
    const MappingError me = mapping_error({Vec3(0, 0, 0), Vec3(5, 0, 0)}, {Vec3(4.9, 0, 0)});
    CHECK(std::isnan(me.error[0]));
    CHECK(me.error[1] == doctest::Approx(0.1));
    CHECK(me.estimate_of == std::vector<int>{-1, 0});
  }

  TEST_CASE("scenario files") {
    const ScenarioConfig c = tiny();
    CHECK(c.pas() == 2);
    CHECK(c.components() == 2);
    CHECK(c.filter.particles == 200);
    for (const char* f : {"configs/desk.cfg", "configs/obstacle.cfg", "configs/paper_exp1.cfg"})
      CHECK_NOTHROW(load_config(test::source_path(f)));

    const std::string text = read_file(test::source_path("configs/tiny.cfg"));
    CHECK_THROWS_AS(parse_config("{ \"name\": "), ConfigError);
    std::string no_rf = text;
    no_rf.replace(no_rf.find("\"rf\""), 4, "\"xx\"");
    try {
      parse_config(no_rf);
      FAIL("missing key accepted");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("rf") != std::string::npos);
    }
    std::string bad_steps = text;
    bad_steps.replace(bad_steps.find("\"steps\": 5"), 10, "\"steps\": 0");
    CHECK_THROWS_AS(parse_config(bad_steps), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/x.cfg"), ConfigError);
    CHECK(run_seed(11, 0) != run_seed(11, 1));
  }

  TEST_CASE("visibility intervals") {
    const ScenarioConfig c = load_config(test::source_path("configs/obstacle.cfg"));
    CHECK(c.visible(0, 2, 19));
    CHECK(!c.visible(0, 2, 20));
    CHECK(!c.visible(0, 2, 45));
    CHECK(c.visible(0, 2, 46));
    CHECK(c.visible(0, 1, 30));
  }

  TEST_CASE("datasets are deterministic and gate hidden paths") {
    ScenarioConfig c = load_config(test::source_path("configs/obstacle.cfg"));
    c.steps = 40;
    const Dataset a = generate_dataset(c, 3);
    const Dataset b = generate_dataset(c, 3);
    const Dataset d = generate_dataset(c, 4);
    CHECK(a.obs[10][1] == b.obs[10][1]);
    CHECK(a.obs[10][1] != d.obs[10][1]);

    const Dataset clean = generate_dataset(c, 3, false);
    CHECK(clean.truth.eta == a.truth.eta);
    double worst = 0.0;
    for (int n = 0; n < c.steps; ++n)
      for (int j = 0; j < c.pas(); ++j) {
        CVec m = CVec::Zero(clean.obs[n][j].size());
        int count = 0;
        for (int k = 0; k < c.components(); ++k) {
          if (!c.visible(k, j, n + 1)) continue;
          ++count;
          const std::optional<Vec3> s = k == 0 ? std::nullopt : std::optional<Vec3>(clean.truth.sfv[n][k - 1]);
          m += clean.truth.amplitude[n][j][k] *
               component_response(clean.truth.x[n].head<3>(), s, c.scene.pas[j], c.scene.rf, c.wavefront);
        }
        CHECK(clean.truth.visible_count(n, j) == count);
        worst = std::max(worst, (clean.obs[n][j] - m).norm() / m.norm());
      }
    CHECK(worst < 1e-12);
  }

  TEST_CASE("dataset files round trip") {
    const ScenarioConfig c = tiny();
    const Dataset ds = generate_dataset(c, 7);
    const fs::path dir = scratch("roundtrip");
    write_dataset(ds, c, dir.string());
    for (const char* f : {"obs.bin", "obs.json", "truth_mt.csv", "truth_sfv.csv", "truth_visibility.csv"})
      CHECK(fs::exists(dir / f));
    const auto back = read_observations(dir.string());
    REQUIRE(back.size() == ds.obs.size());
    for (std::size_t n = 0; n < back.size(); ++n)
      for (std::size_t j = 0; j < back[n].size(); ++j) CHECK(back[n][j] == ds.obs[n][j]);
    const std::string vis = read_file(dir / "truth_visibility.csv");
    CHECK(vis.rfind("step,pa,visible_paths\n1,0,2\n", 0) == 0);
    fs::remove_all(dir);
  }

  TEST_CASE("a short run writes consistent outputs") {
    const ScenarioConfig c = tiny();
    const Dataset ds = generate_dataset(c, run_seed(c.seed, 0));
    const RunRecord rec = run_slam(c, ds, Variant::nzm, run_seed(c.seed, 0));
    CHECK(!rec.aborted);
    REQUIRE(rec.steps.size() == 5);
    const std::vector<double> err = position_errors(rec, ds.truth);
    for (int n = 0; n < 5; ++n) {
      CHECK(rec.steps[n].step == n + 1);
      CHECK(std::isfinite(err[n]));
    }
    const fs::path dir = scratch("run");
    write_run(rec, ds.truth, dir.string(), false);
    std::ifstream mt(dir / "mt.csv");
    std::string line;
    std::getline(mt, line);
    CHECK(line.find("step_time_s") == std::string::npos);
    for (int n = 0; n < 5; ++n) {
      std::getline(mt, line);
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
      CHECK(std::stod(cells[10]) == doctest::Approx(err[n]).epsilon(1e-14));
    }
    fs::remove_all(dir);
  }

  TEST_CASE("Monte-Carlo metrics aggregate per-run errors") {
    const ScenarioConfig c = tiny();
    const McResult r = run_mc(c, Variant::zm);
    REQUIRE(r.runs.size() == 2);
    for (int n = 0; n < c.steps; ++n) {
      const std::vector<double> e = {position_errors(r.runs[0], r.truths[0])[n],
                                     position_errors(r.runs[1], r.truths[1])[n]};
      CHECK(r.metrics.rmse[n] == doctest::Approx(rmse(e)).epsilon(1e-14));
      CHECK(r.metrics.q1[n] <= r.metrics.q3[n]);
    }
  }

  TEST_CASE("bounds are deterministic and thread independent") {
    ScenarioConfig c = tiny();
    const BoundCurves a = run_bounds(c, PhaseMode::coherent, 1);
    const BoundCurves b = run_bounds(c, PhaseMode::coherent, 3);
    const BoundCurves n = run_bounds(c, PhaseMode::noncoherent, 1);
    REQUIRE(a.peb.size() == 5);
    CHECK(a.peb == b.peb);
    for (int s = 0; s < 5; ++s) {
      CHECK(a.peb[s] > 0.0);
      CHECK(a.peb[s] <= n.peb[s] * (1.0 + 1e-9));
      CHECK(a.meb[s][0] <= n.meb[s][0] * (1.0 + 1e-9));
    }
  }

  TEST_CASE("command line exit codes") {
    const std::string cfg = test::source_path("configs/tiny.cfg");
    CHECK(run_cli("validate --config " + cfg) == 0);
    CHECK(run_cli("validate --config /nonexistent.cfg") == 2);
    CHECK(run_cli("frobnicate") == 2);
    const fs::path bad = scratch("bad.cfg");
    std::ofstream(bad) << "{\"name\": 3}";
    CHECK(run_cli("validate --config " + bad.string()) == 1);
    fs::remove(bad);
    const fs::path out = scratch("cli");
    CHECK(run_cli("simulate --config " + cfg + " --out " + out.string()) == 0);
    CHECK(fs::exists(out / "obs.bin"));
    fs::remove_all(out);
  }
}
