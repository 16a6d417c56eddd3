#include "dmslam/dataset.hpp"

#include <bit>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include <json.hpp>

namespace dmslam {

namespace {

static_assert(std::endian::native == std::endian::little, "binary writer assumes little-endian host");

std::vector<Vec6> random_trajectory(const ScenarioConfig& cfg, std::uint64_t seed) {
  const NcvModel m = ncv_build(cfg.filter.dt, cfg.trajectory.sigma_v);
  std::vector<Vec6> xs;
  Vec6 x = cfg.trajectory.x0;
  for (int n = 1; n <= cfg.steps; ++n) {
    CounterRng rng = make_stream(seed, n, Entity::Trajectory);
    x = sample_mt_transition(x, m, rng);
    xs.push_back(x);
  }
  return xs;
}

// Constant-speed walk along the waypoint polyline, parked at the last point.
std::vector<Vec6> scripted_trajectory(const ScenarioConfig& cfg) {
  const auto& wp = cfg.trajectory.waypoints;
  std::vector<Vec6> xs;
  for (int n = 1; n <= cfg.steps; ++n) {
    double s = cfg.trajectory.speed * (n - 1) * cfg.filter.dt;
    Vec6 x = Vec6::Zero();
    x.head<3>() = wp.back();
    for (std::size_t i = 0; i + 1 < wp.size(); ++i) {
      const Vec3 seg = wp[i + 1] - wp[i];
      const double len = seg.norm();
      if (s <= len && len > 0.0) {
        x.head<3>() = wp[i] + seg * (s / len);
        x.tail<3>() = seg / len * cfg.trajectory.speed;
        break;
      }
      s -= len;
    }
    xs.push_back(x);
  }
  return xs;
}

std::vector<PathComponent> components_at(const Truth& t, int n, int j) {
  std::vector<PathComponent> comps;
  const int kt = static_cast<int>(t.amplitude[n][j].size());
  for (int k = 0; k < kt; ++k) {
    PathComponent c;
    if (k > 0) c.psfv = t.sfv[n][k - 1];
    c.amplitude = t.amplitude[n][j][k];
    c.visible = t.visible[n][j][k];
    comps.push_back(c);
  }
  return comps;
}

}  // namespace

int Truth::visible_count(int n, int j) const {
  int c = 0;
  for (bool v : visible[n][j]) c += v ? 1 : 0;
  return c;
}

Dataset generate_dataset(const ScenarioConfig& cfg, std::uint64_t seed, bool noise) {
  const int N = cfg.steps;
  const int J = cfg.pas();
  const int K = static_cast<int>(cfg.surfaces.size());
  const int kt = K + 1;
  Dataset ds;
  Truth& t = ds.truth;
  t.x = cfg.trajectory.mode == TrajectoryMode::random ? random_trajectory(cfg, seed) : scripted_trajectory(cfg);

  std::vector<Vec3> s(K);
  for (int k = 0; k < K; ++k) s[k] = cfg.surfaces[k].psfv;
  for (int n = 1; n <= N; ++n) {
    for (int k = 0; k < K; ++k) {
      CounterRng rng = make_stream(seed, n, Entity::Surface, k);
      s[k] = sample_sfv_walk(s[k], cfg.sigma_sfv_truth, rng);
    }
    t.sfv.push_back(s);
    std::vector<std::vector<cd>> amp(J, std::vector<cd>(kt));
    std::vector<std::vector<bool>> vis(J, std::vector<bool>(kt));
    for (int j = 0; j < J; ++j) {
      for (int k = 0; k < kt; ++k) {
        const SurfaceSpec& spec = k == 0 ? cfg.los : cfg.surfaces[k - 1];
        CounterRng rng = make_stream(seed, n, Entity::Amplitude, j, k);
        amp[j][k] = spec.mu + rng.complex_normal(spec.gamma);
        vis[j][k] = cfg.visible(k, j, n);
      }
    }
    t.amplitude.push_back(std::move(amp));
    t.visible.push_back(std::move(vis));
  }

  std::vector<std::vector<PathComponent>> first(J);
  for (int j = 0; j < J; ++j) first[j] = components_at(t, 0, j);
  t.eta = snr_noise_variance(channel_power(t.x[0].head<3>(), first, cfg.scene.pas, cfg.scene.rf, cfg.wavefront),
                             cfg.snr_db);

  ds.obs.resize(N);
  for (int n = 0; n < N; ++n) {
    ds.obs[n].resize(J);
    for (int j = 0; j < J; ++j) {
      CounterRng rng = make_stream(seed, n + 1, Entity::Noise, j);
      ds.obs[n][j] = generate_observation(t.x[n].head<3>(), components_at(t, n, j), cfg.scene.pas[j],
                                          cfg.scene.rf, noise ? t.eta : 0.0, rng, cfg.wavefront);
    }
  }
  return ds;
}

void write_dataset(const Dataset& ds, const ScenarioConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const Truth& t = ds.truth;
  const int N = t.steps();
  const int J = cfg.pas();
  const int nz = N > 0 ? static_cast<int>(ds.obs[0][0].size()) : 0;

  {
    std::ofstream bin(fs::path(dir) / "obs.bin", std::ios::binary);
    for (const auto& step : ds.obs)
      for (const auto& z : step)
        for (Eigen::Index i = 0; i < z.size(); ++i) {
          const double re = z[i].real();
          const double im = z[i].imag();
          bin.write(reinterpret_cast<const char*>(&re), sizeof(double));
          bin.write(reinterpret_cast<const char*>(&im), sizeof(double));
        }
    if (!bin) throw std::runtime_error("failed writing obs.bin");
  }
  {
    nlohmann::json side;
    side["file"] = "obs.bin";
    side["shape"] = {N, J, nz};
    side["dtype"] = "float64";
    side["complex"] = "interleaved re/im";
    side["endianness"] = "little";
    side["eta"] = t.eta;
    std::ofstream(fs::path(dir) / "obs.json") << side.dump(2) << "\n";
  }
  std::ofstream mt(fs::path(dir) / "truth_mt.csv");
  mt << std::setprecision(17) << "step,px_m,py_m,pz_m,vx_mps,vy_mps,vz_mps\n";
  for (int n = 0; n < N; ++n) {
    mt << n + 1;
    for (int i = 0; i < 6; ++i) mt << ',' << t.x[n][i];
    mt << '\n';
  }
  std::ofstream sf(fs::path(dir) / "truth_sfv.csv");
  sf << std::setprecision(17) << "step,surface,x_m,y_m,z_m\n";
  for (int n = 0; n < N; ++n)
    for (std::size_t k = 0; k < t.sfv[n].size(); ++k)
      sf << n + 1 << ',' << k + 1 << ',' << t.sfv[n][k].x() << ',' << t.sfv[n][k].y() << ','
         << t.sfv[n][k].z() << '\n';
  std::ofstream vis(fs::path(dir) / "truth_visibility.csv");
  vis << "step,pa,visible_paths\n";
  for (int n = 0; n < N; ++n)
    for (int j = 0; j < J; ++j) vis << n + 1 << ',' << j << ',' << t.visible_count(n, j) << '\n';
}

std::vector<std::vector<CVec>> read_observations(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream js(fs::path(dir) / "obs.json");
  if (!js) throw std::runtime_error("missing obs.json in " + dir);
  const nlohmann::json side = nlohmann::json::parse(js);
  if (side.at("dtype") != "float64" || side.at("endianness") != "little")
    throw std::runtime_error("unsupported observation encoding");
  const int N = side.at("shape")[0];
  const int J = side.at("shape")[1];
  const int nz = side.at("shape")[2];
  std::ifstream bin(fs::path(dir) / "obs.bin", std::ios::binary);
  std::vector<std::vector<CVec>> out(N, std::vector<CVec>(J, CVec(nz)));
  for (auto& step : out)
    for (auto& z : step)
      for (int i = 0; i < nz; ++i) {
        double re = 0.0;
        double im = 0.0;
        bin.read(reinterpret_cast<char*>(&re), sizeof(double));
        bin.read(reinterpret_cast<char*>(&im), sizeof(double));
        z[i] = {re, im};
      }
  if (!bin) throw std::runtime_error("obs.bin shorter than its sidecar shape");
  return out;
}

}  // namespace dmslam
