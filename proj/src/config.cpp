#include "dmslam/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dmslam {

namespace {

using nlohmann::json;

// Key-path aware accessors; physics keys go through need(), knobs through get_or().
struct Node {
  const json& j;
  std::string path;

  bool has(const char* key) const { return j.is_object() && j.contains(key); }

  Node at(const char* key) const {
    if (!has(key)) throw ConfigError("missing required key '" + path + "." + key + "'");
    return {j.at(key), path + "." + key};
  }

  Node at(std::size_t i) const { return {j.at(i), path + "[" + std::to_string(i) + "]"}; }

  std::size_t size() const {
    if (!j.is_array()) throw ConfigError("'" + path + "' must be an array");
    return j.size();
  }

  double num() const {
    if (!j.is_number()) throw ConfigError("'" + path + "' must be a number");
    return j.get<double>();
  }

  int integer() const {
    if (!j.is_number_integer()) throw ConfigError("'" + path + "' must be an integer");
    return j.get<int>();
  }

  bool boolean() const {
    if (!j.is_boolean()) throw ConfigError("'" + path + "' must be true or false");
    return j.get<bool>();
  }

  std::string str() const {
    if (!j.is_string()) throw ConfigError("'" + path + "' must be a string");
    return j.get<std::string>();
  }

  VecX vec(int n) const {
    if (!j.is_array() || static_cast<int>(j.size()) != n)
      throw ConfigError("'" + path + "' must be an array of " + std::to_string(n) + " numbers");
    VecX v(n);
    for (int i = 0; i < n; ++i) v[i] = at(static_cast<std::size_t>(i)).num();
    return v;
  }

  Vec3 vec3() const { return vec(3); }

  cd complex() const {
    const VecX v = vec(2);
    return {v[0], v[1]};
  }

  double get_or(const char* key, double def) const { return has(key) ? at(key).num() : def; }
  int get_or(const char* key, int def) const { return has(key) ? at(key).integer() : def; }
  bool get_or(const char* key, bool def) const { return has(key) ? at(key).boolean() : def; }
};

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

Box3 read_box(const Node& n) {
  Box3 b;
  b.lo = n.at("lo").vec3();
  b.hi = n.at("hi").vec3();
  check((b.hi.array() > b.lo.array()).all(), "'" + n.path + "' needs hi > lo on every axis");
  return b;
}

PaConfig read_pa(const Node& n, double lambda) {
  PaConfig pa;
  pa.position = n.at("position").vec3();
  const Vec3 ypr = n.at("orientation_ypr").vec3();
  pa.orientation = rotation_ypr(ypr[0], ypr[1], ypr[2]);
  const int ny = n.at("ny").integer();
  const int nz = n.at("nz").integer();
  const double spacing = n.at("spacing_wavelengths").num();
  check(ny >= 1 && nz >= 1, "'" + n.path + "' array counts must be >= 1");
  check(spacing > 0.0, "'" + n.path + ".spacing_wavelengths' must be positive");
  pa.geometry = template_layout(ny, nz, spacing * lambda, spacing * lambda);
  return pa;
}

SurfaceSpec read_amplitude(const Node& n) {
  SurfaceSpec s;
  s.mu = n.at("mu").complex();
  s.gamma = n.at("gamma").num();
  check(s.gamma >= 0.0, "'" + n.path + ".gamma' must be >= 0");
  return s;
}

void read_filter(const Node& f, ScenarioConfig& c) {
  EngineConfig& e = c.filter;
  e.dt = f.at("dt").num();
  check(e.dt > 0.0, "'" + f.path + ".dt' must be positive");
  e.sigma_v = f.at("sigma_v").num();
  e.sigma_sfv = f.at("sigma_sfv").num();
  e.mt_prior = read_box(f.at("mt_prior"));
  e.birth_box = read_box(f.at("birth_box"));
  if (f.has("partitions")) {
    const Node parts = f.at("partitions");
    for (std::size_t i = 0; i < parts.size(); ++i) e.partitions.push_back(read_box(parts.at(i)));
  }
  e.particles = f.get_or("particles", e.particles);
  e.sigma_v0 = f.get_or("sigma_v0", e.sigma_v0);
  e.eta_min = f.get_or("eta_min", e.eta_min);
  e.eta_max = f.get_or("eta_max", e.eta_max);
  e.c_eta = f.get_or("c_eta", e.c_eta);
  e.c_gamma = f.get_or("c_gamma", e.c_gamma);
  e.sigma_mu = f.get_or("sigma_mu", e.sigma_mu);
  e.gamma_max = f.get_or("gamma_max", e.gamma_max);
  e.mu_max = f.get_or("mu_max", e.mu_max);
  e.n_grid = f.get_or("n_grid", e.n_grid);
  e.birth_cov_floor = f.get_or("birth_cov_floor", e.birth_cov_floor);
  e.t_dec = f.get_or("t_dec", e.t_dec);
  e.t_pru = f.get_or("t_pru", e.t_pru);
  e.regularize = f.get_or("regularize", e.regularize);
  e.existence.ps = f.get_or("p_s", e.existence.ps);
  e.existence.ps_pr = f.get_or("p_s_pr", e.existence.ps_pr);
  e.existence.pr_rev = f.get_or("p_rev", e.existence.pr_rev);
  e.existence.pb_pr = f.get_or("p_b_pr", e.existence.pb_pr);
  e.existence.mu_b = f.get_or("mu_b", e.existence.mu_b);
  if (f.has("route")) {
    const std::string r = f.at("route").str();
    check(r == "fast" || r == "dense", "'" + f.path + ".route' must be fast or dense");
    e.route = r == "fast" ? Route::fast : Route::dense;
  }
  if (f.has("closure")) {
    const std::string c = f.at("closure").str();
    check(c == "principal" || c == "spectral" || c == "mvector",
          "'" + f.path + ".closure' must be principal, spectral or mvector");
    e.closure = c == "principal" ? Closure::principal : c == "spectral" ? Closure::spectral : Closure::mvector;
  }
  e.kernel_floor_position = f.get_or("kernel_floor_position", e.kernel_floor_position);
  e.kernel_floor_velocity = f.get_or("kernel_floor_velocity", e.kernel_floor_velocity);
  check(e.kernel_floor_position >= 0.0 && e.kernel_floor_velocity >= 0.0,
        "'" + f.path + "' kernel floors must be >= 0");
  e.iota_samples = f.get_or("iota_samples", e.iota_samples);
  check(e.iota_samples >= 1, "'" + f.path + ".iota_samples' must be >= 1");
  check(e.particles >= 1, "'" + f.path + ".particles' must be >= 1");
  check(e.eta_max > e.eta_min && e.eta_min > 0.0, "'" + f.path + "' needs 0 < eta_min < eta_max");
  check(e.gamma_max > 0.0 && e.mu_max >= 0.0, "'" + f.path + "' needs gamma_max > 0, mu_max >= 0");
  check(e.n_grid >= 1, "'" + f.path + ".n_grid' must be >= 1");
  check(e.t_pru >= 0.0 && e.t_dec <= 1.0, "'" + f.path + "' thresholds out of range");
}

}  // namespace

bool ScenarioConfig::visible(int component, int pa, int step) const {
  for (const auto& h : hidden)
    if (h.component == component && h.pa == pa && step >= h.from && step <= h.to) return false;
  return true;
}

ScenarioConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    // The message carries "line L, column C".
    throw ConfigError(std::string("syntax error: ") + e.what());
  }
  const Node r{root, "$"};
  check(root.is_object(), "top level must be an object");

  ScenarioConfig c;
  c.name = r.has("name") ? r.at("name").str() : std::string("scenario");

  const Node rf = r.at("rf");
  const int nf = rf.at("nf").integer();
  check(nf >= 1, "'$.rf.nf' must be >= 1");
  try {
    c.scene.rf = RfParams::make(rf.at("fc").num(), rf.at("bandwidth").num(), nf);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("'$.rf': ") + e.what());
  }

  const Node pas = r.at("pas");
  check(pas.size() >= 1, "'$.pas' needs at least one PA");
  for (std::size_t i = 0; i < pas.size(); ++i) c.scene.pas.push_back(read_pa(pas.at(i), c.scene.rf.wavelength));

  c.los = read_amplitude(r.at("los"));
  const Node surf = r.at("surfaces");
  for (std::size_t i = 0; i < surf.size(); ++i) {
    SurfaceSpec s = read_amplitude(surf.at(i));
    s.psfv = surf.at(i).at("psfv").vec3();
    check(s.psfv.norm() > 0.0, "'" + surf.at(i).path + ".psfv' must be nonzero");
    c.surfaces.push_back(s);
  }
  c.sigma_sfv_truth = r.at("sigma_sfv_truth").num();
  check(c.sigma_sfv_truth >= 0.0, "'$.sigma_sfv_truth' must be >= 0");

  const Node tr = r.at("trajectory");
  const std::string mode = tr.at("mode").str();
  if (mode == "random") {
    c.trajectory.mode = TrajectoryMode::random;
    c.trajectory.x0 = tr.at("x0").vec(6);
    c.trajectory.sigma_v = tr.at("sigma_v").num();
    check(c.trajectory.sigma_v >= 0.0, "'$.trajectory.sigma_v' must be >= 0");
  } else if (mode == "scripted") {
    c.trajectory.mode = TrajectoryMode::scripted;
    const Node wp = tr.at("waypoints");
    check(wp.size() >= 1, "'$.trajectory.waypoints' needs at least one point");
    for (std::size_t i = 0; i < wp.size(); ++i) c.trajectory.waypoints.push_back(wp.at(i).vec3());
    c.trajectory.speed = tr.at("speed").num();
    check(c.trajectory.speed >= 0.0, "'$.trajectory.speed' must be >= 0");
  } else {
    throw ConfigError("'$.trajectory.mode' must be random or scripted");
  }

  c.snr_db = r.at("snr_db").num();
  c.steps = r.at("steps").integer();
  check(c.steps >= 1, "'$.steps' must be >= 1");
  c.mc_runs = r.get_or("mc_runs", 1);
  check(c.mc_runs >= 1, "'$.mc_runs' must be >= 1");
  if (r.has("seed")) c.seed = r.at("seed").j.get<std::uint64_t>();
  if (r.has("wavefront")) {
    const std::string w = r.at("wavefront").str();
    check(w == "planar" || w == "spherical", "'$.wavefront' must be planar or spherical");
    c.wavefront = w == "planar" ? Wavefront::planar : Wavefront::spherical;
  }

  if (r.has("hidden")) {
    const Node h = r.at("hidden");
    for (std::size_t i = 0; i < h.size(); ++i) {
      const Node e = h.at(i);
      HiddenInterval hi{e.at("component").integer(), e.at("pa").integer(), e.at("from").integer(),
                        e.at("to").integer()};
      check(hi.component >= 0 && hi.component < c.components(), "'" + e.path + ".component' out of range");
      check(hi.pa >= 0 && hi.pa < c.pas(), "'" + e.path + ".pa' out of range");
      check(hi.from <= hi.to, "'" + e.path + "' needs from <= to");
      c.hidden.push_back(hi);
    }
  }

  read_filter(r.at("filter"), c);
  c.filter.seed = c.seed;

  if (r.has("crlb")) {
    const Node b = r.at("crlb");
    c.crlb_draws = b.get_or("draws", 0);
    c.pseudo.phase = b.get_or("sigma2_phase", c.pseudo.phase);
    c.pseudo.modulus = b.get_or("sigma2_modulus", c.pseudo.modulus);
    c.pseudo.eta = b.get_or("sigma2_eta", c.pseudo.eta);
    check(c.crlb_draws >= 0, "'$.crlb.draws' must be >= 0");
  }
  return c;
}

ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::uint64_t run_seed(std::uint64_t seed, int run) {
  return CounterRng::mix(seed * 0x100000001B3ULL + static_cast<std::uint64_t>(run) + 1);
}

}  // namespace dmslam
