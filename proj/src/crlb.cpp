#include "dmslam/crlb.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace dmslam {

namespace {

inline cd unit_phase(double phase) { return {std::cos(phase), std::sin(phase)}; }

CVec kron(const CVec& a, const CVec& b) {
  CVec out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a[i] * b;
  return out;
}

struct RayGradients {
  Vec3 theta;
  Vec3 phi;
  Vec3 tau;
  Vec3 phase;  // of the carrier term -2 pi |r'| / lambda
};

RayGradients ray_gradients(const Vec3& r, double lambda) {
  const double rho2 = r.x() * r.x() + r.y() * r.y();
  const double n2 = r.squaredNorm();
  if (!(rho2 > 0.0)) throw DegenerateRay("ray along the array z-axis");
  const double rho = std::sqrt(rho2);
  const double n = std::sqrt(n2);
  RayGradients g;
  g.theta = Vec3(r.x() * r.z(), r.y() * r.z(), -rho2) / (n2 * rho);
  g.phi = Vec3(-r.y(), r.x(), 0.0) / rho2;
  g.tau = r / (kSpeedOfLight * n);
  g.phase = -2.0 * kPi * r / (lambda * n);
  return g;
}

// d(H p + s)/ds; H p + s - pa is the unrotated reflected ray.
Mat3 reflected_ray_jacobian(const Vec3& p, const Vec3& s) {
  const double s2 = s.squaredNorm();
  const double sp = s.dot(p);
  return Mat3::Identity() - 2.0 * (sp * Mat3::Identity() + s * p.transpose()) / s2 +
         4.0 * sp * s * s.transpose() / (s2 * s2);
}

std::optional<Vec3> surface_of(const GlobalState& g, int k) {
  if (k == 0) return std::nullopt;
  return g.sfv[k - 1];
}

}  // namespace

ResponseDerivatives response_derivatives(double tau, double theta, double phi, const RfParams& rf,
                                         const UraGeometry& geom) {
  const double st = std::sin(theta);
  if (std::abs(st) < 1e-12) throw DegenerateRay("azimuth undefined at the pole");
  const double k0 = 2.0 * kPi / rf.wavelength;
  const double ky = k0 * st * std::sin(phi);
  const double kz = k0 * std::cos(theta);
  const double dky_dtheta = k0 * std::cos(theta) * std::sin(phi);
  const double dky_dphi = k0 * st * std::cos(phi);
  const double dkz_dtheta = -k0 * st;

  ResponseDerivatives d;
  d.a_y.resize(geom.ny);
  d.d_ay_theta.resize(geom.ny);
  d.d_ay_phi.resize(geom.ny);
  for (int i = 0; i < geom.ny; ++i) {
    d.a_y[i] = unit_phase(ky * geom.py[i]);
    d.d_ay_theta[i] = kJ * dky_dtheta * geom.py[i] * d.a_y[i];
    d.d_ay_phi[i] = kJ * dky_dphi * geom.py[i] * d.a_y[i];
  }
  d.a_z.resize(geom.nz);
  d.d_az_theta.resize(geom.nz);
  d.d_az_phi = CVec::Zero(geom.nz);
  for (int i = 0; i < geom.nz; ++i) {
    d.a_z[i] = unit_phase(kz * geom.pz[i]);
    d.d_az_theta[i] = kJ * dkz_dtheta * geom.pz[i] * d.a_z[i];
  }

  const CVec b = delay_response(tau, rf);
  CVec db(rf.nf);
  for (int f = 0; f < rf.nf; ++f) db[f] = -kJ * 2.0 * kPi * rf.freqs[f] * b[f];

  const CVec a = kron(d.a_y, d.a_z);
  const CVec da_theta = kron(d.d_ay_theta, d.a_z) + kron(d.a_y, d.d_az_theta);
  const CVec da_phi = kron(d.d_ay_phi, d.a_z);
  d.u = kron(b, a);
  d.d_theta = kron(b, da_theta);
  d.d_phi = kron(b, da_phi);
  d.d_tau = kron(db, a);
  return d;
}

CVec channel_mean(const ChannelParams& cp, const RfParams& rf, const UraGeometry& geom) {
  CVec m = CVec::Zero(obs_length(rf, geom));
  for (int k = 0; k < cp.components(); ++k) {
    if (!cp.is_visible(k)) continue;
    const CVec b = delay_response(cp.delay[k], rf);
    const CVec a = spatial_response(cp.elevation[k], cp.azimuth[k], geom, rf.wavelength);
    m += cp.modulus[k] * unit_phase(cp.phase[k]) * kron(b, a);
  }
  return m;
}

MatX channel_fim(const ChannelParams& cp, const RfParams& rf, const UraGeometry& geom) {
  if (!(cp.eta > 0.0)) throw std::invalid_argument("noise variance must be positive");
  const int kt = cp.components();
  const int nz = obs_length(rf, geom);
  CMat D = CMat::Zero(nz, 5 * kt);
  for (int k = 0; k < kt; ++k) {
    if (!cp.is_visible(k)) continue;
    if (!(cp.modulus[k] > 0.0)) throw std::invalid_argument("moduli must be positive");
    const ResponseDerivatives d =
        response_derivatives(cp.delay[k], cp.elevation[k], cp.azimuth[k], rf, geom);
    const cd ph = unit_phase(cp.phase[k]);
    const cd rho = cp.modulus[k] * ph;
    D.col(k) = rho * d.d_theta;
    D.col(kt + k) = rho * d.d_phi;
    D.col(2 * kt + k) = rho * d.d_tau;
    D.col(3 * kt + k) = kJ * rho * d.u;
    D.col(4 * kt + k) = ph * d.u;
  }
  MatX F = MatX::Zero(cp.dim(), cp.dim());
  F.topLeftCorner(5 * kt, 5 * kt) = (2.0 / cp.eta) * (D.adjoint() * D).real();
  F(5 * kt, 5 * kt) = nz / (cp.eta * cp.eta);
  return 0.5 * (F + F.transpose());
}

int phase_dim(PhaseMode mode, int components, int pas) {
  return mode == PhaseMode::coherent ? components : components * pas;
}

int global_dim(PhaseMode mode, int surfaces, int pas) {
  const int kt = surfaces + 1;
  return 6 + 3 * surfaces + phase_dim(mode, kt, pas) + kt * pas + 1;
}

GlobalState make_global_state(const Scene& scene, const Vec6& x, const std::vector<Vec3>& sfv,
                              const std::vector<std::vector<cd>>& amplitude, double eta,
                              const std::vector<std::vector<bool>>& visible, PhaseMode mode) {
  const int J = static_cast<int>(scene.pas.size());
  const int kt = static_cast<int>(sfv.size()) + 1;
  if (static_cast<int>(amplitude.size()) != J) throw std::invalid_argument("amplitude rows != PAs");
  GlobalState g;
  g.p = x.head<3>();
  g.v = x.tail<3>();
  g.sfv = sfv;
  g.eta = eta;
  g.visible = visible;
  g.phase.resize(phase_dim(mode, kt, J));
  g.modulus.resize(kt * J);
  for (int j = 0; j < J; ++j) {
    if (static_cast<int>(amplitude[j].size()) != kt) throw std::invalid_argument("amplitude size");
    for (int k = 0; k < kt; ++k) {
      const Vec3 r = local_ray(g.p, surface_of(g, k), scene.pas[j]);
      g.modulus[j * kt + k] = std::abs(amplitude[j][k]) * scene.rf.wavelength / (4.0 * kPi * r.norm());
      if (mode == PhaseMode::noncoherent) g.phase[j * kt + k] = std::arg(amplitude[j][k]);
      else if (j == 0) g.phase[k] = std::arg(amplitude[0][k]);
    }
  }
  return g;
}

VecX to_vector(const GlobalState& g, PhaseMode mode, int pas) {
  const GlobalLayout L{g.surfaces(), pas, mode};
  VecX v(L.dim());
  v.segment<3>(L.pos()) = g.p;
  v.segment<3>(L.vel()) = g.v;
  for (int k = 0; k < L.K; ++k) v.segment<3>(L.sfv(k)) = g.sfv[k];
  v.segment(L.phase(0, 0), g.phase.size()) = g.phase;
  v.segment(L.modulus(0, 0), g.modulus.size()) = g.modulus;
  v[L.eta()] = g.eta;
  return v;
}

GlobalState from_vector(const VecX& v, const GlobalState& like, PhaseMode mode, int pas) {
  const GlobalLayout L{like.surfaces(), pas, mode};
  if (v.size() != L.dim()) throw std::invalid_argument("global vector length mismatch");
  GlobalState g = like;
  g.p = v.segment<3>(L.pos());
  g.v = v.segment<3>(L.vel());
  for (int k = 0; k < L.K; ++k) g.sfv[k] = v.segment<3>(L.sfv(k));
  g.phase = v.segment(L.phase(0, 0), phase_dim(mode, L.kt(), pas));
  g.modulus = v.segment(L.modulus(0, 0), L.kt() * pas);
  g.eta = v[L.eta()];
  return g;
}

ChannelParams local_params(const Scene& scene, const GlobalState& g, int j, PhaseMode mode) {
  const int J = static_cast<int>(scene.pas.size());
  const GlobalLayout L{g.surfaces(), J, mode};
  const int kt = L.kt();
  ChannelParams cp;
  cp.elevation.resize(kt);
  cp.azimuth.resize(kt);
  cp.delay.resize(kt);
  cp.phase.resize(kt);
  cp.modulus.resize(kt);
  cp.eta = g.eta;
  if (!g.visible.empty()) cp.visible = g.visible[j];
  const VecX gv = to_vector(g, mode, J);
  for (int k = 0; k < kt; ++k) {
    const Vec3 r = local_ray(g.p, surface_of(g, k), scene.pas[j]);
    const SphericalParams sp = spherical_params(r);
    if (sp.pole) throw DegenerateRay("ray along the array z-axis");
    cp.elevation[k] = sp.elevation;
    cp.azimuth[k] = sp.azimuth;
    cp.delay[k] = sp.delay;
    cp.phase[k] = gv[L.phase(j, k)] - 2.0 * kPi * r.norm() / scene.rf.wavelength;
    cp.modulus[k] = gv[L.modulus(j, k)];
  }
  return cp;
}

MatX jacobian(const Scene& scene, const GlobalState& g, int j, PhaseMode mode) {
  const int J = static_cast<int>(scene.pas.size());
  const GlobalLayout L{g.surfaces(), J, mode};
  const int kt = L.kt();
  const PaConfig& pa = scene.pas[j];
  MatX G = MatX::Zero(L.dim(), 5 * kt + 1);
  for (int k = 0; k < kt; ++k) {
    const std::optional<Vec3> s = surface_of(g, k);
    const Vec3 r = local_ray(g.p, s, pa);
    const RayGradients rg = ray_gradients(r, scene.rf.wavelength);
    const Mat3 H = s ? householder(*s) : Mat3::Identity();
    const Mat3 to_p = H * pa.orientation;
    const int cols[4] = {k, kt + k, 2 * kt + k, 3 * kt + k};
    const Vec3* grads[4] = {&rg.theta, &rg.phi, &rg.tau, &rg.phase};
    for (int c = 0; c < 4; ++c) G.block<3, 1>(L.pos(), cols[c]) = to_p * *grads[c];
    if (s) {
      const Mat3 to_s = reflected_ray_jacobian(g.p, *s).transpose() * pa.orientation;
      for (int c = 0; c < 4; ++c) G.block<3, 1>(L.sfv(k - 1), cols[c]) = to_s * *grads[c];
    }
    G(L.phase(j, k), 3 * kt + k) = 1.0;
    G(L.modulus(j, k), 4 * kt + k) = 1.0;
  }
  G(L.eta(), 5 * kt) = 1.0;
  return G;
}

MatX snapshot_fim(const Scene& scene, const GlobalState& g, PhaseMode mode) {
  const int J = static_cast<int>(scene.pas.size());
  const int D = global_dim(mode, g.surfaces(), J);
  MatX out = MatX::Zero(D, D);
  for (int j = 0; j < J; ++j) {
    const MatX G = jacobian(scene, g, j, mode);
    const MatX F = channel_fim(local_params(scene, g, j, mode), scene.rf, scene.pas[j].geometry);
    out.noalias() += G * F * G.transpose();
  }
  return 0.5 * (out + out.transpose());
}

MatX mc_expectation(const Scene& scene, const std::vector<GlobalState>& draws, PhaseMode mode,
                    int threads) {
  if (draws.empty()) throw std::invalid_argument("need at least one draw");
  std::vector<MatX> parts(draws.size());
  parallel_for(static_cast<int>(draws.size()), threads,
               [&](int i) { parts[i] = snapshot_fim(scene, draws[i], mode); });
  MatX sum = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) sum += parts[i];
  return sum / static_cast<double>(draws.size());
}

TransitionModel global_transition(const NcvModel& ncv, double sigma_sfv, int surfaces, int pas,
                                  PhaseMode mode, const PseudoVariances& pv) {
  const GlobalLayout L{surfaces, pas, mode};
  const int D = L.dim();
  TransitionModel t{MatX::Zero(D, D), MatX::Zero(D, D)};
  t.F.topLeftCorner<6, 6>() = ncv.F;
  t.Q.topLeftCorner<6, 6>() = ncv.Q;
  for (int i = 6; i < 6 + 3 * surfaces; ++i) {
    t.F(i, i) = 1.0;
    t.Q(i, i) = sigma_sfv * sigma_sfv;
  }
  const int np = phase_dim(mode, L.kt(), pas);
  for (int i = 0; i < np; ++i) t.Q(L.phase(0, 0) + i, L.phase(0, 0) + i) = pv.phase;
  for (int i = 0; i < L.kt() * pas; ++i) t.Q(L.modulus(0, 0) + i, L.modulus(0, 0) + i) = pv.modulus;
  t.Q(L.eta(), L.eta()) = pv.eta;
  return t;
}

MatX inverse_floor(const MatX& A, int* floored) {
  // Floor in the unit-diagonal scaling, so parameters in different units (seconds, metres,
  // noise power) do not floor each other; only genuine rank deficiency gets clamped.
  const MatX S0 = 0.5 * (A + A.transpose());
  VecX d = S0.diagonal();
  if (!(d.maxCoeff() > 0.0)) throw std::domain_error("information matrix has no positive eigenvalue");
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = d[i] > 0.0 ? 1.0 / std::sqrt(d[i]) : 1.0;
  const MatX S = d.asDiagonal() * S0 * d.asDiagonal();
  Eigen::SelfAdjointEigenSolver<MatX> es(S);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  VecX lam = es.eigenvalues();
  const double top = lam.maxCoeff();
  const double floor = 1e-12 * top;
  int count = 0;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam[i] < floor) {
      lam[i] = floor;
      ++count;
    }
  }
  if (floored) *floored += count;
  const MatX& V = es.eigenvectors();
  MatX inv = d.asDiagonal() * (V * lam.cwiseInverse().asDiagonal() * V.transpose()) * d.asDiagonal();
  return 0.5 * (inv + inv.transpose());
}

double position_bound(const MatX& info, int* floored) {
  const MatX C = inverse_floor(info, floored);
  return std::sqrt(C.topLeftCorner<3, 3>().trace());
}

VecX mapping_bounds(const MatX& info, int surfaces, int* floored) {
  const MatX C = inverse_floor(info, floored);
  VecX out(surfaces);
  for (int k = 0; k < surfaces; ++k) out[k] = std::sqrt(C.block<3, 3>(6 + 3 * k, 6 + 3 * k).trace());
  return out;
}

std::vector<BoundStep> pcrlb_recursion(const std::vector<MatX>& snapshots, const MatX& F,
                                       const MatX& Q, const MatX& J_init, int surfaces) {
  std::vector<BoundStep> out;
  out.reserve(snapshots.size());
  MatX prev;
  for (std::size_t n = 0; n < snapshots.size(); ++n) {
    BoundStep st;
    MatX pred;
    if (n == 0) {
      pred = J_init;
    } else {
      const MatX P = F * inverse_floor(prev, &st.floored) * F.transpose() + Q;
      pred = inverse_floor(P, &st.floored);
    }
    MatX post = snapshots[n] + pred;
    post = 0.5 * (post + post.transpose());
    const MatX C = inverse_floor(post, &st.floored);
    st.peb = std::sqrt(C.topLeftCorner<3, 3>().trace());
    st.meb.resize(surfaces);
    for (int k = 0; k < surfaces; ++k)
      st.meb[k] = std::sqrt(C.block<3, 3>(6 + 3 * k, 6 + 3 * k).trace());
    st.info = post;
    prev = std::move(post);
    out.push_back(std::move(st));
  }
  return out;
}

}  // namespace dmslam
