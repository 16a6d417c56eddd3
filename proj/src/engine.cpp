#include "dmslam/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include <Eigen/Eigenvalues>

#include "dmslam/fastmsg.hpp"

namespace dmslam {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const VecX& v, double extra = kNegInf) {
  double m = extra;
  for (Eigen::Index i = 0; i < v.size(); ++i) m = std::max(m, v[i]);
  if (m == kNegInf) return kNegInf;
  double s = std::exp(extra - m);
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

VecX normalize_log(const VecX& lw) {
  const double t = log_sum_exp(lw);
  if (t == kNegInf) throw std::runtime_error("all particle weights vanished");
  return (lw.array() - t).exp().matrix();
}

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

// Matrix square root of a PSD matrix via its eigen-decomposition; negative eigenvalues
// from round-off are clipped to zero.
MatX psd_sqrt(const MatX& S) {
  Eigen::SelfAdjointEigenSolver<MatX> es(S);
  const VecX sq = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * sq.asDiagonal();
}

// Weighted second central moment of the rows of X (n x d) under normalized weights w.
MatX weighted_cov(const MatX& X, const VecX& w) {
  const VecX mean = X.transpose() * w;
  const MatX C = X.rowwise() - mean.transpose();
  return C.transpose() * w.asDiagonal() * C;
}

// Systematic resampling followed by Gaussian kernel regularization with bandwidth h and
// covariance h^2 Sigma, Sigma taken from the weighted particles before resampling.
MatX resample_regularize(const MatX& X, const VecX& w, double u0, bool regularize,
                         const std::function<CounterRng(int)>& kernel_rng, const VecX* floor_sd = nullptr) {
  const int n = static_cast<int>(X.rows());
  const int d = static_cast<int>(X.cols());
  const std::vector<int> idx = resample_systematic(w, n, u0);
  MatX out(n, d);
  for (int p = 0; p < n; ++p) out.row(p) = X.row(idx[p]);
  if (!regularize || d == 0) return out;
  const double h = kernel_bandwidth(d, n);
  MatX S = weighted_cov(X, w);
  // Diagonal floor keeps a collapsed cloud from freezing.
  const double floor = 1e-12 * std::max(S.trace() / d, 1e-300);
  S.diagonal().array() += floor;
  // An absolute floor on the kernel standard deviation, applied after the bandwidth.
  if (floor_sd != nullptr)
    for (int k = 0; k < d; ++k) S(k, k) = std::max(S(k, k), std::pow((*floor_sd)[k] / h, 2));
  const MatX L = h * psd_sqrt(S);
  for (int p = 0; p < n; ++p) {
    CounterRng rng = kernel_rng(p);
    VecX g(d);
    for (int k = 0; k < d; ++k) g[k] = rng.normal();
    out.row(p) += (L * g).transpose();
  }
  return out;
}

// log CN(e; 0, eta I + F F^H) without the n log(pi) constant; Woodbury below full rank,
// dense Cholesky otherwise.
double gaussian_log_density(double eta, const CMat& F, const CVec& e) {
  const int n = static_cast<int>(e.size());
  if (F.cols() < n) {
    const LowRankFactor A(eta, F);
    return -A.quad(e) - A.log_det();
  }
  CMat C = F * F.adjoint();
  C.diagonal().array() += eta;
  OpCounter::add(static_cast<std::uint64_t>(n) * n * (F.cols() + n));
  const Eigen::LLT<CMat> llt(C);
  if (llt.info() != Eigen::Success) throw std::runtime_error("iota covariance is not positive definite");
  const CVec y = llt.matrixL().solve(e);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().real().array().log().sum();
  return -y.squaredNorm() - logdet;
}

// sqrt(lambda_1) v_1 of a Hermitian matrix; zero when it has no positive eigenvalue.
CVec leading_factor(const CMat& C) {
  const Eigen::SelfAdjointEigenSolver<CMat> es(C);
  const Eigen::Index last = C.rows() - 1;
  const double l = es.eigenvalues()[last];
  OpCounter::add(static_cast<std::uint64_t>(C.rows()) * C.rows() * C.rows());
  return l > 0.0 ? CVec(std::sqrt(l) * es.eigenvectors().col(last)) : CVec(CVec::Zero(C.rows()));
}

// Factor F with F F^H equal to the Hermitian C restricted to eigenvalues above floor.
CMat psd_factor(const CMat& C, double floor) {
  const Eigen::SelfAdjointEigenSolver<CMat> es(C);
  const VecX& ev = es.eigenvalues();
  int keep = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) keep += ev[i] > floor ? 1 : 0;
  CMat F(C.rows(), keep);
  for (Eigen::Index i = ev.size() - keep, c = 0; i < ev.size(); ++i, ++c)
    F.col(c) = es.eigenvectors().col(i) * std::sqrt(ev[i]);
  OpCounter::add(static_cast<std::uint64_t>(C.rows()) * C.rows() * C.rows());
  return F;
}

}  // namespace

void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  if (threads <= 1 || n < 2) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  const int t = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(t);
  for (int k = 0; k < t; ++k) {
    const int lo = static_cast<int>(static_cast<long long>(n) * k / t);
    const int hi = static_cast<int>(static_cast<long long>(n) * (k + 1) / t);
    pool.emplace_back([lo, hi, &body] {
      for (int i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

CMat residual_projector(const CMat& psi) {
  const Eigen::Index nz = psi.rows();
  CMat P = CMat::Identity(nz, nz);
  if (psi.cols() == 0) return P;
  CMat G = psi.adjoint() * psi;
  const double ridge = 1e-10 * G.trace().real();
  G.diagonal().array() += ridge;
  Eigen::LDLT<CMat> ldlt(G);
  P -= psi * ldlt.solve(psi.adjoint());
  return P;
}

BirthProposal birth_proposal(const std::vector<CVec>& residuals, const Vec3& p_mt, const Scene& scene,
                             const Box3& partition, int n_grid, CounterRng& rng) {
  if (n_grid < 1) throw std::invalid_argument("birth grid needs at least one candidate");
  if (residuals.size() != scene.pas.size()) throw std::invalid_argument("one residual per PA");
  BirthProposal bp;
  bp.candidates.resize(n_grid);
  bp.bartlett = VecX::Zero(n_grid);
  for (int i = 0; i < n_grid; ++i) bp.candidates[i] = partition.sample(rng);
  for (int i = 0; i < n_grid; ++i) {
    cd acc{0.0, 0.0};
    bool ok = true;
    for (std::size_t j = 0; j < scene.pas.size() && ok; ++j) {
      try {
        const Vec3 r = local_ray(p_mt, bp.candidates[i], scene.pas[j]);
        const CVec psi = planar_response(r, scene.rf, scene.pas[j].geometry, false);
        acc += residuals[j].dot(psi) / static_cast<double>(psi.size());
      } catch (const std::exception&) {
        ok = false;
      }
    }
    bp.bartlett[i] = ok ? std::norm(acc) : 0.0;
  }
  const double total = bp.bartlett.sum();
  VecX w = total > 0.0 ? VecX(bp.bartlett / total) : VecX(VecX::Constant(n_grid, 1.0 / n_grid));
  int best = 0;
  for (int i = 1; i < n_grid; ++i)
    if (w[i] > w[best]) best = i;
  if (total == 0.0) {
    // Degenerate residual: center on the candidate mean instead of an arbitrary argmax.
    Vec3 m = Vec3::Zero();
    for (const auto& c : bp.candidates) m += c;
    bp.mean = m / n_grid;
  } else {
    bp.mean = bp.candidates[best];
  }
  Mat3 C = Mat3::Zero();
  for (int i = 0; i < n_grid; ++i) {
    const Vec3 d = bp.candidates[i] - bp.mean;
    C += w[i] * d * d.transpose();
  }
  bp.cov = C;
  return bp;
}

std::vector<int> resample_systematic(const VecX& weights, int count, double u0) {
  const double total = weights.sum();
  if (!(total > 0.0)) throw std::invalid_argument("cannot resample a zero-mass set");
  std::vector<int> idx(count);
  const double step = 1.0 / count;
  double cum = weights[0] / total;
  int i = 0;
  const int n = static_cast<int>(weights.size());
  for (int p = 0; p < count; ++p) {
    const double u = (u0 + p) * step;
    while (u > cum && i < n - 1) {
      ++i;
      cum += weights[i] / total;
    }
    idx[p] = i;
  }
  return idx;
}

double kernel_bandwidth(int dim, int particles) {
  return std::pow(4.0 / ((dim + 2.0) * particles), 1.0 / (dim + 4.0));
}

Engine::Engine(Scene scene, EngineConfig cfg) : scene_(std::move(scene)), cfg_(std::move(cfg)) {
  if (cfg_.particles < 1) throw std::invalid_argument("need at least one particle");
  if (scene_.pas.empty()) throw std::invalid_argument("need at least one PA");
  if (cfg_.partitions.empty()) cfg_.partitions.push_back(cfg_.birth_box);
  ncv_ = ncv_build(cfg_.dt, cfg_.sigma_v);
  dummy_.roi = cfg_.birth_box;
  dummy_.gamma_max = cfg_.gamma_max;
  dummy_.mu_max = cfg_.mu_max;
}

double Engine::partition_volume_fraction(int q) const {
  double total = 0.0;
  for (const auto& b : cfg_.partitions) total += b.volume();
  return cfg_.partitions[q].volume() / total;
}

std::optional<CVec> Engine::steering(const Vec3& p_mt, const std::optional<Vec3>& psfv, int j) const {
  try {
    return planar_response(local_ray(p_mt, psfv, scene_.pas[j]), scene_.rf, scene_.pas[j].geometry, false);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

PfTrack Engine::newborn(int step, bool los, int index) const {
  const int P = cfg_.particles;
  const int J = static_cast<int>(scene_.pas.size());
  PfTrack t;
  t.los = los;
  t.born = step;
  t.gamma.resize(P);
  t.mu.resize(P);
  t.w = VecX::Zero(P);
  t.ppr = VecX::Constant(J, cfg_.existence.pb_pr);
  if (!los) t.psfv.resize(P, Vec3::Zero());
  for (int p = 0; p < P; ++p) {
    CounterRng rng = make_stream(cfg_.seed, step, Entity::BirthDraw, index, p);
    t.gamma[p] = rng.uniform(0.0, cfg_.gamma_max);
    const cd mu = sample_disc(cfg_.mu_max, rng);
    t.mu[p] = cfg_.variant == Variant::zm ? cd(0.0) : mu;
  }
  return t;
}

void Engine::initialize(FilterState& st) const {
  const int P = cfg_.particles;
  const int J = static_cast<int>(scene_.pas.size());
  st.mt.x.resize(P);
  st.mt.w = VecX::Constant(P, 1.0 / P);
  for (int p = 0; p < P; ++p) {
    CounterRng rng = make_stream(cfg_.seed, 0, Entity::MtInit, 0, p);
    Vec6 x;
    x.head<3>() = cfg_.mt_prior.sample(rng);
    for (int k = 0; k < 3; ++k) x[3 + k] = cfg_.sigma_v0 * rng.normal();
    st.mt.x[p] = x;
  }
  st.noise.resize(J);
  for (int j = 0; j < J; ++j) {
    st.noise[j].eta.resize(P);
    st.noise[j].w = VecX::Constant(P, 1.0 / P);
    for (int p = 0; p < P; ++p) {
      CounterRng rng = make_stream(cfg_.seed, 0, Entity::NoiseInit, j, p);
      st.noise[j].eta[p] = rng.uniform(cfg_.eta_min, cfg_.eta_max);
    }
  }
}

FilterState Engine::predict(const FilterState& state, const std::vector<CVec>& obs) const {
  const int P = cfg_.particles;
  const int J = static_cast<int>(scene_.pas.size());
  if (static_cast<int>(obs.size()) != J) throw std::invalid_argument("one observation per PA");
  FilterState st = state;
  const bool first = state.mt.x.empty();
  if (first) initialize(st);
  st.step = state.step + 1;
  const int n = st.step;

  parallel_for(P, cfg_.threads, [&](int p) {
    CounterRng rng = make_stream(cfg_.seed, n, Entity::MtPredict, 0, p);
    st.mt.x[p] = sample_mt_transition(st.mt.x[p], ncv_, rng);
  });
  for (int j = 0; j < J; ++j)
    for (int p = 0; p < P; ++p) {
      CounterRng rng = make_stream(cfg_.seed, n, Entity::NoisePredict, j, p);
      st.noise[j].eta[p] = sample_gamma_transition(st.noise[j].eta[p], cfg_.c_eta, rng);
    }

  if (first) {
    PfTrack los = newborn(n, true, 0);
    los.id = 0;
    los.w = VecX::Constant(P, birth_bernoulli(cfg_.existence.mu_b) / P);
    st.tracks.clear();
    st.tracks.push_back(std::move(los));
    return st;
  }

  for (auto& t : st.tracks) {
    t.w *= cfg_.existence.ps;
    for (int p = 0; p < t.size(); ++p) {
      CounterRng rng = make_stream(cfg_.seed, n, Entity::PfPredict, static_cast<std::uint64_t>(t.id), p);
      if (!t.los) t.psfv[p] = sample_sfv_walk(t.psfv[p], cfg_.sigma_sfv, rng);
      t.gamma[p] = sample_gamma_transition(std::max(t.gamma[p], 1e-300), cfg_.c_gamma, rng);
      if (cfg_.variant == Variant::nzm) t.mu[p] = sample_mu_transition(t.mu[p], cfg_.sigma_mu, rng);
    }
    for (Eigen::Index j = 0; j < t.ppr.size(); ++j)
      t.ppr[j] = pr_transition(t.ppr[j], cfg_.existence.ps_pr, cfg_.existence.pr_rev).first;
  }
  add_births(st, obs);
  return st;
}

void Engine::add_births(FilterState& st, const std::vector<CVec>& obs) const {
  const int P = cfg_.particles;
  const int J = static_cast<int>(scene_.pas.size());
  const int n = st.step;

  Vec6 xhat = Vec6::Zero();
  for (int p = 0; p < P; ++p) xhat += st.mt.w[p] * st.mt.x[p];
  const Vec3 phat = xhat.head<3>();

  std::vector<CVec> residuals(J);
  for (int j = 0; j < J; ++j) {
    std::vector<CVec> cols;
    for (const auto& t : st.tracks) {
      std::optional<Vec3> psfv;
      if (!t.los) {
        const double ex = t.existence();
        if (!(ex > 0.0)) continue;
        Vec3 m = Vec3::Zero();
        for (int p = 0; p < t.size(); ++p) m += t.w[p] * t.psfv[p];
        psfv = m / ex;
      }
      if (auto s = steering(phat, psfv, j)) cols.push_back(*s);
    }
    CMat psi(obs[j].size(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) psi.col(static_cast<Eigen::Index>(c)) = cols[c];
    residuals[j] = residual_projector(psi) * obs[j];
  }

  for (std::size_t q = 0; q < cfg_.partitions.size(); ++q) {
    const Box3& part = cfg_.partitions[q];
    CounterRng grid_rng = make_stream(cfg_.seed, n, Entity::BirthGrid, q, 0);
    const BirthProposal bp = birth_proposal(residuals, phat, scene_, part, cfg_.n_grid, grid_rng);
    const Mat3 C = bp.cov + cfg_.birth_cov_floor * Mat3::Identity();
    const Eigen::LLT<Mat3> llt(C);
    const Mat3 L = llt.matrixL();
    const double half_logdet = std::log(L.diagonal().prod());

    const int id = st.next_id++;
    PfTrack t = newborn(n, false, static_cast<int>(q) + 1);
    t.id = id;
    VecX lw(P);
    for (int p = 0; p < P; ++p) {
      CounterRng rng = make_stream(cfg_.seed, n, Entity::BirthDraw, 1000 + q, p);
      Vec3 g;
      for (int k = 0; k < 3; ++k) g[k] = rng.normal();
      t.psfv[p] = bp.mean + L * g;
      // f_B / f_p with f_B uniform on the partition; hyperprior factors cancel.
      lw[p] = part.contains(t.psfv[p]) && t.psfv[p].norm() > 0.0
                  ? 0.5 * g.squaredNorm() + half_logdet
                  : kNegInf;
    }
    const double pb = birth_bernoulli(cfg_.existence.mu_b, partition_volume_fraction(static_cast<int>(q)));
    const double tot = log_sum_exp(lw);
    if (tot == kNegInf) {
      t.w = VecX::Zero(P);
    } else {
      t.w = pb * (lw.array() - tot).exp().matrix();
    }
    st.tracks.push_back(std::move(t));
  }
}

std::vector<PaMessages> Engine::messages(const FilterState& predicted, const std::vector<CVec>& obs) const {
  return cfg_.route == Route::fast ? fast_messages(predicted, obs) : dense_route_messages(predicted, obs);
}

std::vector<PaMessages> Engine::fast_messages(const FilterState& st, const std::vector<CVec>& obs) const {
  const int P = static_cast<int>(st.mt.x.size());
  const int J = static_cast<int>(scene_.pas.size());
  const int S = static_cast<int>(st.tracks.size());
  const bool zm = cfg_.variant == Variant::zm;
  for (const auto& t : st.tracks)
    if (t.size() != P) throw std::invalid_argument("fast route pairs MT and PF particles one to one");

  std::vector<PaMessages> out(J);
  for (int j = 0; j < J; ++j) {
    const CVec& z = obs[j];
    const int nz = static_cast<int>(z.size());
    PaMessages& msg = out[j];

    // Paired steering psi(x^p, phi_s^p); degenerate rays contribute nothing.
    std::vector<CMat> psi(S, CMat::Zero(nz, P));
    for (int s = 0; s < S; ++s) {
      const PfTrack& t = st.tracks[s];
      parallel_for(P, cfg_.threads, [&](int p) {
        try {
          const Vec3 r = local_ray(st.mt.x[p].head<3>(), t.los ? std::nullopt : std::optional<Vec3>(t.psfv[p]),
                                   scene_.pas[j]);
          planar_response_into(r, scene_.rf, scene_.pas[j].geometry, false, psi[s].col(p).data());
        } catch (const std::exception&) {
          psi[s].col(p).setZero();
        }
      });
    }

    std::vector<double> zeta(S), rho(S), pdot(S), pddot(S);
    std::vector<VecX> a(S);
    CMat mu3 = CMat::Zero(nz, S), mu4 = CMat::Zero(nz, S), M = CMat::Zero(nz, S), Mw = CMat::Zero(nz, S);
    for (int s = 0; s < S; ++s) {
      const PfTrack& t = st.tracks[s];
      zeta[s] = t.ppr[j];
      rho[s] = t.existence();
      pdot[s] = 1.0 - zeta[s];
      pddot[s] = 1.0 - zeta[s] * rho[s];
      a[s] = static_cast<double>(P) * t.w;  // equals rho for uniform PF weights
      for (int p = 0; p < P; ++p) {
        const double wb = st.mt.w[p] * a[s][p];
        if (wb == 0.0) continue;
        const auto col = psi[s].col(p);
        const cd mu = zm ? cd(0.0) : t.mu[p];
        const double m2 = std::norm(mu);
        mu4.col(s) += wb * mu * col;
        M.col(s) += wb * std::sqrt(t.gamma[p] + m2 * pddot[s]) * col;
        Mw.col(s) += wb * std::sqrt(t.gamma[p] + m2 * pdot[s]) * col;
      }
      mu3.col(s) = zeta[s] * mu4.col(s);
      M.col(s) *= zeta[s];
    }
    double eta_bar = st.noise[j].w.dot(st.noise[j].eta);
    const CVec mu3_sum = mu3.rowwise().sum();

    // MT update message per particle.
    msg.iota.resize(P);
    if (cfg_.iota_samples <= 1) {
      parallel_for(P, cfg_.threads, [&](int p) {
        CMat Mi(nz, S);
        CVec e = z;
        for (int s = 0; s < S; ++s) {
          const PfTrack& t = st.tracks[s];
          const cd mu = zm ? cd(0.0) : t.mu[p];
          const double g = zeta[s] * a[s][p];
          Mi.col(s) = g * std::sqrt(t.gamma[p] + std::norm(mu) * pddot[s]) * psi[s].col(p);
          e -= g * mu * psi[s].col(p);
        }
        const LowRankFactor base(eta_bar, std::move(Mi));
        msg.iota[p] = eval_message(MessageKind::iota, base, e, nullptr, 0.0, true, false);
      });
    } else {
      // Each feature's moments given x^p are integrated over M strided PF particles instead of
      // the single paired one. Per feature the Bernoulli-mixture covariance
      //   c sum_m w_m (gamma_m psi_m psi_m^H + (v_m - vbar)(v_m - vbar)^H) + c (1 - c) vbar vbar^H,
      // with c = rho zeta and v_m = mu_m psi_m, is carried by 2M + 1 factor columns.
      const int M = std::min(cfg_.iota_samples, P);
      const int stride = std::max(1, P / M);
      const int R = S * (2 * M + 1);
      parallel_for(P, cfg_.threads, [&](int p) {
        CMat F = CMat::Zero(nz, R);
        CVec e = z;
        CVec u(nz);
        for (int s = 0; s < S; ++s) {
          const PfTrack& t = st.tracks[s];
          double wsum = 0.0;
          for (int m = 0; m < M; ++m) wsum += t.w[(p + m * stride) % P];
          if (!(wsum > 0.0)) continue;
          const double c = zeta[s] * rho[s];
          CMat V(nz, M);
          CVec vbar = CVec::Zero(nz);
          const int base_col = s * (2 * M + 1);
          for (int m = 0; m < M; ++m) {
            const int i = (p + m * stride) % P;
            if (m == 0 || !t.los) {
              try {
                const Vec3 r = local_ray(st.mt.x[p].head<3>(),
                                         t.los ? std::nullopt : std::optional<Vec3>(t.psfv[i]), scene_.pas[j]);
                planar_response_into(r, scene_.rf, scene_.pas[j].geometry, false, u.data());
              } catch (const std::exception&) {
                u.setZero();
              }
            }
            const double wm = t.w[i] / wsum;
            const cd mu = zm ? cd(0.0) : t.mu[i];
            F.col(base_col + m) = std::sqrt(c * wm * t.gamma[i]) * u;
            V.col(m) = mu * u;
            vbar += wm * V.col(m);
          }
          for (int m = 0; m < M; ++m) {
            const double wm = t.w[(p + m * stride) % P] / wsum;
            F.col(base_col + M + m) = std::sqrt(c * wm) * (V.col(m) - vbar);
          }
          F.col(base_col + 2 * M) = std::sqrt(std::max(c * (1.0 - c), 0.0)) * vbar;
          e -= c * vbar;
        }
        msg.iota[p] = gaussian_log_density(eta_bar, F, e);
      });
    }

    msg.kappa1.assign(S, VecX());
    msg.kappa0.assign(S, 0.0);
    msg.omega1.assign(S, 0.0);
    msg.omega0.assign(S, 0.0);
    const NoiseBelief& nb = st.noise[j];
    msg.nu.resize(nb.eta.size());

    // Per-particle kappa_1 on a base A_s, with e0 = z minus the other features' means.
    const auto kappa_particles = [&](int s, const LowRankFactor& A, const CVec& e0, double ee0) {
      const PfTrack& t = st.tracks[s];
      const CVec pe0 = A.project(e0);
      msg.kappa1[s].resize(P);
      parallel_for(P, cfg_.threads, [&](int p) {
        const CVec u = psi[s].col(p);
        const CVec pu = A.project(u);
        const cd ue0 = A.quad_projected(u.dot(e0), pu, pe0);
        const double uu = A.quad_projected(u.squaredNorm(), pu, pu).real();
        const cd mu = zm ? cd(0.0) : t.mu[p];
        // e = e0 - c u with c the paired mean coefficient of feature s.
        const cd c = zeta[s] * mu * (static_cast<double>(P) * st.mt.w[p]);
        const cd eu = ue0 - c * uu;
        const double ee = ee0 - 2.0 * std::real(std::conj(c) * ue0) + std::norm(c) * uu;
        const double q = (t.gamma[p] + std::norm(mu) * pdot[s]) * zeta[s];
        msg.kappa1[s][p] = spiked_log_density(ee, eu, uu, q, true);
      });
    };

    if (cfg_.closure == Closure::principal) {
      // One vector per feature: the leading eigenpair of the feature's own moment-matched
      // covariance zeta G_s - mu3 mu3^H (and G_s - mu4 mu4^H with the PPR on). Unlike the
      // coherent particle average it keeps the power of a feature whose MT-induced carrier
      // phases spread over several wavelengths, since psi psi^H ignores the common phase.
      for (int s = 0; s < S; ++s) {
        const PfTrack& t = st.tracks[s];
        CMat W(nz, P);
        for (int p = 0; p < P; ++p) {
          const double wb = st.mt.w[p] * a[s][p];
          const cd mu = zm ? cd(0.0) : t.mu[p];
          W.col(p) = std::sqrt(std::max(wb * (t.gamma[p] + std::norm(mu)), 0.0)) * psi[s].col(p);
        }
        const CMat G = W * W.adjoint();
        OpCounter::add(static_cast<std::uint64_t>(P) * nz * nz);
        M.col(s) = leading_factor(zeta[s] * G - mu3.col(s) * mu3.col(s).adjoint());
        Mw.col(s) = leading_factor(G - mu4.col(s) * mu4.col(s).adjoint());
      }
    }

    if (cfg_.closure != Closure::spectral) {
      const IsoSweep sweep(M, z - mu3_sum);
      for (Eigen::Index p = 0; p < nb.eta.size(); ++p) msg.nu[p] = sweep.log_density(nb.eta[p]);

      // PF and PPR messages share the base A_s = eta I + M_{-s} M_{-s}^H.
      for (int s = 0; s < S; ++s) {
        CMat Mo(nz, S - 1);
        for (int k = 0, c = 0; k < S; ++k)
          if (k != s) Mo.col(c++) = M.col(k);
        const LowRankFactor A(eta_bar, std::move(Mo));
        const CVec e0 = z - (mu3_sum - mu3.col(s));
        const CVec pe0 = A.project(e0);
        const double ee0 = A.quad_projected(e0.squaredNorm(), pe0, pe0).real();
        msg.kappa0[s] = -ee0;
        msg.omega0[s] = -ee0;

        const CVec e1 = e0 - mu4.col(s);
        const CVec mw = Mw.col(s);
        const CVec pe1 = A.project(e1);
        const CVec pmw = A.project(mw);
        msg.omega1[s] = spiked_log_density(A.quad_projected(e1.squaredNorm(), pe1, pe1).real(),
                                           A.quad_projected(mw.dot(e1), pmw, pe1),
                                           A.quad_projected(mw.squaredNorm(), pmw, pmw).real(), 1.0, true);
        kappa_particles(s, A, e0, ee0);
      }
      continue;
    }

    // Spectral closure. Over paired particles the signal covariance with PPR priors zeta is
    //   sum_t (zeta_t G_t - zeta_t^2 H_t) + Y Y^H - mean mean^H,
    // G_t = sum_p w a (gamma + |mu|^2) psi psi^H, N_t = [sqrt(w) a mu psi]_p, H_t = N_t N_t^H and
    // Y = sum_t zeta_t N_t carries the cross-feature covariance induced by the shared MT state.
    std::vector<CMat> G(S), H(S), NY(S), N(S);
    CMat Y = CMat::Zero(nz, P);
    for (int s = 0; s < S; ++s) {
      const PfTrack& t = st.tracks[s];
      CMat W(nz, P);
      N[s] = CMat::Zero(nz, zm ? 0 : P);
      for (int p = 0; p < P; ++p) {
        const double w = st.mt.w[p];
        const double as = a[s][p];
        const cd mu = zm ? cd(0.0) : t.mu[p];
        W.col(p) = std::sqrt(std::max(w * as * (t.gamma[p] + std::norm(mu)), 0.0)) * psi[s].col(p);
        if (!zm) N[s].col(p) = std::sqrt(w) * as * mu * psi[s].col(p);
      }
      G[s] = W * W.adjoint();
      OpCounter::add(static_cast<std::uint64_t>(P) * nz * nz);
      if (zm) {
        H[s] = CMat::Zero(nz, nz);
      } else {
        H[s] = N[s] * N[s].adjoint();
        Y += zeta[s] * N[s];
      }
    }
    const CMat YY = zm ? CMat::Zero(nz, nz) : CMat(Y * Y.adjoint());
    for (int s = 0; s < S; ++s) NY[s] = zm ? CMat::Zero(nz, nz) : CMat(N[s] * Y.adjoint());
    const auto own = [&](int s, double zt) -> CMat { return zt * G[s] - zt * zt * H[s]; };
    CMat own_sum = CMat::Zero(nz, nz);
    for (int s = 0; s < S; ++s) own_sum += own(s, zeta[s]);
    const double floor = 1e-6 * eta_bar;

    {
      const CMat C = own_sum + YY - mu3_sum * mu3_sum.adjoint();
      const IsoSweep sweep(psd_factor(C, floor), z - mu3_sum);
      for (Eigen::Index p = 0; p < nb.eta.size(); ++p) msg.nu[p] = sweep.log_density(nb.eta[p]);
    }

    for (int s = 0; s < S; ++s) {
      const CVec mu_o = mu3_sum - mu3.col(s);
      // Y' = Y - zeta_s N_s removes feature s from the cross term.
      const CMat NYo = NY[s] - zeta[s] * H[s];
      const CMat YYo = YY - zeta[s] * (NY[s] + NY[s].adjoint()) + zeta[s] * zeta[s] * H[s];
      const CMat own_o = own_sum - own(s, zeta[s]);
      const CMat Co = own_o + YYo - mu_o * mu_o.adjoint();
      const LowRankFactor A(eta_bar, psd_factor(Co, floor));
      const CVec e0 = z - mu_o;
      const double ee0 = A.quad(e0);
      msg.kappa0[s] = -ee0;
      msg.omega0[s] = -ee0;

      // PPR on: feature s enters with zeta = 1.
      const CVec mu_1 = mu_o + mu4.col(s);
      const CMat C1 = own_o + own(s, 1.0) + YYo + NYo + NYo.adjoint() + H[s] - mu_1 * mu_1.adjoint();
      const LowRankFactor A1(eta_bar, psd_factor(C1, floor));
      msg.omega1[s] = -A1.quad(CVec(z - mu_1)) - (A1.log_det() - A.log_det());

      kappa_particles(s, A, e0, ee0);
    }
  }
  return out;
}

DenseProblem Engine::dense_problem(const FilterState& st, const std::vector<CVec>& obs, int j) const {
  DenseProblem pb;
  pb.z = obs[j];
  pb.w_beta = st.mt.w;
  pb.eta = st.noise[j].eta;
  pb.w_xi = st.noise[j].w;
  pb.zero_mean = cfg_.variant == Variant::zm;
  const int Px = static_cast<int>(st.mt.x.size());
  const int nz = static_cast<int>(pb.z.size());
  for (const auto& t : st.tracks) {
    DenseFeature f;
    f.w_alpha = t.w;
    f.gamma = t.gamma;
    f.mu = t.mu;
    f.zeta = t.ppr[j];
    pb.features.push_back(f);
    const int Pf = t.size();
    CMat steer = CMat::Zero(nz, static_cast<Eigen::Index>(Px) * Pf);
    for (int px = 0; px < Px; ++px)
      for (int pf = 0; pf < Pf; ++pf) {
        auto s = steering(st.mt.x[px].head<3>(), t.los ? std::nullopt : std::optional<Vec3>(t.psfv[pf]), j);
        if (s) steer.col(static_cast<Eigen::Index>(px) * Pf + pf) = *s;
      }
    pb.steer.push_back(std::move(steer));
  }
  return pb;
}

std::vector<PaMessages> Engine::dense_route_messages(const FilterState& st, const std::vector<CVec>& obs) const {
  const int J = static_cast<int>(scene_.pas.size());
  std::vector<PaMessages> out(J);
  for (int j = 0; j < J; ++j) {
    const DenseMessages dm = dense_messages(dense_problem(st, obs, j));
    out[j].iota = dm.iota;
    out[j].nu = dm.nu;
    out[j].kappa1 = dm.kappa1;
    out[j].kappa0 = dm.kappa0;
    out[j].omega1 = dm.omega1;
    out[j].omega0 = dm.omega0;
  }
  return out;
}

FilterState Engine::beliefs(const FilterState& pred, const std::vector<PaMessages>& msgs) const {
  const int J = static_cast<int>(scene_.pas.size());
  FilterState st = pred;

  VecX lw = pred.mt.w.unaryExpr([](double w) { return safe_log(w); });
  for (int j = 0; j < J; ++j) lw += msgs[j].iota;
  st.mt.w = normalize_log(lw);

  for (int j = 0; j < J; ++j) {
    VecX ln = pred.noise[j].w.unaryExpr([](double w) { return safe_log(w); }) + msgs[j].nu;
    st.noise[j].w = normalize_log(ln);
  }

  for (std::size_t s = 0; s < st.tracks.size(); ++s) {
    PfTrack& t = st.tracks[s];
    const double rho = pred.tracks[s].existence();
    VecX ly = pred.tracks[s].w.unaryExpr([](double w) { return safe_log(w); });
    double lnull = safe_log(std::max(0.0, 1.0 - rho));
    for (int j = 0; j < J; ++j) {
      ly += msgs[j].kappa1[s];
      lnull += msgs[j].kappa0[s];
    }
    const double total = log_sum_exp(ly, lnull);
    t.w = (ly.array() - total).exp().matrix();

    for (int j = 0; j < J; ++j) {
      const double z1 = pred.tracks[s].ppr[j];
      if (z1 <= 0.0 || z1 >= 1.0) continue;
      const double x = std::log(z1) - std::log1p(-z1) + (msgs[j].omega1[s] - msgs[j].omega0[s]);
      t.ppr[j] = 1.0 / (1.0 + std::exp(-x));
    }
  }
  return st;
}

FilterState Engine::resample(const FilterState& post) const {
  const int n = post.step;
  const bool zm = cfg_.variant == Variant::zm;
  FilterState st = post;

  {
    const int P = static_cast<int>(post.mt.x.size());
    MatX X(P, 6);
    for (int p = 0; p < P; ++p) X.row(p) = post.mt.x[p].transpose();
    const double u0 = make_stream(cfg_.seed, n, Entity::MtResample).uniform();
    VecX mt_floor(6);
    mt_floor << VecX::Constant(3, cfg_.kernel_floor_position), VecX::Constant(3, cfg_.kernel_floor_velocity);
    const MatX Y = resample_regularize(X, post.mt.w, u0, cfg_.regularize,
                                       [&](int p) { return make_stream(cfg_.seed, n, Entity::MtRegularize, 0, p); },
                                       &mt_floor);
    for (int p = 0; p < P; ++p) st.mt.x[p] = Y.row(p).transpose();
    st.mt.w = VecX::Constant(P, 1.0 / P);
  }

  for (std::size_t j = 0; j < post.noise.size(); ++j) {
    const NoiseBelief& nb = post.noise[j];
    const int P = static_cast<int>(nb.eta.size());
    const MatX X = nb.eta;
    const double u0 = make_stream(cfg_.seed, n, Entity::NoiseResample, j).uniform();
    const MatX Y = resample_regularize(X, nb.w, u0, cfg_.regularize,
                                       [&](int p) { return make_stream(cfg_.seed, n, Entity::NoiseRegularize, j, p); });
    st.noise[j].eta = Y.col(0).cwiseAbs();
    st.noise[j].w = VecX::Constant(P, 1.0 / P);
  }

  for (auto& t : st.tracks) {
    const double ex = t.existence();
    const int P = t.size();
    if (!(ex > 0.0)) continue;
    const int d = (t.los ? 0 : 3) + 1 + (zm ? 0 : 2);
    MatX X(P, d);
    for (int p = 0; p < P; ++p) {
      int c = 0;
      if (!t.los)
        for (int k = 0; k < 3; ++k) X(p, c++) = t.psfv[p][k];
      X(p, c++) = t.gamma[p];
      if (!zm) {
        X(p, c++) = t.mu[p].real();
        X(p, c++) = t.mu[p].imag();
      }
    }
    const std::uint64_t id = static_cast<std::uint64_t>(t.id);
    const double u0 = make_stream(cfg_.seed, n, Entity::PfResample, id).uniform();
    const MatX Y = resample_regularize(X, t.w / ex, u0, cfg_.regularize,
                                       [&](int p) { return make_stream(cfg_.seed, n, Entity::PfRegularize, id, p); });
    for (int p = 0; p < P; ++p) {
      int c = 0;
      if (!t.los)
        for (int k = 0; k < 3; ++k) t.psfv[p][k] = Y(p, c++);
      t.gamma[p] = std::abs(Y(p, c++));
      if (!zm) {
        t.mu[p] = cd(Y(p, c), Y(p, c + 1));
        c += 2;
      }
    }
    t.w = VecX::Constant(P, ex / P);
  }
  return st;
}

FilterState Engine::manage(const FilterState& state) const {
  FilterState st = state;
  std::vector<PfTrack> kept;
  kept.reserve(st.tracks.size());
  for (auto& t : st.tracks) {
    const double ex = t.existence();
    if (!t.los && ex < cfg_.t_pru) continue;
    t.declared = ex > cfg_.t_dec;
    kept.push_back(std::move(t));
  }
  st.tracks = std::move(kept);
  return st;
}

Estimate Engine::estimate(const FilterState& state) const {
  Estimate e;
  e.step = state.step;
  for (std::size_t p = 0; p < state.mt.x.size(); ++p) e.mt += state.mt.w[p] * state.mt.x[p];
  e.eta.resize(static_cast<Eigen::Index>(state.noise.size()));
  for (std::size_t j = 0; j < state.noise.size(); ++j) e.eta[j] = state.noise[j].w.dot(state.noise[j].eta);
  for (const auto& t : state.tracks) {
    TrackEstimate te;
    te.id = t.id;
    te.los = t.los;
    te.existence = t.existence();
    te.declared = te.existence > cfg_.t_dec;
    te.ppr = t.ppr;
    if (te.existence > 0.0) {
      for (int p = 0; p < t.size(); ++p) {
        const double w = t.w[p] / te.existence;
        if (!t.los) te.psfv += w * t.psfv[p];
        te.gamma += w * t.gamma[p];
        te.mu += w * t.mu[p];
      }
    }
    e.tracks.push_back(te);
  }
  return e;
}

FilterState Engine::step(const FilterState& state, const std::vector<CVec>& obs, Estimate* est) const {
  const FilterState pred = predict(state, obs);
  const std::vector<PaMessages> msgs = messages(pred, obs);
  const FilterState post = beliefs(pred, msgs);
  if (est != nullptr) *est = estimate(post);
  return resample(manage(post));
}

}  // namespace dmslam
