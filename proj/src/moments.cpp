#include "dmslam/moments.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>

namespace dmslam {

namespace {

struct Conditional {
  CVec mean;
  CMat second;  // raw second moment of the feature term
};

// Feature s conditioned on the MT particle px, with existence drawn from alpha and the PPR
// fixed to one; the caller scales by the PPR probability.
Conditional feature_given_x(const DenseProblem& pb, int s, int px) {
  const DenseFeature& f = pb.features[s];
  const int nz = pb.nz();
  const int pf_n = pb.pf_count(s);
  Conditional c{CVec::Zero(nz), CMat::Zero(nz, nz)};
  for (int pf = 0; pf < pf_n; ++pf) {
    const double w = f.w_alpha[pf];
    if (w == 0.0) continue;
    const auto psi = pb.steer[s].col(static_cast<Eigen::Index>(px) * pf_n + pf);
    const cd mu = pb.zero_mean ? cd(0.0) : f.mu[pf];
    c.mean += w * mu * psi;
    c.second += w * (f.gamma[pf] + std::norm(mu)) * (psi * psi.adjoint());
  }
  return c;
}

// Centered covariance contributed by feature s given x, with PPR probability zeta.
void add_feature(const DenseProblem& pb, int s, int px, double zeta, CVec& mean, CMat& cov) {
  const Conditional c = feature_given_x(pb, s, px);
  const CVec m = zeta * c.mean;
  mean += m;
  cov += zeta * c.second - m * m.adjoint();
}

// Law of total variance over the MT particles for a conditional model built by `fill`.
template <class Fill>
GaussMoments marginalize_x(const DenseProblem& pb, double iso, Fill fill) {
  const int nz = pb.nz();
  CVec mean = CVec::Zero(nz);
  CMat raw = CMat::Zero(nz, nz);
  for (int px = 0; px < pb.px_count(); ++px) {
    const double w = pb.w_beta[px];
    if (w == 0.0) continue;
    CVec m = CVec::Zero(nz);
    CMat c = CMat::Zero(nz, nz);
    fill(px, m, c);
    mean += w * m;
    raw += w * (c + m * m.adjoint());
  }
  CMat cov = raw - mean * mean.adjoint();
  cov.diagonal().array() += iso;
  return {mean, cov};
}

}  // namespace

GaussMoments iota_moments(const DenseProblem& pb, int px) {
  const int nz = pb.nz();
  GaussMoments g{CVec::Zero(nz), CMat::Zero(nz, nz)};
  for (std::size_t s = 0; s < pb.features.size(); ++s)
    add_feature(pb, static_cast<int>(s), px, pb.features[s].zeta, g.mean, g.cov);
  g.cov.diagonal().array() += pb.eta_mean();
  return g;
}

GaussMoments nu_moments(const DenseProblem& pb, double eta) {
  return marginalize_x(pb, eta, [&](int px, CVec& m, CMat& c) {
    for (std::size_t s = 0; s < pb.features.size(); ++s)
      add_feature(pb, static_cast<int>(s), px, pb.features[s].zeta, m, c);
  });
}

GaussMoments kappa_moments(const DenseProblem& pb, int s, int pf, bool r) {
  const DenseFeature& f = pb.features[s];
  const int pf_n = pb.pf_count(s);
  return marginalize_x(pb, pb.eta_mean(), [&](int px, CVec& m, CMat& c) {
    for (std::size_t t = 0; t < pb.features.size(); ++t)
      if (static_cast<int>(t) != s) add_feature(pb, static_cast<int>(t), px, pb.features[t].zeta, m, c);
    if (!r) return;
    // PF s exists with state phi^pf; only its PPR and amplitude are random.
    const auto psi = pb.steer[s].col(static_cast<Eigen::Index>(px) * pf_n + pf);
    const cd mu = pb.zero_mean ? cd(0.0) : f.mu[pf];
    const CVec ms = f.zeta * mu * psi;
    m += ms;
    c += f.zeta * (f.gamma[pf] + std::norm(mu)) * (psi * psi.adjoint()) - ms * ms.adjoint();
  });
}

GaussMoments omega_moments(const DenseProblem& pb, int s, bool r) {
  return marginalize_x(pb, pb.eta_mean(), [&](int px, CVec& m, CMat& c) {
    for (std::size_t t = 0; t < pb.features.size(); ++t)
      if (static_cast<int>(t) != s) add_feature(pb, static_cast<int>(t), px, pb.features[t].zeta, m, c);
    if (r) add_feature(pb, s, px, 1.0, m, c);
  });
}

double log_cn_dense(const CVec& z, const GaussMoments& g) {
  Eigen::LLT<CMat> llt(g.cov);
  if (llt.info() != Eigen::Success) throw std::runtime_error("covariance not positive definite");
  const CVec e = z - g.mean;
  const CVec y = llt.matrixL().solve(e);
  double logdet = 0.0;
  const CMat& L = llt.matrixLLT();
  for (Eigen::Index i = 0; i < L.rows(); ++i) logdet += 2.0 * std::log(L(i, i).real());
  return -static_cast<double>(z.size()) * std::log(kPi) - logdet - y.squaredNorm();
}

DenseMessages dense_messages(const DenseProblem& pb) {
  DenseMessages out;
  const int S = static_cast<int>(pb.features.size());
  out.iota.resize(pb.px_count());
  for (int px = 0; px < pb.px_count(); ++px) out.iota[px] = log_cn_dense(pb.z, iota_moments(pb, px));
  out.nu.resize(pb.eta.size());
  for (Eigen::Index i = 0; i < pb.eta.size(); ++i) out.nu[i] = log_cn_dense(pb.z, nu_moments(pb, pb.eta[i]));
  out.kappa1.resize(S);
  out.kappa0.resize(S);
  out.omega1.resize(S);
  out.omega0.resize(S);
  for (int s = 0; s < S; ++s) {
    out.kappa1[s].resize(pb.pf_count(s));
    for (int pf = 0; pf < pb.pf_count(s); ++pf)
      out.kappa1[s][pf] = log_cn_dense(pb.z, kappa_moments(pb, s, pf, true));
    out.kappa0[s] = log_cn_dense(pb.z, kappa_moments(pb, s, 0, false));
    out.omega1[s] = log_cn_dense(pb.z, omega_moments(pb, s, true));
    out.omega0[s] = log_cn_dense(pb.z, omega_moments(pb, s, false));
  }
  return out;
}

}  // namespace dmslam
