#include "dmslam/fastmsg.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace dmslam {

namespace {
thread_local std::uint64_t g_ops = 0;
}

void OpCounter::reset() { g_ops = 0; }
std::uint64_t OpCounter::value() { return g_ops; }
void OpCounter::add(std::uint64_t n) { g_ops += n; }

LowRankFactor::LowRankFactor(double iso, CMat factors) : iso_(iso), F_(std::move(factors)) {
  if (!(iso > 0.0)) throw std::invalid_argument("isotropic term must be positive");
  dim_ = static_cast<int>(F_.rows());
  const Eigen::Index L = F_.cols();
  CMat gram = CMat::Identity(L, L);
  if (L > 0) gram.noalias() += F_.adjoint() * F_ / iso_;
  gram_.compute(gram);
  if (gram_.info() != Eigen::Success) throw std::runtime_error("Gram factorization failed");
  double ld = dim_ * std::log(iso_);
  const CMat& Lm = gram_.matrixLLT();
  for (Eigen::Index i = 0; i < L; ++i) ld += 2.0 * std::log(Lm(i, i).real());
  log_det_ = ld;
}

CVec LowRankFactor::project(const CVec& a) const {
  OpCounter::add(static_cast<std::uint64_t>(F_.rows() * F_.cols()));
  if (F_.cols() == 0) return CVec();
  return F_.adjoint() * a;
}

cd LowRankFactor::quad_projected(cd ab, const CVec& pa, const CVec& pb) const {
  if (F_.cols() == 0) return ab / iso_;
  OpCounter::add(static_cast<std::uint64_t>(F_.cols() * F_.cols()));
  const CVec g = gram_.solve(pb);
  return ab / iso_ - pa.dot(g) / (iso_ * iso_);
}

cd LowRankFactor::quad(const CVec& a, const CVec& b) const {
  OpCounter::add(static_cast<std::uint64_t>(a.size()));
  return quad_projected(a.dot(b), project(a), project(b));
}

double LowRankFactor::quad(const CVec& a) const {
  OpCounter::add(static_cast<std::uint64_t>(a.size()));
  const CVec pa = project(a);
  return quad_projected(a.squaredNorm(), pa, pa).real();
}

CVec LowRankFactor::solve(const CVec& b) const {
  CVec out = b / iso_;
  if (F_.cols() > 0) out.noalias() -= F_ * gram_.solve(F_.adjoint() * b) / (iso_ * iso_);
  return out;
}

LowRankGaussian::LowRankGaussian(LowRankFactor base, std::vector<Spike> spikes)
    : base_(std::move(base)), spikes_(std::move(spikes)) {
  log_det_ = base_.log_det();
  for (std::size_t k = 0; k < spikes_.size(); ++k) {
    const Spike& sp = spikes_[k];
    if (sp.u.size() != base_.dim()) throw std::invalid_argument("spike length mismatch");
    if (sp.q < 0.0) throw std::invalid_argument("negative spike weight");
    CVec y = base_.solve(sp.u);
    for (std::size_t i = 0; i < k; ++i) y -= spikes_[i].q * y_[i] * (y_[i].dot(sp.u) / denom_[i]);
    const double d = 1.0 + sp.q * sp.u.dot(y).real();
    y_.push_back(std::move(y));
    denom_.push_back(d);
    log_det_ += std::log(std::abs(d));
  }
}

cd LowRankGaussian::quad(const CVec& a, const CVec& b) const {
  cd out = base_.quad(a, b);
  for (std::size_t i = 0; i < spikes_.size(); ++i)
    out -= spikes_[i].q * a.dot(y_[i]) * y_[i].dot(b) / denom_[i];
  return out;
}

CMat LowRankGaussian::dense() const {
  CMat C = base_.iso() * CMat::Identity(base_.dim(), base_.dim());
  if (base_.rank() > 0) C += base_.factors() * base_.factors().adjoint();
  for (const auto& sp : spikes_) C += sp.q * sp.u * sp.u.adjoint();
  return C;
}

double spiked_log_density(double ee, cd eu, double uu, double q, bool hypothesis) {
  if (!hypothesis || q == 0.0) return -ee;
  const double d = 1.0 + q * uu;
  return q * std::norm(eu) / d - ee - std::log(std::abs(d));
}

double eval_message(MessageKind kind, const LowRankFactor& base, const CVec& e, const CVec* spike,
                    double q, bool hypothesis, bool include_constant) {
  const double nz = static_cast<double>(base.dim());
  const bool spiked = kind == MessageKind::kappa || kind == MessageKind::omega;
  if (!spiked && spike != nullptr) throw std::invalid_argument("iota/nu messages carry no spike");
  double out;
  if (spiked && spike != nullptr && hypothesis) {
    OpCounter::add(static_cast<std::uint64_t>(2 * e.size()));
    const CVec pe = base.project(e);
    const CVec pu = base.project(*spike);
    const double ee = base.quad_projected(e.squaredNorm(), pe, pe).real();
    const cd eu = base.quad_projected(spike->dot(e), pu, pe);
    const double uu = base.quad_projected(spike->squaredNorm(), pu, pu).real();
    out = spiked_log_density(ee, eu, uu, q, true);
  } else {
    out = -base.quad(e);
  }
  if (!spiked) {
    out -= base.log_det();
    if (include_constant) out -= nz * std::log(kPi);
  } else if (include_constant) {
    out -= base.log_det() + nz * std::log(kPi);
  }
  return out;
}

IsoSweep::IsoSweep(const CMat& factors, const CVec& e) {
  dim_ = static_cast<int>(e.size());
  e_norm2_ = e.squaredNorm();
  const Eigen::Index L = factors.cols();
  if (L == 0) return;
  Eigen::SelfAdjointEigenSolver<CMat> es(factors.adjoint() * factors);
  lambda_ = es.eigenvalues().cwiseMax(0.0);
  const CVec v = es.eigenvectors().adjoint() * (factors.adjoint() * e);
  v_abs2_ = v.cwiseAbs2();
}

double IsoSweep::log_density(double eta) const {
  if (!(eta > 0.0)) throw std::invalid_argument("noise variance must be positive");
  double quad = e_norm2_ / eta;
  double ld = dim_ * std::log(eta);
  for (Eigen::Index i = 0; i < lambda_.size(); ++i) {
    quad -= v_abs2_[i] / (eta * (eta + lambda_[i]));
    ld += std::log1p(lambda_[i] / eta);
  }
  return -quad - ld - dim_ * std::log(kPi);
}

}  // namespace dmslam
