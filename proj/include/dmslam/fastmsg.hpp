#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "dmslam/types.hpp"

namespace dmslam {

// Complex multiply-add counter for the per-particle complexity contract. Thread-local so
// parallel workers never race; tests reset it, run one evaluation and read it back.
struct OpCounter {
  static void reset();
  static std::uint64_t value();
  static void add(std::uint64_t n);
};

// C = iso * I + F F^H with the Gram matrix I + F^H F / iso factored once. Immutable after
// construction and safe to share across threads.
class LowRankFactor {
 public:
  LowRankFactor() = default;
  LowRankFactor(double iso, CMat factors);

  int dim() const { return dim_; }
  int rank() const { return static_cast<int>(F_.cols()); }
  double iso() const { return iso_; }
  const CMat& factors() const { return F_; }

  // F^H a, the only O(Nz L) work in a quadratic form. Callers that reuse a vector
  // across several forms project it once.
  CVec project(const CVec& a) const;

  // a^H C^{-1} b given projections pa = F^H a and pb = F^H b.
  cd quad_projected(cd ab, const CVec& pa, const CVec& pb) const;

  cd quad(const CVec& a, const CVec& b) const;
  double quad(const CVec& a) const;
  CVec solve(const CVec& b) const;
  double log_det() const { return log_det_; }

 private:
  int dim_ = 0;
  double iso_ = 1.0;
  CMat F_;
  Eigen::LLT<CMat> gram_;
  double log_det_ = 0.0;
};

// Base factor plus a sequence of rank-1 spikes C_k = C_{k-1} + q_k u_k u_k^H, handled by
// Sherman-Morrison with y_k = C_{k-1}^{-1} u_k precomputed at construction.
class LowRankGaussian {
 public:
  struct Spike {
    CVec u;
    double q = 0.0;
  };

  LowRankGaussian(LowRankFactor base, std::vector<Spike> spikes);

  int dim() const { return base_.dim(); }
  cd quad(const CVec& a, const CVec& b) const;
  double log_det() const { return log_det_; }
  CMat dense() const;

 private:
  LowRankFactor base_;
  std::vector<Spike> spikes_;
  std::vector<CVec> y_;
  std::vector<double> denom_;
  double log_det_ = 0.0;
};

enum class MessageKind { iota, nu, kappa, omega };

// Log of CN(z; mu, C) for the four update messages, with e = z - mu and C = base + r q u u^H.
// iota and nu carry no spike. Without include_constant the particle-independent terms
// -Nz log(pi) - log det(base) are dropped; they cancel when weights are normalized over
// particles (kappa) or over the two hypotheses (omega), because the base is shared.
// iota and nu always keep log det(base), which varies across particles.
double eval_message(MessageKind kind, const LowRankFactor& base, const CVec& e,
                    const CVec* spike, double q, bool hypothesis, bool include_constant);

// Same as eval_message for kappa/omega when the caller already projected e and u.
// eu = u^H base^{-1} e, uu = u^H base^{-1} u, ee = e^H base^{-1} e.
double spiked_log_density(double ee, cd eu, double uu, double q, bool hypothesis);

// Sweep of iso values over a fixed factor and error vector: each evaluation is O(L) after an
// O(Nz L^2 + L^3) eigen-decomposition of F^H F. Used for the noise-variance particles.
class IsoSweep {
 public:
  IsoSweep(const CMat& factors, const CVec& e);
  // -e^H (eta I + F F^H)^{-1} e - log det(eta I + F F^H) - Nz log(pi)
  double log_density(double eta) const;

 private:
  int dim_ = 0;
  double e_norm2_ = 0.0;
  VecX lambda_;
  VecX v_abs2_;
};

}  // namespace dmslam
