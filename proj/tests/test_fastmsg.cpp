#include <doctest.h>

#include <cmath>

#include <Eigen/LU>

#include "dmslam/fastmsg.hpp"
#include "test_util.hpp"

using namespace dmslam;

namespace {

struct Dense {
  CMat C;
  CMat inv;
  double log_det;
};

Dense dense_of(double iso, const CMat& F, const CVec* u = nullptr, double q = 0.0) {
  const int n = static_cast<int>(F.rows());
  Dense d;
  d.C = iso * CMat::Identity(n, n) + F * F.adjoint();
  if (u != nullptr) d.C += q * (*u) * u->adjoint();
  const Eigen::PartialPivLU<CMat> lu(d.C);
  d.inv = lu.inverse();
  d.log_det = std::log(std::abs(lu.determinant()));
  return d;
}

double dense_log_cn(const CVec& e, const Dense& d) {
  return -(e.adjoint() * d.inv * e)(0).real() - d.log_det - e.size() * std::log(kPi);
}

}  // namespace

TEST_SUITE("fastmsg") {
  TEST_CASE("isotropic factor") {
    CounterRng rng = make_stream(30, 0, Entity::Test);
    const CVec a = test::random_cvec(rng, 12);
    const CVec b = test::random_cvec(rng, 12);
    const LowRankFactor f(0.7, CMat(12, 0));
    CHECK(std::abs(f.quad(a, b) - a.dot(b) / 0.7) < 1e-14);
    CHECK(std::abs(f.log_det() - 12 * std::log(0.7)) < 1e-13);
    CHECK_THROWS(LowRankFactor(0.0, CMat(12, 0)));
  }

  TEST_CASE("rank-one factor") {
    CounterRng rng = make_stream(31, 0, Entity::Test);
    const CVec fvec = test::random_cvec(rng, 16);
    const double iso = 0.3;
    const LowRankFactor f(iso, CMat(fvec));
    const Dense d = dense_of(iso, CMat(fvec));
    const cd dense = fvec.dot(d.inv * fvec);
    CHECK(test::rel_err(f.quad(fvec, fvec), dense) < 1e-10);
    CHECK(std::abs(f.log_det() - (15 * std::log(iso) + std::log(iso + fvec.squaredNorm()))) < 1e-10);
  }

  TEST_CASE("random factor with a spike against dense algebra") {
    CounterRng rng = make_stream(32, 0, Entity::Test);
    const int nz = 20;
    const CMat F = test::random_cmat(rng, nz, 3);
    const CVec u = test::random_cvec(rng, nz);
    const double iso = 0.05, q = 1.7;
    const LowRankGaussian g(LowRankFactor(iso, F), {{u, q}});
    const Dense d = dense_of(iso, F, &u, q);
    const CVec a = test::random_cvec(rng, nz);
    const CVec b = test::random_cvec(rng, nz);
    CHECK(test::rel_err(g.quad(a, b), cd(a.dot(d.inv * b))) < 1e-9);
    CHECK(test::rel_err(g.log_det(), d.log_det) < 1e-9);
    CHECK(test::rel_err_norm(g.dense(), d.C) < 1e-14);
  }

  TEST_CASE("two hundred random instances") {
    CounterRng rng = make_stream(33, 0, Entity::Test);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      const int nz = 1 + static_cast<int>(rng.uniform() * 40);
      const int L = static_cast<int>(rng.uniform() * 5);
      const bool spike = rng.uniform() < 0.5;
      const double iso = std::pow(10.0, rng.uniform(-3, 1));
      const CMat F = test::random_cmat(rng, nz, L);
      const CVec u = test::random_cvec(rng, nz);
      const double q = spike ? rng.uniform(0.1, 3.0) : 0.0;
      std::vector<LowRankGaussian::Spike> sp;
      if (spike) sp.push_back({u, q});
      const LowRankGaussian g(LowRankFactor(iso, F), sp);
      const Dense d = dense_of(iso, F, spike ? &u : nullptr, q);
      const CVec a = test::random_cvec(rng, nz);
      const CVec b = test::random_cvec(rng, nz);
      worst = std::max(worst, test::rel_err(g.quad(a, b), cd(a.dot(d.inv * b))));
      worst = std::max(worst, std::abs(g.log_det() - d.log_det) / std::max(1.0, std::abs(d.log_det)));
      // Hermitian symmetry.
      CHECK(std::abs(g.quad(a, b) - std::conj(g.quad(b, a))) < 1e-10 * std::abs(g.quad(a, b)) + 1e-300);
    }
    CHECK(worst < 1e-8);
  }

  TEST_CASE("solve inverts the represented covariance") {
    CounterRng rng = make_stream(34, 0, Entity::Test);
    const CMat F = test::random_cmat(rng, 15, 4);
    const LowRankFactor f(0.2, F);
    const CVec b = test::random_cvec(rng, 15);
    const Dense d = dense_of(0.2, F);
    CHECK(test::rel_err_norm(d.C * f.solve(b), b) < 1e-12);
  }

  TEST_CASE("kappa without the PF is the base Gaussian") {
    CounterRng rng = make_stream(35, 0, Entity::Test);
    const int nz = 8;
    const CMat F = test::random_cmat(rng, nz, 2, 0.3);
    const CVec e = test::random_cvec(rng, nz);
    const CVec u = test::random_cvec(rng, nz, 0.5);
    const LowRankFactor base(0.1, F);
    const double r0 = eval_message(MessageKind::kappa, base, e, &u, 0.8, false, true);
    CHECK(std::abs(r0 - dense_log_cn(e, dense_of(0.1, F))) < 1e-10);
  }

  TEST_CASE("kappa hypothesis difference against dense evaluation") {
    CounterRng rng = make_stream(36, 0, Entity::Test);
    const int nz = 8;
    for (int trial = 0; trial < 20; ++trial) {
      const CMat F = test::random_cmat(rng, nz, 2, 0.3);
      const CVec u = test::random_cvec(rng, nz, 0.5);
      const double q = rng.uniform(0.2, 2.0);
      const double iso = 0.1;
      const CVec e = test::random_cvec(rng, nz);
      const LowRankFactor base(iso, F);
      // The shared constant cancels in the difference.
      const double fast = eval_message(MessageKind::kappa, base, e, &u, q, true, false) -
                          eval_message(MessageKind::kappa, base, e, &u, q, false, false);
      const double dense = dense_log_cn(e, dense_of(iso, F, &u, q)) - dense_log_cn(e, dense_of(iso, F));
      CHECK(std::abs(fast - dense) < 1e-8 * std::max(1.0, std::abs(dense)));
      // With constants the spiked branch is the full density.
      CHECK(std::abs(eval_message(MessageKind::omega, base, e, &u, q, true, true) -
                     dense_log_cn(e, dense_of(iso, F, &u, q))) < 1e-9);
    }
  }

  TEST_CASE("nu with no factors is an isotropic Gaussian") {
    CounterRng rng = make_stream(37, 0, Entity::Test);
    const CVec e = test::random_cvec(rng, 10);
    for (double eta : {1e-3, 0.1, 2.0}) {
      const double v = eval_message(MessageKind::nu, LowRankFactor(eta, CMat(10, 0)), e, nullptr, 0.0, false, true);
      CHECK(std::abs(v - (-e.squaredNorm() / eta - 10 * std::log(eta) - 10 * std::log(kPi))) < 1e-10);
    }
    const CVec u = e;
    CHECK_THROWS(eval_message(MessageKind::iota, LowRankFactor(1.0, CMat(10, 0)), e, &u, 1.0, true, true));
  }

  TEST_CASE("iso sweep against dense algebra") {
    CounterRng rng = make_stream(38, 0, Entity::Test);
    const CMat F = test::random_cmat(rng, 24, 3, 0.1);
    const CVec e = test::random_cvec(rng, 24, 0.2);
    const IsoSweep sweep(F, e);
    for (double eta : {1e-4, 3e-3, 0.05, 1.0}) {
      const double dense = dense_log_cn(e, dense_of(eta, F));
      CHECK(std::abs(sweep.log_density(eta) - dense) < 1e-9 * std::max(1.0, std::abs(dense)));
    }
    CHECK_THROWS(sweep.log_density(0.0));
  }

  TEST_CASE("per-particle kappa cost is linear in Nz and rank") {
    CounterRng rng = make_stream(39, 0, Entity::Test);
    auto ops = [&](int nz, int L) {
      const CMat F = test::random_cmat(rng, nz, L);
      const LowRankFactor base(0.5, F);  // shared precomputation, not counted
      const CVec e = test::random_cvec(rng, nz);
      const CVec u = test::random_cvec(rng, nz);
      OpCounter::reset();
      eval_message(MessageKind::kappa, base, e, &u, 1.0, true, false);
      return static_cast<double>(OpCounter::value());
    };
    for (int L : {1, 2, 4}) {
      const double small = ops(40, L);
      const double large = ops(160, L);
      CHECK(small <= 4.0 * 40 * (L + 1) + 4.0 * L * L);
      CHECK(large / small < 4.5);
    }
  }
}
