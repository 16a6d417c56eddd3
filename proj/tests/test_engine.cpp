#include <doctest.h>

#include <cmath>

#include "dmslam/engine.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dmslam;

namespace {

const Vec3 kMt(0.5, 1.75, 0.0);

EngineConfig small_config(int particles) {
  EngineConfig c;
  c.particles = particles;
  c.sigma_v = 0.05;
  c.sigma_v0 = 0.02;
  c.mt_prior = Box3{kMt - Vec3::Constant(0.02), kMt + Vec3::Constant(0.02)};
  c.birth_box = Box3{Vec3(-7, -2, -2), Vec3(9, 9, 2)};
  c.n_grid = 200;
  c.eta_min = 1e-9;
  c.eta_max = 1e-6;
  c.seed = 5;
  return c;
}

// LOS-only observations of a static MT.
std::vector<CVec> los_obs(const Scene& sc, double noise_var, int step) {
  std::vector<CVec> obs;
  for (std::size_t j = 0; j < sc.pas.size(); ++j) {
    CounterRng rng = make_stream(77, step, Entity::Test, j);
    PathComponent los;
    los.amplitude = 1.0;
    obs.push_back(generate_observation(kMt, {los}, sc.pas[j], sc.rf, noise_var, rng));
  }
  return obs;
}

PaMessages flat_messages(int px, int pn, const std::vector<int>& pf) {
  PaMessages m;
  m.iota = VecX::Zero(px);
  m.nu = VecX::Zero(pn);
  for (int n : pf) {
    m.kappa1.push_back(VecX::Zero(n));
    m.kappa0.push_back(0.0);
    m.omega1.push_back(0.0);
    m.omega0.push_back(0.0);
  }
  return m;
}

bool same_state(const FilterState& a, const FilterState& b) {
  if (a.step != b.step || a.tracks.size() != b.tracks.size() || a.mt.x.size() != b.mt.x.size()) return false;
  for (std::size_t p = 0; p < a.mt.x.size(); ++p)
    if (a.mt.x[p] != b.mt.x[p]) return false;
  if (a.mt.w != b.mt.w) return false;
  for (std::size_t j = 0; j < a.noise.size(); ++j)
    if (a.noise[j].eta != b.noise[j].eta || a.noise[j].w != b.noise[j].w) return false;
  for (std::size_t s = 0; s < a.tracks.size(); ++s) {
    const PfTrack& x = a.tracks[s];
    const PfTrack& y = b.tracks[s];
    if (x.id != y.id || x.w != y.w || x.gamma != y.gamma || x.mu != y.mu || x.ppr != y.ppr) return false;
    for (std::size_t p = 0; p < x.psfv.size(); ++p)
      if (x.psfv[p] != y.psfv[p]) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("engine") {
  TEST_CASE("residual projector") {
    CounterRng rng = make_stream(50, 0, Entity::Test);
    const CVec u = test::random_cvec(rng, 9).normalized();
    const CMat P1 = residual_projector(CMat(u));
    CHECK((P1 - (CMat::Identity(9, 9) - u * u.adjoint())).norm() < 1e-9);

    const CMat psi = test::random_cmat(rng, 12, 3);
    const CMat P = residual_projector(psi);
    CHECK((P * P - P).norm() < 1e-9);
    CHECK((P * psi).norm() < 1e-9 * psi.norm());
    CHECK((residual_projector(CMat(12, 0)) - CMat::Identity(12, 12)).norm() == 0.0);
  }

  TEST_CASE("birth proposal peaks at the reflecting surface") {
    const Scene sc = test::small_scene(3, 3, 5);
    const Vec3 wall(-6.6, 0.0, 0.0);
    std::vector<CVec> res;
    for (const auto& pa : sc.pas) res.push_back(component_response(kMt, wall, pa, sc.rf, Wavefront::planar));
    const Box3 part{Vec3(-7, -1, -1), Vec3(-6, 1, 1)};
    CounterRng rng = make_stream(51, 0, Entity::Test);
    const BirthProposal bp = birth_proposal(res, kMt, sc, part, 300, rng);
    int best = 0;
    for (int i = 1; i < 300; ++i)
      if (bp.bartlett[i] > bp.bartlett[best]) best = i;
    CHECK((bp.mean - bp.candidates[best]).norm() == 0.0);
    CHECK((bp.mean - wall).norm() < 0.5);

    std::vector<CVec> zero(sc.pas.size(), CVec::Zero(res[0].size()));
    CounterRng rng3 = make_stream(52, 0, Entity::Test);
    const BirthProposal flat = birth_proposal(zero, kMt, sc, part, 50, rng3);
    CHECK(flat.bartlett.maxCoeff() == 0.0);
    CHECK(part.contains(flat.mean));
    CHECK_THROWS(birth_proposal(zero, kMt, sc, part, 0, rng3));
  }

  TEST_CASE("Bartlett score adds coherently across PAs") {
    const Scene sc = test::small_scene(2, 2, 3);
    const Vec3 wall(0.0, 8.6, 0.0);
    std::vector<CVec> one(sc.pas.size()), two(sc.pas.size());
    for (std::size_t j = 0; j < sc.pas.size(); ++j) {
      // Unit-modulus residuals matched to the path-loss-free steering.
      const CVec psi = planar_response(local_ray(kMt, wall, sc.pas[j]), sc.rf, sc.pas[j].geometry, false);
      one[j] = j == 0 ? psi : CVec(CVec::Zero(psi.size()));
      two[j] = j < 2 ? psi : CVec(CVec::Zero(psi.size()));
    }
    const Box3 part{wall - Vec3::Constant(1e-9), wall + Vec3::Constant(1e-9)};
    CounterRng a = make_stream(53, 0, Entity::Test);
    CounterRng b = make_stream(53, 0, Entity::Test);
    const double s1 = birth_proposal(one, kMt, sc, part, 1, a).bartlett[0];
    const double s2 = birth_proposal(two, kMt, sc, part, 1, b).bartlett[0];
    CHECK(std::abs(s2 / s1 - 4.0) < 1e-6);
  }

  TEST_CASE("systematic resampling") {
    const auto u = resample_systematic(VecX::Constant(4, 0.25), 4, 0.5);
    CHECK(u == std::vector<int>{0, 1, 2, 3});
    VecX one = VecX::Zero(5);
    one[3] = 2.0;
    for (int i : resample_systematic(one, 7, 0.3)) CHECK(i == 3);
    VecX w(3);
    w << 0.5, 0.3, 0.2;
    std::vector<int> counts(3, 0);
    for (int i : resample_systematic(w, 10, 0.37)) ++counts[i];
    CHECK(counts == std::vector<int>{5, 3, 2});
    CHECK_THROWS(resample_systematic(VecX::Zero(3), 3, 0.5));
  }

  TEST_CASE("kernel bandwidth") {
    CHECK(kernel_bandwidth(6, 1000) == doctest::Approx(std::pow(4.0 / 8000.0, 0.1)).epsilon(1e-15));
    CHECK(kernel_bandwidth(1, 100) > kernel_bandwidth(1, 10000));
  }

  TEST_CASE("first prediction initializes the state") {
    const Scene sc = test::small_scene(2, 2, 3);
    const Engine eng(sc, small_config(100));
    const FilterState st = eng.predict(FilterState{}, los_obs(sc, 1e-8, 1));
    CHECK(st.step == 1);
    CHECK(st.mt.x.size() == 100);
    CHECK(std::abs(st.mt.w.sum() - 1.0) < 1e-14);
    REQUIRE(st.tracks.size() == 1);
    CHECK(st.tracks[0].los);
    CHECK(std::abs(st.tracks[0].existence() - birth_bernoulli(0.5)) < 1e-14);
    for (const auto& nb : st.noise) {
      CHECK(std::abs(nb.w.sum() - 1.0) < 1e-14);
      CHECK(nb.eta.minCoeff() > 0.0);
    }
  }

  TEST_CASE("later predictions scale existence by the survival probability") {
    const Scene sc = test::small_scene(2, 2, 3);
    // random_state carries four noise particles, so four of everything.
    const Engine eng(sc, small_config(4));
    CounterRng rng = make_stream(54, 0, Entity::Test);
    const FilterState st = oracle::random_state(sc, 4, 4, 2, true, rng);
    const FilterState pr = eng.predict(st, los_obs(sc, 1e-8, 2));
    CHECK(pr.step == 2);
    for (int s = 0; s < 2; ++s)
      CHECK(std::abs(pr.tracks[s].existence() - 0.8 * st.tracks[s].existence()) < 1e-14);
    // One birth track per partition.
    CHECK(pr.tracks.size() == 3);
    CHECK(pr.tracks[2].existence() <= birth_bernoulli(0.5) + 1e-14);
  }

  TEST_CASE("existence belief is the sigmoid of the log-likelihood ratio") {
    const Scene sc = test::small_scene(2, 2, 3);
    const Engine eng(sc, small_config(10));
    CounterRng rng = make_stream(55, 0, Entity::Test);
    const FilterState st = oracle::random_state(sc, 10, 6, 1, false, rng);
    const double rho = st.tracks[0].existence();
    std::vector<PaMessages> msgs;
    double llr = 0.0;
    for (int j = 0; j < 4; ++j) {
      PaMessages m = flat_messages(10, 4, {6});
      m.kappa1[0] = VecX::Constant(6, 0.3 * (j + 1));
      m.kappa0[0] = -0.2 * j;
      llr += m.kappa1[0][0] - m.kappa0[0];
      msgs.push_back(m);
    }
    const FilterState post = eng.beliefs(st, msgs);
    const double x = std::log(rho / (1.0 - rho)) + llr;
    CHECK(std::abs(post.tracks[0].existence() - 1.0 / (1.0 + std::exp(-x))) < 1e-12);
    // Uniform kappa1 keeps the PF weight shape.
    CHECK(test::rel_err_norm(post.tracks[0].w / post.tracks[0].existence(), st.tracks[0].w / rho) < 1e-12);
  }

  TEST_CASE("uninformative messages leave the prior unchanged") {
    const Scene sc = test::small_scene(2, 2, 3);
    const Engine eng(sc, small_config(8));
    CounterRng rng = make_stream(56, 0, Entity::Test);
    const FilterState st = oracle::random_state(sc, 8, 5, 2, true, rng);
    const std::vector<PaMessages> msgs(4, flat_messages(8, 4, {5, 5}));
    const FilterState post = eng.beliefs(st, msgs);
    for (int s = 0; s < 2; ++s) {
      CHECK(std::abs(post.tracks[s].existence() - st.tracks[s].existence()) < 1e-14);
      CHECK((post.tracks[s].ppr - st.tracks[s].ppr).norm() < 1e-14);
    }
    CHECK((post.mt.w - st.mt.w).norm() < 1e-14);
  }

  TEST_CASE("certain existence is absorbing") {
    const Scene sc = test::small_scene(2, 2, 3);
    const Engine eng(sc, small_config(4));
    CounterRng rng = make_stream(57, 0, Entity::Test);
    FilterState st = oracle::random_state(sc, 4, 3, 1, true, rng);
    st.tracks[0].w /= st.tracks[0].existence();
    std::vector<PaMessages> msgs(4, flat_messages(4, 4, {3}));
    for (auto& m : msgs) m.kappa0[0] = 50.0;
    CHECK(eng.beliefs(st, msgs).tracks[0].existence() == doctest::Approx(1.0).epsilon(1e-14));
  }

  TEST_CASE("track management thresholds") {
    const Scene sc = test::small_scene(2, 2, 3);
    EngineConfig c = small_config(4);
    c.t_dec = 0.5;
    c.t_pru = 0.1;
    const Engine eng(sc, c);
    CounterRng rng = make_stream(58, 0, Entity::Test);
    FilterState st = oracle::random_state(sc, 4, 4, 4, true, rng);
    const double ex[4] = {0.05, 0.6, 0.05, 0.3};  // LOS first, never pruned
    for (int s = 0; s < 4; ++s) st.tracks[s].w = VecX::Constant(4, ex[s] / 4);
    const FilterState m = eng.manage(st);
    REQUIRE(m.tracks.size() == 3);
    CHECK(m.tracks[0].los);
    CHECK(!m.tracks[0].declared);
    CHECK(m.tracks[1].declared);
    CHECK(m.tracks[2].id == st.tracks[3].id);
    CHECK(!m.tracks[2].declared);
  }

  TEST_CASE("estimates are weighted means") {
    const Scene sc = test::small_scene(2, 2, 3);
    const Engine eng(sc, small_config(2));
    CounterRng rng = make_stream(59, 0, Entity::Test);
    FilterState st = oracle::random_state(sc, 2, 2, 2, true, rng);
    st.mt.w << 0.5, 0.5;
    st.tracks[1].w << 0.3, 0.3;
    const Estimate e = eng.estimate(st);
    CHECK((e.mt - 0.5 * (st.mt.x[0] + st.mt.x[1])).norm() < 1e-15);
    CHECK((e.tracks[1].psfv - 0.5 * (st.tracks[1].psfv[0] + st.tracks[1].psfv[1])).norm() < 1e-14);
    CHECK(e.tracks[1].existence == doctest::Approx(0.6));
    CHECK(e.tracks[1].declared);
    CHECK(e.eta.size() == 4);
  }

  TEST_CASE("dense route posterior against brute-force enumeration") {
    const Scene sc = test::small_scene(2, 2, 2);
    EngineConfig c = small_config(3);
    c.route = Route::dense;
    const Engine eng(sc, c);
    CounterRng rng = make_stream(60, 0, Entity::Test);
    for (int trial = 0; trial < 4; ++trial) {
      const FilterState st = oracle::random_state(sc, 3, 2, 1 + trial % 2, trial % 2 == 0, rng);
      const auto obs = oracle::random_obs(sc, st, rng);
      const FilterState post = eng.beliefs(st, eng.messages(st, obs));
      std::vector<oracle::Messages> ref;
      std::vector<VecX> w_xi, pf_w, ppr(st.tracks.size(), VecX(4));
      for (int j = 0; j < 4; ++j) {
        ref.push_back(oracle::messages(oracle::problem_from_state(sc, st, obs[j], j, false)));
        w_xi.push_back(st.noise[j].w);
      }
      for (std::size_t s = 0; s < st.tracks.size(); ++s) {
        pf_w.push_back(st.tracks[s].w);
        ppr[s] = st.tracks[s].ppr;
      }
      const oracle::Posterior o = oracle::combine(st.mt.w, w_xi, pf_w, ppr, ref);
      CHECK(test::rel_err_norm(post.mt.w, o.mt_w) < 1e-8);
      for (std::size_t s = 0; s < st.tracks.size(); ++s) {
        CHECK(std::abs(post.tracks[s].existence() - o.existence[s]) < 1e-8);
        CHECK(test::rel_err_norm(post.tracks[s].w, o.pf_w[s]) < 1e-8);
        CHECK((post.tracks[s].ppr - o.ppr[s]).cwiseAbs().maxCoeff() < 1e-8);
      }
    }
  }

  TEST_CASE("messages are a pure function of the predicted state") {
    const Scene sc = test::small_scene(2, 2, 3);
    const Engine eng(sc, small_config(20));
    CounterRng rng = make_stream(61, 0, Entity::Test);
    const FilterState st = oracle::random_state(sc, 20, 20, 2, true, rng);
    const auto obs = oracle::random_obs(sc, st, rng);
    const auto a = eng.messages(st, obs);
    const auto b = eng.messages(st, obs);
    for (int j = 0; j < 4; ++j) {
      CHECK(a[j].iota == b[j].iota);
      CHECK(a[j].nu == b[j].nu);
      CHECK(a[j].kappa1[1] == b[j].kappa1[1]);
      CHECK(a[j].omega1 == b[j].omega1);
    }
  }

  TEST_CASE("runs are reproducible and independent of the thread count") {
    const Scene sc = test::small_scene(2, 2, 3);
    EngineConfig c = small_config(120);
    const Engine one(sc, c);
    c.threads = 4;
    const Engine four(sc, c);
    FilterState a, b, a2;
    for (int n = 1; n <= 4; ++n) {
      const auto obs = los_obs(sc, 3e-8, n);
      a = one.step(a, obs);
      a2 = one.step(a2, obs);
      b = four.step(b, obs);
    }
    CHECK(same_state(a, a2));
    CHECK(same_state(a, b));
  }

  TEST_CASE("LOS-only scene converges and keeps beliefs valid") {
    const Scene sc = test::small_scene(2, 2, 3);
    const Engine eng(sc, small_config(300));
    FilterState st;
    Estimate e;
    for (int n = 1; n <= 15; ++n) {
      st = eng.step(st, los_obs(sc, 3e-8, n), &e);
      for (const auto& t : st.tracks) {
        CHECK(t.existence() >= 0.0);
        CHECK(t.existence() <= 1.0 + 1e-12);
        CHECK(t.ppr.minCoeff() >= 0.0);
        CHECK(t.ppr.maxCoeff() <= 1.0);
      }
    }
    CHECK((e.mt.head<3>() - kMt).norm() < 0.01);
    CHECK(e.tracks[0].los);
    CHECK(e.tracks[0].existence > 0.9);
    for (Eigen::Index j = 0; j < e.eta.size(); ++j) CHECK(e.eta[j] < 3e-7);
  }
}
