#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "cdrl/ctmdp.hpp"
#include "cdrl/envs.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/estimate.hpp"

using namespace cdrl;

namespace {

// dX = c dt + s dB per coordinate, action-independent.
ContinuousMdp linear_mdp(int n, double c, double s, double horizon, double discount) {
  ContinuousMdp mdp;
  mdp.state_dim = n;
  mdp.num_actions = 2;
  mdp.drift = [c](double, std::span<const double>, int, std::span<double> out) {
    for (auto& v : out) v = c;
  };
  mdp.diffusion = [n, s](double, std::span<const double>, int, std::span<double> out) {
    for (int i = 0; i < n * n; ++i) out[i] = (i % (n + 1) == 0) ? s : 0.0;
  };
  mdp.reward = [](double, std::span<const double>) { return 0.0; };
  mdp.terminal_reward = [](std::span<const double>) { return 0.0; };
  mdp.horizon = horizon;
  mdp.discount = discount;
  return mdp;
}

struct Moments {
  double mean = 0.0;
  double se = 0.0;
};

Moments moments(const EmpiricalDist& d) {
  return {mean(d), std::sqrt(variance(d) / static_cast<double>(d.size()))};
}

}  // namespace

TEST_CASE("em_step examples") {
  const State x{1.0, -2.0};
  const std::vector<double> noise{0.3, -1.2};
  CHECK(em_step(linear_mdp(2, 0.0, 0.0, 1.0, 1.0), x, 0.0, 0, 0.1, noise) == x);
  const State moved = em_step(linear_mdp(2, 3.0, 0.0, 1.0, 1.0), x, 0.0, 0, 0.1, noise);
  CHECK(moved[0] == doctest::Approx(1.3));
  CHECK(moved[1] == doctest::Approx(-1.7));
  const State noisy = em_step(linear_mdp(2, 0.0, 2.0, 1.0, 1.0), x, 0.0, 0, 0.25, noise);
  CHECK(noisy[0] == doctest::Approx(1.0 + 2.0 * 0.5 * 0.3));
  CHECK_THROWS_AS(em_step(linear_mdp(1, 1e308, 0.0, 1.0, 1.0), State{1e308}, 0.0, 0, 10.0, std::vector<double>{0.0}),
                  NumericalError);
  CHECK_THROWS(em_step(linear_mdp(1, 0.0, 0.0, 1.0, 1.0), State{0.0}, 0.0, 0, 0.0, std::vector<double>{0.0}));
}

TEST_CASE("Brownian motion variance from Euler-Maruyama") {
  const ContinuousMdp bm = linear_mdp(2, 0.0, 1.0, 1.0, 1.0);
  const int n = 100000;
  const double dt = 0.05;
  const int steps = 10;  // t = 0.5
  Rng rng(17);
  std::vector<double> first(n);
  std::vector<double> second(n);
  std::vector<double> noise(2);
  for (int p = 0; p < n; ++p) {
    State x{0.0, 0.0};
    for (int k = 0; k < steps; ++k) {
      noise[0] = rng.normal();
      noise[1] = rng.normal();
      x = em_step(bm, x, k * dt, 0, dt, noise);
    }
    first[p] = x[0];
    second[p] = x[1];
  }
  const double t = dt * steps;
  const double se = t * std::sqrt(2.0 / (n - 1));
  CHECK(std::abs(variance(EmpiricalDist(first)) - t) < 3.0 * se);
  CHECK(std::abs(variance(EmpiricalDist(second)) - t) < 3.0 * se);
}

TEST_CASE("sample_return deterministic integrals") {
  SimConfig cfg;
  cfg.dt = 0.01;
  Rng rng(1);

  ContinuousMdp unit = linear_mdp(1, 0.0, 0.0, 2.0, 1.0);
  unit.reward = [](double, std::span<const double>) { return 1.0; };
  CHECK(std::abs(sample_return(unit, Policy::constant(0), 0.5, State{0.0}, cfg, rng) - 1.5) <= cfg.dt);
  // A horizon that is not a multiple of dt still integrates exactly to T.
  cfg.dt = 0.3;
  CHECK(sample_return(unit, Policy::constant(0), 0.0, State{0.0}, cfg, rng) == doctest::Approx(2.0));
  cfg.dt = 0.01;

  for (double gamma : {1.0, 0.9}) {
    ContinuousMdp ramp = linear_mdp(1, 0.7, 0.0, 3.0, gamma);
    ramp.terminal_reward = [](std::span<const double> x) { return x[0]; };
    const double expected = std::pow(gamma, 2.0) * (0.4 + 0.7 * 2.0);
    CHECK(sample_return(ramp, Policy::constant(1), 1.0, State{0.4}, cfg, rng) == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("theorem fixture under the freezing policy is deterministic") {
  SimConfig cfg;
  cfg.dt = 1e-3;
  Rng rng(2);
  const ContinuousMdp env = make_theorem_gap_env(1.0, 1.0);
  CHECK(sample_return(env, Policy::constant(0), 0.0, State{0.7}, cfg, rng) == doctest::Approx(0.7).epsilon(1e-9));
  const ContinuousMdp discounted = make_theorem_gap_env(2.0, 0.8);
  const double exact = 0.7 * (std::pow(0.8, 2.0) - 1.0) / std::log(0.8);
  // left-endpoint quadrature of a decreasing integrand overshoots by O(dt)
  const double got = sample_return(discounted, Policy::constant(0), 0.0, State{0.7}, cfg, rng);
  CHECK(std::abs(got - exact) < 0.7 * cfg.dt);
  CHECK(got >= exact);
}

TEST_CASE("action-conditioned returns") {
  const ContinuousMdp env = make_illustration_env({10.0, 1.0, 1.0, 1.0});
  SimConfig cfg = SimConfig::for_persistence(0.25, 16, 5);

  SUBCASE("persistence over the whole horizon matches the constant policy") {
    Rng r1(42);
    Rng r2(42);
    const double a = sample_action_return(env, Policy::constant(0), 0.0, State{0.0}, 1, 1.0, cfg, r1);
    const double b = sample_return(env, Policy::constant(1), 0.0, State{0.0}, cfg, r2);
    CHECK(a == b);
  }
  SUBCASE("conditioning on the policy's own action leaves the return law unchanged") {
    const Policy pi = Policy::deterministic([](double, std::span<const double>) { return 1; });
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng r1(seed);
      Rng r2(seed);
      const double a = sample_action_return(env, pi, 0.0, State{0.0}, 1, 0.25, cfg, r1);
      const double b = sample_return(env, pi, 0.0, State{0.0}, cfg, r2);
      CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
  }
  SUBCASE("zero drift keeps the mean at x T") {
    const ContinuousMdp gap = make_theorem_gap_env(1.0, 1.0);
    const auto d = mc_action_return_dist(gap, Policy::constant(0), 0.0, State{0.5}, 1, 0.25, 100000, cfg);
    const Moments m = moments(d);
    CHECK(std::abs(m.mean - 0.5) < 3.0 * m.se);
  }
  SUBCASE("preconditions") {
    Rng rng(0);
    CHECK_THROWS(sample_action_return(env, Policy::constant(0), 0.9, State{0.0}, 1, 0.25, cfg, rng));
    SimConfig coarse;
    coarse.dt = 0.1;
    CHECK_THROWS(sample_action_return(env, Policy::constant(0), 0.0, State{0.0}, 1, 0.25, coarse, rng));
    CHECK_THROWS(sample_action_return(env, Policy::constant(0), 0.0, State{0.0}, 2, 0.25, cfg, rng));
    CHECK_THROWS(sample_return(env, Policy::constant(0), 1.0, State{0.0}, cfg, rng));
  }
}

TEST_CASE("persistent policy wrapper") {
  const Policy base = Policy::deterministic([](double t, std::span<const double>) { return t < 0.75 ? 0 : 1; });
  const Policy wrapped = persistent(base, 0.25, 1, 0.25);
  const State x{0.0};
  Rng rng(0);
  CHECK(wrapped.sample(0.25, x, rng) == 1);
  CHECK(wrapped.sample(0.49, x, rng) == 1);
  CHECK(wrapped.sample(0.5, x, rng) == 0);  // half-open boundary
  CHECK(wrapped.sample(0.8, x, rng) == 1);
  for (double s = 0.0; s < 1.0; s += 0.01) {
    if (s < 0.25 || s >= 0.5) CHECK(wrapped.probabilities(s, x, 2) == base.probabilities(s, x, 2));
  }
  const Policy same = persistent(Policy::constant(1), 0.2, 1, 0.0);
  for (double s = 0.0; s < 1.0; s += 0.05) CHECK(same.probabilities(s, x, 2) == Policy::constant(1).probabilities(s, x, 2));
  CHECK_THROWS(persistent(base, 0.0, 1, 0.0));
}

TEST_CASE("stochastic policies") {
  const Policy mix = Policy::finite_atomic([](double, std::span<const double>) { return std::vector<double>{0.25, 0.75}; });
  Rng rng(9);
  int ones = 0;
  for (int i = 0; i < 20000; ++i) ones += mix.sample(0.0, State{0.0}, rng);
  CHECK(std::abs(ones / 20000.0 - 0.75) < 3.0 * std::sqrt(0.25 * 0.75 / 20000.0));
  const Policy bad = Policy::finite_atomic([](double, std::span<const double>) { return std::vector<double>{0.5, 0.6}; });
  CHECK_THROWS(bad.probabilities(0.0, State{0.0}, 2));
  CHECK_THROWS(bad.sample(0.0, State{0.0}, rng));
}

TEST_CASE("averaged coefficients agree in law with per-step action sampling") {
  ContinuousMdp env = make_theorem_gap_env(1.0, 1.0);
  env.reward = [](double, std::span<const double>) { return 0.0; };
  env.terminal_reward = [](std::span<const double> x) { return x[0] * x[0]; };
  const Policy mix = Policy::finite_atomic([](double, std::span<const double>) { return std::vector<double>{0.5, 0.5}; });

  std::vector<double> drift(1);
  std::vector<double> diffusion(1);
  averaged_coefficients(env, std::vector<double>{0.5, 0.5}, 0.0, State{0.0}, drift, diffusion);
  CHECK(drift[0] == 0.0);
  CHECK(diffusion[0] == doctest::Approx(std::sqrt(0.5)));

  SimConfig sampled;
  sampled.dt = 0.01;
  sampled.seed = 1;
  SimConfig averaged = sampled;
  averaged.averaged_coefficients = true;
  averaged.seed = 2;
  // E[X_T^2] = T / 2 either way
  const Moments a = moments(mc_return_dist(env, mix, 0.0, State{0.0}, 40000, sampled));
  const Moments b = moments(mc_return_dist(env, mix, 0.0, State{0.0}, 40000, averaged));
  CHECK(std::abs(a.mean - 0.5) < 3.0 * a.se);
  CHECK(std::abs(b.mean - 0.5) < 3.0 * b.se);
}

TEST_CASE("symmetric square root of a full averaged covariance") {
  ContinuousMdp mdp = linear_mdp(2, 0.0, 0.0, 1.0, 1.0);
  mdp.diffusion = [](double, std::span<const double>, int a, std::span<double> out) {
    if (a == 0) {
      out[0] = 1.0; out[1] = 0.0; out[2] = 0.0; out[3] = 1.0;
    } else {
      out[0] = 1.0; out[1] = 1.0; out[2] = 0.0; out[3] = 1.0;
    }
  };
  std::vector<double> drift(2);
  std::vector<double> root(4);
  averaged_coefficients(mdp, std::vector<double>{0.3, 0.7}, 0.0, State{0.0, 0.0}, drift, root);
  // root * root^T must reproduce 0.3 I + 0.7 [[2,1],[1,1]]
  const double c00 = root[0] * root[0] + root[1] * root[1];
  const double c01 = root[0] * root[2] + root[1] * root[3];
  const double c11 = root[2] * root[2] + root[3] * root[3];
  CHECK(c00 == doctest::Approx(0.3 + 1.4));
  CHECK(c01 == doctest::Approx(0.7));
  CHECK(c11 == doctest::Approx(1.0));
  CHECK(root[1] == doctest::Approx(root[2]));
}

TEST_CASE("discounting") {
  CHECK(discount_factor(1.0, 123.4) == 1.0);
  CHECK(discount_factor(0.9, 2.0) == doctest::Approx(0.81));
  CHECK(discount_factor(0.5, 0.0) == 1.0);
}

TEST_CASE("seed determinism") {
  const ContinuousMdp env = make_illustration_env({10.0, 1.0, 2.0, 0.95});
  SimConfig cfg;
  cfg.dt = 0.01;
  cfg.seed = 77;
  const auto a = mc_return_dist(env, Policy::constant(1), 0.0, State{0.0}, 500, cfg);
  const auto b = mc_return_dist(env, Policy::constant(1), 0.0, State{0.0}, 500, cfg);
  CHECK(std::equal(a.samples().begin(), a.samples().end(), b.samples().begin()));
  cfg.seed = 78;
  const auto c = mc_return_dist(env, Policy::constant(1), 0.0, State{0.0}, 500, cfg);
  CHECK_FALSE(std::equal(a.samples().begin(), a.samples().end(), c.samples().begin()));
}

TEST_CASE("dt refinement") {
  const std::size_t n = 100000;
  SUBCASE("unbiased fixture: halving dt moves the mean only by noise") {
    const ContinuousMdp env = make_theorem_gap_env(1.0, 1.0);
    SimConfig coarse;
    coarse.dt = 0.02;
    coarse.seed = 3;
    SimConfig fine = coarse;
    fine.dt = 0.01;
    fine.seed = 4;
    const Moments a = moments(mc_return_dist(env, Policy::constant(1), 0.0, State{0.3}, n, coarse));
    const Moments b = moments(mc_return_dist(env, Policy::constant(1), 0.0, State{0.3}, n, fine));
    CHECK(std::abs(a.mean - b.mean) < 3.0 * std::hypot(a.se, b.se));
  }
  SUBCASE("drift fixture: the change equals the left-endpoint quadrature bias") {
    // E[sum_k X_{k dt} dt] = c (T^2 - T dt) / 2 when X_s has mean c s, so
    // halving dt raises the mean by c T dt / 4.
    const double c = 10.0;
    const double horizon = 1.0;
    const ContinuousMdp env = make_illustration_env({c, 1.0, horizon, 1.0});
    // pooled over independent seed pairs
    const int pairs = 4;
    double shift = 0.0;
    double var = 0.0;
    for (int k = 0; k < pairs; ++k) {
      SimConfig coarse;
      coarse.dt = 0.02;
      coarse.seed = 100 + 2 * k;
      SimConfig fine = coarse;
      fine.dt = 0.01;
      fine.seed = 101 + 2 * k;
      const Moments a = moments(mc_return_dist(env, Policy::constant(1), 0.0, State{0.0}, n, coarse));
      const Moments b = moments(mc_return_dist(env, Policy::constant(1), 0.0, State{0.0}, n, fine));
      shift += (b.mean - a.mean) / pairs;
      var += (a.se * a.se + b.se * b.se) / (pairs * pairs);
    }
    CHECK(std::abs(shift - c * horizon * 0.02 / 4.0) < 3.0 * std::sqrt(var));
  }
}
