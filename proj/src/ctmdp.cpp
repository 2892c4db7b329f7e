#include "cdrl/ctmdp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include <Eigen/Eigenvalues>

#include "cdrl/errors.hpp"

namespace cdrl {

namespace {

constexpr double kStepTolerance = 1e-9;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

int sample_from(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    acc += probs[a];
    if (u < acc) return static_cast<int>(a);
  }
  return static_cast<int>(probs.size()) - 1;
}

void check_probabilities(std::span<const double> probs) {
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument("policy probabilities must be nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("policy probabilities must sum to 1");
}

// Scratch buffers reused across the steps of one rollout.
struct StepBuffers {
  explicit StepBuffers(int n)
      : drift(n), diffusion(static_cast<std::size_t>(n) * n), noise(n), next(n), probs() {}
  std::vector<double> drift;
  std::vector<double> diffusion;
  std::vector<double> noise;
  std::vector<double> next;
  std::vector<double> probs;
};

void step_in_place(const ContinuousMdp& mdp, const Policy& policy, const SimConfig& cfg, double s, double dt,
                   State& x, StepBuffers& buf, Rng& rng) {
  const int n = mdp.state_dim;
  if (cfg.averaged_coefficients) {
    buf.probs = policy.probabilities(s, x, mdp.num_actions);
    averaged_coefficients(mdp, buf.probs, s, x, buf.drift, buf.diffusion);
  } else {
    const int a = policy.sample(s, x, rng);
    mdp.drift(s, x, a, buf.drift);
    mdp.diffusion(s, x, a, buf.diffusion);
  }
  for (int i = 0; i < n; ++i) buf.noise[i] = rng.normal();
  const double sq = std::sqrt(dt);
  for (int i = 0; i < n; ++i) {
    double v = x[i] + buf.drift[i] * dt;
    for (int j = 0; j < n; ++j) v += buf.diffusion[static_cast<std::size_t>(i) * n + j] * sq * buf.noise[j];
    if (!std::isfinite(v)) {
      throw NumericalError("Euler-Maruyama step produced a non-finite state at t=" + std::to_string(s));
    }
    x[i] = v;
  }
}

// Integrates from t to the horizon: steps of window_dt until window_end, then
// steps of tail_dt (the last one truncated to land on the horizon).
double rollout(const ContinuousMdp& mdp, const Policy& policy, double t, std::span<const double> x0,
               double window_end, const SimConfig& cfg, Rng& rng) {
  mdp.validate();
  if (!(t < mdp.horizon)) throw std::invalid_argument("rollout: start time must precede the horizon");
  if (static_cast<int>(x0.size()) != mdp.state_dim) throw std::invalid_argument("rollout: state dimension mismatch");
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("SimConfig: dt must be positive");
  const double tail_dt = cfg.tail_dt > 0.0 ? cfg.tail_dt : cfg.dt;

  State x(x0.begin(), x0.end());
  StepBuffers buf(mdp.state_dim);
  double total = 0.0;

  auto advance = [&](double s, double dt) {
    total += discount_factor(mdp.discount, s - t) * mdp.reward(s, x) * dt;
    step_in_place(mdp, policy, cfg, s, dt, x, buf, rng);
  };

  double s0 = t;
  if (window_end > t) {
    const double ratio = (window_end - t) / cfg.dt;
    const auto steps = static_cast<long>(std::llround(ratio));
    if (steps < 1 || std::abs(ratio - static_cast<double>(steps)) > 1e-6 * std::max(1.0, ratio)) {
      throw std::invalid_argument("dt must divide the persistence horizon h");
    }
    for (long k = 0; k < steps; ++k) advance(t + static_cast<double>(k) * cfg.dt, cfg.dt);
    s0 = window_end;
  }
  const double remaining = mdp.horizon - s0;
  if (remaining > kStepTolerance) {
    const auto steps = static_cast<long>(std::ceil(remaining / tail_dt - kStepTolerance));
    for (long k = 0; k < steps; ++k) {
      const double s = s0 + static_cast<double>(k) * tail_dt;
      const double dt = (k + 1 == steps) ? mdp.horizon - s : tail_dt;
      advance(s, dt);
    }
  }
  total += discount_factor(mdp.discount, mdp.horizon - t) * mdp.terminal_reward(x);
  if (!std::isfinite(total)) throw NumericalError("return accumulation is not finite");
  return total;
}

}  // namespace

void ContinuousMdp::validate() const {
  if (state_dim < 1) throw std::invalid_argument("ContinuousMdp: state_dim must be >= 1");
  if (num_actions < 1) throw std::invalid_argument("ContinuousMdp: action list must be nonempty");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("ContinuousMdp: horizon must be finite and positive");
  if (!(discount > 0.0 && discount <= 1.0)) throw std::invalid_argument("ContinuousMdp: discount must lie in (0, 1]");
  if (!drift || !diffusion || !reward || !terminal_reward) {
    throw std::invalid_argument("ContinuousMdp: coefficient functions must be set");
  }
}

Policy Policy::constant(int action) { return Policy(Constant{action}); }

Policy Policy::deterministic(DecisionRule rule) { return Policy(Deterministic{std::move(rule)}); }

Policy Policy::finite_atomic(ProbabilityRule rule) { return Policy(FiniteAtomic{std::move(rule)}); }

Policy Policy::persistent(Policy base, double h, int action, double t0) {
  if (!(h > 0.0)) throw std::invalid_argument("persistent: h must be positive");
  return Policy(Persistent{std::make_shared<const Policy>(std::move(base)), h, action, t0});
}

std::vector<double> Policy::probabilities(double t, std::span<const double> x, int num_actions) const {
  auto one_hot = [num_actions](int a) {
    if (a < 0 || a >= num_actions) throw std::out_of_range("policy action out of range");
    std::vector<double> p(num_actions, 0.0);
    p[a] = 1.0;
    return p;
  };
  return std::visit(Overloaded{
                        [&](const Constant& c) { return one_hot(c.action); },
                        [&](const Deterministic& d) { return one_hot(d.rule(t, x)); },
                        [&](const FiniteAtomic& f) {
                          auto p = f.rule(t, x);
                          if (static_cast<int>(p.size()) != num_actions) {
                            throw std::invalid_argument("policy probability vector has wrong length");
                          }
                          check_probabilities(p);
                          return p;
                        },
                        [&](const Persistent& p) {
                          if (t >= p.t0 && t < p.t0 + p.h) return one_hot(p.action);
                          return p.base->probabilities(t, x, num_actions);
                        },
                    },
                    rule_);
}

int Policy::sample(double t, std::span<const double> x, Rng& rng) const {
  return std::visit(Overloaded{
                        [&](const Constant& c) { return c.action; },
                        [&](const Deterministic& d) { return d.rule(t, x); },
                        [&](const FiniteAtomic& f) {
                          const auto p = f.rule(t, x);
                          check_probabilities(p);
                          return sample_from(p, rng);
                        },
                        [&](const Persistent& p) {
                          if (t >= p.t0 && t < p.t0 + p.h) return p.action;
                          return p.base->sample(t, x, rng);
                        },
                    },
                    rule_);
}

SimConfig SimConfig::for_persistence(double h, int substeps, std::uint64_t seed) {
  if (!(h > 0.0)) throw std::invalid_argument("SimConfig: h must be positive");
  if (substeps < 1) throw std::invalid_argument("SimConfig: substeps must be >= 1");
  const auto cap = static_cast<long>(std::floor(h / 1e-4 + kStepTolerance));
  const long n = std::max<long>(1, std::min<long>(substeps, cap));
  SimConfig cfg;
  cfg.dt = h / static_cast<double>(n);
  cfg.seed = seed;
  return cfg;
}

State em_step(const ContinuousMdp& mdp, std::span<const double> x, double t, int action, double dt,
              std::span<const double> noise) {
  if (!(dt > 0.0)) throw std::invalid_argument("em_step: dt must be positive");
  const int n = mdp.state_dim;
  if (static_cast<int>(x.size()) != n || static_cast<int>(noise.size()) != n) {
    throw std::invalid_argument("em_step: dimension mismatch");
  }
  std::vector<double> b(n);
  std::vector<double> sigma(static_cast<std::size_t>(n) * n);
  mdp.drift(t, x, action, b);
  mdp.diffusion(t, x, action, sigma);
  State out(n);
  const double sq = std::sqrt(dt);
  for (int i = 0; i < n; ++i) {
    double v = x[i] + b[i] * dt;
    for (int j = 0; j < n; ++j) v += sigma[static_cast<std::size_t>(i) * n + j] * sq * noise[j];
    if (!std::isfinite(v)) throw NumericalError("em_step: non-finite state at t=" + std::to_string(t));
    out[i] = v;
  }
  return out;
}

double discount_factor(double gamma, double elapsed) {
  if (gamma == 1.0) return 1.0;
  return std::exp(elapsed * std::log(gamma));
}

void averaged_coefficients(const ContinuousMdp& mdp, std::span<const double> probs, double t,
                           std::span<const double> x, std::span<double> drift_out,
                           std::span<double> diffusion_out) {
  const int n = mdp.state_dim;
  std::vector<double> b(n);
  std::vector<double> sigma(static_cast<std::size_t>(n) * n);
  Eigen::VectorXd drift = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
  for (int a = 0; a < mdp.num_actions; ++a) {
    if (probs[a] == 0.0) continue;
    mdp.drift(t, x, a, b);
    mdp.diffusion(t, x, a, sigma);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> s(sigma.data(), n, n);
    drift += probs[a] * Eigen::Map<const Eigen::VectorXd>(b.data(), n);
    cov += probs[a] * s * s.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd root = eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
  for (int i = 0; i < n; ++i) {
    drift_out[i] = drift[i];
    for (int j = 0; j < n; ++j) diffusion_out[static_cast<std::size_t>(i) * n + j] = root(i, j);
  }
}

double sample_return(const ContinuousMdp& mdp, const Policy& policy, double t, std::span<const double> x,
                     const SimConfig& cfg, Rng& rng) {
  SimConfig plain = cfg;
  plain.tail_dt = 0.0;
  return rollout(mdp, policy, t, x, t, plain, rng);
}

double sample_action_return(const ContinuousMdp& mdp, const Policy& policy, double t, std::span<const double> x,
                            int action, double h, const SimConfig& cfg, Rng& rng) {
  if (!(h > 0.0)) throw std::invalid_argument("sample_action_return: h must be positive");
  if (t + h > mdp.horizon + kStepTolerance) throw std::invalid_argument("sample_action_return: t + h exceeds the horizon");
  if (action < 0 || action >= mdp.num_actions) throw std::out_of_range("sample_action_return: action out of range");
  const Policy modified = Policy::persistent(policy, h, action, t);
  return rollout(mdp, modified, t, x, std::min(t + h, mdp.horizon), cfg, rng);
}

}  // namespace cdrl
