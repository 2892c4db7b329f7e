#pragma once

// Controlled diffusions dX = b(t, X, a) dt + sigma(t, X, a) dB with
// action-independent running reward r(t, x) and terminal reward g(x), simulated
// by Euler-Maruyama.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "cdrl/rng.hpp"

namespace cdrl {

using State = std::vector<double>;

// Writes b(t, x, a) (n entries) or sigma(t, x, a) (n*n entries, row-major) into out.
using CoefficientFn = std::function<void(double t, std::span<const double> x, int a, std::span<double> out)>;
using RewardFn = std::function<double(double t, std::span<const double> x)>;
using TerminalFn = std::function<double(std::span<const double> x)>;

struct ContinuousMdp {
  int state_dim = 1;
  int num_actions = 2;
  CoefficientFn drift;
  CoefficientFn diffusion;
  RewardFn reward;
  TerminalFn terminal_reward;
  double horizon = 1.0;
  double discount = 1.0;

  void validate() const;
};

class Policy {
 public:
  using DecisionRule = std::function<int(double t, std::span<const double> x)>;
  using ProbabilityRule = std::function<std::vector<double>(double t, std::span<const double> x)>;

  static Policy constant(int action);
  static Policy deterministic(DecisionRule rule);
  static Policy finite_atomic(ProbabilityRule rule);
  // delta_a on [t0, t0 + h), base elsewhere.
  static Policy persistent(Policy base, double h, int action, double t0);

  std::vector<double> probabilities(double t, std::span<const double> x, int num_actions) const;
  int sample(double t, std::span<const double> x, Rng& rng) const;

 private:
  struct Constant {
    int action;
  };
  struct Deterministic {
    DecisionRule rule;
  };
  struct FiniteAtomic {
    ProbabilityRule rule;
  };
  struct Persistent {
    std::shared_ptr<const Policy> base;
    double h;
    int action;
    double t0;
  };

  explicit Policy(std::variant<Constant, Deterministic, FiniteAtomic, Persistent> rule)
      : rule_(std::move(rule)) {}

  std::variant<Constant, Deterministic, FiniteAtomic, Persistent> rule_;
};

inline Policy persistent(Policy base, double h, int action, double t0) {
  return Policy::persistent(std::move(base), h, action, t0);
}

struct SimConfig {
  double dt = 1e-3;
  // Step used after the persistence window closes; 0 means dt.
  double tail_dt = 0.0;
  std::uint64_t seed = 0;
  // Integrate the policy-averaged coefficients instead of sampling actions.
  bool averaged_coefficients = false;

  // dt = h / substeps, coarsened so that dt >= 1e-4 while still dividing h.
  static SimConfig for_persistence(double h, int substeps = 16, std::uint64_t seed = 0);
};

State em_step(const ContinuousMdp& mdp, std::span<const double> x, double t, int action, double dt,
              std::span<const double> noise);

// gamma^elapsed, exactly 1 when gamma == 1.
double discount_factor(double gamma, double elapsed);

// Policy-averaged drift and the symmetric square root of the averaged sigma sigma^T.
void averaged_coefficients(const ContinuousMdp& mdp, std::span<const double> probs, double t,
                           std::span<const double> x, std::span<double> drift_out,
                           std::span<double> diffusion_out);

double sample_return(const ContinuousMdp& mdp, const Policy& policy, double t, std::span<const double> x,
                     const SimConfig& cfg, Rng& rng);

double sample_action_return(const ContinuousMdp& mdp, const Policy& policy, double t, std::span<const double> x,
                            int action, double h, const SimConfig& cfg, Rng& rng);

}  // namespace cdrl
