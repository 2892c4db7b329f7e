#pragma once

// Fixture environments and market-data ingestion.

#include <filesystem>
#include <span>
#include <vector>

#include "cdrl/ctmdp.hpp"
#include "cdrl/rng.hpp"

namespace cdrl {

// One-dimensional, two actions: action 1 diffuses with unit volatility, action 0
// freezes the state; reward r(t, x) = x; no terminal reward; zero drift.
ContinuousMdp make_theorem_gap_env(double horizon = 1.0, double discount = 1.0);

struct IllustrationParams {
  double drift = 10.0;
  double volatility = 1.0;
  double horizon = 10.0;
  double discount = 1.0;
};

// One-dimensional, two actions: action 1 follows drift-10 Brownian dynamics,
// action 0 freezes the state; reward r(t, x) = x; no terminal reward.
ContinuousMdp make_illustration_env(const IllustrationParams& params = {});

struct StepResult {
  State next;
  double reward = 0.0;   // running reward rate r(t, x) over the step
  bool done = false;
  double elapsed = 0.0;  // time actually advanced (truncated at the horizon)
};

// Episodic simulator driven at decision interval h by the training loop.
class EpisodicEnv {
 public:
  virtual ~EpisodicEnv() = default;

  virtual int state_dim() const = 0;
  virtual int num_actions() const = 0;
  virtual double horizon() const = 0;
  virtual double discount() const = 0;
  virtual State reset(Rng& rng) const = 0;
  virtual StepResult step(std::span<const double> x, double t, int action, double h, Rng& rng) const = 0;
  virtual double terminal_reward(std::span<const double> x) const = 0;
};

struct GbmParams {
  double drift = 0.0;       // mu, per unit time
  double volatility = 0.0;  // sigma, per sqrt(unit time)
};

// Exercise timing for an option on a GBM price. Action 0 holds, action 1
// executes; execution (or reaching the horizon) pays max(0, 1 - x).
class OptionTradingEnv : public EpisodicEnv {
 public:
  static constexpr int kHold = 0;
  static constexpr int kExecute = 1;

  explicit OptionTradingEnv(GbmParams gbm, double horizon = 100.0, double initial_price = 1.0,
                            double discount = 0.999);

  const GbmParams& gbm() const { return gbm_; }
  double initial_price() const { return initial_price_; }

  // Price under Euler-Maruyama instead of the exact GBM solution.
  void set_euler(bool euler, int substeps = 1);

  int state_dim() const override { return 1; }
  int num_actions() const override { return 2; }
  double horizon() const override { return horizon_; }
  double discount() const override { return discount_; }
  State reset(Rng& rng) const override;
  StepResult step(std::span<const double> x, double t, int action, double h, Rng& rng) const override;
  double terminal_reward(std::span<const double> x) const override;

 private:
  GbmParams gbm_;
  double horizon_;
  double initial_price_;
  double discount_;
  bool euler_ = false;
  int euler_substeps_ = 1;
};

StepResult option_step(const OptionTradingEnv& env, double price, double t, int action, double h, Rng& rng);

// Maximum-likelihood GBM parameters from uniformly spaced prices.
GbmParams estimate_gbm(std::span<const double> prices, double dt);

std::vector<double> load_price_csv(const std::filesystem::path& path);
void write_price_csv(const std::filesystem::path& path, std::span<const double> prices);

}  // namespace cdrl
