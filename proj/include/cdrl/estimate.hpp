#pragma once

// Monte-Carlo estimators of return and superiority distributions, action gaps,
// and log-log rate fits.

#include <cstddef>
#include <utility>
#include <vector>

#include "cdrl/ctmdp.hpp"
#include "cdrl/dist.hpp"

namespace cdrl {

// Quantization level used on the estimator side.
inline constexpr std::size_t kEstimatorQuantiles = 512;

// Path i draws from Rng::substream(cfg.seed, i).
EmpiricalDist mc_return_dist(const ContinuousMdp& mdp, const Policy& policy, double t, std::span<const double> x,
                             std::size_t n, const SimConfig& cfg);

EmpiricalDist mc_action_return_dist(const ContinuousMdp& mdp, const Policy& policy, double t,
                                    std::span<const double> x, int action, double h, std::size_t n,
                                    const SimConfig& cfg);

// Empirical superiority: both inputs quantized to m levels, then subtracted.
QuantileRep mc_superiority(const EmpiricalDist& zeta, const EmpiricalDist& eta,
                           std::size_t m = kEstimatorQuantiles);

// Bootstrap standard error of W_p between two sample sets.
double bootstrap_wasserstein_se(int p, const EmpiricalDist& a, const EmpiricalDist& b, std::size_t m,
                                std::size_t resamples, std::uint64_t seed);

struct PairGap {
  int a1 = 0;
  int a2 = 0;
  double wasserstein = 0.0;
  double wasserstein_se = 0.0;
  double mean_difference = 0.0;  // |mean(zeta_a1) - mean(zeta_a2)|
  double mean_difference_se = 0.0;
};

struct GapEstimate {
  double h = 0.0;
  std::size_t samples = 0;
  std::vector<PairGap> pairs;
  // Minimizing pairs (lexicographically first on ties).
  std::size_t distributional_pair = 0;
  std::size_t value_pair = 0;
  double distributional_gap = 0.0;
  double distributional_gap_se = 0.0;
  double value_gap = 0.0;
  double value_gap_se = 0.0;
  std::vector<EmpiricalDist> action_returns;
};

struct GapOptions {
  int p = 1;
  std::size_t quantiles = kEstimatorQuantiles;
  std::size_t bootstrap = 200;
  bool keep_samples = false;
};

GapEstimate action_gaps(const ContinuousMdp& mdp, const Policy& policy, double t, std::span<const double> x,
                        double h, std::size_t n, const SimConfig& cfg, const GapOptions& opts = {});

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::vector<std::pair<double, double>> log_points;  // (ln h, ln gap)
};

// Ordinary least squares of ln(gap) on ln(h).
RateFit fit_rate(const std::vector<std::pair<double, double>>& points);

}  // namespace cdrl
