#include "cdrl/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cdrl {

namespace {

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

EmpiricalDist resample(const EmpiricalDist& d, Rng& rng) {
  std::vector<double> out(d.size());
  for (double& v : out) v = d.samples()[rng.index(d.size())];
  return EmpiricalDist(std::move(out));
}

}  // namespace

EmpiricalDist mc_return_dist(const ContinuousMdp& mdp, const Policy& policy, double t, std::span<const double> x,
                             std::size_t n, const SimConfig& cfg) {
  if (n < 2) throw std::invalid_argument("mc_return_dist: need at least 2 samples");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::substream(cfg.seed, i);
    out[i] = sample_return(mdp, policy, t, x, cfg, rng);
  }
  return EmpiricalDist(std::move(out));
}

EmpiricalDist mc_action_return_dist(const ContinuousMdp& mdp, const Policy& policy, double t,
                                    std::span<const double> x, int action, double h, std::size_t n,
                                    const SimConfig& cfg) {
  if (n < 2) throw std::invalid_argument("mc_action_return_dist: need at least 2 samples");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::substream(cfg.seed, i);
    out[i] = sample_action_return(mdp, policy, t, x, action, h, cfg, rng);
  }
  return EmpiricalDist(std::move(out));
}

QuantileRep mc_superiority(const EmpiricalDist& zeta, const EmpiricalDist& eta, std::size_t m) {
  return superiority(quantize(zeta, m), quantize(eta, m));
}

double bootstrap_wasserstein_se(int p, const EmpiricalDist& a, const EmpiricalDist& b, std::size_t m,
                                std::size_t resamples, std::uint64_t seed) {
  if (resamples < 2) return 0.0;
  Rng rng(seed);
  std::vector<double> stats(resamples);
  for (double& s : stats) {
    const EmpiricalDist ra = resample(a, rng);
    const EmpiricalDist rb = resample(b, rng);
    s = wasserstein(p, quantize(ra, m), quantize(rb, m));
  }
  return sample_sd(stats);
}

GapEstimate action_gaps(const ContinuousMdp& mdp, const Policy& policy, double t, std::span<const double> x,
                        double h, std::size_t n, const SimConfig& cfg, const GapOptions& opts) {
  if (mdp.num_actions < 2) throw std::invalid_argument("action_gaps: need at least two actions");
  GapEstimate est;
  est.h = h;
  est.samples = n;
  std::vector<EmpiricalDist> returns;
  std::vector<QuantileRep> reps;
  for (int a = 0; a < mdp.num_actions; ++a) {
    returns.push_back(mc_action_return_dist(mdp, policy, t, x, a, h, n, cfg));
    reps.push_back(quantize(returns.back(), opts.quantiles));
  }
  std::uint64_t pair_index = 0;
  for (int a1 = 0; a1 < mdp.num_actions; ++a1) {
    for (int a2 = a1 + 1; a2 < mdp.num_actions; ++a2, ++pair_index) {
      PairGap g;
      g.a1 = a1;
      g.a2 = a2;
      g.wasserstein = wasserstein(opts.p, reps[a1], reps[a2]);
      g.wasserstein_se = bootstrap_wasserstein_se(opts.p, returns[a1], returns[a2], opts.quantiles, opts.bootstrap,
                                                  mix_seed(cfg.seed ^ 0xb007ULL, pair_index));
      g.mean_difference = std::abs(mean(returns[a1]) - mean(returns[a2]));
      g.mean_difference_se = std::sqrt((variance(returns[a1]) + variance(returns[a2])) / static_cast<double>(n));
      est.pairs.push_back(g);
    }
  }
  for (std::size_t k = 1; k < est.pairs.size(); ++k) {
    if (est.pairs[k].wasserstein < est.pairs[est.distributional_pair].wasserstein) est.distributional_pair = k;
    if (est.pairs[k].mean_difference < est.pairs[est.value_pair].mean_difference) est.value_pair = k;
  }
  est.distributional_gap = est.pairs[est.distributional_pair].wasserstein;
  est.distributional_gap_se = est.pairs[est.distributional_pair].wasserstein_se;
  est.value_gap = est.pairs[est.value_pair].mean_difference;
  est.value_gap_se = est.pairs[est.value_pair].mean_difference_se;
  if (opts.keep_samples) est.action_returns = std::move(returns);
  return est;
}

RateFit fit_rate(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) throw std::invalid_argument("fit_rate: need at least 3 points");
  RateFit fit;
  for (const auto& [h, gap] : points) {
    if (!(h > 0.0)) throw std::invalid_argument("fit_rate: h must be positive");
    if (!(gap > 0.0)) throw std::invalid_argument("fit_rate: gaps must be strictly positive");
    fit.log_points.emplace_back(std::log(h), std::log(gap));
  }
  const double n = static_cast<double>(fit.log_points.size());
  double mx = 0.0;
  double my = 0.0;
  for (const auto& [lx, ly] : fit.log_points) {
    mx += lx;
    my += ly;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (const auto& [lx, ly] : fit.log_points) {
    sxx += (lx - mx) * (lx - mx);
    sxy += (lx - mx) * (ly - my);
    syy += (ly - my) * (ly - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_rate: h values must not all coincide");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

}  // namespace cdrl
