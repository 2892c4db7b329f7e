#pragma once

// One-dimensional distribution machinery on m-quantile representations.
//
// A QuantileRep with m entries stands for the uniform mixture of m Dirac
// masses; its i-th entry (0-based) encodes the (i + 1/2)/m quantile. Values may
// be stored unsorted (learned outputs are positional); every metric and
// statistic canonicalizes first.

#include <cstddef>
#include <span>
#include <vector>

#include "cdrl/rng.hpp"

namespace cdrl {

class QuantileRep {
 public:
  QuantileRep() = default;
  explicit QuantileRep(std::vector<double> values);

  static QuantileRep constant(std::size_t m, double value);

  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  // Quantile level encoded by entry i.
  double level(std::size_t i) const;

  bool is_canonical() const;

  friend bool operator==(const QuantileRep&, const QuantileRep&) = default;

 private:
  std::vector<double> values_;
};

class EmpiricalDist {
 public:
  EmpiricalDist() = default;
  explicit EmpiricalDist(std::vector<double> samples);

  std::size_t size() const { return samples_.size(); }
  std::span<const double> samples() const { return samples_; }

 private:
  std::vector<double> samples_;
};

// Law of Z - W for some coupling of two distributions, carried as samples.
struct Cdr {
  std::vector<double> samples;
};

// Distortion risk measure rho_beta(mu) = <beta, F^{-1}_mu>, realized as
// weights over the quantile buckets of an m-quantile representation.
class DistortionMeasure {
 public:
  enum class Kind { kExpectedValue, kCvar, kDiscreteWeights };

  static DistortionMeasure expected_value();
  static DistortionMeasure cvar(double alpha);
  static DistortionMeasure discrete(std::vector<double> weights);

  Kind kind() const { return kind_; }
  double alpha() const { return alpha_; }

  // Bucket weights for an m-quantile representation. Nonnegative, sum to 1.
  std::vector<double> weights(std::size_t m) const;

 private:
  Kind kind_ = Kind::kExpectedValue;
  double alpha_ = 1.0;
  std::vector<double> discrete_;
};

enum class MatchingMode { kExhaustive, kSorted };

QuantileRep canonicalize(const QuantileRep& rep);

// Step-function inverse CDF: for tau in ((i-1)/m, i/m] returns the i-th atom.
double quantile_function(const QuantileRep& rep, double tau);

// Empirical quantiles at the midpoint levels (i + 1/2)/m, linearly
// interpolated between order statistics. With m == N this returns the sorted
// samples exactly.
QuantileRep quantize(const EmpiricalDist& dist, std::size_t m);

// Exact W_p between the uniform atom mixtures; p must be 1 or 2. Unequal sizes
// are handled by integrating over the merged quantile breakpoints.
double wasserstein(int p, const QuantileRep& a, const QuantileRep& b);

// Independent oracle: min-cost perfect matching between equal-size samples,
// either by enumerating all permutations (size <= 8) or by sorted matching.
double wasserstein_bruteforce(int p, const EmpiricalDist& a, const EmpiricalDist& b,
                              MatchingMode mode = MatchingMode::kExhaustive);

double risk_measure(const DistortionMeasure& rho, const QuantileRep& rep);

// Comonotone coupled difference: elementwise zeta_i - eta_i. The result is not
// re-sorted.
QuantileRep superiority(const QuantileRep& zeta, const QuantileRep& eta);

// Samples of Z - W with Z ~ mu, W ~ nu drawn independently (product coupling).
Cdr independent_cdr(const EmpiricalDist& mu, const EmpiricalDist& nu, std::size_t n, Rng& rng);
Cdr independent_cdr(const EmpiricalDist& mu, const EmpiricalDist& nu, Rng& rng);

// Multiply every atom by h^{-q}.
QuantileRep rescale(const QuantileRep& psi, double h, double q);

// Shift every atom by (1 - h^{1-q}) * advantage.
QuantileRep advantage_shift(const QuantileRep& psi_q, double advantage, double h, double q);

double mean(const QuantileRep& rep);
double mean(const EmpiricalDist& dist);
double mean(const Cdr& cdr);
// 1/m normalization: the atoms are the distribution.
double variance(const QuantileRep& rep);
// 1/(N-1) normalization.
double variance(const EmpiricalDist& dist);
double variance(const Cdr& cdr);

// Lowest index among the maximizers.
std::size_t argmax(std::span<const double> values);

}  // namespace cdrl
