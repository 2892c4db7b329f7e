#include "cdrl/dist.hpp"

#include <limits>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cdrl {

namespace {

void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw std::invalid_argument(std::string(what) + ": empty distribution");
}

void require_p(int p) {
  if (p != 1 && p != 2) throw std::invalid_argument("wasserstein: p must be 1 or 2");
}

double cost(int p, double d) {
  d = std::abs(d);
  return p == 1 ? d : d * d;
}

double root(int p, double c) { return p == 1 ? c : std::sqrt(c); }

}  // namespace

QuantileRep::QuantileRep(std::vector<double> values) : values_(std::move(values)) {
  require_nonempty(values_.size(), "QuantileRep");
}

QuantileRep QuantileRep::constant(std::size_t m, double value) {
  return QuantileRep(std::vector<double>(m, value));
}

double QuantileRep::level(std::size_t i) const {
  return (static_cast<double>(i) + 0.5) / static_cast<double>(values_.size());
}

bool QuantileRep::is_canonical() const { return std::is_sorted(values_.begin(), values_.end()); }

EmpiricalDist::EmpiricalDist(std::vector<double> samples) : samples_(std::move(samples)) {
  require_nonempty(samples_.size(), "EmpiricalDist");
}

DistortionMeasure DistortionMeasure::expected_value() { return DistortionMeasure{}; }

DistortionMeasure DistortionMeasure::cvar(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("cvar: alpha must lie in (0, 1]");
  DistortionMeasure d;
  d.kind_ = Kind::kCvar;
  d.alpha_ = alpha;
  return d;
}

DistortionMeasure DistortionMeasure::discrete(std::vector<double> weights) {
  require_nonempty(weights.size(), "DistortionMeasure");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("discrete weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("discrete weights must sum to 1");
  DistortionMeasure d;
  d.kind_ = Kind::kDiscreteWeights;
  d.discrete_ = std::move(weights);
  return d;
}

std::vector<double> DistortionMeasure::weights(std::size_t m) const {
  require_nonempty(m, "DistortionMeasure::weights");
  switch (kind_) {
    case Kind::kExpectedValue:
      return std::vector<double>(m, 1.0 / static_cast<double>(m));
    case Kind::kCvar: {
      // Mass of U(0, alpha) falling in each bucket ((i-1)/m, i/m].
      std::vector<double> w(m);
      const double dm = static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) {
        const double lo = std::min(alpha_, static_cast<double>(i) / dm);
        const double hi = std::min(alpha_, static_cast<double>(i + 1) / dm);
        w[i] = (hi - lo) / alpha_;
      }
      return w;
    }
    case Kind::kDiscreteWeights:
      if (discrete_.size() != m) throw std::invalid_argument("discrete weights: size mismatch");
      return discrete_;
  }
  return {};
}

QuantileRep canonicalize(const QuantileRep& rep) {
  std::vector<double> v(rep.values().begin(), rep.values().end());
  std::sort(v.begin(), v.end());
  return QuantileRep(std::move(v));
}

double quantile_function(const QuantileRep& rep, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("quantile_function: tau must lie in (0, 1)");
  const auto m = rep.size();
  auto i = static_cast<std::size_t>(std::ceil(tau * static_cast<double>(m)));
  i = std::clamp<std::size_t>(i, 1, m);
  return rep[i - 1];
}

QuantileRep quantize(const EmpiricalDist& dist, std::size_t m) {
  require_nonempty(m, "quantize");
  std::vector<double> sorted(dist.samples().begin(), dist.samples().end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  const double dn = static_cast<double>(n);
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double tau = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
    // Sample k sits at level (k + 1/2)/N.
    const double pos = std::clamp(tau * dn - 0.5, 0.0, dn - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    out[i] = frac == 0.0 ? sorted[lo] : sorted[lo] + frac * (sorted[hi] - sorted[lo]);
  }
  return QuantileRep(std::move(out));
}

double wasserstein(int p, const QuantileRep& a, const QuantileRep& b) {
  require_p(p);
  const QuantileRep ca = canonicalize(a);
  const QuantileRep cb = canonicalize(b);
  const std::size_t ma = ca.size();
  const std::size_t mb = cb.size();
  double total = 0.0;
  if (ma == mb) {
    for (std::size_t i = 0; i < ma; ++i) total += cost(p, ca[i] - cb[i]);
    return root(p, total / static_cast<double>(ma));
  }
  // Walk the merged breakpoints {i/ma} U {j/mb}; both quantile functions are
  // constant between consecutive breakpoints.
  std::size_t i = 0;
  std::size_t j = 0;
  double prev = 0.0;
  while (i < ma && j < mb) {
    const double next_a = static_cast<double>(i + 1) / static_cast<double>(ma);
    const double next_b = static_cast<double>(j + 1) / static_cast<double>(mb);
    const double next = std::min(next_a, next_b);
    total += (next - prev) * cost(p, ca[i] - cb[j]);
    prev = next;
    if (next_a <= next) ++i;
    if (next_b <= next) ++j;
  }
  return root(p, total);
}

double wasserstein_bruteforce(int p, const EmpiricalDist& a, const EmpiricalDist& b, MatchingMode mode) {
  require_p(p);
  if (a.size() != b.size()) throw std::invalid_argument("wasserstein_bruteforce: size mismatch");
  const std::size_t n = a.size();
  const double dn = static_cast<double>(n);
  if (mode == MatchingMode::kSorted) {
    std::vector<double> sa(a.samples().begin(), a.samples().end());
    std::vector<double> sb(b.samples().begin(), b.samples().end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost(p, sa[i] - sb[i]);
    return root(p, total / dn);
  }
  if (n > 8) throw std::invalid_argument("wasserstein_bruteforce: exhaustive mode supports at most 8 samples");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost(p, a.samples()[i] - b.samples()[perm[i]]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return root(p, best / dn);
}

double risk_measure(const DistortionMeasure& rho, const QuantileRep& rep) {
  const QuantileRep c = canonicalize(rep);
  const std::vector<double> w = rho.weights(c.size());
  double total = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) total += w[i] * c[i];
  return total;
}

QuantileRep superiority(const QuantileRep& zeta, const QuantileRep& eta) {
  if (zeta.size() != eta.size()) throw std::invalid_argument("superiority: quantile count mismatch");
  std::vector<double> out(zeta.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = zeta[i] - eta[i];
  return QuantileRep(std::move(out));
}

Cdr independent_cdr(const EmpiricalDist& mu, const EmpiricalDist& nu, std::size_t n, Rng& rng) {
  Cdr cdr;
  cdr.samples.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double z = mu.samples()[rng.index(mu.size())];
    const double w = nu.samples()[rng.index(nu.size())];
    cdr.samples[k] = z - w;
  }
  return cdr;
}

Cdr independent_cdr(const EmpiricalDist& mu, const EmpiricalDist& nu, Rng& rng) {
  return independent_cdr(mu, nu, std::max(mu.size(), nu.size()), rng);
}

QuantileRep rescale(const QuantileRep& psi, double h, double q) {
  if (!(h > 0.0)) throw std::invalid_argument("rescale: h must be positive");
  if (q == 0.0) return psi;
  const double factor = std::pow(h, -q);
  std::vector<double> out(psi.values().begin(), psi.values().end());
  for (double& v : out) v *= factor;
  return QuantileRep(std::move(out));
}

QuantileRep advantage_shift(const QuantileRep& psi_q, double advantage, double h, double q) {
  const double shift = (1.0 - std::pow(h, 1.0 - q)) * advantage;
  std::vector<double> out(psi_q.values().begin(), psi_q.values().end());
  for (double& v : out) v += shift;
  return QuantileRep(std::move(out));
}

namespace {

double span_mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double span_sq_dev(std::span<const double> v) {
  const double mu = span_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return s;
}

}  // namespace

double mean(const QuantileRep& rep) { return span_mean(rep.values()); }
double mean(const EmpiricalDist& dist) { return span_mean(dist.samples()); }
double mean(const Cdr& cdr) {
  require_nonempty(cdr.samples.size(), "Cdr");
  return span_mean(cdr.samples);
}

double variance(const QuantileRep& rep) {
  return span_sq_dev(rep.values()) / static_cast<double>(rep.size());
}

double variance(const EmpiricalDist& dist) {
  if (dist.size() < 2) return 0.0;
  return span_sq_dev(dist.samples()) / static_cast<double>(dist.size() - 1);
}

double variance(const Cdr& cdr) {
  require_nonempty(cdr.samples.size(), "Cdr");
  if (cdr.samples.size() < 2) return 0.0;
  return span_sq_dev(cdr.samples) / static_cast<double>(cdr.samples.size() - 1);
}

std::size_t argmax(std::span<const double> values) {
  require_nonempty(values.size(), "argmax");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace cdrl
