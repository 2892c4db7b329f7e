#pragma once

// Central finite differences for gradient checks.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace cdrl::test {

template <class Loss>
std::vector<double> numeric_gradient(std::span<double> params, Loss&& loss, double step = 1e-5) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + step;
    const double up = loss();
    params[i] = keep - step;
    const double down = loss();
    params[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||), with a floor so exact zeros compare cleanly.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-10});
}

}  // namespace cdrl::test
