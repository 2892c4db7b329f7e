#include "cdrl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "cdrl/errors.hpp"

namespace cdrl {

namespace {

constexpr double kTimeTolerance = 1e-9;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

ContinuousMdp make_theorem_gap_env(double horizon, double discount) {
  ContinuousMdp mdp;
  mdp.state_dim = 1;
  mdp.num_actions = 2;
  mdp.drift = [](double, std::span<const double>, int, std::span<double> out) { out[0] = 0.0; };
  mdp.diffusion = [](double, std::span<const double>, int a, std::span<double> out) { out[0] = a == 1 ? 1.0 : 0.0; };
  mdp.reward = [](double, std::span<const double> x) { return x[0]; };
  mdp.terminal_reward = [](std::span<const double>) { return 0.0; };
  mdp.horizon = horizon;
  mdp.discount = discount;
  mdp.validate();
  return mdp;
}

ContinuousMdp make_illustration_env(const IllustrationParams& params) {
  ContinuousMdp mdp;
  mdp.state_dim = 1;
  mdp.num_actions = 2;
  const double drift = params.drift;
  const double vol = params.volatility;
  mdp.drift = [drift](double, std::span<const double>, int a, std::span<double> out) { out[0] = a == 1 ? drift : 0.0; };
  mdp.diffusion = [vol](double, std::span<const double>, int a, std::span<double> out) { out[0] = a == 1 ? vol : 0.0; };
  mdp.reward = [](double, std::span<const double> x) { return x[0]; };
  mdp.terminal_reward = [](std::span<const double>) { return 0.0; };
  mdp.horizon = params.horizon;
  mdp.discount = params.discount;
  mdp.validate();
  return mdp;
}

OptionTradingEnv::OptionTradingEnv(GbmParams gbm, double horizon, double initial_price, double discount)
    : gbm_(gbm), horizon_(horizon), initial_price_(initial_price), discount_(discount) {
  if (!(gbm.volatility >= 0.0)) throw std::invalid_argument("OptionTradingEnv: volatility must be nonnegative");
  if (!(horizon > 0.0)) throw std::invalid_argument("OptionTradingEnv: horizon must be positive");
  if (!(initial_price > 0.0)) throw std::invalid_argument("OptionTradingEnv: initial price must be positive");
  if (!(discount > 0.0 && discount <= 1.0)) throw std::invalid_argument("OptionTradingEnv: discount must lie in (0, 1]");
}

void OptionTradingEnv::set_euler(bool euler, int substeps) {
  if (substeps < 1) throw std::invalid_argument("OptionTradingEnv: substeps must be >= 1");
  euler_ = euler;
  euler_substeps_ = substeps;
}

State OptionTradingEnv::reset(Rng&) const { return State{initial_price_}; }

double OptionTradingEnv::terminal_reward(std::span<const double> x) const { return std::max(0.0, 1.0 - x[0]); }

StepResult OptionTradingEnv::step(std::span<const double> x, double t, int action, double h, Rng& rng) const {
  if (!(t < horizon_)) throw std::invalid_argument("option step: episode already past the horizon");
  if (!(x[0] > 0.0)) throw std::invalid_argument("option step: price must be positive");
  if (action != kHold && action != kExecute) throw std::out_of_range("option step: unknown action");
  StepResult r;
  r.reward = 0.0;
  r.elapsed = std::min(h, horizon_ - t);
  if (action == kExecute) {
    r.next = State{x[0]};
    r.done = true;
    return r;
  }
  double price = x[0];
  if (euler_) {
    const double dt = r.elapsed / euler_substeps_;
    for (int k = 0; k < euler_substeps_; ++k) {
      price += gbm_.drift * price * dt + gbm_.volatility * price * std::sqrt(dt) * rng.normal();
    }
    if (!(price > 0.0) || !std::isfinite(price)) throw NumericalError("Euler price step left the positive half-line");
  } else {
    const double s = gbm_.volatility;
    price *= std::exp((gbm_.drift - 0.5 * s * s) * r.elapsed + s * std::sqrt(r.elapsed) * rng.normal());
  }
  r.next = State{price};
  r.done = t + h >= horizon_ - kTimeTolerance;
  return r;
}

StepResult option_step(const OptionTradingEnv& env, double price, double t, int action, double h, Rng& rng) {
  const double x[1] = {price};
  return env.step(x, t, action, h, rng);
}

GbmParams estimate_gbm(std::span<const double> prices, double dt) {
  if (prices.size() < 3) throw std::invalid_argument("estimate_gbm: need at least 3 prices");
  if (!(dt > 0.0)) throw std::invalid_argument("estimate_gbm: dt must be positive");
  for (double p : prices) {
    if (!(p > 0.0)) throw std::invalid_argument("estimate_gbm: prices must be positive");
  }
  const std::size_t k = prices.size() - 1;
  std::vector<double> inc(k);
  double mean_inc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    inc[i] = std::log(prices[i + 1] / prices[i]);
    mean_inc += inc[i];
  }
  mean_inc /= static_cast<double>(k);
  double ss = 0.0;
  for (double l : inc) ss += (l - mean_inc) * (l - mean_inc);
  const double var = ss / static_cast<double>(k) / dt;
  return GbmParams{mean_inc / dt + 0.5 * var, std::sqrt(var)};
}

std::vector<double> load_price_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open price file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> prices;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (t != "step,price") throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected header 'step,price'");
      continue;
    }
    const auto comma = t.find(',');
    if (comma == std::string::npos) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected two columns");
    double price = 0.0;
    try {
      std::size_t used = 0;
      (void)std::stol(trim(t.substr(0, comma)));
      const std::string field = trim(t.substr(comma + 1));
      price = std::stod(field, &used);
      if (used != field.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": malformed row '" + t + "'");
    }
    if (!(price > 0.0)) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": price must be positive");
    prices.push_back(price);
  }
  if (!header_seen) throw std::runtime_error(path.string() + ": empty price file");
  return prices;
}

void write_price_csv(const std::filesystem::path& path, std::span<const double> prices) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write price file " + path.string());
  out << "step,price\n";
  char buf[64];
  for (std::size_t i = 0; i < prices.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", prices[i]);
    out << i << ',' << buf << '\n';
  }
}

}  // namespace cdrl
