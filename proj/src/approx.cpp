#include "cdrl/approx.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cdrl {

namespace {

constexpr const char* kCheckpointHeader = "cdrl-checkpoint v1";

}  // namespace

Mlp::Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    if (widths_[l] <= 0 || widths_[l + 1] <= 0) throw std::invalid_argument("Mlp: widths must be positive");
    offsets_.push_back(total);
    total += static_cast<std::size_t>(widths_[l] + 1) * static_cast<std::size_t>(widths_[l + 1]);
  }
  params_.assign(total, 0.0);
}

Mlp::Mlp(std::vector<int> widths, Rng& rng) : Mlp(std::move(widths)) {
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(widths_[l] + widths_[l + 1]));
    auto w = weight(l);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = (2.0 * rng.uniform() - 1.0) * limit;
  }
}

Eigen::Map<Eigen::MatrixXd> Mlp::weight(std::size_t layer) {
  return {params_.data() + offsets_[layer], widths_[layer + 1], widths_[layer]};
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(std::size_t layer) const {
  return {params_.data() + offsets_[layer], widths_[layer + 1], widths_[layer]};
}

Eigen::Map<Eigen::VectorXd> Mlp::bias(std::size_t layer) {
  const auto off = offsets_[layer] + static_cast<std::size_t>(widths_[layer]) * widths_[layer + 1];
  return {params_.data() + off, widths_[layer + 1]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(std::size_t layer) const {
  const auto off = offsets_[layer] + static_cast<std::size_t>(widths_[layer]) * widths_[layer + 1];
  return {params_.data() + off, widths_[layer + 1]};
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
  if (input.size() != input_dim()) throw std::invalid_argument("Mlp::forward: input dimension mismatch");
  Eigen::VectorXd a = input;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    Eigen::VectorXd z = weight(l) * a + bias(l);
    a = (l + 1 < layer_count()) ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
  }
  return a;
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& inputs, MlpTape* tape) const {
  if (inputs.rows() != input_dim()) throw std::invalid_argument("Mlp::forward_batch: input dimension mismatch");
  if (tape) {
    tape->inputs.clear();
    tape->preact.clear();
  }
  Eigen::MatrixXd a = inputs;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    Eigen::MatrixXd z = weight(l) * a;
    z.colwise() += bias(l);
    if (tape) {
      tape->inputs.push_back(a);
      tape->preact.push_back(z);
    }
    a = (l + 1 < layer_count()) ? Eigen::MatrixXd(z.cwiseMax(0.0)) : std::move(z);
  }
  return a;
}

void Mlp::backward(const MlpTape& tape, const Eigen::MatrixXd& output_grad, std::span<double> grad) const {
  if (grad.size() != params_.size()) throw std::invalid_argument("Mlp::backward: gradient size mismatch");
  Eigen::MatrixXd delta = output_grad;
  for (std::size_t l = layer_count(); l-- > 0;) {
    const auto rows = widths_[l + 1];
    const auto cols = widths_[l];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offsets_[l], rows, cols);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets_[l] + static_cast<std::size_t>(rows) * cols, rows);
    gw.noalias() += delta * tape.inputs[l].transpose();
    gb += delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = weight(l).transpose() * delta;
      delta = back.cwiseProduct((tape.preact[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
}

AdamState::AdamState(std::size_t n, AdamConfig cfg)
    : config(cfg), first_moment(n, 0.0), second_moment(n, 0.0) {}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * grads[i];
    v = c.beta2 * v + (1.0 - c.beta2) * grads[i] * grads[i];
    params[i] -= c.learning_rate * (m / bias1) / (std::sqrt(v / bias2) + c.epsilon);
  }
}

double huber(double u, double kappa) {
  const double a = std::abs(u);
  return a <= kappa ? 0.5 * u * u : kappa * (a - 0.5 * kappa);
}

LossReport quantile_huber(std::span<const double> pred, std::span<const double> target, double kappa) {
  if (!(kappa > 0.0)) throw std::invalid_argument("quantile_huber: kappa must be positive");
  if (pred.empty() || target.empty()) throw std::invalid_argument("quantile_huber: empty input");
  const std::size_t m = pred.size();
  const std::size_t mt = target.size();
  const double norm = 1.0 / (static_cast<double>(m) * static_cast<double>(mt) * kappa);
  LossReport report;
  report.pred_grad.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double tau = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
    double g = 0.0;
    for (std::size_t j = 0; j < mt; ++j) {
      const double u = target[j] - pred[i];
      const double w = std::abs(tau - (u < 0.0 ? 1.0 : 0.0));
      const double a = std::abs(u);
      if (a <= kappa) {
        report.loss += w * 0.5 * u * u;
        g -= w * u;
      } else {
        report.loss += w * kappa * (a - 0.5 * kappa);
        g -= w * kappa * (u < 0.0 ? -1.0 : 1.0);
      }
    }
    report.pred_grad[i] = g * norm;
  }
  report.loss *= norm;
  return report;
}

LossReport quantile_huber(const QuantileRep& pred, const QuantileRep& target, double kappa) {
  return quantile_huber(pred.values(), target.values(), kappa);
}

void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, const Mlp*>& nets) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << kCheckpointHeader << '\n' << nets.size() << '\n';
  char buf[64];
  for (const auto& [name, net] : nets) {
    out << name << ' ' << net->widths().size();
    for (int w : net->widths()) out << ' ' << w;
    out << '\n';
    for (double v : net->parameters()) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << '\n';
    }
  }
}

std::map<std::string, Mlp> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::string header;
  std::getline(in, header);
  if (header != kCheckpointHeader) throw std::runtime_error("unsupported checkpoint header: " + header);
  std::size_t count = 0;
  in >> count;
  std::map<std::string, Mlp> nets;
  for (std::size_t k = 0; k < count; ++k) {
    std::string name;
    std::size_t nwidths = 0;
    in >> name >> nwidths;
    std::vector<int> widths(nwidths);
    for (int& w : widths) in >> w;
    if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
    Mlp net(widths);
    for (double& v : net.parameters()) {
      std::string token;
      in >> token;
      v = std::stod(token);
    }
    if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
    nets.emplace(name, std::move(net));
  }
  return nets;
}

}  // namespace cdrl
