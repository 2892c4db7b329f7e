#include "cdrl/agents.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cdrl {

namespace {

constexpr double kTimeTolerance = 1e-9;

bool is_dsup(AgentKind k) { return k == AgentKind::kDsup || k == AgentKind::kDauDsup; }

std::vector<int> widths(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

QuantileRep head(const Eigen::Ref<const Eigen::VectorXd>& out, int action, int m) {
  const double* p = out.data() + static_cast<std::ptrdiff_t>(action) * m;
  return QuantileRep(std::vector<double>(p, p + m));
}

}  // namespace

AgentKind parse_agent_kind(const std::string& name) {
  if (name == "qrdqn") return AgentKind::kQrDqn;
  if (name == "dau") return AgentKind::kDau;
  if (name == "dsup") return AgentKind::kDsup;
  if (name == "dau+dsup") return AgentKind::kDauDsup;
  throw std::invalid_argument("unknown agent kind '" + name + "' (expected qrdqn, dau, dsup, dau+dsup)");
}

std::string to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::kQrDqn: return "qrdqn";
    case AgentKind::kDau: return "dau";
    case AgentKind::kDsup: return "dsup";
    case AgentKind::kDauDsup: return "dau+dsup";
  }
  return "?";
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::add(Transition transition) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(transition));
  } else {
    items_[next_] = std::move(transition);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (items_.empty()) throw std::logic_error("ReplayBuffer: cannot sample from an empty buffer");
  std::vector<const Transition*> out(n);
  for (auto& p : out) p = &items_[rng.index(items_.size())];
  return out;
}

bool store_subsampled(ReplayBuffer& buffer, const Transition& transition, double h, Rng& rng) {
  if (!(h > 0.0 && h <= 1.0)) throw std::invalid_argument("store_subsampled: h must lie in (0, 1]");
  const bool keep = rng.bernoulli(h);
  if (keep || transition.done) {
    buffer.add(transition);
    return true;
  }
  return false;
}

double ExplorationSchedule::epsilon(std::int64_t step) const {
  if (span <= 0 || step >= span) return end;
  if (step <= 0) return start;
  const double frac = static_cast<double>(step) / static_cast<double>(span);
  return start + frac * (end - start);
}

Agent::Agent(AgentConfig config, TerminalFn terminal_reward)
    : config_(std::move(config)), terminal_(std::move(terminal_reward)) {
  const auto& c = config_;
  if (c.num_actions < 2) throw std::invalid_argument("Agent: need at least two actions");
  if (c.quantiles < 1) throw std::invalid_argument("Agent: quantiles must be >= 1");
  if (!(c.h > 0.0)) throw std::invalid_argument("Agent: h must be positive");
  if (!(c.horizon > 0.0)) throw std::invalid_argument("Agent: horizon must be positive");
  if (!(c.q >= 0.0)) throw std::invalid_argument("Agent: q must be nonnegative");
  if (!terminal_) throw std::invalid_argument("Agent: terminal reward function required");
  Rng rng(mix_seed(c.seed, 0xa6e7ULL));
  const int in = c.state_dim + 1;
  const int m = c.quantiles;
  const int na = c.num_actions;
  switch (c.kind) {
    case AgentKind::kDsup:
      primary_ = Mlp(widths(in, c.hidden, m), rng);
      secondary_ = Mlp(widths(in, c.hidden, na * m), rng);
      break;
    case AgentKind::kDauDsup:
      primary_ = Mlp(widths(in, c.hidden, m), rng);
      secondary_ = Mlp(widths(in, c.hidden, na * m + na), rng);
      break;
    case AgentKind::kQrDqn:
      primary_ = Mlp(widths(in, c.hidden, na * m), rng);
      break;
    case AgentKind::kDau:
      primary_ = Mlp(widths(in, c.hidden, 1), rng);
      secondary_ = Mlp(widths(in, c.hidden, na), rng);
      break;
  }
  target_ = primary_;
  primary_opt_ = AdamState(primary_.parameter_count(), c.adam);
  if (has_secondary()) secondary_opt_ = AdamState(secondary_.parameter_count(), c.adam);
}

Agent make_agent(AgentConfig config, const EpisodicEnv& env) {
  config.state_dim = env.state_dim();
  config.num_actions = env.num_actions();
  config.horizon = env.horizon();
  return Agent(std::move(config), [&env](std::span<const double> x) { return env.terminal_reward(x); });
}

int Agent::head_rows() const { return config_.num_actions * config_.quantiles; }

Eigen::VectorXd Agent::features(double t, std::span<const double> x) const {
  if (static_cast<int>(x.size()) != config_.state_dim) throw std::invalid_argument("Agent: state dimension mismatch");
  Eigen::VectorXd f(config_.state_dim + 1);
  f[0] = std::clamp(t, 0.0, config_.horizon) / config_.horizon;
  for (int i = 0; i < config_.state_dim; ++i) f[i + 1] = x[i];
  return f;
}

Eigen::MatrixXd Agent::batch_features(const std::vector<const Transition*>& batch, bool next) const {
  Eigen::MatrixXd f(config_.state_dim + 1, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Transition& tr = *batch[k];
    f.col(static_cast<Eigen::Index>(k)) = next ? features(tr.t + config_.h, tr.next) : features(tr.t, tr.x);
  }
  return f;
}

std::vector<double> Agent::zeta_scores(const Eigen::Ref<const Eigen::VectorXd>& zeta_out) const {
  std::vector<double> s(config_.num_actions);
  for (int a = 0; a < config_.num_actions; ++a) s[a] = risk_measure(config_.risk, head(zeta_out, a, config_.quantiles));
  return s;
}

std::vector<double> Agent::selection_scores(const Eigen::Ref<const Eigen::VectorXd>& out) const {
  const int na = config_.num_actions;
  const int m = config_.quantiles;
  std::vector<double> s(na);
  switch (config_.kind) {
    case AgentKind::kDsup:
      for (int a = 0; a < na; ++a) s[a] = risk_measure(config_.risk, head(out, a, m));
      break;
    case AgentKind::kDauDsup:
      for (int a = 0; a < na; ++a) {
        s[a] = risk_measure(config_.risk, advantage_shift(head(out, a, m), out[head_rows() + a], config_.h, config_.q));
      }
      break;
    case AgentKind::kDau:
      for (int a = 0; a < na; ++a) s[a] = out[a];
      break;
    case AgentKind::kQrDqn:
      return zeta_scores(out);
  }
  return s;
}

std::vector<QuantileRep> Agent::action_heads(double t, std::span<const double> x) const {
  const Eigen::VectorXd f = features(t, x);
  std::vector<QuantileRep> heads;
  const int m = config_.quantiles;
  switch (config_.kind) {
    case AgentKind::kQrDqn: {
      const Eigen::VectorXd z = primary_.forward(f);
      for (int a = 0; a < config_.num_actions; ++a) heads.push_back(head(z, a, m));
      break;
    }
    case AgentKind::kDsup: {
      const Eigen::VectorXd p = secondary_.forward(f);
      for (int a = 0; a < config_.num_actions; ++a) heads.push_back(head(p, a, m));
      break;
    }
    case AgentKind::kDauDsup: {
      const Eigen::VectorXd p = secondary_.forward(f);
      for (int a = 0; a < config_.num_actions; ++a) {
        heads.push_back(advantage_shift(head(p, a, m), p[head_rows() + a], config_.h, config_.q));
      }
      break;
    }
    case AgentKind::kDau:
      break;
  }
  return heads;
}

std::vector<double> Agent::action_scores(double t, std::span<const double> x) const {
  const Eigen::VectorXd f = features(t, x);
  if (config_.kind == AgentKind::kQrDqn) return zeta_scores(primary_.forward(f));
  return selection_scores(secondary_.forward(f));
}

int Agent::greedy_action(double t, std::span<const double> x) const {
  return static_cast<int>(argmax(action_scores(t, x)));
}

int Agent::shifted_greedy_action(double t, std::span<const double> x) const {
  if (config_.kind != AgentKind::kDauDsup) throw std::logic_error("shifted greedy action requires an advantage head");
  return greedy_action(t, x);
}

int Agent::explore_action(double t, std::span<const double> x, double epsilon, Rng& rng) const {
  if (epsilon > 0.0 && rng.uniform() < epsilon) {
    return static_cast<int>(rng.index(static_cast<std::size_t>(config_.num_actions)));
  }
  return greedy_action(t, x);
}

QuantileRep Agent::dsup_prediction(double t, std::span<const double> x, int action) const {
  if (!is_dsup(config_.kind)) throw std::logic_error("dsup_prediction requires a DSUP agent");
  if (action < 0 || action >= config_.num_actions) throw std::out_of_range("dsup_prediction: action out of range");
  const Eigen::VectorXd f = features(t, x);
  const Eigen::VectorXd theta = primary_.forward(f);
  const Eigen::VectorXd phi = secondary_.forward(f);
  const auto best = static_cast<int>(argmax(selection_scores(phi)));
  const int m = config_.quantiles;
  const double hq = std::pow(config_.h, config_.q);
  std::vector<double> out(m);
  for (int i = 0; i < m; ++i) {
    out[i] = theta[i] + hq * (phi[action * m + i] - phi[best * m + i]);
  }
  return QuantileRep(std::move(out));
}

QuantileRep Agent::dsup_target(const Transition& tr) const {
  if (config_.kind == AgentKind::kDau) throw std::logic_error("dsup_target requires a quantile agent");
  const int m = config_.quantiles;
  const double gh = discount_factor(config_.discount, config_.h);
  const double base = config_.h * tr.reward;
  std::vector<double> out(m);
  if (tr.done) {
    const double v = base + gh * terminal_(tr.next);
    std::fill(out.begin(), out.end(), v);
    return QuantileRep(std::move(out));
  }
  const Eigen::VectorXd next = target_.forward(features(tr.t + config_.h, tr.next));
  int offset = 0;
  if (config_.kind == AgentKind::kQrDqn) offset = static_cast<int>(argmax(zeta_scores(next))) * m;
  for (int i = 0; i < m; ++i) out[i] = base + gh * next[offset + i];
  return QuantileRep(std::move(out));
}

Gradients Agent::superiority_gradients(const std::vector<const Transition*>& batch) const {
  if (config_.kind == AgentKind::kDau) throw std::logic_error("superiority loss requires a quantile agent");
  if (batch.empty()) throw std::invalid_argument("update: empty batch");
  const int m = config_.quantiles;
  const auto nb = static_cast<Eigen::Index>(batch.size());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double hq = std::pow(config_.h, config_.q);
  const double gh = discount_factor(config_.discount, config_.h);

  Gradients g;
  g.primary.assign(primary_.parameter_count(), 0.0);
  if (has_secondary()) g.secondary.assign(secondary_.parameter_count(), 0.0);

  const Eigen::MatrixXd x = batch_features(batch, false);
  const Eigen::MatrixXd xn = batch_features(batch, true);
  MlpTape tape_p;
  MlpTape tape_s;
  const Eigen::MatrixXd out_p = primary_.forward_batch(x, &tape_p);
  const Eigen::MatrixXd out_bar = target_.forward_batch(xn);
  Eigen::MatrixXd out_s;
  if (has_secondary()) out_s = secondary_.forward_batch(x, &tape_s);

  Eigen::MatrixXd d_p = Eigen::MatrixXd::Zero(out_p.rows(), nb);
  Eigen::MatrixXd d_s = Eigen::MatrixXd::Zero(out_s.rows(), nb);
  std::vector<double> pred(m);
  std::vector<double> target(m);
  for (Eigen::Index k = 0; k < nb; ++k) {
    const Transition& tr = *batch[static_cast<std::size_t>(k)];
    const double base = config_.h * tr.reward;
    if (tr.done) {
      std::fill(target.begin(), target.end(), base + gh * terminal_(tr.next));
    } else {
      int offset = 0;
      if (config_.kind == AgentKind::kQrDqn) offset = static_cast<int>(argmax(zeta_scores(out_bar.col(k)))) * m;
      for (int i = 0; i < m; ++i) target[i] = base + gh * out_bar(offset + i, k);
    }
    if (config_.kind == AgentKind::kQrDqn) {
      for (int i = 0; i < m; ++i) pred[i] = out_p(tr.action * m + i, k);
      const LossReport r = quantile_huber(pred, target, config_.kappa);
      g.loss += r.loss * inv_b;
      for (int i = 0; i < m; ++i) d_p(tr.action * m + i, k) = r.pred_grad[i] * inv_b;
      continue;
    }
    const auto best = static_cast<int>(argmax(selection_scores(out_s.col(k))));
    for (int i = 0; i < m; ++i) {
      pred[i] = out_p(i, k) + hq * (out_s(tr.action * m + i, k) - out_s(best * m + i, k));
    }
    const LossReport r = quantile_huber(pred, target, config_.kappa);
    g.loss += r.loss * inv_b;
    for (int i = 0; i < m; ++i) {
      const double gi = r.pred_grad[i] * inv_b;
      d_p(i, k) = gi;
      if (tr.action != best) {
        d_s(tr.action * m + i, k) += hq * gi;
        d_s(best * m + i, k) -= hq * gi;
      }
    }
  }
  primary_.backward(tape_p, d_p, g.primary);
  if (has_secondary()) secondary_.backward(tape_s, d_s, g.secondary);
  return g;
}

Gradients Agent::advantage_gradients(const std::vector<const Transition*>& batch) const {
  if (config_.kind != AgentKind::kDau && config_.kind != AgentKind::kDauDsup) {
    throw std::logic_error("advantage loss requires an advantage head");
  }
  if (batch.empty()) throw std::invalid_argument("update: empty batch");
  const auto nb = static_cast<Eigen::Index>(batch.size());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double h = config_.h;
  const double gh = discount_factor(config_.discount, h);
  const int adv_offset = config_.kind == AgentKind::kDau ? 0 : head_rows();

  Gradients g;
  g.primary.assign(primary_.parameter_count(), 0.0);
  g.secondary.assign(secondary_.parameter_count(), 0.0);

  const Eigen::MatrixXd x = batch_features(batch, false);
  const Eigen::MatrixXd xn = batch_features(batch, true);
  MlpTape tape_p;
  MlpTape tape_s;
  const Eigen::MatrixXd out_p = primary_.forward_batch(x, &tape_p);
  const Eigen::MatrixXd out_s = secondary_.forward_batch(x, &tape_s);
  // DAU bootstraps from its value target; DAU+DSUP reads V as the mean of theta.
  const Eigen::MatrixXd out_next =
      config_.kind == AgentKind::kDau ? target_.forward_batch(xn) : primary_.forward_batch(xn);

  Eigen::MatrixXd d_p = Eigen::MatrixXd::Zero(out_p.rows(), nb);
  Eigen::MatrixXd d_s = Eigen::MatrixXd::Zero(out_s.rows(), nb);
  for (Eigen::Index k = 0; k < nb; ++k) {
    const Transition& tr = *batch[static_cast<std::size_t>(k)];
    const auto best = static_cast<int>(argmax(selection_scores(out_s.col(k))));
    const double value = out_p.col(k).mean();
    const double adv = out_s(adv_offset + tr.action, k) - out_s(adv_offset + best, k);
    const double q = value + h * adv;
    const double bootstrap = tr.done ? terminal_(tr.next) : out_next.col(k).mean();
    const double tq = h * tr.reward + gh * bootstrap;
    const double delta = q - tq;
    g.advantage_loss += 0.5 * delta * delta * inv_b;
    if (tr.action != best) {
      d_s(adv_offset + tr.action, k) += h * delta * inv_b;
      d_s(adv_offset + best, k) -= h * delta * inv_b;
    }
    if (config_.kind == AgentKind::kDau) d_p(0, k) = delta * inv_b;
  }
  g.loss = g.advantage_loss;
  if (config_.kind == AgentKind::kDau) primary_.backward(tape_p, d_p, g.primary);
  secondary_.backward(tape_s, d_s, g.secondary);
  return g;
}

Gradients Agent::gradients(const std::vector<const Transition*>& batch) const {
  switch (config_.kind) {
    case AgentKind::kQrDqn:
    case AgentKind::kDsup:
      return superiority_gradients(batch);
    case AgentKind::kDau:
      return advantage_gradients(batch);
    case AgentKind::kDauDsup: {
      Gradients g = superiority_gradients(batch);
      const Gradients adv = advantage_gradients(batch);
      g.advantage_loss = adv.advantage_loss;
      for (std::size_t i = 0; i < g.secondary.size(); ++i) g.secondary[i] += adv.secondary[i];
      return g;
    }
  }
  return {};
}

void Agent::apply(const Gradients& g, bool step_primary, bool step_secondary) {
  if (!std::isfinite(g.loss) || !std::isfinite(g.advantage_loss)) {
    throw NumericalError("training loss is not finite");
  }
  if (step_primary) adam_step(primary_opt_, primary_.parameters(), g.primary);
  if (step_secondary && has_secondary()) adam_step(secondary_opt_, secondary_.parameters(), g.secondary);
  ++updates_;
  last_advantage_loss_ = g.advantage_loss;
}

double Agent::dsup_update(const std::vector<const Transition*>& batch) {
  if (!is_dsup(config_.kind)) throw std::logic_error("dsup_update requires a DSUP agent");
  const Gradients g = superiority_gradients(batch);
  apply(g, true, true);
  return g.loss;
}

double Agent::dau_update(const std::vector<const Transition*>& batch) {
  const Gradients g = advantage_gradients(batch);
  apply(g, config_.kind == AgentKind::kDau, true);
  return g.loss;
}

double Agent::update(const std::vector<const Transition*>& batch) {
  const Gradients g = gradients(batch);
  apply(g, true, true);
  return g.loss;
}

void Agent::sync_target() { target_ = primary_; }

std::map<std::string, const Mlp*> Agent::named_networks() const {
  std::map<std::string, const Mlp*> nets;
  switch (config_.kind) {
    case AgentKind::kQrDqn:
      nets["zeta"] = &primary_;
      nets["zeta_target"] = &target_;
      break;
    case AgentKind::kDau:
      nets["value"] = &primary_;
      nets["value_target"] = &target_;
      nets["advantage"] = &secondary_;
      break;
    case AgentKind::kDsup:
    case AgentKind::kDauDsup:
      nets["theta"] = &primary_;
      nets["theta_target"] = &target_;
      nets["phi"] = &secondary_;
      break;
  }
  return nets;
}

EmpiricalDist evaluate_policy(const EpisodicEnv& env, const ActionRule& rule, double h, int episodes,
                              std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate_policy: need at least one episode");
  std::vector<double> returns(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(e));
    State x = env.reset(rng);
    double total = 0.0;
    for (std::int64_t k = 0;; ++k) {
      const double t = static_cast<double>(k) * h;
      const int a = rule(t, x, rng);
      const StepResult s = env.step(x, t, a, h, rng);
      total += discount_factor(env.discount(), t) * s.reward * s.elapsed;
      if (s.done) {
        total += discount_factor(env.discount(), t + s.elapsed) * env.terminal_reward(s.next);
        break;
      }
      x = s.next;
    }
    returns[static_cast<std::size_t>(e)] = total;
  }
  return EmpiricalDist(std::move(returns));
}

TrainingLog train(Agent& agent, const EpisodicEnv& train_env, const EpisodicEnv& eval_env, const TrainConfig& cfg) {
  TrainingLog log;
  if (cfg.base_steps <= 0) return log;
  const double h = cfg.h;
  if (!(h > 0.0)) throw std::invalid_argument("train: h must be positive");
  if (std::abs(agent.config().h - h) > kTimeTolerance) throw std::invalid_argument("train: agent and config disagree on h");

  const auto interactions = static_cast<std::int64_t>(std::llround(static_cast<double>(cfg.base_steps) / h));
  const auto per_update = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(1.0 / h + kTimeTolerance)));
  ExplorationSchedule schedule{cfg.epsilon_start, cfg.epsilon_end,
                               static_cast<std::int64_t>(std::llround(cfg.epsilon_fraction * static_cast<double>(interactions)))};

  Rng env_rng = Rng::substream(cfg.seed, 1);
  Rng act_rng = Rng::substream(cfg.seed, 2);
  Rng replay_rng = Rng::substream(cfg.seed, 3);
  const std::uint64_t eval_seed = mix_seed(cfg.seed, 4);
  ReplayBuffer buffer(cfg.buffer_capacity);

  const ActionRule greedy = [&agent](double t, std::span<const double> x, Rng&) { return agent.greedy_action(t, x); };
  const DistortionMeasure tail = DistortionMeasure::cvar(cfg.eval_cvar_alpha);

  double loss_sum = 0.0;
  std::int64_t loss_count = 0;
  std::int64_t last_logged = -1;
  auto log_row = [&](std::int64_t step, double epsilon) {
    const EmpiricalDist returns = evaluate_policy(eval_env, greedy, h, cfg.eval_episodes, eval_seed);
    TrainLogRow row;
    row.wall_step = step;
    row.env_time = static_cast<double>(step) * h;
    row.loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
    row.eval_mean_return = mean(returns);
    row.eval_cvar_return = risk_measure(tail, quantize(returns, returns.size()));
    row.epsilon = epsilon;
    log.rows.push_back(row);
    loss_sum = 0.0;
    loss_count = 0;
    last_logged = agent.update_count();
  };

  std::int64_t episode_step = 0;
  State x = train_env.reset(env_rng);
  double epsilon = schedule.epsilon(0);
  for (std::int64_t i = 0; i < interactions; ++i) {
    epsilon = schedule.epsilon(i);
    const double t = static_cast<double>(episode_step) * h;
    const int a = agent.explore_action(t, x, epsilon, act_rng);
    StepResult s = train_env.step(x, t, a, h, env_rng);
    Transition tr{t, x, a, s.reward, s.next, s.done};
    store_subsampled(buffer, tr, std::min(h, 1.0), replay_rng);
    if (s.done) {
      episode_step = 0;
      x = train_env.reset(env_rng);
    } else {
      ++episode_step;
      x = std::move(s.next);
    }

    if ((i + 1) % per_update != 0 || buffer.size() < cfg.batch_size) continue;
    double loss = 0.0;
    try {
      loss = agent.update(buffer.sample(cfg.batch_size, replay_rng));
    } catch (const NumericalError& e) {
      throw TrainingDiverged(std::string(e.what()) + " at interaction " + std::to_string(i + 1), log);
    }
    loss_sum += loss;
    ++loss_count;
    if (agent.update_count() % cfg.target_period == 0) agent.sync_target();
    if (cfg.eval_every > 0 && agent.update_count() % cfg.eval_every == 0) log_row(i + 1, epsilon);
  }
  if (last_logged != agent.update_count()) log_row(interactions, epsilon);
  return log;
}

}  // namespace cdrl
