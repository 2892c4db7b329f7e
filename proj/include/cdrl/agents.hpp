#pragma once

// Value-based learners acting every h time units: QR-DQN, DAU, DSUP(q) and
// DAU+DSUP(q), plus replay, exploration, and the training loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdrl/approx.hpp"
#include "cdrl/ctmdp.hpp"
#include "cdrl/dist.hpp"
#include "cdrl/envs.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/rng.hpp"

namespace cdrl {

enum class AgentKind { kQrDqn, kDau, kDsup, kDauDsup };

AgentKind parse_agent_kind(const std::string& name);
std::string to_string(AgentKind kind);

struct AgentConfig {
  AgentKind kind = AgentKind::kDsup;
  int state_dim = 1;
  int num_actions = 2;
  int quantiles = 100;
  std::vector<int> hidden{100, 100};
  double q = 0.5;
  double h = 1.0;
  double discount = 0.999;
  double horizon = 1.0;
  double kappa = 1.0;
  DistortionMeasure risk = DistortionMeasure::expected_value();
  AdamConfig adam;
  std::uint64_t seed = 0;
};

struct Transition {
  double t = 0.0;
  State x;
  int action = 0;
  double reward = 0.0;  // running reward rate r(t, x)
  State next;
  bool done = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void add(Transition transition);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return items_[i]; }

  // Uniform with replacement.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> items_;
};

// Keeps the transition iff a Bernoulli(h) draw succeeds or it is terminal.
bool store_subsampled(ReplayBuffer& buffer, const Transition& transition, double h, Rng& rng);

// Linear decay from start to end over span steps, then constant.
struct ExplorationSchedule {
  double start = 1.0;
  double end = 0.02;
  std::int64_t span = 1;

  double epsilon(std::int64_t step) const;
};

struct Gradients {
  double loss = 0.0;
  double advantage_loss = 0.0;
  std::vector<double> primary;
  std::vector<double> secondary;
};

// Network roles by kind:
//   DSUP / DAU+DSUP: primary = theta (m quantiles of eta), secondary = phi
//     (|A| m proxy quantiles, plus |A| advantage outputs for DAU+DSUP sharing
//     the torso), target = snapshot of theta.
//   QR-DQN: primary = zeta (|A| m quantiles), target = snapshot of zeta.
//   DAU: primary = V (scalar), secondary = advantage (|A|), target = snapshot of V.
class Agent {
 public:
  Agent(AgentConfig config, TerminalFn terminal_reward);

  const AgentConfig& config() const { return config_; }

  // (clamp(t, 0, T) / T, x).
  Eigen::VectorXd features(double t, std::span<const double> x) const;

  // Per-action distributions used for greedy selection (phi heads, shifted phi
  // heads, or zeta heads); empty for DAU.
  std::vector<QuantileRep> action_heads(double t, std::span<const double> x) const;
  // Scores whose argmax is the greedy action.
  std::vector<double> action_scores(double t, std::span<const double> x) const;

  int greedy_action(double t, std::span<const double> x) const;
  // argmax of rho over phi(t, x, a) + (1 - h^{1-q}) A(t, x, a). DAU+DSUP only.
  int shifted_greedy_action(double t, std::span<const double> x) const;
  int explore_action(double t, std::span<const double> x, double epsilon, Rng& rng) const;

  // theta(t, x) + h^q (phi(t, x, a) - phi(t, x, a*)). DSUP kinds only.
  QuantileRep dsup_prediction(double t, std::span<const double> x, int action) const;
  // h r + gamma^h (1 - done) target(t + h, x') + gamma^h done g(x'). For
  // QR-DQN the bootstrap uses the target head greedy at the next state.
  QuantileRep dsup_target(const Transition& transition) const;

  // Loss and parameter gradients without touching any parameters.
  Gradients superiority_gradients(const std::vector<const Transition*>& batch) const;
  Gradients advantage_gradients(const std::vector<const Transition*>& batch) const;
  Gradients gradients(const std::vector<const Transition*>& batch) const;

  double dsup_update(const std::vector<const Transition*>& batch);
  double dau_update(const std::vector<const Transition*>& batch);
  // The kind's full update; returns the distributional (or Bellman) loss.
  double update(const std::vector<const Transition*>& batch);

  void sync_target();
  std::int64_t update_count() const { return updates_; }
  double last_advantage_loss() const { return last_advantage_loss_; }

  Mlp& primary() { return primary_; }
  Mlp& secondary() { return secondary_; }
  Mlp& target() { return target_; }
  const Mlp& primary() const { return primary_; }
  const Mlp& secondary() const { return secondary_; }
  const Mlp& target() const { return target_; }

  std::map<std::string, const Mlp*> named_networks() const;
  double terminal_reward(std::span<const double> x) const { return terminal_(x); }

 private:
  bool has_secondary() const { return config_.kind != AgentKind::kQrDqn; }
  int head_rows() const;
  Eigen::MatrixXd batch_features(const std::vector<const Transition*>& batch, bool next) const;
  std::vector<double> selection_scores(const Eigen::Ref<const Eigen::VectorXd>& secondary_out) const;
  std::vector<double> zeta_scores(const Eigen::Ref<const Eigen::VectorXd>& zeta_out) const;
  void apply(const Gradients& g, bool step_primary, bool step_secondary);

  AgentConfig config_;
  TerminalFn terminal_;
  Mlp primary_;
  Mlp secondary_;
  Mlp target_;
  AdamState primary_opt_;
  AdamState secondary_opt_;
  std::int64_t updates_ = 0;
  double last_advantage_loss_ = 0.0;
};

Agent make_agent(AgentConfig config, const EpisodicEnv& env);

struct TrainConfig {
  double h = 1.0;
  // Interactions = base_steps / h; one update every floor(1/h) interactions,
  // so roughly base_steps updates regardless of h.
  std::int64_t base_steps = 0;
  std::size_t buffer_capacity = 20000;
  std::size_t batch_size = 32;
  std::int64_t target_period = 1000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.02;
  double epsilon_fraction = 0.1;
  std::int64_t eval_every = 1000;  // in updates
  int eval_episodes = 100;
  double eval_cvar_alpha = 0.25;
  std::uint64_t seed = 0;
};

struct TrainLogRow {
  std::int64_t wall_step = 0;
  double env_time = 0.0;
  double loss = 0.0;
  double eval_mean_return = 0.0;
  double eval_cvar_return = 0.0;
  double epsilon = 0.0;
};

struct TrainingLog {
  std::vector<TrainLogRow> rows;
};

class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, TrainingLog partial)
      : NumericalError(what), log(std::move(partial)) {}
  TrainingLog log;
};

using ActionRule = std::function<int(double t, std::span<const double> x, Rng& rng)>;

// Discounted episode returns of a decision rule applied every h time units.
// Episode k draws from Rng::substream(seed, k).
EmpiricalDist evaluate_policy(const EpisodicEnv& env, const ActionRule& rule, double h, int episodes,
                              std::uint64_t seed);

TrainingLog train(Agent& agent, const EpisodicEnv& train_env, const EpisodicEnv& eval_env, const TrainConfig& cfg);

}  // namespace cdrl
