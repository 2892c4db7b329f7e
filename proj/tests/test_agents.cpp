#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cdrl/agents.hpp"
#include "grad_check.hpp"

using namespace cdrl;

namespace {

// One decision per episode: action a moves the state to a and the episode
// ends, paying g(x) = x.
class BanditEnv : public EpisodicEnv {
 public:
  int state_dim() const override { return 1; }
  int num_actions() const override { return 2; }
  double horizon() const override { return 1.0; }
  double discount() const override { return 1.0; }
  State reset(Rng&) const override { return State{0.5}; }
  StepResult step(std::span<const double>, double t, int action, double h, Rng&) const override {
    ++steps_;
    StepResult r;
    r.next = State{static_cast<double>(action)};
    if (poison_after_ > 0 && steps_ > poison_after_) r.next[0] = std::numeric_limits<double>::quiet_NaN();
    r.done = true;
    r.elapsed = std::min(h, horizon() - t);
    return r;
  }
  double terminal_reward(std::span<const double> x) const override { return x[0]; }
  void poison_after(long n) { poison_after_ = n; }

 private:
  mutable long steps_ = 0;
  long poison_after_ = 0;
};

// A network that ignores its input.
void set_constant(Mlp& net, const std::vector<double>& out) {
  for (auto& p : net.parameters()) p = 0.0;
  auto b = net.bias(net.layer_count() - 1);
  REQUIRE(static_cast<std::size_t>(b.size()) == out.size());
  for (std::size_t i = 0; i < out.size(); ++i) b[static_cast<Eigen::Index>(i)] = out[i];
}

AgentConfig small_config(AgentKind kind, int m = 4, double h = 0.25) {
  AgentConfig c;
  c.kind = kind;
  c.state_dim = 1;
  c.num_actions = 2;
  c.quantiles = m;
  c.hidden = {6, 5};
  c.h = h;
  c.q = 0.5;
  c.discount = 0.9;
  c.horizon = 2.0;
  c.seed = 3;
  return c;
}

TerminalFn square() {
  return [](std::span<const double> x) { return x[0] * x[0]; };
}

std::vector<Transition> random_transitions(Rng& rng, int n, int num_actions = 2) {
  std::vector<Transition> out;
  for (int k = 0; k < n; ++k) {
    Transition tr;
    tr.t = 1.5 * rng.uniform();
    tr.x = State{rng.normal()};
    tr.action = static_cast<int>(rng.index(num_actions));
    tr.reward = rng.normal();
    tr.next = State{rng.normal()};
    tr.done = k % 3 == 2;
    out.push_back(tr);
  }
  return out;
}

std::vector<const Transition*> pointers(const std::vector<Transition>& v) {
  std::vector<const Transition*> out;
  for (const auto& t : v) out.push_back(&t);
  return out;
}

void perturb(Mlp& net, Rng& rng, double scale) {
  for (auto& p : net.parameters()) p += scale * rng.normal();
}

}  // namespace

TEST_CASE("agent kinds parse") {
  CHECK(parse_agent_kind("qrdqn") == AgentKind::kQrDqn);
  CHECK(parse_agent_kind("dau") == AgentKind::kDau);
  CHECK(parse_agent_kind("dsup") == AgentKind::kDsup);
  CHECK(parse_agent_kind("dau+dsup") == AgentKind::kDauDsup);
  CHECK(to_string(AgentKind::kDauDsup) == "dau+dsup");
  CHECK_THROWS(parse_agent_kind("dqn"));
}

TEST_CASE("replay buffer is a ring with uniform sampling") {
  ReplayBuffer buf(5);
  for (int i = 0; i < 12; ++i) {
    Transition tr;
    tr.reward = i;
    buf.add(tr);
    CHECK(buf.size() <= 5);
  }
  std::vector<double> held;
  for (std::size_t i = 0; i < buf.size(); ++i) held.push_back(buf[i].reward);
  std::sort(held.begin(), held.end());
  CHECK(held == std::vector<double>{7, 8, 9, 10, 11});

  Rng rng(1);
  std::vector<int> counts(5, 0);
  const int draws = 50000;
  for (const Transition* t : buf.sample(draws, rng)) ++counts[static_cast<int>(t->reward) - 7];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - draws / 5.0) * (c - draws / 5.0) / (draws / 5.0);
  CHECK(chi2 < 13.28);  // chi-square, 4 dof, p = 0.01
  CHECK_THROWS(ReplayBuffer(0));
  CHECK_THROWS(ReplayBuffer(3).sample(1, rng));
}

TEST_CASE("Bernoulli subsampling keeps terminals") {
  Rng rng(2);
  ReplayBuffer buf(200000);
  Transition tr;
  for (int i = 0; i < 1000; ++i) CHECK(store_subsampled(buf, tr, 1.0, rng));
  Transition done;
  done.done = true;
  for (int i = 0; i < 1000; ++i) CHECK(store_subsampled(buf, done, 0.01, rng));
  int kept = 0;
  for (int i = 0; i < 100000; ++i) kept += store_subsampled(buf, tr, 0.1, rng);
  CHECK(std::abs(kept / 1e5 - 0.1) < 0.01);
  CHECK_THROWS(store_subsampled(buf, tr, 0.0, rng));
  CHECK_THROWS(store_subsampled(buf, tr, 1.5, rng));
}

TEST_CASE("exploration schedule") {
  const ExplorationSchedule s{1.0, 0.02, 100};
  CHECK(s.epsilon(0) == 1.0);
  CHECK(s.epsilon(50) == doctest::Approx(0.51));
  CHECK(s.epsilon(100) == 0.02);
  CHECK(s.epsilon(100000) == 0.02);
  double prev = 2.0;
  for (int k = 0; k < 200; ++k) {
    CHECK(s.epsilon(k) <= prev);
    prev = s.epsilon(k);
  }
}

TEST_CASE("greedy action from engineered heads") {
  Agent agent(small_config(AgentKind::kDsup), square());
  const State x{0.0};
  set_constant(agent.secondary(), {1, 1, 1, 1, 1, 1, 1, 1});
  CHECK(agent.greedy_action(0.0, x) == 0);
  set_constant(agent.secondary(), {1, 1, 1, 1, 3, 3, 3, 3});
  CHECK(agent.greedy_action(0.0, x) == 1);

  AgentConfig cvar = small_config(AgentKind::kDsup);
  cvar.risk = DistortionMeasure::cvar(0.25);
  Agent averse(cvar, square());
  set_constant(averse.secondary(), {0, 0, 0, 0, -2, 1, 1, 1});
  CHECK(averse.greedy_action(0.0, x) == 0);
  // positional order of atoms is irrelevant
  set_constant(averse.secondary(), {0, 0, 0, 0, 1, 1, -2, 1});
  CHECK(averse.greedy_action(0.0, x) == 0);

  Agent qr(small_config(AgentKind::kQrDqn), square());
  set_constant(qr.primary(), {5, 5, 5, 5, 1, 2, 9, 7});
  CHECK(qr.greedy_action(0.0, x) == 0);
  Agent dau(small_config(AgentKind::kDau), square());
  set_constant(dau.secondary(), {-1, 2});
  CHECK(dau.greedy_action(0.0, x) == 1);
}

TEST_CASE("epsilon-greedy") {
  AgentConfig c = small_config(AgentKind::kDsup);
  c.num_actions = 3;
  Agent agent(c, square());
  set_constant(agent.secondary(), {0, 0, 0, 0, 9, 9, 9, 9, 1, 1, 1, 1});
  Rng rng(5);
  const State x{0.0};
  for (int i = 0; i < 1000; ++i) CHECK(agent.explore_action(0.0, x, 0.0, rng) == 1);
  std::vector<int> counts(3, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[agent.explore_action(0.0, x, 1.0, rng)];
  double chi2 = 0.0;
  for (int k : counts) chi2 += (k - n / 3.0) * (k - n / 3.0) / (n / 3.0);
  CHECK(chi2 < 9.21);  // 2 dof, p = 0.01
}

TEST_CASE("dsup prediction") {
  Rng rng(6);
  for (AgentKind kind : {AgentKind::kDsup, AgentKind::kDauDsup}) {
    Agent agent(small_config(kind), square());
    perturb(agent.secondary(), rng, 0.3);
    perturb(agent.primary(), rng, 0.3);
    for (int k = 0; k < 20; ++k) {
      const double t = 2.0 * rng.uniform();
      const State x{rng.normal()};
      const int best = agent.greedy_action(t, x);
      const Eigen::VectorXd theta = agent.primary().forward(agent.features(t, x));
      const QuantileRep at_best = agent.dsup_prediction(t, x, best);
      for (int i = 0; i < 4; ++i) CHECK(at_best[i] == theta[i]);
    }
  }

  AgentConfig c = small_config(AgentKind::kDsup);
  c.h = 1.0;
  c.q = 0.7;
  Agent unit(c, square());
  set_constant(unit.primary(), {1, 2, 3, 4});
  set_constant(unit.secondary(), {0, 1, 0, 1, 5, 5, 5, 5});
  const QuantileRep p = unit.dsup_prediction(0.0, State{0.0}, 0);
  CHECK(p == QuantileRep({1 - 5, 2 - 4, 3 - 5, 4 - 4}));

  // a* is pinned by the advantage-shifted heads so that a = 0 is not greedy.
  AgentConfig s = small_config(AgentKind::kDauDsup, 2, 0.25);
  Agent shifted(s, square());
  set_constant(shifted.primary(), {0, 0});
  set_constant(shifted.secondary(), {2, 2, 1, 1, -100, 0});
  REQUIRE(shifted.greedy_action(0.0, State{0.0}) == 1);
  const QuantileRep d = shifted.dsup_prediction(0.0, State{0.0}, 0);
  CHECK(d[0] == doctest::Approx(0.5));
  CHECK(d[1] == doctest::Approx(0.5));
  CHECK_THROWS(Agent(small_config(AgentKind::kQrDqn), square()).dsup_prediction(0.0, State{0.0}, 0));
}

TEST_CASE("dsup targets") {
  AgentConfig c = small_config(AgentKind::kDsup);
  c.discount = 0.8;
  Agent agent(c, [](std::span<const double> x) { return x[0] == 0.0 ? 0.0 : 1.0; });
  set_constant(agent.target(), {3, 3, 3, 3});
  Transition tr{0.5, State{0.1}, 1, 0.0, State{0.0}, true};
  CHECK(agent.dsup_target(tr) == QuantileRep::constant(4, 0.0));
  tr.done = false;
  tr.reward = 2.0;
  const QuantileRep boot = agent.dsup_target(tr);
  for (double v : boot.values()) CHECK(v == doctest::Approx(0.25 * 2.0 + std::pow(0.8, 0.25) * 3.0));

  AgentConfig g = small_config(AgentKind::kDsup, 3, 0.5);
  g.discount = 1.0;
  Agent one(g, [](std::span<const double>) { return 1.0; });
  const Transition fin{0.0, State{0.0}, 0, 2.0, State{0.0}, true};
  CHECK(one.dsup_target(fin) == QuantileRep::constant(3, 2.0));
}

TEST_CASE("QR-DQN target is the standard quantile TD target") {
  Rng rng(7);
  Agent agent(small_config(AgentKind::kQrDqn), square());
  perturb(agent.target(), rng, 0.5);
  for (int k = 0; k < 20; ++k) {
    Transition tr{rng.uniform(), State{rng.normal()}, 0, rng.normal(), State{rng.normal()}, false};
    const Eigen::VectorXd z = agent.target().forward(agent.features(tr.t + 0.25, tr.next));
    const double m0 = z.head(4).mean();
    const double m1 = z.tail(4).mean();
    const int next_best = m1 > m0 ? 1 : 0;
    const QuantileRep target = agent.dsup_target(tr);
    for (int i = 0; i < 4; ++i) {
      CHECK(target[i] == doctest::Approx(0.25 * tr.reward + std::pow(0.9, 0.25) * z[next_best * 4 + i]));
    }
  }
}

TEST_CASE("superiority loss is zero when prediction equals target") {
  Agent agent(small_config(AgentKind::kDsup), [](std::span<const double>) { return 0.0; });
  set_constant(agent.primary(), {0, 0, 0, 0});
  set_constant(agent.secondary(), {0, 0, 0, 0, 0, 0, 0, 0});
  const std::vector<Transition> batch{{0.0, State{1.0}, 1, 0.0, State{0.0}, true}};
  const Gradients g = agent.gradients(pointers(batch));
  CHECK(g.loss == 0.0);
  for (double v : g.primary) CHECK(v == 0.0);
  for (double v : g.secondary) CHECK(v == 0.0);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(8);
  for (AgentKind kind : {AgentKind::kDsup, AgentKind::kQrDqn, AgentKind::kDau, AgentKind::kDauDsup}) {
    CAPTURE(to_string(kind));
    for (int trial = 0; trial < 5; ++trial) {
      AgentConfig c = small_config(kind);
      c.seed = 100 + trial;
      Agent agent(c, square());
      perturb(agent.primary(), rng, 0.2);
      if (kind != AgentKind::kQrDqn) perturb(agent.secondary(), rng, 0.2);
      const auto data = random_transitions(rng, 2);
      const auto batch = pointers(data);
      const Gradients g = agent.gradients(batch);
      // The advantage loss reads V from theta without training it.
      auto total = [&] {
        const Gradients now = agent.gradients(batch);
        return kind == AgentKind::kDauDsup ? now.loss + now.advantage_loss : now.loss;
      };
      auto primary_loss = [&] { return agent.gradients(batch).loss; };
      CHECK(test::relative_error(g.primary, test::numeric_gradient(agent.primary().parameters(), primary_loss)) < 1e-4);
      if (kind != AgentKind::kQrDqn) {
        CHECK(test::relative_error(g.secondary, test::numeric_gradient(agent.secondary().parameters(), total)) < 1e-4);
      }
    }
  }
}

TEST_CASE("updates never touch the target network") {
  Rng rng(9);
  for (AgentKind kind : {AgentKind::kDsup, AgentKind::kQrDqn, AgentKind::kDau, AgentKind::kDauDsup}) {
    Agent agent(small_config(kind), square());
    const std::vector<double> before(agent.target().parameters().begin(), agent.target().parameters().end());
    const auto data = random_transitions(rng, 8);
    for (int k = 0; k < 5; ++k) agent.update(pointers(data));
    CHECK(std::equal(before.begin(), before.end(), agent.target().parameters().begin()));
    CHECK(agent.update_count() == 5);
    agent.sync_target();
    CHECK(std::equal(agent.primary().parameters().begin(), agent.primary().parameters().end(),
                     agent.target().parameters().begin()));
  }
}

TEST_CASE("repeated updates on one transition drive the loss down") {
  AgentConfig c = small_config(AgentKind::kDsup, 8);
  c.adam.learning_rate = 1e-3;
  Agent agent(c, [](std::span<const double>) { return 1.5; });
  const std::vector<Transition> data{{0.3, State{0.2}, 1, 0.5, State{0.4}, true}};
  const auto batch = pointers(data);
  std::vector<double> losses;
  for (int k = 0; k < 300; ++k) losses.push_back(agent.dsup_update(batch));
  for (std::size_t k = 20; k < losses.size(); ++k) CHECK(losses[k] <= losses[k - 1] * (1.0 + 1e-9));
  CHECK(losses.back() < 0.1 * losses.front());
}

TEST_CASE("advantage updating") {
  SUBCASE("Bellman fixpoint gives zero loss") {
    AgentConfig c = small_config(AgentKind::kDau);
    const double h = c.h;
    const double r = 0.7;
    const double gh = std::pow(c.discount, h);
    const double v = h * r / (1.0 - gh);
    Agent agent(c, square());
    set_constant(agent.primary(), {v});
    agent.sync_target();
    set_constant(agent.secondary(), {0.0, 0.0});
    const std::vector<Transition> loop{{0.5, State{0.3}, 1, r, State{0.3}, false}};
    const Gradients g = agent.advantage_gradients(pointers(loop));
    CHECK(g.loss == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(agent.dau_update(pointers(loop)) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("greedy action pins the advantage") {
    Rng rng(10);
    Agent agent(small_config(AgentKind::kDau), square());
    perturb(agent.secondary(), rng, 0.5);
    set_constant(agent.primary(), {1.25});
    agent.sync_target();
    Transition tr{0.2, State{0.4}, 0, 0.3, State{0.1}, false};
    tr.action = agent.greedy_action(tr.t, tr.x);
    const std::vector<Transition> data{tr};
    const Gradients g = agent.advantage_gradients(pointers(data));
    const double tq = 0.25 * 0.3 + std::pow(0.9, 0.25) * 1.25;
    CHECK(g.loss == doctest::Approx(0.5 * (1.25 - tq) * (1.25 - tq)));
    for (double v : g.secondary) CHECK(v == 0.0);
  }
  SUBCASE("standalone DAU has no distributional loss") {
    Agent agent(small_config(AgentKind::kDau), square());
    const Transition tr{0.0, State{0.0}, 0, 0.0, State{0.0}, true};
    CHECK_THROWS(agent.dsup_target(tr));
    CHECK(agent.action_heads(0.0, State{0.0}).empty());
  }
}

TEST_CASE("shifted greedy selection") {
  const State x{0.0};
  SUBCASE("q = 1 removes the shift") {
    AgentConfig c = small_config(AgentKind::kDauDsup, 2);
    c.q = 1.0;
    Agent agent(c, square());
    set_constant(agent.secondary(), {1, 1, 0, 0, -50, 50});
    CHECK(agent.shifted_greedy_action(0.0, x) == 0);
  }
  SUBCASE("a dominating advantage head decides when phi is flat") {
    Agent agent(small_config(AgentKind::kDauDsup, 2), square());
    set_constant(agent.secondary(), {0, 0, 0, 0, -1, 3});
    CHECK(agent.shifted_greedy_action(0.0, x) == 1);
  }
  SUBCASE("hand-computed case") {
    // h = 0.01, q = 1/2: shift factor 0.9; scores 5 + 0 and 0 + 0.9 * 6
    AgentConfig c = small_config(AgentKind::kDauDsup, 2, 0.01);
    Agent agent(c, square());
    set_constant(agent.secondary(), {4, 6, 0, 0, 0, 6});
    CHECK(agent.shifted_greedy_action(0.0, x) == 1);
    set_constant(agent.secondary(), {5, 6, 0, 0, 0, 6});
    CHECK(agent.shifted_greedy_action(0.0, x) == 0);
  }
  CHECK_THROWS(Agent(small_config(AgentKind::kDsup), square()).shifted_greedy_action(0.0, x));
}

TEST_CASE("predicted return family scales the superiority gap by h^q") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    AgentConfig c = small_config(AgentKind::kDsup, 6, 0.04 + rng.uniform());
    c.q = rng.uniform();
    Agent agent(c, square());
    set_constant(agent.primary(), std::vector<double>(6, rng.normal()));
    perturb(agent.secondary(), rng, 0.5);
    const double t = rng.uniform();
    const State x{rng.normal()};
    const int best = agent.greedy_action(t, x);
    const auto heads = agent.action_heads(t, x);
    const QuantileRep d0 = superiority(heads[0], heads[best]);
    const QuantileRep d1 = superiority(heads[1], heads[best]);
    const double lhs = wasserstein(1, canonicalize(agent.dsup_prediction(t, x, 0)), canonicalize(agent.dsup_prediction(t, x, 1)));
    const double rhs = std::pow(c.h, c.q) * wasserstein(1, canonicalize(d0), canonicalize(d1));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("training on a bandit learns the paying action") {
  for (AgentKind kind : {AgentKind::kDsup, AgentKind::kQrDqn, AgentKind::kDau, AgentKind::kDauDsup}) {
    CAPTURE(to_string(kind));
    BanditEnv env;
    AgentConfig c;
    c.kind = kind;
    c.quantiles = 8;
    c.hidden = {16};
    c.h = 1.0;
    c.discount = 1.0;
    c.adam.learning_rate = 3e-3;
    Agent agent = make_agent(c, env);
    TrainConfig t;
    t.h = 1.0;
    t.base_steps = 400;
    t.batch_size = 16;
    t.target_period = 50;
    t.eval_every = 100;
    t.eval_episodes = 10;
    t.seed = 4;
    const TrainingLog log = train(agent, env, env, t);
    CHECK(log.rows.size() == 4);
    CHECK(agent.greedy_action(0.0, State{0.5}) == 1);
    CHECK(log.rows.back().eval_mean_return == 1.0);
  }
}

TEST_CASE("training bookkeeping") {
  BanditEnv env;
  AgentConfig c;
  c.quantiles = 4;
  c.hidden = {8};
  c.h = 1.0;
  auto run = [&](std::uint64_t seed) {
    Agent agent = make_agent(c, env);
    TrainConfig t;
    t.h = 1.0;
    t.base_steps = 120;
    t.batch_size = 8;
    t.eval_every = 40;
    t.eval_episodes = 5;
    t.seed = seed;
    return train(agent, env, env, t);
  };
  const TrainingLog a = run(1);
  const TrainingLog b = run(1);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].loss == b.rows[i].loss);
    CHECK(a.rows[i].eval_mean_return == b.rows[i].eval_mean_return);
    CHECK(a.rows[i].wall_step == b.rows[i].wall_step);
  }

  Agent agent = make_agent(c, env);
  TrainConfig zero;
  zero.h = 1.0;
  zero.base_steps = 0;
  CHECK(train(agent, env, env, zero).rows.empty());
}

TEST_CASE("update cadence scales with the decision interval") {
  BanditEnv env;
  AgentConfig c;
  c.quantiles = 4;
  c.hidden = {4};
  c.h = 0.25;
  Agent agent = make_agent(c, env);
  TrainConfig t;
  t.h = 0.25;
  t.base_steps = 50;
  t.batch_size = 1;
  t.eval_every = 0;
  t.eval_episodes = 1;
  train(agent, env, env, t);
  // 200 interactions, one update per 4
  CHECK(agent.update_count() == 50);
}

TEST_CASE("divergence aborts with the partial log") {
  BanditEnv env;
  env.poison_after(300);
  AgentConfig c;
  c.quantiles = 4;
  c.hidden = {8};
  c.h = 1.0;
  Agent agent = make_agent(c, env);
  TrainConfig t;
  t.h = 1.0;
  t.base_steps = 1000;
  t.batch_size = 8;
  t.eval_every = 100;
  t.eval_episodes = 2;
  bool thrown = false;
  try {
    train(agent, env, env, t);
  } catch (const TrainingDiverged& e) {
    thrown = true;
    CHECK_FALSE(e.log.rows.empty());
    CHECK(e.log.rows.size() < 10);
  }
  CHECK(thrown);
}
