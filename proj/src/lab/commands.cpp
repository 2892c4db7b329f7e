#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "cdrl/agents.hpp"
#include "cdrl/envs.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/estimate.hpp"
#include "cdrl/lab.hpp"

namespace cdrl::lab {

namespace {

struct GapEnvSpec {
  ContinuousMdp mdp;
  std::string name;
};

GapEnvSpec read_gap_env(ConfigReader& r) {
  const std::string env = r.text("env");
  const std::string horizon_text = r.text("env.horizon");
  const double discount = r.real("env.discount");
  if (!(discount > 0.0 && discount <= 1.0)) r.fail("env.discount", "must lie in (0, 1]");
  double horizon = 0.0;
  if (horizon_text == "auto") {
    horizon = env == "illustration" ? 10.0 : 1.0;
  } else {
    horizon = r.positive("env.horizon");
  }
  const double drift = r.real("env.drift");
  const double vol = r.real("env.volatility");
  if (vol < 0.0) r.fail("env.volatility", "must be nonnegative");
  if (env != "theorem" && env != "illustration") {
    r.fail("env", "expected 'theorem' or 'illustration', got '" + env + "'");
    return {};
  }
  if (!(horizon > 0.0) || !(discount > 0.0 && discount <= 1.0) || vol < 0.0) return {};
  if (env == "theorem") return {make_theorem_gap_env(horizon, discount), env};
  return {make_illustration_env({drift, vol, horizon, discount}), env};
}

void check_grid(ConfigReader& r, const std::string& key, const std::vector<double>& grid, double limit) {
  for (double h : grid) {
    if (!(h > 0.0) || h > limit) {
      r.fail(key, "every entry must lie in (0, " + format_real(limit) + "]");
      return;
    }
  }
}

}  // namespace

void cmd_gap_rates(const ResolvedConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  ConfigReader r(cfg);
  GapEnvSpec env = read_gap_env(r);
  const double t = r.real("t");
  const double x = r.real("x");
  const auto grid = r.reals("h_grid");
  const auto samples = r.integer("samples", 2);
  const auto substeps = r.integer("substeps", 1);
  const double tail_dt = r.real("tail_dt");
  if (tail_dt < 0.0) r.fail("tail_dt", "must be nonnegative");
  const auto p = r.integer("p", 1);
  if (p != 1 && p != 2) r.fail("p", "must be 1 or 2");
  const auto quantiles = r.integer("quantiles", 1);
  const auto bootstrap = r.integer("bootstrap", 0);
  const auto seeds = r.seeds("seeds");
  if (env.mdp.drift) {
    if (!(t >= 0.0 && t < env.mdp.horizon)) r.fail("t", "must lie in [0, horizon)");
    check_grid(r, "h_grid", grid, env.mdp.horizon - t);
  }
  r.finish();

  ResultWriter w(out / "results.csv");
  const Policy base = Policy::constant(0);
  const State x0{x};
  GapOptions opts;
  opts.p = static_cast<int>(p);
  opts.quantiles = static_cast<std::size_t>(quantiles);
  opts.bootstrap = static_cast<std::size_t>(bootstrap);
  const std::string wname = "w" + std::to_string(p) + "_gap";
  for (const auto seed : seeds) {
    std::vector<std::pair<double, double>> wpoints;
    std::vector<std::pair<double, double>> vpoints;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double h = grid[k];
      SimConfig sim = SimConfig::for_persistence(h, static_cast<int>(substeps), mix_seed(seed, k));
      sim.tail_dt = tail_dt;
      const GapEstimate est = action_gaps(env.mdp, base, t, x0, h, static_cast<std::size_t>(samples), sim, opts);
      w.row("gap-rates:" + env.name, seed, h, wname, est.distributional_gap, est.distributional_gap_se);
      w.row("gap-rates:" + env.name, seed, h, "value_gap", est.value_gap, est.value_gap_se);
      w.row("gap-rates:" + env.name, seed, h, "dt", sim.dt);
      wpoints.emplace_back(h, est.distributional_gap);
      vpoints.emplace_back(h, est.value_gap);
      log << "h=" << h << " " << wname << "=" << est.distributional_gap << " value_gap=" << est.value_gap << '\n';
    }
    auto summarize = [&](const std::vector<std::pair<double, double>>& pts, const std::string& metric) {
      if (pts.size() < 3) return;
      for (const auto& [h, g] : pts) {
        if (!(g > 0.0)) return;
      }
      const RateFit fit = fit_rate(pts);
      w.row("gap-rates:" + env.name, seed, std::nullopt, "slope_" + metric, fit.slope);
      w.row("gap-rates:" + env.name, seed, std::nullopt, "r2_" + metric, fit.r_squared);
      log << metric << " slope=" << fit.slope << " r2=" << fit.r_squared << '\n';
    };
    summarize(wpoints, wname);
    summarize(vpoints, "value_gap");
  }
}

void cmd_superiority_demo(const ResolvedConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  ConfigReader r(cfg);
  IllustrationParams params;
  params.drift = r.real("env.drift");
  params.volatility = r.real("env.volatility");
  params.horizon = r.positive("env.horizon");
  params.discount = r.real("env.discount");
  if (params.volatility < 0.0) r.fail("env.volatility", "must be nonnegative");
  if (!(params.discount > 0.0 && params.discount <= 1.0)) r.fail("env.discount", "must lie in (0, 1]");
  const double t = r.real("t");
  const double x = r.real("x");
  const auto action = r.integer("action", 0);
  if (action > 1) r.fail("action", "must be 0 or 1");
  const auto omegas = r.reals("omega_grid");
  const auto samples = r.integer("samples", 2);
  const auto substeps = r.integer("substeps", 1);
  const double tail_dt = r.real("tail_dt");
  if (tail_dt < 0.0) r.fail("tail_dt", "must be nonnegative");
  const auto quantiles = r.integer("quantiles", 1);
  const auto seeds = r.seeds("seeds");
  for (double w : omegas) {
    if (!(w > 0.0) || (params.horizon > 0.0 && t + 1.0 / w > params.horizon)) {
      r.fail("omega_grid", "every frequency must be positive with t + 1/omega within the horizon");
      break;
    }
  }
  r.finish();

  const ContinuousMdp mdp = make_illustration_env(params);
  const Policy base = Policy::constant(0);
  const State x0{x};
  const auto n = static_cast<std::size_t>(samples);
  const auto m = static_cast<std::size_t>(quantiles);

  ResultWriter w(out / "results.csv");
  std::ofstream qout(out / "quantiles.csv");
  qout << "# " << kResultsSchema << '\n' << "seed,omega,h,distribution,index,level,value\n";
  for (const auto seed : seeds) {
    for (std::size_t k = 0; k < omegas.size(); ++k) {
      const double omega = omegas[k];
      const double h = 1.0 / omega;
      SimConfig sim = SimConfig::for_persistence(h, static_cast<int>(substeps), mix_seed(seed, 2 * k));
      sim.tail_dt = tail_dt;
      // eta does not depend on h; it runs at the tail resolution when one is set.
      SimConfig eta_sim = sim;
      eta_sim.seed = mix_seed(seed, 2 * k + 1);
      if (tail_dt > 0.0) eta_sim.dt = tail_dt;

      const EmpiricalDist zeta = mc_action_return_dist(mdp, base, t, x0, static_cast<int>(action), h, n, sim);
      const EmpiricalDist eta = mc_return_dist(mdp, base, t, x0, n, eta_sim);
      const QuantileRep psi = mc_superiority(zeta, eta, m);
      const double advantage = mean(psi) / h;
      const QuantileRep psi_half = rescale(psi, h, 0.5);
      const std::vector<std::pair<std::string, QuantileRep>> panels = {
          {"psi", psi},
          {"psi_q1", rescale(psi, h, 1.0)},
          {"psi_q05", psi_half},
          {"psi_shift05", advantage_shift(psi_half, advantage, h, 0.5)},
      };
      for (const auto& [name, rep] : panels) {
        const double sd = std::sqrt(variance(rep));
        w.row("superiority-demo", seed, h, name + "_mean", mean(rep), sd / std::sqrt(static_cast<double>(n)));
        w.row("superiority-demo", seed, h, name + "_std", sd);
        for (std::size_t i = 0; i < rep.size(); ++i) {
          qout << seed << ',' << format_real(omega) << ',' << format_real(h) << ',' << name << ',' << i << ','
               << format_real(rep.level(i)) << ',' << format_real(rep[i]) << '\n';
        }
      }
      log << "omega=" << omega << " psi_q1 mean=" << mean(panels[1].second)
          << " psi_q05 std=" << std::sqrt(variance(psi_half)) << '\n';
    }
  }
}

void cmd_train(const ResolvedConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  ConfigReader r(cfg);
  AgentKind kind = AgentKind::kDsup;
  try {
    kind = parse_agent_kind(r.text("agent"));
  } catch (const std::invalid_argument& e) {
    r.fail("agent", e.what());
  }
  const double q = r.real("q");
  if ((kind == AgentKind::kDsup || kind == AgentKind::kDauDsup) && !(q >= 0.0)) r.fail("q", "must be nonnegative");
  const std::string risk_name = r.text("risk");
  const double risk_alpha = r.real("risk.alpha");
  DistortionMeasure risk = DistortionMeasure::expected_value();
  if (risk_name == "cvar") {
    if (risk_alpha > 0.0 && risk_alpha <= 1.0) {
      risk = DistortionMeasure::cvar(risk_alpha);
    } else {
      r.fail("risk.alpha", "must lie in (0, 1]");
    }
  } else if (risk_name != "mean") {
    r.fail("risk", "expected 'mean' or 'cvar'");
  }
  const auto omegas = r.reals("omega_grid");
  for (double w : omegas) {
    if (!(w >= 1.0)) {
      r.fail("omega_grid", "decision frequencies must be >= 1 (h <= 1)");
      break;
    }
  }
  const auto seeds = r.seeds("seeds");

  TrainConfig tc;
  tc.base_steps = r.integer("base_steps", 0);
  tc.buffer_capacity = static_cast<std::size_t>(r.integer("buffer", 1));
  tc.batch_size = static_cast<std::size_t>(r.integer("batch", 1));
  tc.target_period = r.integer("target_period", 1);
  tc.epsilon_start = r.real("eps.start");
  tc.epsilon_end = r.real("eps.end");
  tc.epsilon_fraction = r.real("eps.fraction");
  tc.eval_every = r.integer("eval_every", 0);
  tc.eval_episodes = static_cast<int>(r.integer("eval_episodes", 1));
  tc.eval_cvar_alpha = r.real("eval.cvar_alpha");
  if (!(tc.eval_cvar_alpha > 0.0 && tc.eval_cvar_alpha <= 1.0)) r.fail("eval.cvar_alpha", "must lie in (0, 1]");

  AgentConfig ac;
  ac.kind = kind;
  ac.q = q;
  ac.risk = risk;
  ac.quantiles = static_cast<int>(r.integer("quantiles", 1));
  ac.hidden = r.ints("hidden");
  ac.kappa = r.positive("kappa");
  ac.discount = r.real("discount");
  if (!(ac.discount > 0.0 && ac.discount <= 1.0)) r.fail("discount", "must lie in (0, 1]");
  ac.adam.learning_rate = r.positive("lr");
  ac.adam.beta1 = r.real("adam.beta1");
  ac.adam.beta2 = r.real("adam.beta2");
  ac.adam.epsilon = r.positive("adam.epsilon");

  const double horizon = r.positive("horizon");
  const double x0 = r.positive("x0");
  GbmParams train_gbm{r.real("train.mu"), r.real("train.sigma")};
  GbmParams eval_gbm{r.real("eval.mu"), r.real("eval.sigma")};
  if (train_gbm.volatility < 0.0) r.fail("train.sigma", "must be nonnegative");
  if (eval_gbm.volatility < 0.0) r.fail("eval.sigma", "must be nonnegative");
  const std::string data = r.text("data.csv");
  const double data_dt = r.positive("data.dt");
  const double split = r.real("data.split");
  if (!(split > 0.0 && split < 1.0)) r.fail("data.split", "must lie in (0, 1)");
  const bool euler = r.boolean("euler");
  const auto euler_substeps = r.integer("euler.substeps", 1);
  const bool checkpoint = r.boolean("checkpoint");
  if (!data.empty()) {
    try {
      const auto prices = load_price_csv(data);
      const auto cut = static_cast<std::size_t>(std::floor(split * static_cast<double>(prices.size())));
      if (cut < 3 || prices.size() - cut < 3) {
        r.fail("data.csv", "each of the train/eval splits needs at least 3 prices");
      } else {
        const std::span<const double> all(prices);
        train_gbm = estimate_gbm(all.first(cut), data_dt);
        eval_gbm = estimate_gbm(all.subspan(cut), data_dt);
      }
    } catch (const std::exception& e) {
      r.fail("data.csv", e.what());
    }
  }
  r.finish();

  log << "train gbm: mu=" << train_gbm.drift << " sigma=" << train_gbm.volatility << "; eval gbm: mu="
      << eval_gbm.drift << " sigma=" << eval_gbm.volatility << '\n';

  ResultWriter w(out / "results.csv");
  std::ofstream tlog(out / "train_log.csv");
  tlog << "# " << kTrainLogSchema << '\n'
       << "seed,omega,h,wall_step,env_time,loss,eval_mean_return,eval_cvar_return,epsilon\n";
  if (checkpoint) std::filesystem::create_directories(out / "checkpoints");
  const std::string experiment = "train:" + to_string(kind);

  for (const auto seed : seeds) {
    for (double omega : omegas) {
      const double h = 1.0 / omega;
      OptionTradingEnv train_env(train_gbm, horizon, x0, ac.discount);
      OptionTradingEnv eval_env(eval_gbm, horizon, x0, ac.discount);
      train_env.set_euler(euler, static_cast<int>(euler_substeps));
      eval_env.set_euler(euler, static_cast<int>(euler_substeps));
      AgentConfig agent_cfg = ac;
      agent_cfg.h = h;
      agent_cfg.seed = mix_seed(seed, 0x5eedULL);
      Agent agent = make_agent(agent_cfg, train_env);
      TrainConfig run = tc;
      run.h = h;
      run.seed = seed;

      auto write_log = [&](const TrainingLog& tl) {
        for (const auto& row : tl.rows) {
          tlog << seed << ',' << format_real(omega) << ',' << format_real(h) << ',' << row.wall_step << ','
               << format_real(row.env_time) << ',' << format_real(row.loss) << ','
               << format_real(row.eval_mean_return) << ',' << format_real(row.eval_cvar_return) << ','
               << format_real(row.epsilon) << '\n';
        }
        tlog.flush();
      };
      TrainingLog tl;
      try {
        tl = train(agent, train_env, eval_env, run);
      } catch (const TrainingDiverged& e) {
        write_log(e.log);
        throw;
      }
      write_log(tl);
      if (!tl.rows.empty()) {
        w.row(experiment, seed, h, "final_eval_mean", tl.rows.back().eval_mean_return);
        w.row(experiment, seed, h, "final_eval_cvar", tl.rows.back().eval_cvar_return);
        log << "seed=" << seed << " omega=" << omega << " eval_mean=" << tl.rows.back().eval_mean_return
            << " eval_cvar=" << tl.rows.back().eval_cvar_return << '\n';
      }
      if (checkpoint) {
        const std::string name = to_string(kind) + "_seed" + std::to_string(seed) + "_omega" + format_real(omega) + ".ckpt";
        save_checkpoint(out / "checkpoints" / name, agent.named_networks());
      }
    }
  }
}

void cmd_estimate_gbm(const ResolvedConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  ConfigReader r(cfg);
  const std::string csv = r.text("csv");
  const double dt = r.positive("dt");
  if (csv.empty()) r.fail("csv", "required");
  std::vector<double> prices;
  if (!csv.empty()) {
    try {
      prices = load_price_csv(csv);
      if (prices.size() < 3) r.fail("csv", "need at least 3 prices");
    } catch (const std::exception& e) {
      r.fail("csv", e.what());
    }
  }
  r.finish();
  const GbmParams p = estimate_gbm(prices, dt);
  ResultWriter w(out / "results.csv");
  w.row("estimate-gbm", 0, dt, "gbm_drift", p.drift);
  w.row("estimate-gbm", 0, dt, "gbm_volatility", p.volatility);
  log << "mu=" << format_real(p.drift) << " sigma=" << format_real(p.volatility) << '\n';
}

void run_command(const ResolvedConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  std::filesystem::create_directories(out);
  write_resolved_config(cfg, out / "config.ini");
  if (cfg.command == "gap-rates") return cmd_gap_rates(cfg, out, log);
  if (cfg.command == "superiority-demo") return cmd_superiority_demo(cfg, out, log);
  if (cfg.command == "train") return cmd_train(cfg, out, log);
  if (cfg.command == "estimate-gbm") return cmd_estimate_gbm(cfg, out, log);
  throw ConfigError("unknown subcommand '" + cfg.command + "'");
}

}  // namespace cdrl::lab
