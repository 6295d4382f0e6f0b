#include "macfx/optim/agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "macfx/errors.hpp"
#include "macfx/util/rng.hpp"

namespace macfx::optim {

namespace {

diff::GaussianPolicy with_step(const diff::GaussianPolicy& base, const Vec& theta0, const Vec& step) {
  diff::GaussianPolicy c = base;
  c.set_flat(theta0 + step);
  return c;
}

// mean over the batch of q_t * a_t, q_t = pi_new / pi_old
double ratio_weighted_mean(const diff::GaussianPolicy& policy, const RolloutBatch& b, const Vec& a) {
  const Vec lp = policy.log_probs(b.obs, b.actions);
  return ((lp - b.log_probs_old).array().exp() * a.array()).mean();
}

}  // namespace

nlohmann::json to_json(const UpdateReport& r) {
  return {{"update", r.update},
          {"mode", to_string(r.mode)},
          {"kl", r.kl},
          {"slack", r.slack},
          {"lambda", r.lambda_used},
          {"c_hat", r.c_hat},
          {"u_hat", r.u_hat},
          {"accepted", r.accepted},
          {"backtracks", r.backtracks},
          {"lin_ok", r.lin_ok},
          {"latch_before", r.latch_before},
          {"latch_after", r.latch_after},
          {"failed", r.failed},
          {"episode_reward", r.episode_reward},
          {"cost_critic_mse", r.cost_critic_mse},
          {"step_norm", r.step_norm}};
}

Agent Agent::create(const OptimizerConfig& cfg, int obs_dim, int act_dim, std::uint64_t seed) {
  cfg.validate();
  Agent a;
  a.cfg = cfg;
  const auto layout = diff::make_layout(obs_dim, cfg.hidden, act_dim, diff::Activation::tanh, diff::Activation::identity);
  a.policy = diff::GaussianPolicy::create(layout, util::derive_seed(seed, 1), cfg.init_log_std, cfg.policy_final_scale);
  a.policy_adam = diff::Adam(a.policy.num_params(), {.lr = cfg.policy_lr});
  a.reward_critic = Critic::create(obs_dim, cfg.hidden, util::derive_seed(seed, 2), cfg.critic_lr);
  for (int k = 0; k < 3; ++k)
    a.cost_critics[k] = Critic::create(obs_dim, cfg.hidden, util::derive_seed(seed, 3 + k), cfg.critic_lr);
  a.rng.seed(util::derive_seed(seed, 6));
  return a;
}

Vec shaped_advantage(const RolloutBatch& b, const Head3& lambda) {
  Vec a = b.adv_reward;
  for (int k = 0; k < 3; ++k)
    if (lambda[k] != 0.0) a -= lambda[k] * b.adv_cost.row(k).transpose();
  return a;
}

Vec cost_reduction_advantage(const RolloutBatch& b, const Head3& weights) {
  Vec a = Vec::Zero(b.size());
  for (int k = 0; k < 3; ++k)
    if (weights[k] != 0.0) a -= weights[k] * b.adv_cost.row(k).transpose();
  return a;
}

Head3 normalized_pressure(const Head3& lambda, double eps_safe) {
  const double total = lambda[0] + lambda[1] + lambda[2] + eps_safe;
  return {lambda[0] / total, lambda[1] / total, lambda[2] / total};
}

Mode crpo_select_mode(const constraint::CostStats& stats, const constraint::Budgets& budgets,
                      const constraint::PressureWeights& pressure, const OptimizerConfig& cfg, bool macf_variant) {
  double worst = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) worst = std::max(worst, stats.c_hat[k] - budgets.b[k]);
  if (worst > 0.0) return Mode::constraint;
  if (macf_variant && *std::max_element(pressure.lambda.begin(), pressure.lambda.end()) >= cfg.lambda_thr)
    return Mode::constraint;
  return Mode::reward;
}

int most_violated_head(const constraint::CostStats& stats, const constraint::Budgets& budgets) {
  int best = 0;
  for (int k = 1; k < 3; ++k)
    if (stats.c_hat[k] - budgets.b[k] > stats.c_hat[best] - budgets.b[best]) best = k;
  return best;
}

Head3 dual_ascent(const Head3& duals, const constraint::CostStats& stats, const constraint::Budgets& budgets,
                  double lr) {
  Head3 out;
  for (int k = 0; k < 3; ++k) out[k] = std::max(0.0, duals[k] + lr * (stats.c_hat[k] - budgets.b[k]));
  return out;
}

Head3 recovery_weights(const constraint::CostStats& stats, const constraint::Budgets& budgets, const Head3& lambda,
                       double eps_safe, bool cpo_variant) {
  Head3 w;
  double total = 0.0;
  for (int k = 0; k < 3; ++k) {
    w[k] = std::max(0.0, stats.c_hat[k] - budgets.b[k]);
    if (cpo_variant) w[k] *= lambda[k];
    total += w[k];
  }
  for (auto& x : w) x /= total + eps_safe;
  return w;
}

double clipped_objective(const diff::GaussianPolicy& policy, const Mat& obs, const Mat& actions, const Vec& lp_old,
                         const Vec& adv, double eps) {
  const Vec q = (policy.log_probs(obs, actions) - lp_old).array().exp();
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i)
    total += std::min(q[i] * adv[i], std::clamp(q[i], 1.0 - eps, 1.0 + eps) * adv[i]);
  return total / static_cast<double>(q.size());
}

Vec clipped_objective_grad(const diff::GaussianPolicy& policy, const Mat& obs, const Mat& actions, const Vec& lp_old,
                           const Vec& adv, double eps) {
  const Vec q = (policy.log_probs(obs, actions) - lp_old).array().exp();
  Vec w(q.size());
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const bool clipped = (adv[i] > 0.0 && q[i] > 1.0 + eps) || (adv[i] < 0.0 && q[i] < 1.0 - eps);
    w[i] = clipped ? 0.0 : adv[i] * q[i];
  }
  return policy.weighted_log_prob_grad(obs, actions, w);
}

UpdateReport ppo_clipped_update(Agent& agent, const RolloutBatch& b, const Vec& adv) {
  const auto& cfg = agent.cfg;
  if (adv.size() != b.size()) throw StructuralError("advantage length does not match the batch");
  UpdateReport r;
  const diff::GaussianPolicy old = agent.policy;
  const diff::Adam old_adam = agent.policy_adam;
  Vec theta = old.flat();
  std::vector<Eigen::Index> idx(b.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int e = 0; e < cfg.ppo_epochs; ++e) {
    std::shuffle(idx.begin(), idx.end(), agent.rng);
    for (std::size_t s = 0; s < idx.size(); s += cfg.minibatch) {
      const std::size_t stop = std::min(idx.size(), s + cfg.minibatch);
      const std::vector<Eigen::Index> cols(idx.begin() + s, idx.begin() + stop);
      const Vec g = clipped_objective_grad(agent.policy, b.obs(Eigen::all, cols), b.actions(Eigen::all, cols),
                                           b.log_probs_old(cols), adv(cols), cfg.eps_clip);
      if (!g.allFinite()) {
        agent.policy = old;
        agent.policy_adam = old_adam;
        r.failed = true;
        return r;
      }
      const Vec neg = -g;
      agent.policy_adam.step(theta, neg);
      agent.policy.set_flat(theta);
      theta = agent.policy.flat();
    }
  }
  r.kl = diff::mean_kl(old, agent.policy, b.obs);
  if (!std::isfinite(r.kl)) {
    agent.policy = old;
    agent.policy_adam = old_adam;
    r.failed = true;
    r.kl = 0.0;
    return r;
  }
  r.accepted = true;
  r.step_norm = (theta - old.flat()).norm();
  return r;
}

Vec safe_metric_matvec(const diff::FisherOperator& fisher, std::span<const Vec> j, const Head3& lambda, double xi,
                       const Vec& v) {
  Vec out = fisher.apply(v, xi);
  for (std::size_t k = 0; k < j.size(); ++k)
    if (lambda[k] != 0.0) out += lambda[k] * j[k] * j[k].dot(v);
  return out;
}

TrustRegionResult solve_trust_region(const TrustRegionProblem& p) {
  TrustRegionResult res;
  res.step = Vec::Zero(p.rhs.size());
  if (p.rhs.norm() == 0.0) return res;
  diff::CgResult cg;
  try {
    cg = diff::conjugate_gradient(p.metric, p.rhs, p.cg_iters, p.cg_tol);
  } catch (const NumericError&) {
    res.solver_failed = true;
    return res;
  }
  const Vec& d = cg.x;
  const double dgd = d.dot(p.metric(d));
  if (!d.allFinite() || !(dgd > 0.0) || !std::isfinite(dgd)) {
    res.solver_failed = true;
    return res;
  }
  const Vec full = p.direction_sign * std::sqrt(2.0 * p.radius / dgd) * d;
  double scale = 1.0;
  for (int i = 0; i < p.max_backtracks; ++i, scale *= p.backtrack_factor) {
    const Vec step = scale * full;
    const double kl = p.kl(step);
    const bool kl_ok = std::isfinite(kl) && kl <= p.kl_slack * p.radius;
    const bool improves = kl_ok && p.improvement(step) > 0.0;
    bool extra = true;
    if (improves && p.extra_check) extra = res.extra_ok = p.extra_check(step);
    if (improves && extra) {
      res.accepted = true;
      res.backtracks = i;
      res.kl = kl;
      res.step = step;
      return res;
    }
  }
  res.backtracks = p.max_backtracks;
  return res;
}

UpdateReport trust_region_step(Agent& agent, const RolloutBatch& b, const Vec& g_r, const std::array<Vec, 3>& j,
                               const constraint::Budgets& budgets, const constraint::PressureWeights& pressure,
                               bool safe_metric, bool linearized_checks) {
  const auto& cfg = agent.cfg;
  const diff::GaussianPolicy old = agent.policy;
  const Vec theta0 = old.flat();
  const diff::FisherOperator fisher(old, b.obs);
  const Head3 c_hat = b.stats.c_hat;
  const auto realized = [&](const Vec& step) { return with_step(old, theta0, step); };
  const auto lin_ok = [&](const Vec& actual) {
    for (int k = 0; k < 3; ++k)
      if (c_hat[k] + j[k].dot(actual) > budgets.b[k]) return false;
    return true;
  };
  const double base = b.adv_reward.mean();

  TrustRegionProblem p;
  if (safe_metric)
    p.metric = [&](const Vec& v) { return safe_metric_matvec(fisher, j, pressure.lambda, cfg.damping, v); };
  else
    p.metric = [&](const Vec& v) { return fisher.apply(v, cfg.damping); };
  p.rhs = g_r;
  p.radius = cfg.delta;
  p.kl = [&](const Vec& step) { return diff::mean_kl(old, realized(step), b.obs); };
  p.improvement = [&](const Vec& step) { return ratio_weighted_mean(realized(step), b, b.adv_reward) - base; };
  if (linearized_checks) p.extra_check = [&](const Vec& step) { return lin_ok(realized(step).flat() - theta0); };
  p.kl_slack = cfg.kl_slack;
  p.backtrack_factor = cfg.backtrack_factor;
  p.max_backtracks = cfg.max_backtracks;
  p.cg_iters = cfg.cg_iters;
  p.cg_tol = cfg.cg_tol;

  const auto res = solve_trust_region(p);
  UpdateReport r;
  r.mode = Mode::reward;
  r.backtracks = res.backtracks;
  r.failed = res.solver_failed;
  r.lin_ok = linearized_checks ? res.extra_ok : true;
  if (res.accepted) {
    agent.policy = realized(res.step);
    const Vec actual = agent.policy.flat() - theta0;
    r.accepted = true;
    r.kl = diff::mean_kl(old, agent.policy, b.obs);
    r.step_norm = actual.norm();
    if (linearized_checks) r.lin_ok = lin_ok(actual);
  }
  return r;
}

UpdateReport recovery_step(Agent& agent, const RolloutBatch& b, const std::array<Vec, 3>& j,
                           const constraint::Budgets& budgets, const constraint::PressureWeights& pressure,
                           bool cpo_variant) {
  const auto& cfg = agent.cfg;
  const Head3 w = recovery_weights(b.stats, budgets, pressure.lambda, cfg.eps_safe, cpo_variant);
  const diff::GaussianPolicy old = agent.policy;
  const Vec theta0 = old.flat();
  const diff::FisherOperator fisher(old, b.obs);
  const auto realized = [&](const Vec& step) { return with_step(old, theta0, step); };
  Vec rhs = Vec::Zero(theta0.size());
  for (int k = 0; k < 3; ++k) rhs += w[k] * j[k];
  const Vec weighted_adv = -cost_reduction_advantage(b, w);
  const double base = weighted_adv.mean();

  TrustRegionProblem p;
  if (cpo_variant)
    p.metric = [&](const Vec& v) { return safe_metric_matvec(fisher, j, pressure.lambda, cfg.damping, v); };
  else
    p.metric = [&](const Vec& v) { return fisher.apply(v, cfg.damping); };
  p.rhs = rhs;
  p.radius = cfg.delta_rec;
  p.direction_sign = -1.0;
  p.kl = [&](const Vec& step) { return diff::mean_kl(old, realized(step), b.obs); };
  p.improvement = [&](const Vec& step) { return base - ratio_weighted_mean(realized(step), b, weighted_adv); };
  p.kl_slack = cfg.kl_slack;
  p.backtrack_factor = cfg.backtrack_factor;
  p.max_backtracks = cfg.max_backtracks;
  p.cg_iters = cfg.cg_iters;
  p.cg_tol = cfg.cg_tol;

  const auto res = solve_trust_region(p);
  UpdateReport r;
  r.mode = Mode::recovery;
  r.backtracks = res.backtracks;
  r.failed = res.solver_failed;
  if (res.accepted) {
    agent.policy = realized(res.step);
    r.accepted = true;
    r.kl = diff::mean_kl(old, agent.policy, b.obs);
    r.step_norm = (agent.policy.flat() - theta0).norm();
  }
  return r;
}

void fit_critics(Agent& agent, const RolloutBatch& b) {
  const auto& cfg = agent.cfg;
  agent.reward_critic.fit(b.obs, b.ret_reward, cfg.ppo_epochs, cfg.minibatch, agent.rng);
  for (int k = 0; k < 3; ++k)
    agent.cost_critics[k].fit(b.obs, b.ret_cost.row(k).transpose(), cfg.ppo_epochs, cfg.minibatch, agent.rng);
}

UpdateReport update_agent(Agent& agent, RolloutBatch& b, const constraint::Budgets& budgets) {
  const auto& cfg = agent.cfg;
  budgets.validate();
  auto stream = cfg.kind == Kind::ppo_penalty ? penalized_rewards(b, cfg.penalty_coeff) : b.rewards;
  annotate(b, std::move(stream), agent.reward_critic, agent.cost_critics, cfg.gamma, cfg.gae_lambda);
  const auto& stats = b.stats;
  const auto pressure =
      constraint::pressure_weights(stats.c_hat, stats.u_hat, budgets, cfg.beta, cfg.lambda_u, cfg.eps_safe, cfg.lambda_max);

  UpdateReport head;
  head.c_hat = stats.c_hat;
  head.u_hat = stats.u_hat;
  for (int k = 0; k < 3; ++k) head.slack[k] = budgets.b[k] - stats.c_hat[k];
  head.latch_before = agent.latch;
  head.episode_reward = std::accumulate(b.rewards.begin(), b.rewards.end(), 0.0);
  for (int k = 0; k < 3; ++k) head.cost_critic_mse += agent.cost_critics[k].mse(b.obs, b.ret_cost.row(k).transpose()) / 3.0;

  UpdateReport step;
  Mode mode = Mode::reward;
  Head3 used{};
  switch (cfg.kind) {
    case Kind::ppo:
    case Kind::ppo_penalty:
      step = ppo_clipped_update(agent, b, b.adv_reward);
      if (cfg.kind == Kind::ppo_penalty) used.fill(cfg.penalty_coeff);
      break;
    case Kind::ppo_lagrangian:
      agent.duals = dual_ascent(agent.duals, stats, budgets, cfg.dual_lr);
      used = agent.duals;
      step = ppo_clipped_update(agent, b, shaped_advantage(b, used));
      break;
    case Kind::macf_ppo:
      used = pressure.lambda;
      step = ppo_clipped_update(agent, b, shaped_advantage(b, used));
      break;
    case Kind::crpo:
    case Kind::macf_crpo: {
      const bool macf = cfg.kind == Kind::macf_crpo;
      mode = crpo_select_mode(stats, budgets, pressure, cfg, macf);
      if (mode == Mode::reward) {
        step = ppo_clipped_update(agent, b, b.adv_reward);
      } else {
        Head3 w{};
        if (macf) w = normalized_pressure(pressure.lambda, cfg.eps_safe);
        else w[most_violated_head(stats, budgets)] = 1.0;
        used = w;
        step = ppo_clipped_update(agent, b, cost_reduction_advantage(b, w));
      }
      if (macf) used = pressure.lambda;
      break;
    }
    case Kind::trpo:
    case Kind::cpo:
    case Kind::macf_trpo:
    case Kind::macf_cpo: {
      const bool macf = is_macf(cfg.kind);
      const Vec g_r = agent.policy.weighted_log_prob_grad(b.obs, b.actions, b.adv_reward);
      std::array<Vec, 3> j;
      for (int k = 0; k < 3; ++k)
        j[k] = agent.policy.weighted_log_prob_grad(b.obs, b.actions, b.adv_cost.row(k).transpose());
      if (macf) used = pressure.lambda;
      if (cfg.kind != Kind::trpo) {
        bool violated = false, all_slack = true;
        for (int k = 0; k < 3; ++k) {
          violated = violated || stats.c_hat[k] > budgets.b[k];
          all_slack = all_slack && budgets.b[k] - stats.c_hat[k] > 0.0;
        }
        if (agent.latch && all_slack) agent.latch = false;
        if (violated) agent.latch = true;
      }
      if (agent.latch) {
        step = recovery_step(agent, b, j, budgets, pressure, cfg.kind == Kind::macf_cpo);
        mode = Mode::recovery;
      } else {
        step = trust_region_step(agent, b, g_r, j, budgets, pressure, macf, macf);
      }
      break;
    }
  }

  fit_critics(agent, b);

  UpdateReport r = head;
  r.mode = mode;
  r.lambda_used = used;
  r.kl = step.kl;
  r.accepted = step.accepted;
  r.backtracks = step.backtracks;
  r.lin_ok = step.lin_ok;
  r.failed = step.failed;
  r.step_norm = step.step_norm;
  r.latch_after = agent.latch;
  return r;
}

TrainResult train_agent(const OptimizerConfig& cfg, const market::PriceSeries& prices, const market::EnvConstants& k,
                        const CostSource& costs, const constraint::Budgets& budgets, std::uint64_t seed,
                        int train_begin, int train_end, const TrainHooks& hooks) {
  cfg.validate();
  budgets.validate();
  const int lo = train_begin + kHistoryDays;
  const int hi = train_end - cfg.rollout_len;
  if (hi < lo) throw StructuralError("training split is too short for the rollout length");
  TrainResult out;
  out.agent = Agent::create(cfg, market::observation_dim(prices.assets()), prices.assets() + 1, seed);
  market::MarketEnv env(prices, k, train_begin, train_end);
  out.log.reserve(cfg.total_updates);
  for (int u = 0; u < cfg.total_updates; ++u) {
    std::mt19937_64 rng(util::derive_seed(seed, 1000 + static_cast<std::uint64_t>(u)));
    env.reset(std::uniform_int_distribution<int>(lo, hi)(rng));
    auto batch = collect_rollout(out.agent.policy, env, costs, cfg.rollout_len, rng);
    auto report = update_agent(out.agent, batch, budgets);
    report.update = u;
    if (hooks.on_update) hooks.on_update(batch, report);
    out.log.push_back(report);
  }
  return out;
}

Evaluation evaluate_policy(const diff::GaussianPolicy& policy, const market::PriceSeries& prices,
                           const market::EnvConstants& k, const CostSource& costs, int begin, int end) {
  market::MarketEnv env(prices, k, begin, end);
  env.reset(begin);
  Evaluation ev;
  ev.nav.push_back(env.state().nav);
  std::vector<Vec> weights;
  while (!env.done()) {
    const Vec obs = env.observation();
    const auto conv = env.convert(policy.mean(obs));
    ev.costs.push_back(costs.costs(env.state(), conv, prices.sector_of));
    const auto res = env.apply(conv);
    ev.rewards.push_back(res.reward);
    ev.turnover.push_back(res.turnover);
    ev.invested.push_back(conv.invested);
    ev.nav.push_back(env.state().nav);
    weights.push_back(env.state().w);
  }
  if (weights.empty()) throw StructuralError("evaluation range is empty");
  ev.weights.resize(prices.assets(), static_cast<Eigen::Index>(weights.size()));
  for (std::size_t t = 0; t < weights.size(); ++t) ev.weights.col(t) = weights[t];
  return ev;
}

}  // namespace macfx::optim
