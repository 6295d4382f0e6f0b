#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "macfx/errors.hpp"
#include "macfx/field/train.hpp"
#include "macfx/optim/agent.hpp"
#include "test_util.hpp"

using namespace macfx;
using namespace macfx::optim;

namespace {

struct Fixture {
  evidence::World world;
  evidence::EvidenceTable table;
  field::FieldModel field;
  constraint::ConstraintParams cparams;
  constraint::Budgets budgets;
  Head3 warm_mean{};

  Fixture() {
    evidence::WorldConfig cfg;
    cfg.days = 400;
    cfg.seed = 5;
    world = evidence::generate_world(cfg);
    table = evidence::EvidenceTable(world);
    const auto data = field::build_dataset(world, table, 0, 60, 2);
    field = field::FieldModel::create(field::FieldKind::three_head, {16, 16}, 3, field::Normalizer::fit(data.features), {});
    field.freeze();
    const auto src = CostSource::macf(field, table, cparams);
    market::MarketEnv env(world.prices(), {}, 0, 300);
    env.reset(20);
    const auto policy = Agent::create(OptimizerConfig::for_kind(Kind::ppo), market::observation_dim(30), 31, 0).policy;
    std::mt19937_64 rng(0);
    const auto warm = collect_rollout(policy, env, src, 250, rng);
    budgets = constraint::calibrate_budgets(warm.costs, cparams.q, "test-warm");
    warm_mean = constraint::rollout_cost_stats(warm.costs).c_hat;
  }
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

RolloutBatch synthetic_batch(int t, std::mt19937_64& rng) {
  RolloutBatch b;
  b.obs = testutil::random_mat(3, t, rng);
  b.actions = testutil::random_mat(2, t, rng);
  b.log_probs_old = Vec::Zero(t);
  b.rewards.resize(t);
  b.costs.resize(t);
  b.adv_reward = testutil::random_vec(t, rng);
  b.adv_cost = testutil::random_mat(3, t, rng);
  return b;
}

constraint::Budgets budgets_of(Head3 b) {
  constraint::Budgets out;
  out.b = b;
  out.q = {0.9, 0.9, 0.9};
  return out;
}

OptimizerConfig short_config(Kind kind, int updates) {
  auto cfg = OptimizerConfig::for_kind(kind);
  cfg.total_updates = updates;
  cfg.rollout_len = 64;
  return cfg;
}

}  // namespace

TEST_CASE("GAE recursion cases") {
  const std::vector<double> r{1.0, 2.0, 3.0};
  Vec v(3);
  v << 0.5, 0.4, 0.3;
  const Vec myopic = gae_advantages(r, v, 0.0, 0.7);
  for (int i = 0; i < 3; ++i) CHECK(myopic[i] == doctest::Approx(r[i] - v[i]).epsilon(1e-15));

  const Vec a = gae_advantages(r, v, 0.9, 0.8);
  const double d2 = 3.0 - 0.3, d1 = 2.0 + 0.9 * 0.3 - 0.4, d0 = 1.0 + 0.9 * 0.4 - 0.5;
  CHECK(a[2] == doctest::Approx(d2).epsilon(1e-14));
  CHECK(a[1] == doctest::Approx(d1 + 0.72 * d2).epsilon(1e-14));
  CHECK(a[0] == doctest::Approx(d0 + 0.72 * d1 + 0.72 * 0.72 * d2).epsilon(1e-14));

  const double gamma = 0.99;
  const std::vector<double> flat(50, 0.7);
  Vec exact(50);
  for (int t = 0; t < 50; ++t) exact[t] = 0.7 * (1.0 - std::pow(gamma, 50 - t)) / (1.0 - gamma);
  CHECK(gae_advantages(flat, exact, gamma, 0.95).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(gae_advantages(r, Vec::Zero(2), 0.9, 0.9), StructuralError);
}

TEST_CASE("reward advantages are standardized") {
  std::mt19937_64 rng(1);
  const Vec a = testutil::random_vec(300, rng, 4.0).array() + 2.0;
  const Vec n = normalize_advantages(a);
  CHECK(std::abs(n.mean()) < 1e-12);
  CHECK(std::sqrt(n.array().square().mean()) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(normalize_advantages(Vec::Constant(5, 3.0)).isZero(0.0));
}

TEST_CASE("MACF-PPO effective advantage") {
  std::mt19937_64 rng(2);
  auto b = synthetic_batch(1, rng);
  b.adv_reward[0] = 0.5;
  b.adv_cost.col(0) << 0.3, 0.9, -0.4;
  CHECK(shaped_advantage(b, {1, 0, 0})[0] == doctest::Approx(0.2).epsilon(1e-15));
  auto wide = synthetic_batch(40, rng);
  CHECK(shaped_advantage(wide, {0, 0, 0}) == wide.adv_reward);
  const Head3 lam{0.7, 2.0, 5.0};
  const Vec once = shaped_advantage(wide, lam) - wide.adv_reward;
  const Vec twice = shaped_advantage(wide, {1.4, 4.0, 10.0}) - wide.adv_reward;
  CHECK((twice - 2.0 * once).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("Lagrangian dual ascent") {
  constraint::CostStats s;
  s.c_hat = {0.3, 0.1, 0.1};
  const auto b = budgets_of({0.2, 0.2, 0.2});
  const auto d = dual_ascent({0.5, 0.0, 0.0}, s, b, 1.0);
  CHECK(d[0] == doctest::Approx(0.6));
  CHECK(d[1] == 0.0);
  s.c_hat = {0.1, 0.1, 0.1};
  CHECK(dual_ascent({0, 0, 0}, s, b, 0.05) == Head3{0, 0, 0});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 0.4);
  Head3 duals{};
  for (int i = 0; i < 1000; ++i) {
    s.c_hat = {u(rng), u(rng), u(rng)};
    duals = dual_ascent(duals, s, b, 0.5);
    for (double x : duals) CHECK(x >= 0.0);
  }
}

TEST_CASE("fixed penalty reward shaping") {
  std::mt19937_64 rng(4);
  auto b = synthetic_batch(20, rng);
  for (int t = 0; t < 20; ++t) {
    b.rewards[t] = 0.01 * t - 0.05;
    b.costs[t].c = {0.1, 0.2, 0.05};
  }
  const auto same = penalized_rewards(b, 0.0);
  CHECK(same == b.rewards);
  const auto shaped = penalized_rewards(b, 2.0);
  for (int t = 0; t < 20; ++t) {
    CHECK(shaped[t] == doctest::Approx(b.rewards[t] - 2.0 * 0.35).epsilon(1e-14));
    CHECK(shaped[t] <= b.rewards[t]);
  }
}

TEST_CASE("CRPO mode selection") {
  auto cfg = OptimizerConfig::for_kind(Kind::macf_crpo);
  constraint::CostStats s;
  s.c_hat = {0.1, 0.1, 0.1};
  const auto b = budgets_of({0.2, 0.2, 0.2});
  constraint::PressureWeights p;
  p.lambda = {10, 3, 1};
  CHECK(crpo_select_mode(s, b, p, cfg, true) == Mode::reward);
  p.lambda = {60, 3, 1};
  CHECK(crpo_select_mode(s, b, p, cfg, true) == Mode::constraint);
  CHECK(crpo_select_mode(s, b, p, cfg, false) == Mode::reward);
  s.c_hat = {0.1, 0.25, 0.1};
  p.lambda = {1, 1, 1};
  CHECK(crpo_select_mode(s, b, p, cfg, true) == Mode::constraint);
  CHECK(crpo_select_mode(s, b, p, cfg, false) == Mode::constraint);
  CHECK(most_violated_head(s, b) == 1);
}

TEST_CASE("normalized pressure for the CRPO cost direction") {
  const auto w = normalized_pressure({2, 1, 1}, 1e-8);
  CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(w[1] == doctest::Approx(0.25).epsilon(1e-8));
  const auto eq = normalized_pressure({3, 3, 3}, 1e-8);
  CHECK(eq[0] == eq[1]);
  CHECK(eq[1] == eq[2]);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const Head3 l{u(rng), u(rng), u(rng)};
    const auto n = normalized_pressure(l, 1e-8);
    const double sum = n[0] + n[1] + n[2];
    const double total = l[0] + l[1] + l[2];
    CHECK(sum <= 1.0);
    CHECK(1.0 - sum <= 1e-8 / (total + 1e-8) + 1e-15);
  }
}

TEST_CASE("recovery weights") {
  constraint::CostStats s;
  s.c_hat = {0.4, 0.4, 0.1};
  const auto b = budgets_of({0.2, 0.2, 0.2});
  const Head3 lam{2, 1, 7};
  const auto trpo = recovery_weights(s, b, lam, 1e-8, false);
  const auto cpo = recovery_weights(s, b, lam, 1e-8, true);
  CHECK(trpo[0] == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(trpo[1] == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(trpo[2] == 0.0);
  CHECK(cpo[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-7));
  CHECK(cpo[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
  CHECK(cpo[2] == 0.0);
  s.c_hat = {0.1, 0.3, 0.1};
  const auto one = recovery_weights(s, b, lam, 1e-8, false);
  CHECK(one[0] == 0.0);
  CHECK(one[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("safe metric matches the explicitly assembled matrix") {
  const auto layout = diff::make_layout(1, std::vector<int>{}, 1, diff::Activation::tanh, diff::Activation::identity);
  Vec ls(1);
  ls << -0.3;
  diff::ParamVector net(layout, Vec::Zero(2));
  net.values << 0.7, -0.2;
  const diff::GaussianPolicy pol(net, ls);
  REQUIRE(pol.num_params() == 3);
  std::mt19937_64 rng(6);
  const Mat states = testutil::random_mat(1, 8, rng);
  const diff::FisherOperator fisher(pol, states);
  Mat f(3, 3);
  for (int i = 0; i < 3; ++i) f.col(i) = fisher.apply(Vec::Unit(3, i), 0.0);
  const std::array<Vec, 3> j{testutil::random_vec(3, rng), testutil::random_vec(3, rng), testutil::random_vec(3, rng)};
  const Head3 lam{0.5, 2.0, 1.5};
  const double xi = 0.1;
  Mat g = f + xi * Mat::Identity(3, 3);
  for (int k = 0; k < 3; ++k) g += lam[k] * j[k] * j[k].transpose();
  for (int trial = 0; trial < 20; ++trial) {
    const Vec v = testutil::random_vec(3, rng);
    CHECK((safe_metric_matvec(fisher, j, lam, xi, v) - g * v).norm() < 1e-12);
    CHECK((safe_metric_matvec(fisher, j, {0, 0, 0}, 0.0, v) - fisher.apply(v, 0.0)).norm() == 0.0);
  }
  // v orthogonal to every j_k
  const std::array<Vec, 3> same{j[0], j[0], j[0]};
  Vec ortho = Vec::Unit(3, 1) - j[0] * (j[0][1] / j[0].squaredNorm());
  CHECK((safe_metric_matvec(fisher, same, lam, xi, ortho) - fisher.apply(ortho, xi)).norm() < 1e-12);
}

TEST_CASE("trust-region solve matches the closed-form natural-gradient step") {
  Mat a(2, 2);
  a << 2.0, 0.3, 0.3, 0.5;
  Vec g(2);
  g << 0.4, -0.7;
  TrustRegionProblem p;
  p.metric = [&](const Vec& v) { return Vec(a * v); };
  p.rhs = g;
  p.radius = 0.03;
  p.kl = [&](const Vec& s) { return 0.5 * s.dot(a * s); };
  p.improvement = [&](const Vec& s) { return g.dot(s); };
  const auto res = solve_trust_region(p);
  const Vec nat = a.ldlt().solve(g);
  const Vec expect = std::sqrt(2.0 * 0.03 / g.dot(nat)) * nat;
  CHECK(res.accepted);
  CHECK(res.backtracks == 0);
  CHECK((res.step - expect).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(res.kl <= 0.045);

  p.rhs = Vec::Zero(2);
  const auto zero = solve_trust_region(p);
  CHECK(zero.step.isZero(0.0));

  p.rhs = g;
  p.extra_check = [](const Vec&) { return false; };
  const auto blocked = solve_trust_region(p);
  CHECK_FALSE(blocked.accepted);
  CHECK(blocked.backtracks == 10);
  CHECK(blocked.step.isZero(0.0));

  p.extra_check = nullptr;
  p.kl = [&](const Vec& s) { return 4.0 * s.dot(a * s); };  // forces backtracking
  const auto shrunk = solve_trust_region(p);
  REQUIRE(shrunk.accepted);
  CHECK(shrunk.backtracks > 0);
  CHECK(shrunk.kl <= 1.5 * 0.03);
  CHECK((shrunk.step - std::pow(0.8, shrunk.backtracks) * expect).norm() < 1e-5);
}

TEST_CASE("clipped surrogate gradient and the clipping probe") {
  const auto layout = diff::make_layout(4, std::vector<int>{8}, 2, diff::Activation::tanh, diff::Activation::identity);
  const auto pol = diff::GaussianPolicy::create(layout, 3, -0.5, 1.0);
  std::mt19937_64 rng(7);
  const Mat obs = testutil::random_mat(4, 16, rng);
  const Mat act = testutil::random_mat(2, 16, rng);
  const Vec lp = pol.log_probs(obs, act);
  const Vec adv = testutil::random_vec(16, rng);
  // generic point: ratios near one, gradient matches finite differences
  const Vec lp_old = lp + 0.05 * testutil::random_vec(16, rng);
  const Vec g = clipped_objective_grad(pol, obs, act, lp_old, adv, 0.2);
  const auto f = [&](const Vec& th) {
    auto c = pol;
    c.set_flat(th);
    return clipped_objective(c, obs, act, lp_old, adv, 0.2);
  };
  for (int d = 0; d < 5; ++d) {
    const Vec dir = testutil::random_vec(g.size(), rng);
    CHECK(testutil::rel_close(g.dot(dir), testutil::central_difference(f, pol.flat(), dir), 1e-4));
  }
  // q = 1.5 everywhere
  const Vec lp_far = lp.array() - std::log(1.5);
  const Vec pos = Vec::Ones(16);
  CHECK(clipped_objective_grad(pol, obs, act, lp_far, pos, 0.2).isZero(0.0));
  CHECK(clipped_objective_grad(pol, obs, act, lp_far, -pos, 0.2).norm() > 0.0);
}

TEST_CASE("zero advantage leaves the policy unchanged") {
  const auto& f = fx();
  auto cfg = short_config(Kind::ppo, 1);
  auto agent = Agent::create(cfg, market::observation_dim(30), 31, 4);
  market::MarketEnv env(f.world.prices(), {}, 0, 300);
  env.reset(40);
  std::mt19937_64 rng(1);
  auto batch = collect_rollout(agent.policy, env, CostSource::zero(), 64, rng);
  const Vec before = agent.policy.flat();
  const auto r = ppo_clipped_update(agent, batch, Vec::Zero(batch.size()));
  CHECK(r.accepted);
  CHECK(agent.policy.flat() == before);
  CHECK(r.kl == 0.0);
}

TEST_CASE("rollouts are financial-only, deterministic and keep the invested floor") {
  const auto& f = fx();
  const auto src = CostSource::macf(f.field, f.table, f.cparams);
  const auto agent = Agent::create(short_config(Kind::ppo, 1), market::observation_dim(30), 31, 9);
  const auto run = [&](const evidence::World& w, const CostSource& s) {
    market::MarketEnv env(w.prices(), {}, 0, 300);
    env.reset(30);
    std::mt19937_64 rng(77);
    return collect_rollout(agent.policy, env, s, 100, rng);
  };
  const auto a = run(f.world, src);
  const auto b = run(f.world, src);
  CHECK(a.obs.rows() == market::observation_dim(30));
  CHECK(a.obs.rows() == 93);
  CHECK(a.obs == b.obs);
  CHECK(a.actions == b.actions);
  CHECK(a.rewards == b.rewards);
  CHECK(a.costs[10].c == b.costs[10].c);

  // extra evidence changes costs but not a single observation, action or reward
  std::vector<evidence::EventRecord> extra;
  for (int i = 0; i < 30; ++i) {
    evidence::EventRecord e;
    e.asset = i;
    e.date = 35;
    e.severity = 0.95;
    e.pillar = evidence::Pillar::E;
    e.anchored = true;
    e.resolved = false;
    e.persistence_days = 60;
    extra.push_back(e);
  }
  const auto shocked = f.world.with_events_appended(extra);
  const evidence::EvidenceTable shocked_table(shocked);
  const auto shocked_src = CostSource::macf(f.field, shocked_table, f.cparams);
  const auto c = run(shocked, shocked_src);
  CHECK(c.obs == a.obs);
  CHECK(c.actions == a.actions);
  CHECK(c.rewards == a.rewards);
  bool any_cost_changed = false;
  for (int t = 0; t < c.size(); ++t) any_cost_changed = any_cost_changed || c.costs[t].c != a.costs[t].c;
  CHECK(any_cost_changed);

  auto cash_lover = agent.policy;
  Vec th = cash_lover.flat();
  th[cash_lover.net().size() - 1] = -50.0;  // bias of the invested-fraction logit
  cash_lover.set_flat(th);
  market::MarketEnv env(f.world.prices(), {}, 0, 300);
  env.reset(30);
  std::mt19937_64 rng(3);
  const auto lazy = collect_rollout(cash_lover, env, src, 100, rng);
  for (double inv : lazy.invested) CHECK(inv >= 0.85 - 1e-12);

  market::MarketEnv short_env(f.world.prices(), {}, 0, 300);
  short_env.reset(290);
  std::mt19937_64 rng2(3);
  const auto truncated = collect_rollout(agent.policy, short_env, src, 64, rng2);
  CHECK(truncated.truncated);
  CHECK(truncated.size() == 10);
}

TEST_CASE("frozen-field contract") {
  const auto& f = fx();
  auto thawed = field::FieldModel::create(field::FieldKind::three_head, {8}, 1, f.field.normalizer(), {});
  CHECK_THROWS_AS(CostSource::macf(thawed, f.table, f.cparams), ContractError);
  const auto before = f.field.checksum();
  const auto src = CostSource::macf(f.field, f.table, f.cparams);
  train_agent(short_config(Kind::macf_cpo, 3), f.world.prices(), {}, src, f.budgets, 1, 0, 300);
  train_agent(short_config(Kind::macf_ppo, 3), f.world.prices(), {}, src, f.budgets, 1, 0, 300);
  CHECK(f.field.checksum() == before);
}

TEST_CASE("reward firewall: only the penalty baseline alters the reward stream") {
  const auto& f = fx();
  const auto src = CostSource::macf(f.field, f.table, f.cparams);
  for (auto kind : kAllKinds) {
    bool all_equal = true, any_diff = false;
    TrainHooks hooks;
    hooks.on_update = [&](const RolloutBatch& b, const UpdateReport&) {
      for (int t = 0; t < b.size(); ++t) {
        const bool same = std::memcmp(&b.rewards[t], &b.reward_stream[t], sizeof(double)) == 0;
        all_equal = all_equal && same;
        any_diff = any_diff || !same;
      }
    };
    train_agent(short_config(kind, 2), f.world.prices(), {}, src, f.budgets, 2, 0, 300, hooks);
    INFO(to_string(kind));
    if (kind == Kind::ppo_penalty) CHECK(any_diff);
    else CHECK(all_equal);
  }
}

TEST_CASE("MACF-PPO with an all-zero cost field is PPO") {
  const auto& f = fx();
  const auto zero = CostSource::zero();
  const auto b = budgets_of({1e-6, 1e-6, 1e-6});
  const auto ppo = train_agent(short_config(Kind::ppo, 4), f.world.prices(), {}, zero, b, 3, 0, 300);
  const auto macf = train_agent(short_config(Kind::macf_ppo, 4), f.world.prices(), {}, zero, b, 3, 0, 300);
  CHECK(ppo.agent.policy.flat() == macf.agent.policy.flat());
  for (const auto& r : macf.log)
    for (double l : r.lambda_used) CHECK(std::isfinite(l));
}

TEST_CASE("trust-region kinds respect KL radii, head checks and the latch") {
  const auto& f = fx();
  const auto src = CostSource::macf(f.field, f.table, f.cparams);
  // tight budgets so that both normal and recovery modes occur
  auto tight = f.budgets;
  for (int k = 0; k < 3; ++k) tight.b[k] = f.warm_mean[k];
  int normal = 0, recovery = 0;
  for (auto kind : {Kind::macf_trpo, Kind::macf_cpo, Kind::cpo, Kind::trpo}) {
    const auto res = train_agent(short_config(kind, 12), f.world.prices(), {}, src, tight, 4, 0, 300);
    for (const auto& r : res.log) {
      CHECK_FALSE(r.failed);
      if (!r.accepted) continue;
      if (r.mode == Mode::recovery) {
        ++recovery;
        CHECK(r.kl <= 0.0075);
      } else {
        ++normal;
        CHECK(r.kl <= 0.045);
        if (is_macf(kind)) CHECK(r.lin_ok);
      }
      if (r.latch_before && !r.latch_after)
        for (double s : r.slack) CHECK(s > 0.0);
      if (kind == Kind::trpo) CHECK(r.mode == Mode::reward);
    }
  }
  CHECK(normal > 0);
  CHECK(recovery > 0);
}

TEST_CASE("training is deterministic per seed and critics learn") {
  const auto& f = fx();
  const auto src = CostSource::macf(f.field, f.table, f.cparams);
  const auto a = train_agent(short_config(Kind::macf_crpo, 3), f.world.prices(), {}, src, f.budgets, 8, 0, 300);
  const auto b = train_agent(short_config(Kind::macf_crpo, 3), f.world.prices(), {}, src, f.budgets, 8, 0, 300);
  CHECK(a.agent.policy.flat() == b.agent.policy.flat());
  CHECK(to_json(a.log.back()) == to_json(b.log.back()));

  const auto long_run = train_agent(short_config(Kind::ppo_lagrangian, 30), f.world.prices(), {}, src, f.budgets, 8, 0, 300);
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 5; ++i) {
    early += long_run.log[i].cost_critic_mse;
    late += long_run.log[25 + i].cost_critic_mse;
  }
  CHECK(late < early);
}

TEST_CASE("evaluation rollout is deterministic and complete") {
  const auto& f = fx();
  const auto src = CostSource::macf(f.field, f.table, f.cparams);
  const auto agent = Agent::create(short_config(Kind::ppo, 1), market::observation_dim(30), 31, 2);
  const auto e1 = evaluate_policy(agent.policy, f.world.prices(), {}, src, 300, 400);
  const auto e2 = evaluate_policy(agent.policy, f.world.prices(), {}, src, 300, 400);
  CHECK(e1.nav.size() == 101);
  CHECK(e1.nav == e2.nav);
  CHECK(e1.weights.cols() == 100);
  CHECK(e1.costs.size() == 100);
}

TEST_CASE("static score sources and permutations") {
  const auto& f = fx();
  const Vec s = static_hold_scores(f.table, 0, 200);
  CHECK(s.size() == 30);
  CHECK(s.minCoeff() >= 0.0);
  std::vector<int> id(30);
  std::iota(id.begin(), id.end(), 0);
  CHECK(permute_scores(s, id) == s);
  std::vector<int> bad(30, 0);
  CHECK_THROWS_AS(permute_scores(s, bad), StructuralError);
  const auto src = CostSource::static_scores(s, f.cparams);
  market::PortfolioState pre = market::PortfolioState::initial(30, 100);
  market::Conversion conv;
  conv.target = pre.w;
  conv.delta = Vec::Zero(30);
  const auto cb = src.costs(pre, conv, f.world.prices().sector_of);
  CHECK(cb.c[0] == 0.0);
  CHECK(cb.c[1] == doctest::Approx(pre.w.dot(s)).epsilon(1e-14));
  CHECK(cb.c[2] == cb.c[1]);
}

TEST_CASE("optimizer profiles and overrides") {
  const auto a = OptimizerConfig::for_kind(Kind::macf_ppo);
  CHECK(a.beta == Head3{1, 1, 1});
  CHECK(a.lambda_u == 1.0);
  CHECK(a.lambda_max == 100.0);
  CHECK(a.lambda_thr == 50.0);
  const auto b = OptimizerConfig::for_kind(Kind::macf_cpo);
  CHECK(b.beta == Head3{0.25, 1, 1});
  CHECK(b.lambda_u == 0.5);
  CHECK(b.lambda_max == 30.0);
  CHECK(b.delta == 0.03);
  CHECK(b.delta_rec == 0.005);
  CHECK(a.eps_clip == 0.2);
  CHECK(a.gamma == 0.99);
  CHECK(a.gae_lambda == 0.95);
  CHECK(a.ppo_epochs == 4);
  CHECK(a.eps_safe == 1e-8);
  for (auto k : kAllKinds) CHECK(kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(kind_from_string("sac"), StructuralError);
  auto c = a;
  apply_overrides(c, {{"delta", 0.01}, {"xi", 0.2}});
  CHECK(c.delta == 0.01);
  CHECK(c.damping == 0.2);
  CHECK_THROWS_AS(apply_overrides(c, {{"delat", 0.01}}), StructuralError);
  CHECK_THROWS_AS(apply_overrides(c, {{"eps_clip", -1.0}}), StructuralError);
}
