#include "macfx/optim/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "macfx/errors.hpp"
#include "macfx/util/csv.hpp"
#include "macfx/util/stats.hpp"

namespace macfx::optim {

CostSource CostSource::macf(const field::FieldModel& field, const evidence::EvidenceTable& table,
                            constraint::ConstraintParams params) {
  if (!field.frozen()) throw ContractError("policy optimization requires a frozen field");
  CostSource s;
  s.type_ = Type::macf;
  s.field_ = &field;
  s.table_ = &table;
  s.params_ = params;
  return s;
}

CostSource CostSource::static_scores(Vec scores, constraint::ConstraintParams params) {
  if (scores.size() == 0 || !scores.allFinite() || scores.minCoeff() < 0.0 || scores.maxCoeff() > 1.0)
    throw StructuralError("static scores must be finite and lie in [0, 1]");
  CostSource s;
  s.type_ = Type::static_score;
  s.scores_ = std::move(scores);
  s.params_ = params;
  return s;
}

CostSource CostSource::zero() { return CostSource{}; }

CostBundle CostSource::costs(const market::PortfolioState& pre, const market::Conversion& conv,
                             const std::vector<int>& sector_of) const {
  const auto n = conv.target.size();
  switch (type_) {
    case Type::zero: return CostBundle{};
    case Type::static_score: {
      if (scores_.size() != n) throw StructuralError("static score count does not match the universe");
      std::vector<field::FieldOutput> outs(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        outs[i].rho_delta.fill(scores_[i]);
        outs[i].rho_w.fill(scores_[i]);
      }
      return constraint::aggregate_costs(outs, conv.delta, conv.target, params_.eta, params_.tau);
    }
    case Type::macf: {
      const int date = pre.t - 1;
      if (date < 0) throw StructuralError("field costs need at least one completed day");
      std::vector<evidence::EvidenceContext> ctxs;
      ctxs.reserve(n);
      for (Eigen::Index i = 0; i < n; ++i)
        ctxs.push_back(evidence::with_position(table_->at(date, static_cast<int>(i)), static_cast<int>(i), pre,
                                               sector_of, conv.delta[i]));
      const auto outs = field_->forward(ctxs);
      return constraint::aggregate_costs(outs, conv.delta, conv.target, params_.eta, params_.tau);
    }
  }
  return CostBundle{};
}

std::uint64_t CostSource::checksum() const {
  std::uint64_t h = util::fnv1a(&type_, sizeof type_);
  if (type_ == Type::macf) {
    const auto f = field_->checksum();
    h = util::fnv1a(&f, sizeof f, h);
  }
  if (scores_.size() > 0) h = util::fnv1a(scores_.data(), sizeof(double) * scores_.size(), h);
  h = util::fnv1a(&params_.tau, sizeof(double), h);
  h = util::fnv1a(params_.eta.data(), sizeof(double) * 3, h);
  return h;
}

Vec static_hold_scores(const evidence::EvidenceTable& table, int date_begin, int date_end) {
  if (date_begin < 0 || date_end > table.days() || date_begin >= date_end)
    throw StructuralError("invalid date range for static scores");
  Vec s = Vec::Zero(table.assets());
  for (int t = date_begin; t < date_end; ++t)
    for (int i = 0; i < table.assets(); ++i) s[i] += evidence::weak_labels(table.at(t, i)).y[1];
  return s / static_cast<double>(date_end - date_begin);
}

Vec permute_scores(const Vec& scores, std::span<const int> perm) {
  if (static_cast<Eigen::Index>(perm.size()) != scores.size()) throw StructuralError("permutation length mismatch");
  std::vector<int> seen(perm.size(), 0);
  Vec out(scores.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] < 0 || perm[i] >= static_cast<int>(perm.size()) || seen[perm[i]]++)
      throw StructuralError("not a permutation");
    out[static_cast<Eigen::Index>(i)] = scores[perm[i]];
  }
  return out;
}

Critic Critic::create(int obs_dim, const std::vector<int>& hidden, std::uint64_t seed, double lr) {
  const auto layout = diff::make_layout(obs_dim, hidden, 1, diff::Activation::tanh, diff::Activation::identity);
  Critic c;
  c.params = diff::init_params(layout, seed, 0.0);
  c.adam = diff::Adam(c.params.size(), {.lr = lr});
  return c;
}

Vec Critic::predict(const Mat& obs) const { return diff::forward_batch(params, obs).row(0).transpose(); }

double Critic::mse(const Mat& obs, const Vec& targets) const {
  return (predict(obs) - targets).squaredNorm() / static_cast<double>(targets.size());
}

double Critic::fit(const Mat& obs, const Vec& targets, int epochs, int minibatch, std::mt19937_64& rng) {
  const Eigen::Index n = obs.cols();
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  double last = 0.0;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double total = 0.0;
    for (Eigen::Index s = 0; s < n; s += minibatch) {
      const Eigen::Index len = std::min<Eigen::Index>(minibatch, n - s);
      const std::vector<Eigen::Index> cols(idx.begin() + s, idx.begin() + s + len);
      const Mat xb = obs(Eigen::all, cols);
      const Vec yb = targets(cols);
      diff::ForwardTape tape;
      const Mat pred = diff::forward_batch(params, xb, &tape);
      const Mat err = pred - yb.transpose();
      total += err.squaredNorm();
      const Mat g = 2.0 * err / static_cast<double>(len);
      const Vec grad = diff::backward(params, tape, g);
      if (!grad.allFinite()) throw NumericError("critic gradient is not finite");
      adam.step(params.values, grad);
    }
    last = total / static_cast<double>(n);
  }
  return last;
}

void RolloutBatch::validate() const {
  const auto t = static_cast<Eigen::Index>(rewards.size());
  if (t < 1) throw StructuralError("rollout batch is empty");
  if (obs.cols() != t || actions.cols() != t || log_probs_old.size() != t || static_cast<Eigen::Index>(costs.size()) != t)
    throw StructuralError("rollout batch sequences differ in length");
  if (!log_probs_old.allFinite()) throw NumericError("rollout log-probabilities are not finite");
}

RolloutBatch collect_rollout(const diff::GaussianPolicy& policy, market::MarketEnv& env, const CostSource& costs,
                             int steps, std::mt19937_64& rng) {
  if (steps < 1) throw ContractError("rollout length must be positive");
  RolloutBatch b;
  b.start_day = env.state().t;
  const auto& sector_of = env.prices().sector_of;
  b.obs.resize(policy.obs_dim(), steps);
  b.actions.resize(policy.act_dim(), steps);
  int t = 0;
  for (; t < steps && !env.done(); ++t) {
    const Vec obs = env.observation();
    const Vec act = policy.sample(obs, rng);
    const auto conv = env.convert(act);
    const auto cb = costs.costs(env.state(), conv, sector_of);
    const auto res = env.apply(conv);
    b.obs.col(t) = obs;
    b.actions.col(t) = act;
    b.rewards.push_back(res.reward);
    b.costs.push_back(cb);
    b.invested.push_back(conv.invested);
    b.turnover.push_back(res.turnover);
  }
  b.truncated = t < steps;
  b.obs.conservativeResize(Eigen::NoChange, t);
  b.actions.conservativeResize(Eigen::NoChange, t);
  if (t == 0) throw StructuralError("environment exhausted before the first rollout step");
  b.log_probs_old = policy.log_probs(b.obs, b.actions);
  b.validate();
  return b;
}

Vec gae_advantages(std::span<const double> rewards, const Vec& values, double gamma, double gae_lambda) {
  const auto t = static_cast<Eigen::Index>(rewards.size());
  if (values.size() != t) throw StructuralError("rewards and values differ in length");
  Vec adv(t);
  double running = 0.0;
  for (Eigen::Index i = t - 1; i >= 0; --i) {
    const double next_v = i + 1 < t ? values[i + 1] : 0.0;
    const double delta = rewards[i] + gamma * next_v - values[i];
    running = delta + gamma * gae_lambda * running;
    adv[i] = running;
  }
  return adv;
}

Vec normalize_advantages(const Vec& adv) {
  if (adv.size() == 0) return adv;
  const double m = adv.mean();
  const double sd = std::sqrt((adv.array() - m).square().mean());
  if (sd < 1e-12) return Vec::Zero(adv.size());
  return (adv.array() - m) / (sd + 1e-8);
}

std::vector<double> penalized_rewards(const RolloutBatch& batch, double coeff) {
  std::vector<double> r = batch.rewards;
  if (coeff == 0.0) return r;
  for (std::size_t t = 0; t < r.size(); ++t) {
    const auto& c = batch.costs[t].c;
    r[t] -= coeff * (c[0] + c[1] + c[2]);
  }
  return r;
}

void annotate(RolloutBatch& b, std::vector<double> reward_stream, const Critic& reward_critic,
              const std::array<Critic, 3>& cost_critics, double gamma, double gae_lambda) {
  b.validate();
  if (reward_stream.size() != b.rewards.size()) throw StructuralError("reward stream length mismatch");
  const int t = b.size();
  b.reward_stream = std::move(reward_stream);
  b.values = reward_critic.predict(b.obs);
  const Vec raw = gae_advantages(b.reward_stream, b.values, gamma, gae_lambda);
  b.ret_reward = raw + b.values;
  b.adv_reward = normalize_advantages(raw);
  b.cost_values.resize(3, t);
  b.adv_cost.resize(3, t);
  b.ret_cost.resize(3, t);
  std::vector<double> stream(t);
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < t; ++i) stream[i] = b.costs[i].c[k];
    const Vec v = cost_critics[k].predict(b.obs);
    const Vec a = gae_advantages(stream, v, gamma, gae_lambda);
    b.cost_values.row(k) = v.transpose();
    b.adv_cost.row(k) = a.transpose();
    b.ret_cost.row(k) = (a + v).transpose();
  }
  b.stats = constraint::rollout_cost_stats(b.costs);
}

}  // namespace macfx::optim
