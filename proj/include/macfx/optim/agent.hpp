#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"
#include "macfx/optim/config.hpp"
#include "macfx/optim/rollout.hpp"

namespace macfx::optim {

/// Earliest rollout start after the beginning of a split.
inline constexpr int kHistoryDays = 20;

struct UpdateReport {
  int update = 0;
  Mode mode = Mode::reward;
  double kl = 0.0;
  Head3 slack{};        // b_k - c_hat_k
  Head3 lambda_used{};  // pressure, duals or weights that shaped the step
  Head3 c_hat{};
  Head3 u_hat{};
  bool accepted = false;
  int backtracks = 0;
  bool lin_ok = true;  // linearized head checks at acceptance (trust-region kinds)
  bool latch_before = false;
  bool latch_after = false;
  bool failed = false;  // non-finite loss or solver breakdown
  double episode_reward = 0.0;
  double cost_critic_mse = 0.0;  // on the fresh batch, before fitting
  double step_norm = 0.0;
};

nlohmann::json to_json(const UpdateReport& r);

/// Policy, critics and the per-kind optimizer state.
struct Agent {
  OptimizerConfig cfg;
  diff::GaussianPolicy policy;
  diff::Adam policy_adam;
  Critic reward_critic;
  std::array<Critic, 3> cost_critics;
  Head3 duals{};
  bool latch = false;
  std::mt19937_64 rng;

  static Agent create(const OptimizerConfig& cfg, int obs_dim, int act_dim, std::uint64_t seed);
};

// ---- advantage shaping ----

/// A^r - sum_k lambda_k A^{c,k}.
Vec shaped_advantage(const RolloutBatch& batch, const Head3& lambda);
/// -sum_k weights_k A^{c,k}.
Vec cost_reduction_advantage(const RolloutBatch& batch, const Head3& weights);
/// lambda_k / (sum lambda + eps).
Head3 normalized_pressure(const Head3& lambda, double eps_safe);

/// Reward mode iff every head is feasible and, for the MACF variant, the
/// largest pressure is below lambda_thr.
Mode crpo_select_mode(const constraint::CostStats& stats, const constraint::Budgets& budgets,
                      const constraint::PressureWeights& pressure, const OptimizerConfig& cfg, bool macf_variant);
int most_violated_head(const constraint::CostStats& stats, const constraint::Budgets& budgets);

/// max(0, lambda_k + lr (c_hat_k - b_k)).
Head3 dual_ascent(const Head3& duals, const constraint::CostStats& stats, const constraint::Budgets& budgets,
                  double lr);

/// Deficit weights; the CPO variant multiplies deficits by lambda first.
Head3 recovery_weights(const constraint::CostStats& stats, const constraint::Budgets& budgets, const Head3& lambda,
                       double eps_safe, bool cpo_variant);

// ---- first-order update ----

double clipped_objective(const diff::GaussianPolicy& policy, const Mat& obs, const Mat& actions, const Vec& log_probs_old,
                         const Vec& adv, double eps_clip);
Vec clipped_objective_grad(const diff::GaussianPolicy& policy, const Mat& obs, const Mat& actions,
                           const Vec& log_probs_old, const Vec& adv, double eps_clip);

/// Minibatch epochs of clipped-surrogate ascent on the policy only.
UpdateReport ppo_clipped_update(Agent& agent, const RolloutBatch& batch, const Vec& adv);

// ---- trust-region machinery ----

/// F v + xi v + sum_k lambda_k j_k (j_k^T v).
Vec safe_metric_matvec(const diff::FisherOperator& fisher, std::span<const Vec> cost_grads, const Head3& lambda,
                       double xi, const Vec& v);

struct TrustRegionProblem {
  diff::LinearOperator metric;
  Vec rhs;
  double radius = 0.0;
  double direction_sign = 1.0;  // -1 steps against the solved direction
  std::function<double(const Vec&)> kl;           // realized KL of a candidate step
  std::function<double(const Vec&)> improvement;  // accepted only when > 0
  std::function<bool(const Vec&)> extra_check;    // optional
  double kl_slack = 1.5;
  double backtrack_factor = 0.8;
  int max_backtracks = 10;
  int cg_iters = 10;
  double cg_tol = 1e-10;
};

struct TrustRegionResult {
  Vec step;
  bool accepted = false;
  int backtracks = 0;
  double kl = 0.0;
  bool extra_ok = true;
  bool solver_failed = false;
};

TrustRegionResult solve_trust_region(const TrustRegionProblem& p);

/// Normal-mode step: G d = g_r, scaled to delta, backtracked.
UpdateReport trust_region_step(Agent& agent, const RolloutBatch& batch, const Vec& g_r, const std::array<Vec, 3>& j,
                               const constraint::Budgets& budgets, const constraint::PressureWeights& pressure,
                               bool safe_metric, bool linearized_checks);

/// Feasibility correction under delta_rec.
UpdateReport recovery_step(Agent& agent, const RolloutBatch& batch, const std::array<Vec, 3>& j,
                           const constraint::Budgets& budgets, const constraint::PressureWeights& pressure,
                           bool cpo_variant);

// ---- training ----

void fit_critics(Agent& agent, const RolloutBatch& batch);

/// Annotates the batch, runs the kind-specific update and fits the critics.
UpdateReport update_agent(Agent& agent, RolloutBatch& batch, const constraint::Budgets& budgets);

struct TrainHooks {
  /// Called after each update with the annotated batch.
  std::function<void(const RolloutBatch&, const UpdateReport&)> on_update;
};

struct TrainResult {
  Agent agent;
  std::vector<UpdateReport> log;
};

/// Each update rolls `rollout_len` days from a random start inside
/// [train_begin + 20, train_end - rollout_len].
TrainResult train_agent(const OptimizerConfig& cfg, const market::PriceSeries& prices, const market::EnvConstants& k,
                        const CostSource& costs, const constraint::Budgets& budgets, std::uint64_t seed,
                        int train_begin, int train_end, const TrainHooks& hooks = {});

struct Evaluation {
  std::vector<double> nav;  // nav[0] = 1 before the first step
  std::vector<double> rewards;
  std::vector<double> turnover;
  std::vector<double> invested;
  std::vector<CostBundle> costs;
  Mat weights;  // N x T post-trade weights
};

/// Deterministic rollout with the policy mean over [begin, end).
Evaluation evaluate_policy(const diff::GaussianPolicy& policy, const market::PriceSeries& prices,
                           const market::EnvConstants& k, const CostSource& costs, int begin, int end);

}  // namespace macfx::optim
