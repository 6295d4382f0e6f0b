#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "macfx/constraint/constraint.hpp"
#include "macfx/diffcore/gaussian_policy.hpp"
#include "macfx/diffcore/solvers.hpp"
#include "macfx/evidence/context.hpp"
#include "macfx/field/field.hpp"
#include "macfx/market/market.hpp"

namespace macfx::optim {

using constraint::CostBundle;
using diff::Mat;
using diff::Vec;

/// Maps a realized trade to head-wise portfolio costs. The policy never sees
/// anything produced here; only the optimizers read the bundles.
class CostSource {
 public:
  enum class Type { macf, static_score, zero };

  /// Field-driven costs; evidence is taken from the last completed day.
  static CostSource macf(const field::FieldModel& field, const evidence::EvidenceTable& table,
                         constraint::ConstraintParams params);
  /// Per-asset constant scores used for every head as both rho_delta and rho_w.
  static CostSource static_scores(Vec scores, constraint::ConstraintParams params);
  static CostSource zero();

  Type type() const { return type_; }
  const Vec& scores() const { return scores_; }

  CostBundle costs(const market::PortfolioState& pre, const market::Conversion& conv,
                   const std::vector<int>& sector_of) const;

  std::uint64_t checksum() const;

 private:
  Type type_ = Type::zero;
  const field::FieldModel* field_ = nullptr;
  const evidence::EvidenceTable* table_ = nullptr;
  Vec scores_;
  constraint::ConstraintParams params_;
};

/// Static score per asset: mean hold-risk label over [date_begin, date_end).
Vec static_hold_scores(const evidence::EvidenceTable& table, int date_begin, int date_end);

/// Applies a permutation (perm[i] = source index) to per-asset scores.
Vec permute_scores(const Vec& scores, std::span<const int> perm);

struct Critic {
  diff::ParamVector params;
  diff::Adam adam;

  static Critic create(int obs_dim, const std::vector<int>& hidden, std::uint64_t seed, double lr);
  Vec predict(const Mat& obs) const;
  /// Mean squared error against `targets`.
  double mse(const Mat& obs, const Vec& targets) const;
  /// Minibatch Adam regression; returns the mean loss of the last epoch.
  double fit(const Mat& obs, const Vec& targets, int epochs, int minibatch, std::mt19937_64& rng);
};

struct RolloutBatch {
  Mat obs;      // observation_dim x T; financial features only
  Mat actions;  // raw actions, (N + 1) x T
  Vec log_probs_old;
  std::vector<double> rewards;  // environment rewards, untouched
  std::vector<CostBundle> costs;
  std::vector<double> invested;
  std::vector<double> turnover;
  int start_day = 0;
  bool truncated = false;

  // filled by annotate()
  std::vector<double> reward_stream;  // what advantage estimation consumed
  Vec values;
  Mat cost_values;  // 3 x T
  Vec adv_reward;   // normalized
  Mat adv_cost;     // 3 x T, not normalized
  Vec ret_reward;
  Mat ret_cost;
  constraint::CostStats stats;

  int size() const { return static_cast<int>(rewards.size()); }
  void validate() const;
};

/// Samples `steps` actions from the current env state onward.
RolloutBatch collect_rollout(const diff::GaussianPolicy& policy, market::MarketEnv& env, const CostSource& costs,
                             int steps, std::mt19937_64& rng);

/// GAE with a zero bootstrap after the last step.
Vec gae_advantages(std::span<const double> rewards, const Vec& values, double gamma, double gae_lambda);

/// Zero mean, unit variance (population); all zeros when the spread is ~0.
Vec normalize_advantages(const Vec& adv);

/// r_t - coeff * sum_k c_t^(k).
std::vector<double> penalized_rewards(const RolloutBatch& batch, double coeff);

/// Fills values, advantages, returns and cost statistics.
void annotate(RolloutBatch& batch, std::vector<double> reward_stream, const Critic& reward_critic,
              const std::array<Critic, 3>& cost_critics, double gamma, double gae_lambda);

}  // namespace macfx::optim
