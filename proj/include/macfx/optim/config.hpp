#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "macfx/constraint/constraint.hpp"

namespace macfx::optim {

using constraint::Head3;

enum class Kind { ppo, ppo_penalty, ppo_lagrangian, crpo, trpo, cpo, macf_ppo, macf_crpo, macf_trpo, macf_cpo };
enum class Mode { reward, constraint, recovery };

inline constexpr std::array<Kind, 10> kAllKinds{Kind::ppo,       Kind::ppo_penalty, Kind::ppo_lagrangian, Kind::crpo,
                                                Kind::trpo,      Kind::cpo,         Kind::macf_ppo,       Kind::macf_crpo,
                                                Kind::macf_trpo, Kind::macf_cpo};

std::string_view to_string(Kind k);
Kind kind_from_string(std::string_view name);
std::string_view to_string(Mode m);

bool is_macf(Kind k);
bool is_trust_region(Kind k);
bool uses_costs(Kind k);

struct OptimizerConfig {
  Kind kind = Kind::ppo;

  // rollout and advantage estimation
  int rollout_len = 256;
  int total_updates = 200;
  double gamma = 0.99;
  double gae_lambda = 0.95;

  // first-order update
  double eps_clip = 0.2;
  int ppo_epochs = 4;
  int minibatch = 64;
  double policy_lr = 3e-4;
  double critic_lr = 1e-3;

  // networks
  std::vector<int> hidden{64, 64};
  double init_log_std = -1.0;
  double policy_final_scale = 0.01;

  // pressure layer
  Head3 beta{1.0, 1.0, 1.0};
  double lambda_u = 1.0;
  double eps_safe = 1e-8;
  double lambda_max = 100.0;
  double lambda_thr = 50.0;

  // trust region
  double delta = 0.03;
  double delta_rec = 0.005;
  double damping = 0.1;
  int cg_iters = 10;
  double cg_tol = 1e-10;
  double backtrack_factor = 0.8;
  int max_backtracks = 10;
  double kl_slack = 1.5;

  // baselines
  double penalty_coeff = 1.0;
  double dual_lr = 0.05;

  void validate() const;

  /// Defaults for a kind: profile A for macf_ppo/macf_crpo, profile B for
  /// macf_trpo/macf_cpo and the baseline trust-region radii.
  static OptimizerConfig for_kind(Kind kind);
};

nlohmann::json to_json(const OptimizerConfig& c);
/// Applies the keys present in `j`; unknown keys are structural errors.
void apply_overrides(OptimizerConfig& c, const nlohmann::json& j);

}  // namespace macfx::optim
