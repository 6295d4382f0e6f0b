#include "macfx/optim/config.hpp"

#include <cmath>

#include "macfx/errors.hpp"

namespace macfx::optim {

std::string_view to_string(Kind k) {
  switch (k) {
    case Kind::ppo: return "ppo";
    case Kind::ppo_penalty: return "ppo_penalty";
    case Kind::ppo_lagrangian: return "ppo_lagrangian";
    case Kind::crpo: return "crpo";
    case Kind::trpo: return "trpo";
    case Kind::cpo: return "cpo";
    case Kind::macf_ppo: return "macf_ppo";
    case Kind::macf_crpo: return "macf_crpo";
    case Kind::macf_trpo: return "macf_trpo";
    case Kind::macf_cpo: return "macf_cpo";
  }
  return "ppo";
}

Kind kind_from_string(std::string_view name) {
  for (auto k : kAllKinds)
    if (to_string(k) == name) return k;
  throw StructuralError("unknown optimizer kind '" + std::string(name) + "'");
}

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::reward: return "reward";
    case Mode::constraint: return "constraint";
    case Mode::recovery: return "recovery";
  }
  return "reward";
}

bool is_macf(Kind k) {
  return k == Kind::macf_ppo || k == Kind::macf_crpo || k == Kind::macf_trpo || k == Kind::macf_cpo;
}

bool is_trust_region(Kind k) {
  return k == Kind::trpo || k == Kind::cpo || k == Kind::macf_trpo || k == Kind::macf_cpo;
}

bool uses_costs(Kind k) { return k != Kind::ppo && k != Kind::trpo; }

void OptimizerConfig::validate() const {
  const auto need = [](bool ok, const char* what) {
    if (!ok) throw StructuralError(std::string("optimizer config: ") + what);
  };
  need(rollout_len >= 1, "rollout_len must be positive");
  need(total_updates >= 0, "total_updates must be nonnegative");
  need(gamma >= 0.0 && gamma <= 1.0, "gamma outside [0, 1]");
  need(gae_lambda >= 0.0 && gae_lambda <= 1.0, "gae_lambda outside [0, 1]");
  need(eps_clip > 0.0, "eps_clip must be positive");
  need(ppo_epochs >= 1 && minibatch >= 1, "ppo_epochs and minibatch must be positive");
  need(policy_lr > 0.0 && critic_lr > 0.0, "learning rates must be positive");
  need(!hidden.empty(), "hidden layers required");
  for (double b : beta) need(b >= 0.0, "beta must be nonnegative");
  need(lambda_u >= 0.0 && eps_safe > 0.0 && lambda_max > 0.0, "pressure constants out of range");
  need(delta > 0.0 && delta_rec > 0.0 && damping >= 0.0, "trust-region radii must be positive");
  need(cg_iters >= 1 && max_backtracks >= 1, "cg_iters and max_backtracks must be positive");
  need(backtrack_factor > 0.0 && backtrack_factor < 1.0, "backtrack_factor outside (0, 1)");
  need(kl_slack >= 1.0, "kl_slack below 1");
  need(penalty_coeff >= 0.0 && dual_lr >= 0.0, "baseline coefficients must be nonnegative");
}

OptimizerConfig OptimizerConfig::for_kind(Kind kind) {
  OptimizerConfig c;
  c.kind = kind;
  if (kind == Kind::macf_trpo || kind == Kind::macf_cpo) {
    c.beta = {0.25, 1.0, 1.0};
    c.lambda_u = 0.5;
    c.lambda_max = 30.0;
  }
  return c;
}

nlohmann::json to_json(const OptimizerConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"rollout_len", c.rollout_len},
          {"total_updates", c.total_updates},
          {"gamma", c.gamma},
          {"gae_lambda", c.gae_lambda},
          {"eps_clip", c.eps_clip},
          {"ppo_epochs", c.ppo_epochs},
          {"minibatch", c.minibatch},
          {"policy_lr", c.policy_lr},
          {"critic_lr", c.critic_lr},
          {"hidden", c.hidden},
          {"init_log_std", c.init_log_std},
          {"policy_final_scale", c.policy_final_scale},
          {"beta", c.beta},
          {"lambda_u", c.lambda_u},
          {"eps_safe", c.eps_safe},
          {"lambda_max", c.lambda_max},
          {"lambda_thr", c.lambda_thr},
          {"delta", c.delta},
          {"delta_rec", c.delta_rec},
          {"xi", c.damping},
          {"cg_iters", c.cg_iters},
          {"cg_tol", c.cg_tol},
          {"backtrack_factor", c.backtrack_factor},
          {"max_backtracks", c.max_backtracks},
          {"kl_slack", c.kl_slack},
          {"penalty_coeff", c.penalty_coeff},
          {"dual_lr", c.dual_lr}};
}

void apply_overrides(OptimizerConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw StructuralError("optimizer overrides must be an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "kind") c.kind = kind_from_string(v.get<std::string>());
    else if (key == "rollout_len") c.rollout_len = v.get<int>();
    else if (key == "total_updates") c.total_updates = v.get<int>();
    else if (key == "gamma") c.gamma = v.get<double>();
    else if (key == "gae_lambda") c.gae_lambda = v.get<double>();
    else if (key == "eps_clip") c.eps_clip = v.get<double>();
    else if (key == "ppo_epochs") c.ppo_epochs = v.get<int>();
    else if (key == "minibatch") c.minibatch = v.get<int>();
    else if (key == "policy_lr") c.policy_lr = v.get<double>();
    else if (key == "critic_lr") c.critic_lr = v.get<double>();
    else if (key == "hidden") c.hidden = v.get<std::vector<int>>();
    else if (key == "init_log_std") c.init_log_std = v.get<double>();
    else if (key == "policy_final_scale") c.policy_final_scale = v.get<double>();
    else if (key == "beta") c.beta = v.get<Head3>();
    else if (key == "lambda_u") c.lambda_u = v.get<double>();
    else if (key == "eps_safe") c.eps_safe = v.get<double>();
    else if (key == "lambda_max") c.lambda_max = v.get<double>();
    else if (key == "lambda_thr") c.lambda_thr = v.get<double>();
    else if (key == "delta") c.delta = v.get<double>();
    else if (key == "delta_rec") c.delta_rec = v.get<double>();
    else if (key == "xi") c.damping = v.get<double>();
    else if (key == "cg_iters") c.cg_iters = v.get<int>();
    else if (key == "cg_tol") c.cg_tol = v.get<double>();
    else if (key == "backtrack_factor") c.backtrack_factor = v.get<double>();
    else if (key == "max_backtracks") c.max_backtracks = v.get<int>();
    else if (key == "kl_slack") c.kl_slack = v.get<double>();
    else if (key == "penalty_coeff") c.penalty_coeff = v.get<double>();
    else if (key == "dual_lr") c.dual_lr = v.get<double>();
    else throw StructuralError("unknown optimizer setting '" + key + "'");
  }
  c.validate();
}

}  // namespace macfx::optim
