#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "macfx/constraint/constraint.hpp"
#include "macfx/evidence/world.hpp"
#include "macfx/field/train.hpp"
#include "macfx/market/market.hpp"
#include "macfx/optim/config.hpp"

namespace macfx::harness {

/// Half-open day ranges of the chronological split.
struct Splits {
  int train_begin = 0, train_end = 0;
  int val_begin = 0, val_end = 0;
  int test_begin = 0, test_end = 0;
};

struct WarmStartConfig {
  /// Exploration noise around the uniform action; 0 gives the purely
  /// deterministic reference policy.
  double log_std = -1.0;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  evidence::WorldConfig world;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  field::FieldHparams field;
  constraint::ConstraintParams constraint;
  market::EnvConstants env;
  double train_fraction = 0.5;
  double val_fraction = 0.25;
  double test_fraction = 0.25;
  WarmStartConfig warm;

  std::vector<optim::Kind> methods{optim::kAllKinds.begin(), optim::kAllKinds.end()};
  /// Applied to every method before the per-method overrides.
  nlohmann::json optimizer_overrides = nlohmann::json::object();
  std::map<std::string, nlohmann::json> method_overrides;

  std::vector<std::string> input_ablations{"none",  "micro",  "firm_memory", "meso",       "macro",
                                           "anchor", "portfolio", "action",   "all_dynamic"};
  std::vector<std::uint64_t> head_ablation_seeds{0, 1, 2};
  std::vector<optim::Kind> source_ablation_methods{optim::Kind::macf_ppo, optim::Kind::macf_crpo,
                                                   optim::Kind::macf_trpo, optim::Kind::macf_cpo};
  bool identity_shuffle = false;

  int workers = 0;  // 0 picks the hardware concurrency

  void validate() const;
  Splits splits() const;
  /// Method defaults with both override layers applied.
  optim::OptimizerConfig optimizer(optim::Kind kind) const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// Every tunable constant, including the resolved per-method optimizer
/// settings and the environment constants.
nlohmann::json config_echo(const ExperimentConfig& c);

nlohmann::json to_json(const evidence::WorldConfig& w);
nlohmann::json to_json(const market::EnvConstants& k);
nlohmann::json to_json(const constraint::ConstraintParams& p);
nlohmann::json to_json(const field::FieldHparams& h);

}  // namespace macfx::harness
