#include "macfx/harness/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "macfx/errors.hpp"

namespace macfx::harness {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw StructuralError("config section '" + where + "' must be an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw StructuralError("unknown config key '" + where + "." + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::vector<optim::Kind> read_kinds(const json& j) {
  std::vector<optim::Kind> out;
  for (const auto& name : j) out.push_back(optim::kind_from_string(name.get<std::string>()));
  return out;
}

json kind_names(const std::vector<optim::Kind>& kinds) {
  json out = json::array();
  for (auto k : kinds) out.push_back(std::string(optim::to_string(k)));
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  world.validate();
  if (seeds.empty()) throw StructuralError("seed list is empty");
  if (methods.empty()) throw StructuralError("method list is empty");
  for (double f : {train_fraction, val_fraction, test_fraction})
    if (!(f > 0.0)) throw StructuralError("split fractions must be positive");
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
    throw StructuralError("split fractions must sum to 1");
  if (!(constraint.tau > 0.0)) throw StructuralError("gate temperature must be positive");
  for (int k = 0; k < 3; ++k) {
    if (!(constraint.eta[k] >= 0.0)) throw StructuralError("eta must be nonnegative");
    if (!(constraint.q[k] > 0.0 && constraint.q[k] <= 1.0)) throw StructuralError("budget quantiles must lie in (0, 1]");
  }
  if (!(env.alpha_min > 0.0 && env.alpha_min <= env.alpha_max && env.alpha_max <= 1.0))
    throw StructuralError("invested band must satisfy 0 < alpha_min <= alpha_max <= 1");
  if (!(env.c_tx >= 0.0 && env.lambda_dd >= 0.0 && env.dd_free >= 0.0 && env.eps_trade >= 0.0))
    throw StructuralError("environment constants must be nonnegative");
  if (!(env.name_cap > 0.0 && env.sector_cap >= env.name_cap)) throw StructuralError("invalid weight caps");
  for (const auto& name : input_ablations) field::parse_removal(name);
  for (const auto& [name, _] : method_overrides) optim::kind_from_string(name);
  const auto s = splits();
  for (auto kind : methods) {
    const auto cfg = optimizer(kind);
    if (s.train_end - s.train_begin - 20 < cfg.rollout_len)
      throw StructuralError("training split is shorter than one rollout for " + std::string(optim::to_string(kind)));
  }
  if (s.val_end <= s.val_begin || s.test_end <= s.test_begin) throw StructuralError("empty validation or test split");
}

Splits ExperimentConfig::splits() const {
  Splits s;
  const int days = world.days;
  s.train_begin = 0;
  s.train_end = static_cast<int>(std::lround(days * train_fraction));
  s.val_begin = s.train_end;
  s.val_end = static_cast<int>(std::lround(days * (train_fraction + val_fraction)));
  s.test_begin = s.val_end;
  s.test_end = days;
  return s;
}

optim::OptimizerConfig ExperimentConfig::optimizer(optim::Kind kind) const {
  auto cfg = optim::OptimizerConfig::for_kind(kind);
  optim::apply_overrides(cfg, optimizer_overrides);
  const auto it = method_overrides.find(std::string(optim::to_string(kind)));
  if (it != method_overrides.end()) optim::apply_overrides(cfg, it->second);
  cfg.validate();
  return cfg;
}

ExperimentConfig config_from_json(const json& j) {
  reject_unknown(j, {"world", "seeds", "field", "constraint", "env", "splits", "warm_start", "methods", "optimizer",
                     "method_overrides", "ablation", "workers", "resolved_optimizers"},
                 "config");
  ExperimentConfig c;
  if (j.contains("world")) {
    const auto& w = j.at("world");
    reject_unknown(w, {"n_assets", "days", "event_rate", "anchor_prob", "seed", "severe_threshold", "severe_drift",
                       "stress_enter", "stress_exit", "stress_vol_mult"},
                   "world");
    read(w, "n_assets", c.world.n_assets);
    read(w, "days", c.world.days);
    read(w, "event_rate", c.world.event_rate);
    read(w, "anchor_prob", c.world.anchor_prob);
    read(w, "seed", c.world.seed);
    read(w, "severe_threshold", c.world.severe_threshold);
    read(w, "severe_drift", c.world.severe_drift);
    read(w, "stress_enter", c.world.stress_enter);
    read(w, "stress_exit", c.world.stress_exit);
    read(w, "stress_vol_mult", c.world.stress_vol_mult);
  }
  read(j, "seeds", c.seeds);
  if (j.contains("field")) {
    const auto& f = j.at("field");
    reject_unknown(f, {"hidden", "lr", "weight_decay", "batch", "max_epochs", "patience", "lambda_mono", "seed"}, "field");
    read(f, "hidden", c.field.hidden);
    read(f, "lr", c.field.lr);
    read(f, "weight_decay", c.field.weight_decay);
    read(f, "batch", c.field.batch);
    read(f, "max_epochs", c.field.max_epochs);
    read(f, "patience", c.field.patience);
    read(f, "lambda_mono", c.field.lambda_mono);
    read(f, "seed", c.field.seed);
  }
  if (j.contains("constraint")) {
    const auto& p = j.at("constraint");
    reject_unknown(p, {"tau", "eta", "q"}, "constraint");
    read(p, "tau", c.constraint.tau);
    read(p, "eta", c.constraint.eta);
    read(p, "q", c.constraint.q);
  }
  if (j.contains("env")) {
    const auto& e = j.at("env");
    reject_unknown(e, {"c_tx", "lambda_dd", "dd_free", "alpha_min", "alpha_max", "name_cap", "sector_cap", "eps_trade"},
                   "env");
    read(e, "c_tx", c.env.c_tx);
    read(e, "lambda_dd", c.env.lambda_dd);
    read(e, "dd_free", c.env.dd_free);
    read(e, "alpha_min", c.env.alpha_min);
    read(e, "alpha_max", c.env.alpha_max);
    read(e, "name_cap", c.env.name_cap);
    read(e, "sector_cap", c.env.sector_cap);
    read(e, "eps_trade", c.env.eps_trade);
  }
  if (j.contains("splits")) {
    const auto& s = j.at("splits");
    reject_unknown(s, {"train", "val", "test"}, "splits");
    read(s, "train", c.train_fraction);
    read(s, "val", c.val_fraction);
    read(s, "test", c.test_fraction);
  }
  if (j.contains("warm_start")) {
    const auto& w = j.at("warm_start");
    reject_unknown(w, {"log_std", "seed"}, "warm_start");
    read(w, "log_std", c.warm.log_std);
    read(w, "seed", c.warm.seed);
  }
  if (j.contains("methods")) c.methods = read_kinds(j.at("methods"));
  if (j.contains("optimizer")) c.optimizer_overrides = j.at("optimizer");
  if (j.contains("method_overrides"))
    for (const auto& [name, o] : j.at("method_overrides").items()) c.method_overrides[name] = o;
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    reject_unknown(a, {"input", "head_seeds", "source_methods", "identity_shuffle"}, "ablation");
    read(a, "input", c.input_ablations);
    read(a, "head_seeds", c.head_ablation_seeds);
    if (a.contains("source_methods")) c.source_ablation_methods = read_kinds(a.at("source_methods"));
    read(a, "identity_shuffle", c.identity_shuffle);
  }
  read(j, "workers", c.workers);
  // "resolved_optimizers" is informational output of config_echo and is not read back
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw StructuralError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

json to_json(const evidence::WorldConfig& w) {
  return {{"n_assets", w.n_assets},       {"days", w.days},
          {"event_rate", w.event_rate},   {"anchor_prob", w.anchor_prob},
          {"seed", w.seed},               {"severe_threshold", w.severe_threshold},
          {"severe_drift", w.severe_drift}, {"stress_enter", w.stress_enter},
          {"stress_exit", w.stress_exit}, {"stress_vol_mult", w.stress_vol_mult}};
}

json to_json(const market::EnvConstants& k) {
  return {{"c_tx", k.c_tx},           {"lambda_dd", k.lambda_dd}, {"dd_free", k.dd_free},
          {"alpha_min", k.alpha_min}, {"alpha_max", k.alpha_max}, {"name_cap", k.name_cap},
          {"sector_cap", k.sector_cap}, {"eps_trade", k.eps_trade}};
}

json to_json(const constraint::ConstraintParams& p) { return {{"tau", p.tau}, {"eta", p.eta}, {"q", p.q}}; }

json to_json(const field::FieldHparams& h) {
  return {{"hidden", h.hidden},         {"lr", h.lr},
          {"weight_decay", h.weight_decay}, {"batch", h.batch},
          {"max_epochs", h.max_epochs}, {"patience", h.patience},
          {"lambda_mono", h.lambda_mono}, {"seed", h.seed}};
}

json config_echo(const ExperimentConfig& c) {
  json methods = json::object();
  for (auto k : optim::kAllKinds) methods[std::string(optim::to_string(k))] = optim::to_json(c.optimizer(k));
  json overrides = json::object();
  for (const auto& [name, o] : c.method_overrides) overrides[name] = o;
  return {{"world", to_json(c.world)},
          {"seeds", c.seeds},
          {"field", to_json(c.field)},
          {"constraint", to_json(c.constraint)},
          {"env", to_json(c.env)},
          {"splits", {{"train", c.train_fraction}, {"val", c.val_fraction}, {"test", c.test_fraction}}},
          {"warm_start", {{"log_std", c.warm.log_std}, {"seed", c.warm.seed}}},
          {"methods", kind_names(c.methods)},
          {"optimizer", c.optimizer_overrides},
          {"method_overrides", overrides},
          {"resolved_optimizers", methods},
          {"ablation",
           {{"input", c.input_ablations},
            {"head_seeds", c.head_ablation_seeds},
            {"source_methods", kind_names(c.source_ablation_methods)},
            {"identity_shuffle", c.identity_shuffle}}},
          {"workers", c.workers}};
}

}  // namespace macfx::harness
