#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "macfx/errors.hpp"
#include "macfx/harness/pipeline.hpp"
#include "macfx/util/csv.hpp"

namespace fs = std::filesystem;
using namespace macfx;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "macfx_out";
  std::string method;
  std::vector<std::string> variants;
  bool identity = false;
};

harness::ExperimentConfig load(const Options& o) {
  return o.config.empty() ? harness::config_from_json(json::object()) : harness::load_config(o.config);
}

void write_json(const fs::path& p, const json& j) { harness::write_text(p.string(), j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw StructuralError("cannot open " + p.string());
  return json::parse(in);
}

fs::path run_dir(const Options& o, const std::string& method, std::uint64_t seed) {
  return fs::path(o.out) / "runs" / (method + "_" + std::to_string(seed));
}

/// Reuses world, field and budgets already in the workspace; anything
/// missing is built and saved.
std::unique_ptr<harness::Prepared> workspace(const harness::ExperimentConfig& cfg, const Options& o) {
  const fs::path out(o.out);
  fs::create_directories(out);
  auto p = std::make_unique<harness::Prepared>();
  p->cfg = cfg;
  harness::run_stage("world", [&] {
    if (fs::exists(out / "world")) {
      p->world = evidence::load_world((out / "world").string());
    } else {
      p->world = evidence::generate_world(cfg.world);
      fs::create_directories(out / "world");
      evidence::save_world(p->world, (out / "world").string());
    }
    p->table = evidence::EvidenceTable(p->world);
  });
  harness::run_stage("field", [&] {
    if (fs::exists(out / "field.txt")) {
      p->field.model = field::load_field((out / "field.txt").string());
      return;
    }
    const auto data = harness::build_field_data(cfg, p->world, p->table);
    p->field = field::train_field(data.train, data.val, cfg.field);
    p->field_test_metrics = field::field_metrics(p->field.model, data.test);
    field::save_field(p->field.model, (out / "field.txt").string());
    write_json(out / "field_training.json", field::to_json(p->field.log));
    write_json(out / "field_metrics.json", field::to_json(p->field_test_metrics));
  });
  harness::run_stage("calibrate", [&] {
    if (fs::exists(out / "budgets.json")) {
      p->budgets = constraint::load_budgets((out / "budgets.json").string());
    } else {
      p->budgets = harness::calibrate_stage(cfg, p->world.prices(), p->macf_costs(), "warm-uniform");
      constraint::save_budgets(p->budgets, (out / "budgets.json").string());
    }
  });
  return p;
}

void save_run(const Options& o, const harness::RunResult& r) {
  const auto dir = run_dir(o, r.method, r.seed);
  fs::create_directories(dir);
  write_json(dir / "metrics.json", harness::to_json(r.metrics));
  std::ostringstream nav;
  nav << "step,nav\n";
  for (std::size_t t = 0; t < r.evaluation.nav.size(); ++t) nav << t << "," << util::format_double(r.evaluation.nav[t]) << "\n";
  harness::write_text((dir / "nav.csv").string(), nav.str());
}

void save_training(const Options& o, const harness::RunResult& r) {
  const auto dir = run_dir(o, r.method, r.seed);
  fs::create_directories(dir);
  harness::save_policy(r.policy, (dir / "policy.json").string());
  json log = json::array();
  for (const auto& u : r.log) log.push_back(optim::to_json(u));
  write_json(dir / "train_log.json", log);
}

std::uint64_t require_seed(const Options& o) {
  if (!o.seed) throw StructuralError("--seed is required for this verb");
  return *o.seed;
}

optim::Kind require_method(const Options& o) {
  if (o.method.empty()) throw StructuralError("--method is required for this verb");
  return optim::kind_from_string(o.method);
}

void gen_world(const Options& o) {
  auto cfg = load(o);
  if (o.seed) cfg.world.seed = *o.seed;
  const fs::path out(o.out);
  fs::create_directories(out / "world");
  const auto world = harness::run_stage("world", [&] { return evidence::generate_world(cfg.world); });
  evidence::save_world(world, (out / "world").string());
  write_json(out / "config_echo.json", harness::config_echo(cfg));
  std::cout << "world " << util::hex64(world.checksum()) << " days " << world.days() << " events "
            << world.events().size() << "\n";
}

void train_field_verb(const Options& o) {
  auto cfg = load(o);
  if (o.seed) cfg.field.seed = *o.seed;
  fs::remove(fs::path(o.out) / "field.txt");
  const auto p = workspace(cfg, o);
  std::cout << "field " << util::hex64(p->field.model.checksum()) << " best_epoch " << p->field.log.best_epoch
            << " mean_auc90 " << p->field_test_metrics.mean_auc90 << "\n";
}

void calibrate_verb(const Options& o) {
  const auto cfg = load(o);
  fs::remove(fs::path(o.out) / "budgets.json");
  const auto p = workspace(cfg, o);
  std::cout << constraint::to_json(p->budgets).dump() << "\n";
}

void train_verb(const Options& o) {
  const auto cfg = load(o);
  const auto kind = require_method(o);
  const auto seed = require_seed(o);
  const auto p = workspace(cfg, o);
  const auto r = harness::run_method(harness::macf_setup(*p), kind, seed);
  save_training(o, r);
  std::cout << "trained " << r.method << " seed " << seed << " in " << r.seconds << " s\n";
}

void evaluate_verb(const Options& o) {
  const auto cfg = load(o);
  const auto kind = require_method(o);
  const auto seed = require_seed(o);
  const auto p = workspace(cfg, o);
  const std::string name(optim::to_string(kind));
  const auto policy = harness::load_policy((run_dir(o, name, seed) / "policy.json").string());
  const auto r = harness::evaluate_run(*p, policy, name, seed);
  save_run(o, r);
  std::cout << harness::to_json(r.metrics).dump() << "\n";
}

void report_verb(const Options& o) {
  const auto cfg = load(o);
  const auto p = workspace(cfg, o);
  const auto setup = harness::macf_setup(*p);
  std::vector<std::pair<optim::Kind, std::uint64_t>> missing;
  std::vector<std::uint64_t> seeds = o.seed ? std::vector<std::uint64_t>{*o.seed} : cfg.seeds;
  for (auto k : cfg.methods)
    for (auto s : seeds)
      if (!fs::exists(run_dir(o, std::string(optim::to_string(k)), s) / "metrics.json")) missing.emplace_back(k, s);
  harness::parallel_map<int>(static_cast<int>(missing.size()), cfg.workers, [&](int i) {
    const auto r = harness::run_method(setup, missing[i].first, missing[i].second);
    save_training(o, r);
    save_run(o, r);
    return 0;
  });
  harness::MetricsReport rep = harness::run_stage("report", [&] {
    harness::MetricsReport out;
    for (auto k : cfg.methods) out.methods.emplace_back(optim::to_string(k));
    for (auto k : cfg.methods)
      for (auto s : seeds)
        out.runs.push_back(
            harness::run_metrics_from_json(read_json(run_dir(o, std::string(optim::to_string(k)), s) / "metrics.json")));
    out.checksums = p->checksums();
    out.validate();
    return out;
  });
  const fs::path out(o.out);
  write_json(out / "report.json", harness::to_json(rep));
  harness::write_text((out / "report.csv").string(), harness::render_csv(rep));
  const auto text = harness::render_text(rep);
  harness::write_text((out / "report.txt").string(), text);
  write_json(out / "config_echo.json", harness::config_echo(cfg));
  std::cout << text;
}

void ablate_input_verb(const Options& o) {
  const auto cfg = load(o);
  const auto p = workspace(cfg, o);
  const auto rows = harness::run_input_ablation(*p, o.variants.empty() ? cfg.input_ablations : o.variants);
  const auto csv = harness::render_input_ablation(rows);
  harness::write_text((fs::path(o.out) / "ablation_input.csv").string(), csv);
  std::cout << csv;
}

void ablate_head_verb(const Options& o) {
  const auto cfg = load(o);
  const auto p = workspace(cfg, o);
  const auto seeds = o.seed ? std::vector<std::uint64_t>{*o.seed} : cfg.head_ablation_seeds;
  const auto csv = harness::render_head_ablation(harness::run_head_ablation(*p, seeds));
  harness::write_text((fs::path(o.out) / "ablation_head.csv").string(), csv);
  std::cout << csv;
}

void ablate_source_verb(const Options& o) {
  const auto cfg = load(o);
  const auto p = workspace(cfg, o);
  auto methods = cfg.source_ablation_methods;
  if (!o.method.empty()) methods = {optim::kind_from_string(o.method)};
  const auto seeds = o.seed ? std::vector<std::uint64_t>{*o.seed} : cfg.seeds;
  const auto res = harness::run_cost_source_ablation(*p, methods, seeds, o.identity || cfg.identity_shuffle);
  json runs = json::array();
  for (const auto& r : res.runs) {
    auto j = harness::to_json(r.metrics);
    j["source"] = std::string(harness::to_string(r.source));
    runs.push_back(j);
  }
  write_json(fs::path(o.out) / "ablation_source_runs.json", runs);
  const auto csv = harness::render_gap_table(res.gaps);
  harness::write_text((fs::path(o.out) / "ablation_source.csv").string(), csv);
  std::cout << csv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Action-conditioned ESG constraint field experiments"};
  app.require_subcommand(1);
  Options o;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed override");
    sub->add_option("--out", o.out, "Workspace directory");
    sub->add_option("--method", o.method, "Optimizer kind");
    return sub;
  };
  const std::vector<std::pair<std::string, std::function<void(const Options&)>>> verbs{
      {"gen-world", gen_world},           {"train-field", train_field_verb},   {"calibrate", calibrate_verb},
      {"train", train_verb},              {"evaluate", evaluate_verb},         {"ablate-input", ablate_input_verb},
      {"ablate-head", ablate_head_verb},  {"ablate-source", ablate_source_verb}, {"report", report_verb}};
  const std::map<std::string, std::string> help{
      {"gen-world", "Generate and save the synthetic world"},
      {"train-field", "Train the constraint field on the train/val splits"},
      {"calibrate", "Calibrate head budgets from the warm-start rollout"},
      {"train", "Train one method for one seed"},
      {"evaluate", "Score a trained policy on the test split"},
      {"ablate-input", "Retrain the field with feature groups removed"},
      {"ablate-head", "Compare the three-head field with shared-scalar variants"},
      {"ablate-source", "Compare field, static and shuffled cost sources"},
      {"report", "Run missing method x seed cells and render the comparison"}};
  std::function<void(const Options&)> chosen;
  for (const auto& [name, fn] : verbs) {
    auto* sub = common(app.add_subcommand(name, help.at(name)));
    if (name == "ablate-input") sub->add_option("--variants", o.variants, "Feature groups to remove");
    if (name == "ablate-source") sub->add_flag("--identity", o.identity, "Use the identity permutation");
    sub->callback([&chosen, fn = fn] { chosen = fn; });
  }
  CLI11_PARSE(app, argc, argv);
  try {
    chosen(o);
  } catch (const harness::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
