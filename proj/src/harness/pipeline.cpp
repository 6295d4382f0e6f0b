#include "macfx/harness/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "macfx/errors.hpp"
#include "macfx/util/csv.hpp"
#include "macfx/util/rng.hpp"

namespace macfx::harness {

using nlohmann::json;
using optim::Kind;
using optim::Vec;

StageError::StageError(std::string stage, const std::string& message)
    : std::runtime_error("[" + stage + "] " + message), stage_(std::move(stage)) {}

// ---- stages ----

Vec uniform_action(int n_assets) {
  Vec a = Vec::Zero(n_assets + 1);
  a[n_assets] = -40.0;  // sigmoid(-40) puts alpha at the band floor
  return a;
}

std::vector<constraint::CostBundle> warm_start_costs(const market::PriceSeries& prices, const market::EnvConstants& k,
                                                     const optim::CostSource& costs, const Splits& splits,
                                                     const WarmStartConfig& warm) {
  market::MarketEnv env(prices, k, splits.train_begin, splits.train_end);
  env.reset(splits.train_begin + optim::kHistoryDays);
  const Vec base = uniform_action(prices.assets());
  const double scale = std::exp(warm.log_std);
  const bool noisy = warm.log_std > -30.0;
  std::mt19937_64 rng(util::derive_seed(warm.seed, 0x3a7d));
  std::normal_distribution<double> normal;
  std::vector<constraint::CostBundle> out;
  while (!env.done()) {
    Vec a = base;
    if (noisy)
      for (Eigen::Index i = 0; i < a.size(); ++i) a[i] += scale * normal(rng);
    const auto conv = env.convert(a);
    out.push_back(costs.costs(env.state(), conv, prices.sector_of));
    env.apply(conv);
  }
  return out;
}

constraint::Budgets calibrate_stage(const ExperimentConfig& cfg, const market::PriceSeries& prices,
                                    const optim::CostSource& costs, const std::string& source_id) {
  const auto warm = warm_start_costs(prices, cfg.env, costs, cfg.splits(), cfg.warm);
  return constraint::calibrate_budgets(warm, cfg.constraint.q, source_id);
}

FieldData build_field_data(const ExperimentConfig& cfg, const evidence::World& world,
                           const evidence::EvidenceTable& table) {
  const auto s = cfg.splits();
  FieldData d;
  d.train = field::build_dataset(world, table, s.train_begin, s.train_end, cfg.field.seed);
  d.val = field::build_dataset(world, table, s.val_begin, s.val_end, cfg.field.seed);
  d.test = field::build_dataset(world, table, s.test_begin, s.test_end, cfg.field.seed);
  return d;
}

optim::CostSource Prepared::macf_costs() const { return optim::CostSource::macf(field.model, table, cfg.constraint); }

std::map<std::string, std::string> Prepared::checksums() const {
  const auto hash_text = [](const std::string& s) { return util::hex64(util::fnv1a(s.data(), s.size())); };
  const auto s = cfg.splits();
  std::map<std::string, std::string> c;
  c["world"] = util::hex64(world.checksum());
  c["field"] = util::hex64(field.model.checksum());
  c["budgets"] = hash_text(constraint::to_json(budgets).dump());
  c["env"] = hash_text(to_json(cfg.env).dump());
  c["cost_source"] = util::hex64(macf_costs().checksum());
  c["protocol"] = hash_text("deterministic-mean:" + std::to_string(s.test_begin) + ":" + std::to_string(s.test_end));
  c["config"] = hash_text(config_echo(cfg).dump());
  return c;
}

std::unique_ptr<Prepared> prepare(const ExperimentConfig& cfg) {
  auto p = std::make_unique<Prepared>();
  run_stage("config", [&] {
    cfg.validate();
    p->cfg = cfg;
  });
  run_stage("world", [&] {
    p->world = evidence::generate_world(cfg.world);
    p->table = evidence::EvidenceTable(p->world);
  });
  run_stage("field", [&] {
    const auto data = build_field_data(cfg, p->world, p->table);
    p->field = field::train_field(data.train, data.val, cfg.field);
    p->field_test_metrics = field::field_metrics(p->field.model, data.test);
  });
  run_stage("calibrate", [&] { p->budgets = calibrate_stage(cfg, p->world.prices(), p->macf_costs(), "warm-uniform"); });
  return p;
}

RunSetup macf_setup(const Prepared& p) {
  RunSetup s;
  s.prepared = &p;
  s.train_costs = p.macf_costs();
  s.train_budgets = p.budgets;
  return s;
}

RunResult evaluate_run(const Prepared& p, const diff::GaussianPolicy& policy, const std::string& method,
                       std::uint64_t seed) {
  return run_stage("evaluate:" + method + ":" + std::to_string(seed), [&] {
    const auto s = p.cfg.splits();
    const auto& prices = p.world.prices();
    RunResult r;
    r.method = method;
    r.seed = seed;
    r.policy = policy;
    r.evaluation = optim::evaluate_policy(policy, prices, p.cfg.env, p.macf_costs(), s.test_begin, s.test_end);
    Mat w(prices.assets(), r.evaluation.weights.cols() + 1);
    w.col(0) = market::PortfolioState::initial(prices.assets(), s.test_begin).w;
    w.rightCols(r.evaluation.weights.cols()) = r.evaluation.weights;
    const auto fm = financial_metrics(r.evaluation.nav, w);
    r.metrics = make_run_metrics(method, seed, fm, constraint::esg_violation(r.evaluation.costs, p.budgets));
    return r;
  });
}

RunResult run_method(const RunSetup& setup, Kind kind, std::uint64_t seed, const optim::TrainHooks& hooks) {
  const auto& p = *setup.prepared;
  const std::string name(optim::to_string(kind));
  const auto t0 = std::chrono::steady_clock::now();
  auto trained = run_stage("train:" + name + ":" + std::to_string(seed), [&] {
    const auto s = p.cfg.splits();
    return optim::train_agent(p.cfg.optimizer(kind), p.world.prices(), p.cfg.env, setup.train_costs,
                              setup.train_budgets, seed, s.train_begin, s.train_end, hooks);
  });
  auto r = evaluate_run(p, trained.agent.policy, name, seed);
  r.log = std::move(trained.log);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

MetricsReport assemble_report(const Prepared& p, const std::vector<RunResult>& runs) {
  return run_stage("report", [&] {
    MetricsReport rep;
    for (auto k : p.cfg.methods) rep.methods.emplace_back(optim::to_string(k));
    for (const auto& r : runs) rep.runs.push_back(r.metrics);
    rep.checksums = p.checksums();
    rep.validate();
    return rep;
  });
}

PipelineResult run_pipeline(const ExperimentConfig& cfg) {
  PipelineResult out;
  out.prepared = prepare(cfg);
  const auto setup = macf_setup(*out.prepared);
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  const int jobs = static_cast<int>(cfg.methods.size()) * n_seeds;
  out.runs = parallel_map<RunResult>(jobs, cfg.workers, [&](int i) {
    return run_method(setup, cfg.methods[i / n_seeds], cfg.seeds[i % n_seeds]);
  });
  out.report = assemble_report(*out.prepared, out.runs);
  return out;
}

// ---- input and head ablations ----

std::vector<InputAblationRow> run_input_ablation(const Prepared& p, const std::vector<std::string>& variants) {
  for (const auto& v : variants) field::parse_removal(v);
  const auto data = run_stage("ablate-input:data", [&] { return build_field_data(p.cfg, p.world, p.table); });
  return parallel_map<InputAblationRow>(static_cast<int>(variants.size()), p.cfg.workers, [&](int i) {
    return run_stage("ablate-input:" + variants[i], [&] {
      auto hp = p.cfg.field;
      hp.removed = field::parse_removal(variants[i]);
      const auto trained = field::train_field(data.train, data.val, hp);
      InputAblationRow row;
      row.variant = variants[i];
      row.metrics = field::field_metrics(trained.model, data.test);
      row.val_loss = field::evaluate_loss(trained.model, data.val, hp.lambda_mono).total;
      row.best_epoch = trained.log.best_epoch;
      return row;
    });
  });
}

std::string render_input_ablation(const std::vector<InputAblationRow>& rows) {
  std::ostringstream out;
  out << "variant,mean_rmse,mean_auc90,mean_lift,rmse_add,rmse_hold,rmse_spill,val_loss,best_epoch\n";
  for (const auto& r : rows) {
    out << r.variant << "," << util::format_double(r.metrics.mean_rmse) << ","
        << util::format_double(r.metrics.mean_auc90) << "," << util::format_double(r.metrics.mean_lift);
    for (const auto& h : r.metrics.heads) out << "," << util::format_double(h.rmse);
    out << "," << util::format_double(r.val_loss) << "," << r.best_epoch << "\n";
  }
  return out.str();
}

field::FieldMetrics oracle_scalar_metrics(const field::FieldDataset& test) {
  const Mat mean = test.targets.colwise().mean();
  Mat scores(field::kHeads, test.size());
  for (int k = 0; k < field::kHeads; ++k) scores.row(k) = mean;
  return field::metrics_from_scores(scores, test.targets);
}

std::vector<HeadAblationRow> run_head_ablation(const Prepared& p, const std::vector<std::uint64_t>& seeds) {
  const auto data = run_stage("ablate-head:data", [&] { return build_field_data(p.cfg, p.world, p.table); });
  const auto oracle = oracle_scalar_metrics(data.test);
  return parallel_map<HeadAblationRow>(static_cast<int>(seeds.size()), p.cfg.workers, [&](int i) {
    return run_stage("ablate-head:" + std::to_string(seeds[i]), [&] {
      HeadAblationRow row;
      row.seed = seeds[i];
      auto hp = p.cfg.field;
      hp.seed = seeds[i];
      hp.kind = field::FieldKind::three_head;
      row.full = field::field_metrics(field::train_field(data.train, data.val, hp).model, data.test);
      hp.kind = field::FieldKind::scalar;
      row.scalar = field::field_metrics(field::train_field(data.train, data.val, hp).model, data.test);
      row.oracle = oracle;
      return row;
    });
  });
}

std::string render_head_ablation(const std::vector<HeadAblationRow>& rows) {
  std::ostringstream out;
  out << "seed,variant,mean_rmse,rmse_add,rmse_hold,rmse_spill,mean_auc90,mean_lift\n";
  const auto line = [&](const std::string& seed, const char* name, const field::FieldMetrics& m) {
    out << seed << "," << name << "," << util::format_double(m.mean_rmse);
    for (const auto& h : m.heads) out << "," << util::format_double(h.rmse);
    out << "," << util::format_double(m.mean_auc90) << "," << util::format_double(m.mean_lift) << "\n";
  };
  for (const auto& r : rows) {
    const auto s = std::to_string(r.seed);
    line(s, "three_head", r.full);
    line(s, "shared_scalar", r.scalar);
    line(s, "oracle_scalar", r.oracle);
  }
  return out.str();
}

// ---- cost-source ablation ----

std::string_view to_string(SourceKind s) {
  switch (s) {
    case SourceKind::macf: return "macf";
    case SourceKind::static_score: return "static";
    case SourceKind::shuffled: return "shuffled";
  }
  return "?";
}

std::vector<int> shuffle_permutation(int n, std::uint64_t seed, bool identity) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  if (!identity) {
    std::mt19937_64 rng(util::derive_seed(seed, 0x5a0ff1e));
    std::shuffle(perm.begin(), perm.end(), rng);
  }
  return perm;
}

Aggregate pairwise_gap(const std::vector<SourceRun>& runs, SourceKind a, SourceKind b, const std::string& column) {
  std::map<std::uint64_t, std::map<std::string, std::pair<const RunMetrics*, const RunMetrics*>>> by_seed;
  for (const auto& r : runs) {
    auto& slot = by_seed[r.metrics.seed][r.metrics.method];
    if (r.source == a) slot.first = &r.metrics;
    if (r.source == b) slot.second = &r.metrics;
  }
  std::vector<double> per_seed;
  for (const auto& [seed, methods] : by_seed) {
    double total = 0.0;
    int n = 0;
    for (const auto& [method, pair] : methods) {
      if (!pair.first || !pair.second) continue;
      total += std::abs(pair.first->get(column) - pair.second->get(column));
      ++n;
    }
    if (n > 0) per_seed.push_back(total / n);
  }
  if (per_seed.empty()) throw StructuralError("no paired runs for the requested sources");
  return aggregate(per_seed);
}

std::vector<GapCell> gap_table(const std::vector<SourceRun>& runs) {
  const std::array<std::pair<SourceKind, SourceKind>, 3> pairs{{{SourceKind::macf, SourceKind::static_score},
                                                                {SourceKind::macf, SourceKind::shuffled},
                                                                {SourceKind::static_score, SourceKind::shuffled}}};
  std::vector<GapCell> out;
  for (const auto& [a, b] : pairs) {
    bool have_a = false, have_b = false;
    for (const auto& r : runs) {
      have_a = have_a || r.source == a;
      have_b = have_b || r.source == b;
    }
    if (!have_a || !have_b) continue;
    for (const auto& c : kMetricColumns) out.push_back({a, b, c, pairwise_gap(runs, a, b, c)});
  }
  return out;
}

SourceAblation run_cost_source_ablation(const Prepared& p, const std::vector<Kind>& methods,
                                        const std::vector<std::uint64_t>& seeds, bool identity_shuffle,
                                        const Vec* static_override, const std::vector<RunResult>* macf_runs) {
  SourceAblation out;
  const auto s = p.cfg.splits();
  out.static_scores = static_override ? *static_override
                                      : optim::static_hold_scores(p.table, s.train_begin, s.train_end);
  const auto stat_src = optim::CostSource::static_scores(out.static_scores, p.cfg.constraint);

  struct Job {
    SourceKind source;
    std::uint64_t seed;
    Kind kind;
  };
  std::vector<Job> jobs;
  for (auto seed : seeds)
    for (auto src : {SourceKind::macf, SourceKind::static_score, SourceKind::shuffled})
      for (auto k : methods) jobs.push_back({src, seed, k});

  std::vector<RunSetup> setups;
  std::map<std::pair<int, std::uint64_t>, std::size_t> setup_index;
  const auto add_setup = [&](SourceKind src, std::uint64_t seed, optim::CostSource costs, const std::string& id) {
    RunSetup rs;
    rs.prepared = &p;
    rs.train_costs = std::move(costs);
    rs.train_budgets = run_stage("calibrate:" + id,
                                 [&] { return calibrate_stage(p.cfg, p.world.prices(), rs.train_costs, id); });
    setup_index[{static_cast<int>(src), seed}] = setups.size();
    setups.push_back(std::move(rs));
  };
  const auto macf = macf_setup(p);
  const auto stat_budgets = calibrate_stage(p.cfg, p.world.prices(), stat_src, "warm-uniform-static");
  for (auto seed : seeds) {
    setup_index[{static_cast<int>(SourceKind::macf), seed}] = setups.size();
    setups.push_back(macf);
    setup_index[{static_cast<int>(SourceKind::static_score), seed}] = setups.size();
    setups.push_back({&p, stat_src, stat_budgets});
    const auto perm = shuffle_permutation(static_cast<int>(out.static_scores.size()), seed, identity_shuffle);
    add_setup(SourceKind::shuffled, seed,
              optim::CostSource::static_scores(optim::permute_scores(out.static_scores, perm), p.cfg.constraint),
              "warm-uniform-shuffled-" + std::to_string(seed));
  }

  // MACF-source runs are the main comparison's runs; reuse them when given
  std::map<std::pair<std::string, std::uint64_t>, RunMetrics> reusable;
  if (macf_runs)
    for (const auto& r : *macf_runs) reusable[{r.method, r.seed}] = r.metrics;

  out.runs = parallel_map<SourceRun>(static_cast<int>(jobs.size()), p.cfg.workers, [&](int i) {
    const auto& j = jobs[i];
    if (j.source == SourceKind::macf) {
      const auto it = reusable.find({std::string(optim::to_string(j.kind)), j.seed});
      if (it != reusable.end()) return SourceRun{j.source, it->second};
    }
    const auto& setup = setups[setup_index.at({static_cast<int>(j.source), j.seed})];
    return run_stage("ablate-source:" + std::string(to_string(j.source)),
                     [&] { return SourceRun{j.source, run_method(setup, j.kind, j.seed).metrics}; });
  });
  out.gaps = gap_table(out.runs);
  return out;
}

std::string render_gap_table(const std::vector<GapCell>& gaps) {
  std::ostringstream out;
  out << "pair,column,mean,std,seeds\n";
  for (const auto& g : gaps)
    out << to_string(g.a) << "-" << to_string(g.b) << "," << g.column << "," << util::format_double(g.gap.mean) << ","
        << util::format_double(g.gap.stddev) << "," << g.gap.n << "\n";
  return out.str();
}

// ---- artifact io ----

void save_policy(const diff::GaussianPolicy& policy, const std::string& path) {
  json layers = json::array();
  for (const auto& l : policy.net().layout)
    layers.push_back({{"in", l.in}, {"out", l.out}, {"act", std::string(diff::to_string(l.act))}});
  const auto& v = policy.net().values;
  const auto& ls = policy.log_std();
  json j = {{"format", "macfx-policy"},
            {"layers", layers},
            {"values", std::vector<double>(v.data(), v.data() + v.size())},
            {"log_std", std::vector<double>(ls.data(), ls.data() + ls.size())}};
  write_text(path, j.dump() + "\n");
}

diff::GaussianPolicy load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open policy " + path);
  const auto j = json::parse(in);
  if (j.value("format", "") != "macfx-policy") throw StructuralError(path + " is not a policy file");
  diff::Layout layout;
  for (const auto& l : j.at("layers"))
    layout.push_back({l.at("in").get<int>(), l.at("out").get<int>(),
                      diff::activation_from_string(l.at("act").get<std::string>())});
  const auto v = j.at("values").get<std::vector<double>>();
  const auto ls = j.at("log_std").get<std::vector<double>>();
  diff::ParamVector net(layout, Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
  return diff::GaussianPolicy(std::move(net), Eigen::Map<const Vec>(ls.data(), static_cast<Eigen::Index>(ls.size())));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw StructuralError("cannot write " + path);
  out << text;
  if (!out) throw StructuralError("failed writing " + path);
}

}  // namespace macfx::harness
