#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "macfx/harness/config.hpp"
#include "macfx/harness/metrics.hpp"
#include "macfx/optim/agent.hpp"

namespace macfx::harness {

/// Failure of one pipeline stage; what() reads "[stage] message".
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Runs `f`, rethrowing any exception as a StageError tagged with `stage`.
template <class F>
auto run_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

/// Evaluates fn(0..n-1) on a small worker pool; results keep index order and
/// the first failing index's exception is rethrown.
template <class T>
std::vector<T> parallel_map(int n, int workers, const std::function<T(int)>& fn) {
  std::vector<T> out(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::max(1, std::min(workers, n));
  std::atomic<int> next{0};
  const auto work = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---- stages ----

/// Equal risky weights at the minimum invested fraction.
optim::Vec uniform_action(int n_assets);

/// One pass over the training days with the uniform action plus Gaussian
/// noise of scale exp(log_std) on every raw coordinate.
std::vector<constraint::CostBundle> warm_start_costs(const market::PriceSeries& prices, const market::EnvConstants& k,
                                                     const optim::CostSource& costs, const Splits& splits,
                                                     const WarmStartConfig& warm);

constraint::Budgets calibrate_stage(const ExperimentConfig& cfg, const market::PriceSeries& prices,
                                    const optim::CostSource& costs, const std::string& source_id);

struct FieldData {
  field::FieldDataset train, val, test;
};

FieldData build_field_data(const ExperimentConfig& cfg, const evidence::World& world,
                           const evidence::EvidenceTable& table);

/// World, evidence table, frozen field and MACF budgets shared by every run.
struct Prepared {
  ExperimentConfig cfg;
  evidence::World world;
  evidence::EvidenceTable table;
  field::TrainedField field;
  field::FieldMetrics field_test_metrics;
  constraint::Budgets budgets;

  /// Points into this object; it must outlive the returned source.
  optim::CostSource macf_costs() const;
  std::map<std::string, std::string> checksums() const;
};

std::unique_ptr<Prepared> prepare(const ExperimentConfig& cfg);

struct RunResult {
  std::string method;
  std::uint64_t seed = 0;
  RunMetrics metrics;
  optim::Evaluation evaluation;
  std::vector<optim::UpdateReport> log;
  diff::GaussianPolicy policy;
  double seconds = 0.0;
};

/// What one training run is optimized against and how it is scored.
struct RunSetup {
  const Prepared* prepared = nullptr;
  optim::CostSource train_costs;
  constraint::Budgets train_budgets;
};

RunSetup macf_setup(const Prepared& p);

/// Trains on the train split and scores one deterministic rollout over the
/// test split. ESG violation always uses the MACF field and its budgets.
RunResult run_method(const RunSetup& setup, optim::Kind kind, std::uint64_t seed,
                     const optim::TrainHooks& hooks = {});

/// Scores a trained policy on the test split.
RunResult evaluate_run(const Prepared& p, const diff::GaussianPolicy& policy, const std::string& method,
                       std::uint64_t seed);

struct PipelineResult {
  std::unique_ptr<Prepared> prepared;
  std::vector<RunResult> runs;
  MetricsReport report;
};

MetricsReport assemble_report(const Prepared& p, const std::vector<RunResult>& runs);

PipelineResult run_pipeline(const ExperimentConfig& cfg);

// ---- ablations ----

struct InputAblationRow {
  std::string variant;
  field::FieldMetrics metrics;
  double val_loss = 0.0;
  int best_epoch = 0;
};

std::vector<InputAblationRow> run_input_ablation(const Prepared& p, const std::vector<std::string>& variants);
std::string render_input_ablation(const std::vector<InputAblationRow>& rows);

struct HeadAblationRow {
  std::uint64_t seed = 0;
  field::FieldMetrics full, scalar, oracle;
};

/// Oracle scalar: every head scored by the mean of the three targets.
field::FieldMetrics oracle_scalar_metrics(const field::FieldDataset& test);
std::vector<HeadAblationRow> run_head_ablation(const Prepared& p, const std::vector<std::uint64_t>& seeds);
std::string render_head_ablation(const std::vector<HeadAblationRow>& rows);

enum class SourceKind { macf, static_score, shuffled };
std::string_view to_string(SourceKind s);

struct SourceRun {
  SourceKind source = SourceKind::macf;
  RunMetrics metrics;
};

struct GapCell {
  SourceKind a = SourceKind::macf, b = SourceKind::static_score;
  std::string column;
  Aggregate gap;
};

/// Per seed the mean over methods of |metric_a - metric_b|, then mean and
/// std across seeds.
Aggregate pairwise_gap(const std::vector<SourceRun>& runs, SourceKind a, SourceKind b, const std::string& column);

struct SourceAblation {
  std::vector<SourceRun> runs;
  std::vector<GapCell> gaps;
  optim::Vec static_scores;
};

/// Permutation used for the shuffled source of one seed.
std::vector<int> shuffle_permutation(int n, std::uint64_t seed, bool identity);

SourceAblation run_cost_source_ablation(const Prepared& p, const std::vector<optim::Kind>& methods,
                                        const std::vector<std::uint64_t>& seeds, bool identity_shuffle,
                                        const optim::Vec* static_override = nullptr,
                                        const std::vector<RunResult>* macf_runs = nullptr);
std::vector<GapCell> gap_table(const std::vector<SourceRun>& runs);
std::string render_gap_table(const std::vector<GapCell>& gaps);

// ---- artifact io ----

void save_policy(const diff::GaussianPolicy& policy, const std::string& path);
diff::GaussianPolicy load_policy(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace macfx::harness
