#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "macfx/evidence/context.hpp"
#include "macfx/field/field.hpp"

namespace macfx::field {

/// Labeled field samples. Columns come in contiguous groups of kGridSize,
/// one group per (date, asset), ordered by increasing delta_w.
struct FieldDataset {
  Mat features;     // raw features, feature_count() x S
  Mat targets;      // y for add, hold, spill: 3 x S
  Mat uncertainty;  // u targets: 3 x S
  std::vector<int> dates;
  std::vector<int> assets;

  Eigen::Index size() const { return features.cols(); }
  Eigen::Index groups() const { return size() / kGridSize; }
};

/// Seeded near-uniform pre-trade portfolio used as the position context of
/// every sample on `date`.
market::PortfolioState reference_portfolio(int n_assets, int date, std::uint64_t seed);

FieldDataset build_dataset(const evidence::World& world, const evidence::EvidenceTable& table, int date_begin,
                           int date_end, std::uint64_t seed);

/// Per-head targets for the given model kind: the three mechanism targets,
/// or their mean for the scalar model.
Mat kind_targets(FieldKind kind, const Mat& targets);

/// Mean over the batch, summed over heads. When `grad` is set it receives
/// d loss / d outputs with the same shape as `outputs`.
double supervised_loss(FieldKind kind, const Mat& outputs, const Mat& targets, const Mat& uncertainty,
                       Mat* grad = nullptr);

/// Sum of downward steps of a score sequence ordered by delta_w.
double monotonicity_loss(std::span<const double> scores);

/// Group-averaged monotonicity loss on output row 0 (the add-exposure score).
double monotonicity_loss(const Mat& outputs, int group_size, Mat* grad = nullptr);

struct LossParts {
  double supervised = 0.0;
  double monotonicity = 0.0;
  double total = 0.0;
};

/// Total field objective on prepared inputs; `grad` receives the parameter
/// gradient of the total.
LossParts field_loss(FieldKind kind, const diff::ParamVector& params, const Mat& inputs, const Mat& targets,
                     const Mat& uncertainty, double lambda_mono, Vec* grad = nullptr);

struct FieldHparams {
  FieldKind kind = FieldKind::three_head;
  std::vector<int> hidden{64, 64};
  double lr = 1e-3;
  double weight_decay = 1e-5;
  int batch = 512;
  int max_epochs = 15;
  int patience = 4;
  double lambda_mono = 0.2;
  std::uint64_t seed = 0;
  std::set<FeatureGroup> removed;
};

class EarlyStopper {
 public:
  explicit EarlyStopper(int patience);

  /// Records one epoch's validation loss; returns true when training should stop.
  bool update(double loss);
  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  int epochs() const { return epochs_; }

 private:
  int patience_;
  int epochs_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  bool improved_ = false;
  double best_loss_;
};

struct TrainingLog {
  double initial_val_loss = 0.0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = 0;  // 0 means the initial model was never beaten
  double best_val_loss = 0.0;
  bool stopped_early = false;
};

struct TrainedField {
  FieldModel model;
  TrainingLog log;
};

/// Trains on `train`, selects by validation total loss and returns a frozen
/// model whose normalizer was fit on `train` only.
TrainedField train_field(const FieldDataset& train, const FieldDataset& val, const FieldHparams& hp);

LossParts evaluate_loss(const FieldModel& model, const FieldDataset& data, double lambda_mono);

struct HeadMetrics {
  double rmse = 0.0;
  double auc90 = 0.5;
  double lift = 1.0;
  bool degenerate = false;
};

struct FieldMetrics {
  std::array<HeadMetrics, kHeads> heads;
  double mean_rmse = 0.0;
  double mean_auc90 = 0.0;
  double mean_lift = 0.0;
};

/// Mann-Whitney ROC-AUC; `degenerate` is set and 0.5 returned when one
/// class is empty.
double roc_auc(std::span<const double> scores, std::span<const int> labels, bool* degenerate = nullptr);

/// Mean target of the top ceil(10%) scored samples over the mean target.
double top_decile_lift(std::span<const double> scores, std::span<const double> targets, bool* degenerate = nullptr);

HeadMetrics score_head(std::span<const double> scores, std::span<const double> targets);

/// Scores are 3 x S (one row per head), targets 3 x S.
FieldMetrics metrics_from_scores(const Mat& scores, const Mat& targets);

/// Primary exposure scores per head: rho_delta for add, rho_w for hold/spill.
Mat primary_scores(const FieldModel& model, const Mat& raw_features);

FieldMetrics field_metrics(const FieldModel& model, const FieldDataset& test);

nlohmann::json to_json(const FieldMetrics& m);
nlohmann::json to_json(const TrainingLog& log);

void save_field(const FieldModel& model, const std::string& path);
/// Loaded models come back frozen.
FieldModel load_field(const std::string& path);

}  // namespace macfx::field
