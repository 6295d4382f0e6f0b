#include "macfx/field/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "macfx/diffcore/solvers.hpp"
#include "macfx/errors.hpp"
#include "macfx/util/csv.hpp"
#include "macfx/util/rng.hpp"
#include "macfx/util/stats.hpp"

namespace macfx::field {

namespace {

constexpr double kResidualWeight = 0.1;
constexpr double kUncertaintyWeight = 0.4;

// Row of the primary exposure output for head k and of its complement.
int primary_row(int k) { return 3 * k + (k == 0 ? 0 : 1); }
int residual_row(int k) { return 3 * k + (k == 0 ? 1 : 0); }

}  // namespace

market::PortfolioState reference_portfolio(int n_assets, int date, std::uint64_t seed) {
  std::mt19937_64 rng(util::derive_seed(seed, static_cast<std::uint64_t>(date) + 1));
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> invested(0.85, 1.0);
  Vec w(n_assets);
  for (int i = 0; i < n_assets; ++i) w[i] = std::exp(0.5 * z(rng));
  const double alpha = invested(rng);
  w *= alpha / w.sum();
  auto s = market::PortfolioState::initial(n_assets, date);
  s.w = w;
  s.w_cash = 1.0 - w.sum();
  return s;
}

FieldDataset build_dataset(const evidence::World& world, const evidence::EvidenceTable& table, int date_begin,
                           int date_end, std::uint64_t seed) {
  if (date_begin < 0 || date_end > world.days() || date_begin >= date_end)
    throw StructuralError("empty or invalid date range for the field dataset");
  const int n = world.assets();
  const auto& sector_of = world.prices().sector_of;
  const Eigen::Index total = static_cast<Eigen::Index>(date_end - date_begin) * n * kGridSize;
  FieldDataset d;
  d.features.resize(feature_count(), total);
  d.targets.resize(kHeads, total);
  d.uncertainty.resize(kHeads, total);
  d.dates.reserve(total);
  d.assets.reserve(total);
  Eigen::Index col = 0;
  for (int t = date_begin; t < date_end; ++t) {
    const auto portfolio = reference_portfolio(n, t, seed);
    for (int i = 0; i < n; ++i) {
      for (double dw : kDeltaGrid) {
        const auto ctx = evidence::with_position(table.at(t, i), i, portfolio, sector_of, dw);
        const auto labels = evidence::weak_labels(ctx);
        d.features.col(col) = encode(ctx);
        for (int k = 0; k < kHeads; ++k) {
          d.targets(k, col) = labels.y[k];
          d.uncertainty(k, col) = labels.u[k];
        }
        d.dates.push_back(t);
        d.assets.push_back(i);
        ++col;
      }
    }
  }
  return d;
}

Mat kind_targets(FieldKind kind, const Mat& targets) {
  if (kind == FieldKind::three_head) return targets;
  return targets.colwise().mean();
}

double supervised_loss(FieldKind kind, const Mat& out, const Mat& targets, const Mat& unc, Mat* grad) {
  const Eigen::Index b = out.cols();
  if (b == 0) throw StructuralError("supervised loss on an empty batch");
  if (out.rows() != output_dim(kind) || targets.cols() != b || unc.cols() != b || targets.rows() != kHeads ||
      unc.rows() != kHeads)
    throw StructuralError("supervised loss shape mismatch");
  if (grad) grad->setZero(out.rows(), b);
  const double inv_b = 1.0 / static_cast<double>(b);
  double loss = 0.0;
  if (kind == FieldKind::scalar) {
    const Mat y = kind_targets(kind, targets);
    const Mat u = kind_targets(kind, unc);
    for (Eigen::Index c = 0; c < b; ++c) {
      const double d = out(0, c) - y(0, c);
      const double e = out(1, c) - u(0, c);
      loss += d * d + kUncertaintyWeight * e * e;
      if (grad) {
        (*grad)(0, c) = 2.0 * d * inv_b;
        (*grad)(1, c) = 2.0 * kUncertaintyWeight * e * inv_b;
      }
    }
    return loss * inv_b;
  }
  for (Eigen::Index c = 0; c < b; ++c) {
    for (int k = 0; k < kHeads; ++k) {
      const int p = primary_row(k), r = residual_row(k), q = 3 * k + 2;
      const double d = out(p, c) - targets(k, c);
      const double res = out(r, c);
      const double e = out(q, c) - unc(k, c);
      loss += d * d + kResidualWeight * res * res + kUncertaintyWeight * e * e;
      if (grad) {
        (*grad)(p, c) = 2.0 * d * inv_b;
        (*grad)(r, c) = 2.0 * kResidualWeight * res * inv_b;
        (*grad)(q, c) = 2.0 * kUncertaintyWeight * e * inv_b;
      }
    }
  }
  return loss * inv_b;
}

double monotonicity_loss(std::span<const double> s) {
  double loss = 0.0;
  for (std::size_t j = 0; j + 1 < s.size(); ++j) loss += std::max(0.0, s[j] - s[j + 1]);
  return loss;
}

double monotonicity_loss(const Mat& out, int group_size, Mat* grad) {
  if (group_size < 1 || out.cols() % group_size != 0)
    throw StructuralError("batch does not consist of whole delta-w groups");
  const Eigen::Index groups = out.cols() / group_size;
  if (grad) grad->setZero(out.rows(), out.cols());
  if (groups == 0) return 0.0;
  const double inv_g = 1.0 / static_cast<double>(groups);
  double loss = 0.0;
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (int j = 0; j + 1 < group_size; ++j) {
      const Eigen::Index a = g * group_size + j;
      const double step = out(0, a) - out(0, a + 1);
      if (step > 0.0) {
        loss += step;
        if (grad) {
          (*grad)(0, a) += inv_g;
          (*grad)(0, a + 1) -= inv_g;
        }
      }
    }
  }
  return loss * inv_g;
}

LossParts field_loss(FieldKind kind, const diff::ParamVector& params, const Mat& inputs, const Mat& targets,
                     const Mat& unc, double lambda_mono, Vec* grad) {
  diff::ForwardTape tape;
  const Mat out = diff::forward_batch(params, inputs, grad ? &tape : nullptr);
  LossParts parts;
  Mat g_sup, g_mono;
  parts.supervised = supervised_loss(kind, out, targets, unc, grad ? &g_sup : nullptr);
  if (lambda_mono != 0.0) parts.monotonicity = monotonicity_loss(out, kGridSize, grad ? &g_mono : nullptr);
  parts.total = parts.supervised + lambda_mono * parts.monotonicity;
  if (!std::isfinite(parts.total)) throw NumericError("field loss is not finite");
  if (grad) {
    if (lambda_mono != 0.0) g_sup += lambda_mono * g_mono;
    *grad = diff::backward(params, tape, g_sup);
  }
  return parts;
}

EarlyStopper::EarlyStopper(int patience) : patience_(patience), best_loss_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw ContractError("patience must be positive");
}

bool EarlyStopper::update(double loss) {
  ++epochs_;
  improved_ = loss < best_loss_;
  if (improved_) {
    best_loss_ = loss;
    best_epoch_ = epochs_;
    since_best_ = 0;
  } else {
    ++since_best_;
  }
  return since_best_ >= patience_;
}

LossParts evaluate_loss(const FieldModel& model, const FieldDataset& data, double lambda_mono) {
  if (data.size() == 0) throw StructuralError("loss on an empty split");
  return field_loss(model.kind(), model.params(), model.prepare(data.features), data.targets, data.uncertainty,
                    lambda_mono);
}

TrainedField train_field(const FieldDataset& train, const FieldDataset& val, const FieldHparams& hp) {
  if (train.size() == 0 || val.size() == 0) throw StructuralError("field training needs nonempty train and val splits");
  if (train.size() % kGridSize != 0 || val.size() % kGridSize != 0)
    throw StructuralError("field splits must consist of whole delta-w groups");
  FieldModel model =
      FieldModel::create(hp.kind, hp.hidden, hp.seed, Normalizer::fit(train.features), hp.removed);
  const Mat x_train = model.prepare(train.features);
  const Mat x_val = model.prepare(val.features);
  const auto val_loss = [&](const diff::ParamVector& p) {
    return field_loss(hp.kind, p, x_val, val.targets, val.uncertainty, hp.lambda_mono).total;
  };

  TrainedField result;
  auto& log = result.log;
  log.initial_val_loss = val_loss(model.params());

  diff::ParamVector params = model.params();
  Vec best = params.values;
  diff::Adam adam(params.size(), {.lr = hp.lr, .weight_decay = hp.weight_decay});
  EarlyStopper stopper(hp.patience);
  std::mt19937_64 rng(util::derive_seed(hp.seed, 0xf1e1d));
  std::vector<Eigen::Index> order(train.groups());
  std::iota(order.begin(), order.end(), 0);
  const int groups_per_batch = std::max(1, hp.batch / kGridSize);
  std::vector<Eigen::Index> cols;
  Vec grad;

  for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += groups_per_batch) {
      const std::size_t stop = std::min(order.size(), start + groups_per_batch);
      cols.clear();
      for (std::size_t g = start; g < stop; ++g)
        for (int j = 0; j < kGridSize; ++j) cols.push_back(order[g] * kGridSize + j);
      const Mat xb = x_train(Eigen::all, cols);
      const Mat yb = train.targets(Eigen::all, cols);
      const Mat ub = train.uncertainty(Eigen::all, cols);
      const auto parts = field_loss(hp.kind, params, xb, yb, ub, hp.lambda_mono, &grad);
      epoch_loss += parts.total * static_cast<double>(cols.size());
      adam.step(params.values, grad);
    }
    params.check_finite();
    log.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
    log.val_loss.push_back(val_loss(params));
    const bool stop = stopper.update(log.val_loss.back());
    if (stopper.improved()) best = params.values;
    if (stop) {
      log.stopped_early = epoch < hp.max_epochs;
      break;
    }
  }
  if (stopper.best_loss() < log.initial_val_loss) {
    log.best_epoch = stopper.best_epoch();
    log.best_val_loss = stopper.best_loss();
    model.set_params(best);
  } else {
    log.best_epoch = 0;
    log.best_val_loss = log.initial_val_loss;
  }
  model.freeze();
  result.model = std::move(model);
  return result;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels, bool* degenerate) {
  if (scores.size() != labels.size()) throw StructuralError("scores and labels differ in length");
  const auto ranks = util::average_ranks(scores);
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i]) {
      pos += 1.0;
      rank_sum += ranks[i];
    }
  const double neg = static_cast<double>(labels.size()) - pos;
  const bool bad = pos == 0.0 || neg == 0.0;
  if (degenerate) *degenerate = bad;
  if (bad) return 0.5;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double top_decile_lift(std::span<const double> scores, std::span<const double> targets, bool* degenerate) {
  if (scores.size() != targets.size() || scores.empty()) throw StructuralError("lift needs matching nonempty inputs");
  const double base = util::mean(targets);
  if (degenerate) *degenerate = base <= 0.0;
  if (base <= 0.0) return 1.0;
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto top = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(scores.size())));
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  for (std::size_t i = 0; i < top; ++i) sum += targets[idx[i]];
  return (sum / static_cast<double>(top)) / base;
}

HeadMetrics score_head(std::span<const double> scores, std::span<const double> targets) {
  if (scores.size() != targets.size() || scores.empty()) throw StructuralError("metrics need matching nonempty inputs");
  HeadMetrics h;
  double se = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) se += (scores[i] - targets[i]) * (scores[i] - targets[i]);
  h.rmse = std::sqrt(se / static_cast<double>(scores.size()));
  const double thr = util::quantile_type7({targets.begin(), targets.end()}, 0.9);
  std::vector<int> labels(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) labels[i] = targets[i] > thr ? 1 : 0;
  bool auc_bad = false, lift_bad = false;
  h.auc90 = roc_auc(scores, labels, &auc_bad);
  h.lift = top_decile_lift(scores, targets, &lift_bad);
  h.degenerate = auc_bad || lift_bad;
  return h;
}

FieldMetrics metrics_from_scores(const Mat& scores, const Mat& targets) {
  if (scores.rows() != kHeads || targets.rows() != kHeads || scores.cols() != targets.cols())
    throw StructuralError("metrics expect 3 x S scores and targets");
  if (scores.cols() == 0) throw StructuralError("metrics on an empty test set");
  FieldMetrics m;
  for (int k = 0; k < kHeads; ++k) {
    const Vec s = scores.row(k).transpose();
    const Vec y = targets.row(k).transpose();
    m.heads[k] = score_head({s.data(), static_cast<std::size_t>(s.size())}, {y.data(), static_cast<std::size_t>(y.size())});
    m.mean_rmse += m.heads[k].rmse / kHeads;
    m.mean_auc90 += m.heads[k].auc90 / kHeads;
    m.mean_lift += m.heads[k].lift / kHeads;
  }
  return m;
}

Mat primary_scores(const FieldModel& model, const Mat& raw_features) {
  const Mat out = model.forward_prepared(model.prepare(raw_features));
  Mat s(kHeads, out.cols());
  for (int k = 0; k < kHeads; ++k) s.row(k) = out.row(model.kind() == FieldKind::three_head ? primary_row(k) : 0);
  return s;
}

FieldMetrics field_metrics(const FieldModel& model, const FieldDataset& test) {
  if (test.size() == 0) throw StructuralError("metrics on an empty test set");
  return metrics_from_scores(primary_scores(model, test.features), test.targets);
}

nlohmann::json to_json(const FieldMetrics& m) {
  static const char* names[kHeads] = {"add", "hold", "spill"};
  nlohmann::json j;
  for (int k = 0; k < kHeads; ++k)
    j["heads"][names[k]] = {{"rmse", m.heads[k].rmse},
                            {"auc90", m.heads[k].auc90},
                            {"lift", m.heads[k].lift},
                            {"degenerate", m.heads[k].degenerate}};
  j["mean"] = {{"rmse", m.mean_rmse}, {"auc90", m.mean_auc90}, {"lift", m.mean_lift}};
  return j;
}

nlohmann::json to_json(const TrainingLog& log) {
  return {{"initial_val_loss", log.initial_val_loss}, {"train_loss", log.train_loss},
          {"val_loss", log.val_loss},                 {"best_epoch", log.best_epoch},
          {"best_val_loss", log.best_val_loss},       {"stopped_early", log.stopped_early}};
}

void save_field(const FieldModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw StructuralError("cannot write field checkpoint " + path);
  const auto& p = model.params();
  out << "macfx-field 1\n";
  out << "kind " << (model.kind() == FieldKind::three_head ? "three_head" : "scalar") << "\n";
  out << "layers " << p.layout.size() << "\n";
  for (const auto& l : p.layout) out << l.in << " " << l.out << " " << diff::to_string(l.act) << "\n";
  out << "removed " << model.removed().size();
  for (auto g : model.removed()) out << " " << to_string(g);
  out << "\nnormalizer " << model.normalizer().mean.size() << "\n";
  for (Eigen::Index i = 0; i < model.normalizer().mean.size(); ++i)
    out << util::format_double(model.normalizer().mean[i]) << " " << util::format_double(model.normalizer().stddev[i])
        << "\n";
  out << "params " << p.size() << "\n";
  for (Eigen::Index i = 0; i < p.size(); ++i) out << util::format_double(p.values[i]) << "\n";
  out << "checksum " << util::hex64(model.checksum()) << "\n";
  if (!out) throw StructuralError("failed writing field checkpoint " + path);
}

FieldModel load_field(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open field checkpoint " + path);
  const auto expect = [&](const char* word) {
    std::string w;
    if (!(in >> w) || w != word) throw StructuralError(std::string("field checkpoint: expected '") + word + "'");
  };
  int version = 0;
  expect("macfx-field");
  in >> version;
  if (version != 1) throw StructuralError("unsupported field checkpoint version");
  std::string kind_name;
  expect("kind");
  in >> kind_name;
  FieldKind kind;
  if (kind_name == "three_head") kind = FieldKind::three_head;
  else if (kind_name == "scalar") kind = FieldKind::scalar;
  else throw StructuralError("field checkpoint: unknown kind " + kind_name);
  std::size_t n_layers = 0;
  expect("layers");
  in >> n_layers;
  diff::Layout layout(n_layers);
  for (auto& l : layout) {
    std::string act;
    in >> l.in >> l.out >> act;
    l.act = diff::activation_from_string(act);
  }
  std::size_t n_removed = 0;
  expect("removed");
  in >> n_removed;
  std::set<FeatureGroup> removed;
  for (std::size_t i = 0; i < n_removed; ++i) {
    std::string g;
    in >> g;
    const auto one = parse_removal(g);
    removed.insert(one.begin(), one.end());
  }
  Eigen::Index n_features = 0;
  expect("normalizer");
  in >> n_features;
  Normalizer norm;
  norm.mean.resize(n_features);
  norm.stddev.resize(n_features);
  for (Eigen::Index i = 0; i < n_features; ++i) {
    std::string m, s;
    in >> m >> s;
    norm.mean[i] = util::parse_double(m);
    norm.stddev[i] = util::parse_double(s);
  }
  Eigen::Index n_params = 0;
  expect("params");
  in >> n_params;
  Vec values(n_params);
  for (Eigen::Index i = 0; i < n_params; ++i) {
    std::string v;
    in >> v;
    values[i] = util::parse_double(v);
  }
  std::string sum;
  expect("checksum");
  in >> sum;
  if (!in) throw StructuralError("truncated field checkpoint " + path);
  FieldModel model(kind, diff::ParamVector(std::move(layout), std::move(values)), std::move(norm), std::move(removed));
  if (util::hex64(model.checksum()) != sum) throw StructuralError("field checkpoint checksum mismatch");
  model.freeze();
  return model;
}

}  // namespace macfx::field
