#include "macfx/field/field.hpp"

#include <cmath>

#include "macfx/errors.hpp"
#include "macfx/util/csv.hpp"

namespace macfx::field {

const std::vector<FeatureSpec>& feature_catalog() {
  static const std::vector<FeatureSpec> catalog = {
      {"last_severity", FeatureGroup::micro, false},
      {"days_since_severe", FeatureGroup::micro, false},
      {"unresolved_count", FeatureGroup::firm_memory, false},
      {"unresolved_fraction", FeatureGroup::firm_memory, false},
      {"event_count_90d", FeatureGroup::firm_memory, false},
      {"mean_severity_90d", FeatureGroup::firm_memory, false},
      {"repeat_flag", FeatureGroup::firm_memory, true},
      {"peer_mean_pressure", FeatureGroup::meso, false},
      {"peer_highsev_rate_30d", FeatureGroup::meso, false},
      {"vol_regime_low", FeatureGroup::macro, true},
      {"vol_regime_mid", FeatureGroup::macro, true},
      {"vol_regime_high", FeatureGroup::macro, true},
      {"stress", FeatureGroup::macro, true},
      {"anchored_fraction_90d", FeatureGroup::anchor, false},
      {"days_since_anchored", FeatureGroup::anchor, false},
      {"last_severe_anchored", FeatureGroup::anchor, true},
      {"weight", FeatureGroup::portfolio, false},
      {"sector_exposure", FeatureGroup::portfolio, false},
      {"cash", FeatureGroup::portfolio, false},
      {"delta_w", FeatureGroup::action, false},
  };
  return catalog;
}

int feature_count() { return static_cast<int>(feature_catalog().size()); }

std::string_view to_string(FeatureGroup g) {
  switch (g) {
    case FeatureGroup::micro: return "micro";
    case FeatureGroup::firm_memory: return "firm_memory";
    case FeatureGroup::meso: return "meso";
    case FeatureGroup::macro: return "macro";
    case FeatureGroup::anchor: return "anchor";
    case FeatureGroup::portfolio: return "portfolio";
    case FeatureGroup::action: return "action";
  }
  return "micro";
}

std::set<FeatureGroup> parse_removal(const std::string& name) {
  if (name.empty() || name == "none") return {};
  if (name == "all_dynamic")
    return {FeatureGroup::micro, FeatureGroup::firm_memory, FeatureGroup::meso, FeatureGroup::macro,
            FeatureGroup::anchor, FeatureGroup::action};
  for (auto g : {FeatureGroup::micro, FeatureGroup::firm_memory, FeatureGroup::meso, FeatureGroup::macro,
                 FeatureGroup::anchor, FeatureGroup::portfolio, FeatureGroup::action})
    if (name == to_string(g)) return {g};
  throw StructuralError("unknown feature group '" + name + "'");
}

Vec encode(const evidence::EvidenceContext& c) {
  Vec f(feature_count());
  f << c.last_severity, c.days_since_severe, c.unresolved_count, c.unresolved_fraction, c.event_count_90d,
      c.mean_severity_90d, c.repeat_flag, c.peer_mean_pressure, c.peer_highsev_rate_30d,
      c.vol_regime == 0 ? 1.0 : 0.0, c.vol_regime == 1 ? 1.0 : 0.0, c.vol_regime == 2 ? 1.0 : 0.0, c.stress,
      c.anchored_fraction_90d, c.days_since_anchored, c.last_severe_anchored, c.weight, c.sector_exposure, c.cash,
      c.delta_w;
  const auto& cat = feature_catalog();
  for (int i = 0; i < f.size(); ++i)
    if (!std::isfinite(f[i])) throw NumericError(std::string("feature '") + cat[i].name + "' is not finite");
  return f;
}

Normalizer Normalizer::fit(const Mat& raw) {
  if (raw.cols() == 0) throw StructuralError("cannot fit a normalizer on an empty split");
  Normalizer n;
  const auto& cat = feature_catalog();
  n.mean = Vec::Zero(raw.rows());
  n.stddev = Vec::Ones(raw.rows());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    if (cat[i].is_flag) continue;
    const double m = raw.row(i).mean();
    const double var = (raw.row(i).array() - m).square().mean();
    n.mean[i] = m;
    n.stddev[i] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return n;
}

Mat Normalizer::apply(const Mat& raw) const {
  if (!fitted()) throw StructuralError("normalizer has not been fitted");
  if (raw.rows() != mean.size()) throw StructuralError("feature width does not match the normalizer");
  return ((raw.colwise() - mean).array().colwise() / stddev.array()).matrix();
}

int output_dim(FieldKind kind) { return kind == FieldKind::three_head ? 3 * kHeads : 2; }

FieldModel::FieldModel(FieldKind kind, diff::ParamVector params, Normalizer norm, std::set<FeatureGroup> removed)
    : kind_(kind), params_(std::move(params)), norm_(std::move(norm)), removed_(std::move(removed)) {
  if (params_.input_dim() != feature_count()) throw StructuralError("field input width does not match the catalog");
  if (params_.output_dim() != output_dim(kind_)) throw StructuralError("field output width does not match its kind");
  if (params_.layout.back().act != diff::Activation::sigmoid)
    throw StructuralError("field heads must end in a sigmoid");
  if (norm_.fitted() && norm_.mean.size() != feature_count())
    throw StructuralError("normalizer width does not match the catalog");
}

FieldModel FieldModel::create(FieldKind kind, const std::vector<int>& hidden, std::uint64_t seed, Normalizer norm,
                              std::set<FeatureGroup> removed) {
  const auto layout =
      diff::make_layout(feature_count(), hidden, output_dim(kind), diff::Activation::tanh, diff::Activation::sigmoid);
  return FieldModel(kind, diff::init_params(layout, seed, 1.0), std::move(norm), std::move(removed));
}

void FieldModel::set_params(const Vec& values) {
  if (frozen_) throw ContractError("field model is frozen");
  params_ = diff::ParamVector(params_.layout, values);
}

Mat FieldModel::prepare(const Mat& raw) const {
  Mat x = norm_.apply(raw);
  const auto& cat = feature_catalog();
  for (int i = 0; i < feature_count(); ++i)
    if (removed_.count(cat[i].group)) x.row(i).setZero();
  return x;
}

Mat FieldModel::forward_prepared(const Mat& inputs, diff::ForwardTape* tape) const {
  return diff::forward_batch(params_, inputs, tape);
}

FieldOutput FieldModel::unpack(FieldKind kind, const Mat& out, Eigen::Index col) {
  FieldOutput o;
  for (int k = 0; k < kHeads; ++k) {
    if (kind == FieldKind::three_head) {
      o.rho_delta[k] = out(3 * k, col);
      o.rho_w[k] = out(3 * k + 1, col);
      o.u[k] = out(3 * k + 2, col);
    } else {
      o.rho_delta[k] = out(0, col);
      o.rho_w[k] = out(0, col);
      o.u[k] = out(1, col);
    }
  }
  return o;
}

FieldOutput FieldModel::forward(const evidence::EvidenceContext& ctx) const {
  const Mat out = forward_prepared(prepare(encode(ctx)));
  return unpack(kind_, out, 0);
}

std::vector<FieldOutput> FieldModel::forward(const std::vector<evidence::EvidenceContext>& ctxs) const {
  Mat raw(feature_count(), static_cast<Eigen::Index>(ctxs.size()));
  for (std::size_t i = 0; i < ctxs.size(); ++i) raw.col(i) = encode(ctxs[i]);
  const Mat out = forward_prepared(prepare(raw));
  std::vector<FieldOutput> res;
  res.reserve(ctxs.size());
  for (std::size_t i = 0; i < ctxs.size(); ++i) res.push_back(unpack(kind_, out, i));
  return res;
}

std::uint64_t FieldModel::checksum() const {
  std::uint64_t h = util::fnv1a(params_.values.data(), sizeof(double) * params_.values.size());
  if (norm_.fitted()) {
    h = util::fnv1a(norm_.mean.data(), sizeof(double) * norm_.mean.size(), h);
    h = util::fnv1a(norm_.stddev.data(), sizeof(double) * norm_.stddev.size(), h);
  }
  for (auto g : removed_) {
    const int v = static_cast<int>(g);
    h = util::fnv1a(&v, sizeof v, h);
  }
  return h;
}

}  // namespace macfx::field
