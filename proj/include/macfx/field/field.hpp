#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "macfx/diffcore/mlp.hpp"
#include "macfx/evidence/context.hpp"

namespace macfx::field {

using diff::Mat;
using diff::Vec;

inline constexpr int kHeads = 3;  // add, hold, spill
inline constexpr int kGridSize = 5;
inline constexpr std::array<double, kGridSize> kDeltaGrid{-0.05, -0.02, 0.0, 0.02, 0.05};

enum class FeatureGroup { micro, firm_memory, meso, macro, anchor, portfolio, action };

struct FeatureSpec {
  const char* name;
  FeatureGroup group;
  bool is_flag;  // flags are fed raw, everything else is z-scored
};

const std::vector<FeatureSpec>& feature_catalog();
int feature_count();

std::string_view to_string(FeatureGroup g);

/// Parses an ablation name; "all_dynamic" expands to every evidence group
/// plus the trade itself, leaving only the portfolio block.
std::set<FeatureGroup> parse_removal(const std::string& name);

/// Raw (un-normalized) feature vector in catalog order.
Vec encode(const evidence::EvidenceContext& ctx);

struct Normalizer {
  Vec mean;
  Vec stddev;

  bool fitted() const { return mean.size() > 0; }
  static Normalizer fit(const Mat& raw_features);
  Mat apply(const Mat& raw_features) const;
};

struct FieldOutput {
  std::array<double, kHeads> rho_delta{};
  std::array<double, kHeads> rho_w{};
  std::array<double, kHeads> u{};
};

enum class FieldKind { three_head, scalar };

/// Shared backbone with sigmoid heads. The three-head model emits 9 outputs
/// at index 3k + {0: rho_delta, 1: rho_w, 2: u}; the scalar model emits a
/// single shared score and uncertainty (index 0, 1) used for every head.
class FieldModel {
 public:
  FieldModel() = default;
  FieldModel(FieldKind kind, diff::ParamVector params, Normalizer norm, std::set<FeatureGroup> removed);

  static FieldModel create(FieldKind kind, const std::vector<int>& hidden, std::uint64_t seed, Normalizer norm,
                           std::set<FeatureGroup> removed);

  FieldKind kind() const { return kind_; }
  const diff::ParamVector& params() const { return params_; }
  const Normalizer& normalizer() const { return norm_; }
  const std::set<FeatureGroup>& removed() const { return removed_; }
  bool frozen() const { return frozen_; }

  void freeze() { frozen_ = true; }
  /// Throws ContractError once frozen.
  void set_params(const Vec& values);

  /// Normalized, ablation-masked network input for raw feature columns.
  Mat prepare(const Mat& raw_features) const;
  /// Raw network outputs for prepared inputs.
  Mat forward_prepared(const Mat& inputs, diff::ForwardTape* tape = nullptr) const;

  FieldOutput forward(const evidence::EvidenceContext& ctx) const;
  std::vector<FieldOutput> forward(const std::vector<evidence::EvidenceContext>& ctxs) const;

  static FieldOutput unpack(FieldKind kind, const Mat& outputs, Eigen::Index col);

  std::uint64_t checksum() const;

 private:
  FieldKind kind_ = FieldKind::three_head;
  diff::ParamVector params_;
  Normalizer norm_;
  std::set<FeatureGroup> removed_;
  bool frozen_ = false;
};

int output_dim(FieldKind kind);

}  // namespace macfx::field
