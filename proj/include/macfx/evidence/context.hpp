#pragma once

#include <array>
#include <vector>

#include "macfx/evidence/world.hpp"
#include "macfx/market/market.hpp"

namespace macfx::evidence {

inline constexpr int kDaysSentinel = 365;

/// Point-in-time ESG context for one (asset, date, candidate trade).
struct EvidenceContext {
  // micro / firm memory
  double last_severity = 0.0;
  double days_since_severe = kDaysSentinel;
  double unresolved_count = 0.0;
  double event_count_90d = 0.0;
  double mean_severity_90d = 0.0;
  double repeat_flag = 0.0;
  double unresolved_fraction = 0.0;
  // meso (sector peers)
  double peer_mean_pressure = 0.0;
  double peer_highsev_rate_30d = 0.0;
  // macro
  int vol_regime = 0;
  double stress = 0.0;
  // anchor
  double anchored_fraction_90d = 0.0;
  double days_since_anchored = kDaysSentinel;
  double last_severe_anchored = 0.0;
  // portfolio, pre-trade
  double weight = 0.0;
  double sector_exposure = 0.0;
  double cash = 0.0;
  // contemplated trade
  double delta_w = 0.0;

  /// Throws NumericError/StructuralError when a feature is out of range.
  void validate() const;

  bool operator==(const EvidenceContext&) const = default;
};

/// Evidence part only (portfolio and trade fields left at zero).
EvidenceContext build_evidence(const World& world, int asset, int date);

EvidenceContext build_context(const World& world, int asset, int date, const market::PortfolioState& portfolio,
                              double delta_w);

/// Fills the portfolio and trade fields of an evidence context.
EvidenceContext with_position(EvidenceContext ctx, int asset, const market::PortfolioState& portfolio,
                              const std::vector<int>& sector_of, double delta_w);

/// Cached evidence for every (date, asset) of a world.
class EvidenceTable {
 public:
  EvidenceTable() = default;
  explicit EvidenceTable(const World& world);

  const EvidenceContext& at(int date, int asset) const;
  int days() const { return days_; }
  int assets() const { return assets_; }

 private:
  int days_ = 0;
  int assets_ = 0;
  std::vector<EvidenceContext> cells_;
};

struct WeakLabels {
  std::array<double, 3> y{};  // add, hold, spill
  std::array<double, 3> u{};
};

double buy_gate(double delta_w);
WeakLabels weak_labels(const EvidenceContext& ctx);

}  // namespace macfx::evidence
