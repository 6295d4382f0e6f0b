#include "macfx/evidence/context.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "macfx/errors.hpp"

namespace macfx::evidence {

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

// Recency weight that vanishes at the "never seen" sentinel.
double recency(double days, double scale) { return days >= kDaysSentinel ? 0.0 : std::exp(-days / scale); }

void check(bool ok, const char* name) {
  if (!ok) throw StructuralError(std::string("context feature '") + name + "' out of range");
}

double peer_pressure(const std::vector<EventRecord>& evs, int date) {
  double p = 0.0;
  for (const auto& e : evs) {
    if (e.date > date) break;
    const int age = date - e.date;
    if (age < 90) p += e.severity * std::exp(-age / 30.0);
  }
  return std::min(1.0, p);
}

bool severe_within(const std::vector<EventRecord>& evs, int date, int window, double threshold) {
  for (const auto& e : evs) {
    if (e.date > date) break;
    if (date - e.date < window && e.severity > threshold) return true;
  }
  return false;
}

}  // namespace

void EvidenceContext::validate() const {
  const std::pair<const char*, double> all[] = {
      {"last_severity", last_severity},
      {"days_since_severe", days_since_severe},
      {"unresolved_count", unresolved_count},
      {"event_count_90d", event_count_90d},
      {"mean_severity_90d", mean_severity_90d},
      {"repeat_flag", repeat_flag},
      {"unresolved_fraction", unresolved_fraction},
      {"peer_mean_pressure", peer_mean_pressure},
      {"peer_highsev_rate_30d", peer_highsev_rate_30d},
      {"vol_regime", static_cast<double>(vol_regime)},
      {"stress", stress},
      {"anchored_fraction_90d", anchored_fraction_90d},
      {"days_since_anchored", days_since_anchored},
      {"last_severe_anchored", last_severe_anchored},
      {"weight", weight},
      {"sector_exposure", sector_exposure},
      {"cash", cash},
      {"delta_w", delta_w},
  };
  for (const auto& [name, v] : all)
    if (!std::isfinite(v)) throw NumericError(std::string("context feature '") + name + "' is not finite");
  const auto is_flag = [](double v) { return v == 0.0 || v == 1.0; };
  check(is_flag(repeat_flag), "repeat_flag");
  check(is_flag(stress), "stress");
  check(is_flag(last_severe_anchored), "last_severe_anchored");
  check(vol_regime >= 0 && vol_regime <= 2, "vol_regime");
  for (const auto& [name, v] : {std::pair{"last_severity", last_severity},
                                std::pair{"mean_severity_90d", mean_severity_90d},
                                std::pair{"unresolved_fraction", unresolved_fraction},
                                std::pair{"peer_mean_pressure", peer_mean_pressure},
                                std::pair{"peer_highsev_rate_30d", peer_highsev_rate_30d},
                                std::pair{"anchored_fraction_90d", anchored_fraction_90d}})
    check(v >= 0.0 && v <= 1.0, name);
  check(days_since_severe >= 0 && days_since_severe <= kDaysSentinel, "days_since_severe");
  check(days_since_anchored >= 0 && days_since_anchored <= kDaysSentinel, "days_since_anchored");
  check(unresolved_count >= 0 && unresolved_count <= event_count_90d, "unresolved_count");
}

EvidenceContext build_evidence(const World& world, int asset, int date) {
  if (date < 0 || date >= world.days()) throw StructuralError("date " + std::to_string(date) + " outside the world");
  const auto& evs = world.asset_events(asset);
  const double thr = world.config().severe_threshold;
  EvidenceContext c;
  int last_severe = -1, last_anchored = -1;
  bool last_severe_anch = false;
  int severe_90 = 0, anchored_90 = 0;
  double sev_sum_90 = 0.0;
  for (const auto& e : evs) {
    if (e.date > date) break;  // point-in-time: only events dated on or before `date`
    c.last_severity = e.severity;
    if (e.severity > thr) {
      last_severe = e.date;
      last_severe_anch = e.anchored;
    }
    if (e.anchored) last_anchored = e.date;
    if (date - e.date < 90) {
      c.event_count_90d += 1;
      sev_sum_90 += e.severity;
      if (e.anchored) ++anchored_90;
      if (e.severity > thr) ++severe_90;
      const bool cleared = e.resolved && e.date + e.persistence_days <= date;
      if (!cleared) c.unresolved_count += 1;
    }
  }
  if (last_severe >= 0) c.days_since_severe = std::min(kDaysSentinel, date - last_severe);
  if (last_anchored >= 0) c.days_since_anchored = std::min(kDaysSentinel, date - last_anchored);
  c.last_severe_anchored = (last_severe >= 0 && c.days_since_severe < kDaysSentinel && last_severe_anch) ? 1.0 : 0.0;
  if (c.event_count_90d > 0) {
    c.mean_severity_90d = sev_sum_90 / c.event_count_90d;
    c.anchored_fraction_90d = anchored_90 / c.event_count_90d;
  }
  c.unresolved_fraction = c.unresolved_count / std::max(1.0, c.event_count_90d);
  c.repeat_flag = severe_90 >= 2 ? 1.0 : 0.0;

  const auto& sector_of = world.prices().sector_of;
  int peers = 0, peers_hot = 0;
  double pressure = 0.0;
  for (int j = 0; j < world.assets(); ++j) {
    if (j == asset || sector_of[j] != sector_of[asset]) continue;
    ++peers;
    const auto& pe = world.asset_events(j);
    pressure += peer_pressure(pe, date);
    if (severe_within(pe, date, 30, thr)) ++peers_hot;
  }
  if (peers > 0) {
    c.peer_mean_pressure = pressure / peers;
    c.peer_highsev_rate_30d = static_cast<double>(peers_hot) / peers;
  }
  c.vol_regime = world.macro().vol_regime[date];
  c.stress = world.macro().stress[date];
  return c;
}

EvidenceContext with_position(EvidenceContext ctx, int asset, const market::PortfolioState& portfolio,
                              const std::vector<int>& sector_of, double delta_w) {
  if (asset < 0 || asset >= portfolio.w.size()) throw StructuralError("unknown asset " + std::to_string(asset));
  ctx.weight = portfolio.w[asset];
  double exposure = 0.0;
  for (Eigen::Index j = 0; j < portfolio.w.size(); ++j)
    if (sector_of[j] == sector_of[asset]) exposure += portfolio.w[j];
  ctx.sector_exposure = exposure;
  ctx.cash = portfolio.w_cash;
  ctx.delta_w = delta_w;
  return ctx;
}

EvidenceContext build_context(const World& world, int asset, int date, const market::PortfolioState& portfolio,
                              double delta_w) {
  return with_position(build_evidence(world, asset, date), asset, portfolio, world.prices().sector_of, delta_w);
}

EvidenceTable::EvidenceTable(const World& world) : days_(world.days()), assets_(world.assets()) {
  cells_.reserve(static_cast<std::size_t>(days_) * assets_);
  for (int t = 0; t < days_; ++t)
    for (int i = 0; i < assets_; ++i) cells_.push_back(build_evidence(world, i, t));
}

const EvidenceContext& EvidenceTable::at(int date, int asset) const {
  if (date < 0 || date >= days_ || asset < 0 || asset >= assets_)
    throw StructuralError("evidence lookup outside the table");
  return cells_[static_cast<std::size_t>(date) * assets_ + asset];
}

double buy_gate(double delta_w) { return std::min(1.0, std::max(0.0, delta_w) / 0.05); }

WeakLabels weak_labels(const EvidenceContext& c) {
  WeakLabels l;
  const double fresh_severe = recency(c.days_since_severe, 30.0);
  l.y[0] = clamp01((c.last_severity * fresh_severe * (1.0 + 0.5 * c.last_severe_anchored) + 0.1 * c.repeat_flag) *
                   buy_gate(c.delta_w));
  l.y[1] = clamp01(0.5 * c.unresolved_fraction + 0.3 * c.mean_severity_90d + 0.2 * recency(c.days_since_severe, 60.0));
  l.y[2] = clamp01(0.6 * c.peer_mean_pressure + 0.3 * c.peer_highsev_rate_30d + 0.1 * c.stress);
  const double coverage = std::min(1.0, c.event_count_90d / 5.0);
  const double u = std::clamp(0.7 * (1.0 - coverage) + 0.3 * (1.0 - c.anchored_fraction_90d), 0.05, 1.0);
  l.u = {u, u, u};
  return l;
}

}  // namespace macfx::evidence
