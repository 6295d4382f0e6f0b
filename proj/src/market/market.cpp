#include "macfx/market/market.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "macfx/errors.hpp"
#include "macfx/util/csv.hpp"

namespace macfx::market {

namespace {

constexpr double kTiny = 1e-15;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vec sector_sums(const Vec& w, const std::vector<int>& sector_of) {
  Vec s = Vec::Zero(kSectors);
  for (Eigen::Index i = 0; i < w.size(); ++i) s[sector_of[i]] += w[i];
  return s;
}

// Clip-and-redistribute until both caps hold; the total stays fixed except for
// whatever the final hard clip sends to cash.
void enforce_caps(Vec& w, const std::vector<int>& sector_of, const EnvConstants& k) {
  const Eigen::Index n = w.size();
  std::vector<bool> name_full(n, false);
  std::vector<bool> sector_full(kSectors, false);
  for (Eigen::Index round = 0; round < n; ++round) {
    double excess = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w[i] > k.name_cap) {
        excess += w[i] - k.name_cap;
        w[i] = k.name_cap;
        name_full[i] = true;
      }
    }
    const Vec ss = sector_sums(w, sector_of);
    for (int s = 0; s < kSectors; ++s) {
      if (ss[s] > k.sector_cap) {
        const double scale = k.sector_cap / ss[s];
        for (Eigen::Index i = 0; i < n; ++i)
          if (sector_of[i] == s) w[i] *= scale;
        excess += ss[s] - k.sector_cap;
        sector_full[s] = true;
      }
    }
    if (excess <= kTiny) return;
    double recv_mass = 0.0;
    int recv_count = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!name_full[i] && !sector_full[sector_of[i]]) {
        recv_mass += w[i];
        ++recv_count;
      }
    }
    if (recv_count == 0) break;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (name_full[i] || sector_full[sector_of[i]]) continue;
      w[i] += recv_mass > kTiny ? excess * w[i] / recv_mass : excess / recv_count;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) w[i] = std::min(w[i], k.name_cap);
  const Vec ss = sector_sums(w, sector_of);
  for (Eigen::Index i = 0; i < n; ++i)
    if (ss[sector_of[i]] > k.sector_cap) w[i] *= k.sector_cap / ss[sector_of[i]];
}

// Reduce the traded names of any over-cap sector; the untraded names keep
// their previous weights, which met the cap on their own.
void fix_sectors_after_deadband(Vec& w, const std::vector<bool>& traded, const std::vector<int>& sector_of,
                                const EnvConstants& k) {
  const Vec ss = sector_sums(w, sector_of);
  for (int s = 0; s < kSectors; ++s) {
    if (ss[s] <= k.sector_cap) continue;
    double traded_mass = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i)
      if (sector_of[i] == s && traded[i]) traded_mass += w[i];
    const double excess = ss[s] - k.sector_cap;
    if (traded_mass <= kTiny) continue;
    const double scale = std::max(0.0, 1.0 - excess / traded_mass);
    for (Eigen::Index i = 0; i < w.size(); ++i)
      if (sector_of[i] == s && traded[i]) w[i] *= scale;
  }
}

// Adds `mass` (>0) to the eligible names pro-rata to weight, respecting both
// caps. Returns the mass that could not be placed.
double add_mass(Vec& w, double mass, const std::vector<bool>& eligible, const std::vector<int>& sector_of,
                const EnvConstants& k) {
  for (int round = 0; round < 4 * kAssets && mass > kTiny; ++round) {
    const Vec ss = sector_sums(w, sector_of);
    double base = 0.0;
    int count = 0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      if (!eligible[i] || w[i] >= k.name_cap || ss[sector_of[i]] >= k.sector_cap) continue;
      base += w[i];
      ++count;
    }
    if (count == 0) break;
    double placed = 0.0;
    Vec sector_room = (Vec::Constant(kSectors, k.sector_cap) - ss).cwiseMax(0.0);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      if (!eligible[i] || w[i] >= k.name_cap || ss[sector_of[i]] >= k.sector_cap) continue;
      const double share = base > kTiny ? mass * w[i] / base : mass / count;
      const double add = std::min({share, k.name_cap - w[i], sector_room[sector_of[i]]});
      w[i] += add;
      sector_room[sector_of[i]] -= add;
      placed += add;
    }
    mass -= placed;
    if (placed <= kTiny) break;
  }
  return std::max(0.0, mass);
}

}  // namespace

void PriceSeries::validate() const {
  if (simple_returns.cols() != kAssets)
    throw StructuralError("price series must have " + std::to_string(kAssets) + " assets, got " +
                          std::to_string(simple_returns.cols()));
  if (static_cast<int>(dates.size()) != days()) throw StructuralError("date list length does not match returns");
  if (static_cast<int>(sector_of.size()) != kAssets) throw StructuralError("sector map must cover every asset");
  std::vector<int> counts(kSectors, 0);
  for (int s : sector_of) {
    if (s < 0 || s >= kSectors) throw StructuralError("sector index out of range");
    ++counts[s];
  }
  for (int c : counts)
    if (c != kSectorSize) throw StructuralError("every sector must hold exactly 5 assets");
  for (Eigen::Index i = 0; i < simple_returns.size(); ++i) {
    const double r = simple_returns.data()[i];
    if (!std::isfinite(r) || r <= -1.0) throw StructuralError("returns must be finite and greater than -1");
  }
}

std::vector<int> default_sectors() {
  std::vector<int> s(kAssets);
  for (int i = 0; i < kAssets; ++i) s[i] = i / kSectorSize;
  return s;
}

PriceSeries load_price_series(const std::string& returns_csv, const std::string& sectors_csv) {
  const auto ret = util::read_csv(returns_csv);
  if (ret.header.empty() || ret.header[0] != "date") throw StructuralError(returns_csv + ": first column must be date");
  const int n = static_cast<int>(ret.header.size()) - 1;
  PriceSeries ps;
  ps.simple_returns.resize(static_cast<Eigen::Index>(ret.rows.size()), n);
  for (std::size_t r = 0; r < ret.rows.size(); ++r) {
    if (static_cast<int>(ret.rows[r].size()) != n + 1) throw StructuralError(returns_csv + ": ragged row");
    ps.dates.push_back(util::parse_int(ret.rows[r][0]));
    for (int j = 0; j < n; ++j) ps.simple_returns(r, j) = util::parse_double(ret.rows[r][j + 1]);
  }
  const auto sec = util::read_csv(sectors_csv);
  ps.sector_of.assign(n, -1);
  for (const auto& row : sec.rows) {
    if (row.size() != 2) throw StructuralError(sectors_csv + ": expected asset,sector");
    const auto it = std::find(ret.header.begin() + 1, ret.header.end(), row[0]);
    if (it == ret.header.end()) throw StructuralError(sectors_csv + ": unknown asset " + row[0]);
    ps.sector_of[it - ret.header.begin() - 1] = util::parse_int(row[1]);
  }
  ps.validate();
  return ps;
}

void save_price_series(const PriceSeries& prices, const std::string& returns_csv, const std::string& sectors_csv) {
  std::ofstream out(returns_csv);
  if (!out) throw StructuralError("cannot write " + returns_csv);
  out << "date";
  for (int j = 0; j < prices.assets(); ++j) out << "," << util::asset_name(j);
  out << "\n";
  for (int t = 0; t < prices.days(); ++t) {
    out << prices.dates[t];
    for (int j = 0; j < prices.assets(); ++j) out << "," << util::format_double(prices.simple_returns(t, j));
    out << "\n";
  }
  std::ofstream sec(sectors_csv);
  if (!sec) throw StructuralError("cannot write " + sectors_csv);
  sec << "asset,sector\n";
  for (int j = 0; j < prices.assets(); ++j) sec << util::asset_name(j) << "," << prices.sector_of[j] << "\n";
}

PortfolioState PortfolioState::initial(int n_assets, int t0) {
  PortfolioState s;
  s.w = Vec::Constant(n_assets, 1.0 / n_assets);
  s.w_cash = 0.0;
  s.t = t0;
  return s;
}

void check_state_invariants(const PortfolioState& s, const std::vector<int>& sector_of, const EnvConstants& k,
                            double tol) {
  if (std::abs(s.w.sum() + s.w_cash - 1.0) > tol) throw ContractError("weights and cash do not sum to one");
  if (s.w_cash < -tol || s.w_cash > 1.0 - k.alpha_min + tol) throw ContractError("cash weight outside [0, 0.15]");
  for (Eigen::Index i = 0; i < s.w.size(); ++i)
    if (s.w[i] < -tol || s.w[i] > k.name_cap + tol)
      throw ContractError("weight of asset " + std::to_string(i) + " outside [0, name cap]");
  const Vec ss = sector_sums(s.w, sector_of);
  for (int j = 0; j < kSectors; ++j)
    if (ss[j] > k.sector_cap + tol) throw ContractError("sector " + std::to_string(j) + " exceeds its cap");
  if (s.dd > 0 || s.peak_nav < s.nav) throw ContractError("drawdown bookkeeping inconsistent");
}

Conversion convert_action(const Vec& raw, const PortfolioState& prev, const std::vector<int>& sector_of,
                          const EnvConstants& k) {
  const Eigen::Index n = prev.w.size();
  if (raw.size() != n + 1) throw StructuralError("raw action must have N+1 entries");
  if (!raw.allFinite()) throw StructuralError("raw action is not finite");

  Conversion c;
  c.alpha = k.alpha_min + (k.alpha_max - k.alpha_min) * sigmoid(raw[n]);
  const Vec logits = raw.head(n);
  const Vec e = (logits.array() - logits.maxCoeff()).exp();
  Vec w = c.alpha * e / e.sum();
  enforce_caps(w, sector_of, k);
  c.pre_deadband = w;

  std::vector<bool> traded(n, true);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(w[i] - prev.w[i]) < k.eps_trade) {
      w[i] = prev.w[i];
      traded[i] = false;
    }
  }
  fix_sectors_after_deadband(w, traded, sector_of, k);
  double invested = w.sum();
  if (invested > k.alpha_max) {
    double traded_mass = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (traded[i]) traded_mass += w[i];
    const double scale = std::max(0.0, 1.0 - (invested - k.alpha_max) / traded_mass);
    for (Eigen::Index i = 0; i < n; ++i)
      if (traded[i]) w[i] *= scale;
  } else if (invested < k.alpha_min) {
    double left = add_mass(w, k.alpha_min - invested, traded, sector_of, k);
    if (left > kTiny) add_mass(w, left, std::vector<bool>(n, true), sector_of, k);
  }
  c.target = w;
  c.invested = w.sum();
  c.delta = w - prev.w;
  return c;
}

StepResult step(const PortfolioState& state, const Vec& target, const Vec& day_returns,
                const std::vector<int>& sector_of, const EnvConstants& k) {
  if (target.size() != state.w.size() || day_returns.size() != state.w.size())
    throw StructuralError("target or return vector has the wrong length");
  constexpr double tol = 1e-6;
  for (Eigen::Index i = 0; i < target.size(); ++i)
    if (target[i] < -tol || target[i] > k.name_cap + tol)
      throw ContractError("target weight of asset " + std::to_string(i) + " violates the name cap");
  const Vec ss = sector_sums(target, sector_of);
  for (int s = 0; s < kSectors; ++s)
    if (ss[s] > k.sector_cap + tol) throw ContractError("target violates the cap of sector " + std::to_string(s));
  const double invested = target.sum();
  if (invested < k.alpha_min - tol || invested > k.alpha_max + tol)
    throw ContractError("target invested fraction outside the allowed band");

  StepResult r;
  r.turnover = (target - state.w).cwiseAbs().sum();
  r.r_port = target.dot(day_returns);
  PortfolioState next = state;
  next.w = target;
  next.w_cash = 1.0 - invested;
  next.nav = state.nav * (1.0 + r.r_port);
  next.peak_nav = std::max(state.peak_nav, next.nav);
  next.dd = std::min(0.0, next.nav / next.peak_nav - 1.0);
  next.t = state.t + 1;
  r.dd = next.dd;
  r.cost_penalty = k.c_tx * r.turnover;
  r.dd_penalty = k.lambda_dd * std::max(0.0, std::abs(next.dd) - k.dd_free);
  const double log_growth = std::log1p(r.r_port);
  r.reward = log_growth - r.cost_penalty - r.dd_penalty;
  if (std::abs(r.reward + r.cost_penalty + r.dd_penalty - log_growth) > 1e-14)
    throw NumericError("reward decomposition drifted");
  r.next_state = std::move(next);
  return r;
}

int observation_dim(int n_assets) { return 3 * n_assets + 3; }

Vec observe(const PriceSeries& prices, const PortfolioState& state, const std::vector<double>& nav_history) {
  const int n = prices.assets();
  Vec o = Vec::Zero(observation_dim(n));
  const int t = std::min(state.t, prices.days());
  const int lo5 = std::max(0, t - 5);
  const int lo20 = std::max(0, t - 20);
  for (int i = 0; i < n; ++i) {
    if (t > lo5) o[i] = prices.simple_returns.col(i).segment(lo5, t - lo5).mean() / 0.01;
    if (t - lo20 >= 2) {
      const auto seg = prices.simple_returns.col(i).segment(lo20, t - lo20);
      const double m = seg.mean();
      o[n + i] = std::sqrt((seg.array() - m).square().sum() / (seg.size() - 1)) / 0.01;
    }
    o[2 * n + i] = state.w[i] * n;
  }
  o[3 * n] = state.w_cash * 10.0;
  o[3 * n + 1] = state.dd * 10.0;
  if (nav_history.size() >= 2) {
    const std::size_t back = std::min<std::size_t>(20, nav_history.size() - 1);
    o[3 * n + 2] = std::log(nav_history.back() / nav_history[nav_history.size() - 1 - back]) * 10.0;
  }
  return o;
}

MarketEnv::MarketEnv(const PriceSeries& prices, EnvConstants k, int start, int end)
    : prices_(&prices), k_(k), start_(start), end_(end) {
  if (start < 0 || end > prices.days() || start >= end) throw StructuralError("environment day range is invalid");
  reset(start);
}

void MarketEnv::reset(int t0) {
  if (t0 < start_ || t0 >= end_) throw StructuralError("reset day outside the environment range");
  state_ = PortfolioState::initial(prices_->assets(), t0);
  nav_history_.assign(1, 1.0);
}

Vec MarketEnv::observation() const { return observe(*prices_, state_, nav_history_); }

Conversion MarketEnv::convert(const Vec& raw) const { return convert_action(raw, state_, prices_->sector_of, k_); }

StepResult MarketEnv::apply(const Conversion& conv) {
  if (done()) throw StructuralError("environment exhausted");
  const Vec day = prices_->simple_returns.row(state_.t).transpose();
  StepResult r = step(state_, conv.target, day, prices_->sector_of, k_);
  state_ = r.next_state;
  nav_history_.push_back(state_.nav);
  return r;
}

}  // namespace macfx::market
