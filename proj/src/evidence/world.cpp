#include "macfx/evidence/world.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "macfx/errors.hpp"
#include "macfx/util/csv.hpp"
#include "macfx/util/rng.hpp"

namespace macfx::evidence {

namespace {

using util::splitmix;

double beta_draw(std::mt19937_64& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

bool event_less(const EventRecord& a, const EventRecord& b) {
  if (a.date != b.date) return a.date < b.date;
  return a.asset < b.asset;
}

char pillar_char(Pillar p) { return p == Pillar::E ? 'E' : (p == Pillar::S ? 'S' : 'G'); }

Pillar pillar_from(const std::string& s) {
  if (s == "E") return Pillar::E;
  if (s == "S") return Pillar::S;
  if (s == "G") return Pillar::G;
  throw StructuralError("unknown pillar '" + s + "'");
}

}  // namespace

void WorldConfig::validate() const {
  if (n_assets != market::kAssets) throw StructuralError("world must have exactly 30 assets");
  if (days < 60) throw StructuralError("world needs at least 60 days");
  if (!(event_rate >= 0.0 && event_rate < 1.0)) throw StructuralError("event_rate must lie in [0, 1)");
  if (!(anchor_prob >= 0.0 && anchor_prob <= 1.0)) throw StructuralError("anchor_prob must lie in [0, 1]");
  if (!(stress_enter > 0.0 && stress_enter < 1.0 && stress_exit > 0.0 && stress_exit < 1.0))
    throw StructuralError("stress transition probabilities must lie in (0, 1)");
  if (!(severe_threshold > 0.0 && severe_threshold < 1.0)) throw StructuralError("severe_threshold must lie in (0, 1)");
  if (!std::isfinite(severe_drift) || severe_drift <= -1.0) throw StructuralError("severe_drift is invalid");
  if (!(stress_vol_mult >= 1.0)) throw StructuralError("stress_vol_mult must be at least 1");
}

World::World(WorldConfig cfg, market::PriceSeries prices, std::vector<EventRecord> events, MacroSeries macro)
    : cfg_(cfg), prices_(std::move(prices)), events_(std::move(events)), macro_(std::move(macro)) {
  prices_.validate();
  if (static_cast<int>(macro_.stress.size()) != prices_.days() ||
      static_cast<int>(macro_.vol_regime.size()) != prices_.days())
    throw StructuralError("macro series length does not match the price series");
  std::stable_sort(events_.begin(), events_.end(), event_less);
  by_asset_.assign(prices_.assets(), {});
  for (const auto& e : events_) {
    if (e.asset < 0 || e.asset >= prices_.assets()) throw StructuralError("event refers to an unknown asset");
    if (e.date < 0 || e.date >= prices_.days()) throw StructuralError("event date outside the world");
    if (!(e.severity >= 0.0 && e.severity <= 1.0)) throw StructuralError("event severity outside [0, 1]");
    if (e.persistence_days < 0 || e.persistence_days > 365) throw StructuralError("event persistence outside [0, 365]");
    by_asset_[e.asset].push_back(e);
  }
}

const std::vector<EventRecord>& World::asset_events(int asset) const {
  if (asset < 0 || asset >= static_cast<int>(by_asset_.size()))
    throw StructuralError("unknown asset " + std::to_string(asset));
  return by_asset_[asset];
}

World World::with_events_appended(const std::vector<EventRecord>& extra) const {
  std::vector<EventRecord> all = events_;
  all.insert(all.end(), extra.begin(), extra.end());
  return World(cfg_, prices_, std::move(all), macro_);
}

std::uint64_t World::checksum() const {
  std::uint64_t h = util::fnv1a(prices_.simple_returns.data(),
                                sizeof(double) * static_cast<std::size_t>(prices_.simple_returns.size()));
  for (const auto& e : events_) {
    const double fields[] = {static_cast<double>(e.asset), static_cast<double>(e.date), e.severity,
                             static_cast<double>(e.pillar), static_cast<double>(e.anchored),
                             static_cast<double>(e.resolved), static_cast<double>(e.persistence_days)};
    h = util::fnv1a(fields, sizeof fields, h);
  }
  h = util::fnv1a(macro_.stress.data(), sizeof(int) * macro_.stress.size(), h);
  h = util::fnv1a(macro_.vol_regime.data(), sizeof(int) * macro_.vol_regime.size(), h);
  return h;
}

World generate_world(const WorldConfig& cfg) {
  cfg.validate();
  const int n = cfg.n_assets;
  const int T = cfg.days;
  std::uint64_t s = cfg.seed;
  std::mt19937_64 rng_assets(splitmix(s));
  std::mt19937_64 rng_events(splitmix(s));
  std::mt19937_64 rng_macro(splitmix(s));
  std::mt19937_64 rng_returns(splitmix(s));

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<double> mu(n), vol(n), beta(n), propensity(n);
  for (int i = 0; i < n; ++i) {
    mu[i] = 3e-4 + 2e-4 * normal(rng_assets);
    vol[i] = 0.010 + 0.010 * unif(rng_assets);
    beta[i] = 0.8 + 0.4 * unif(rng_assets);
    propensity[i] = std::exp(0.6 * normal(rng_assets));
  }
  double mean_prop = 0.0;
  for (double p : propensity) mean_prop += p;
  mean_prop /= n;
  for (double& p : propensity) p /= mean_prop;

  std::vector<EventRecord> events;
  std::uniform_int_distribution<int> pillar(0, 2);
  std::uniform_int_distribution<int> persistence(5, 90);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) {
      if (unif(rng_events) >= std::min(1.0, cfg.event_rate * propensity[i])) continue;
      EventRecord e;
      e.asset = i;
      e.date = t;
      e.severity = beta_draw(rng_events, 2.0, 2.5);
      e.pillar = static_cast<Pillar>(pillar(rng_events));
      e.anchored = unif(rng_events) < cfg.anchor_prob;
      e.resolved = unif(rng_events) < 0.7;
      e.persistence_days = persistence(rng_events);
      events.push_back(e);
    }
  }

  MacroSeries macro;
  macro.stress.assign(T, 0);
  macro.vol_regime.assign(T, 0);
  int state = 0;
  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      const double u = unif(rng_macro);
      state = state == 0 ? (u < cfg.stress_enter ? 1 : 0) : (u < cfg.stress_exit ? 0 : 1);
    }
    macro.stress[t] = state;
  }

  market::PriceSeries prices;
  prices.sector_of = market::default_sectors();
  prices.simple_returns.resize(T, n);
  for (int t = 0; t < T; ++t) {
    prices.dates.push_back(t);
    const double mult = macro.stress[t] ? cfg.stress_vol_mult : 1.0;
    const double fm = 0.008 * mult * normal(rng_returns);
    double fs[market::kSectors];
    for (double& f : fs) f = 0.005 * mult * normal(rng_returns);
    for (int i = 0; i < n; ++i)
      prices.simple_returns(t, i) =
          mu[i] + beta[i] * fm + fs[prices.sector_of[i]] + vol[i] * mult * normal(rng_returns);
  }
  for (const auto& e : events) {
    if (e.severity <= cfg.severe_threshold) continue;
    for (int t = e.date + 1; t <= std::min(T - 1, e.date + e.persistence_days); ++t)
      prices.simple_returns(t, e.asset) += cfg.severe_drift;
  }
  prices.simple_returns = prices.simple_returns.cwiseMax(-0.95);

  for (int t = 0; t < T; ++t) {
    const int lo = std::max(0, t - 20);
    if (t - lo < 2) continue;
    Eigen::VectorXd m = prices.simple_returns.middleRows(lo, t - lo).rowwise().mean();
    const double sd = std::sqrt((m.array() - m.mean()).square().sum() / (m.size() - 1));
    macro.vol_regime[t] = sd < 0.008 ? 0 : (sd < 0.013 ? 1 : 2);
  }
  return World(cfg, std::move(prices), std::move(events), std::move(macro));
}

void save_world(const World& world, const std::string& dir) {
  std::filesystem::create_directories(dir);
  market::save_price_series(world.prices(), dir + "/returns.csv", dir + "/sectors.csv");
  std::ofstream ev(dir + "/events.csv");
  if (!ev) throw StructuralError("cannot write " + dir + "/events.csv");
  ev << "asset,date,severity,pillar,anchored,resolved,persistence_days\n";
  for (const auto& e : world.events())
    ev << e.asset << "," << e.date << "," << util::format_double(e.severity) << "," << pillar_char(e.pillar) << ","
       << int(e.anchored) << "," << int(e.resolved) << "," << e.persistence_days << "\n";
  std::ofstream mc(dir + "/macro.csv");
  if (!mc) throw StructuralError("cannot write " + dir + "/macro.csv");
  mc << "date,stress,vol_regime\n";
  for (int t = 0; t < world.days(); ++t)
    mc << t << "," << world.macro().stress[t] << "," << world.macro().vol_regime[t] << "\n";
  const auto& c = world.config();
  nlohmann::json j = {{"n_assets", c.n_assets},
                      {"days", c.days},
                      {"event_rate", c.event_rate},
                      {"anchor_prob", c.anchor_prob},
                      {"seed", c.seed},
                      {"severe_threshold", c.severe_threshold},
                      {"severe_drift", c.severe_drift},
                      {"stress_enter", c.stress_enter},
                      {"stress_exit", c.stress_exit},
                      {"stress_vol_mult", c.stress_vol_mult},
                      {"checksum", util::hex64(world.checksum())}};
  std::ofstream js(dir + "/world.json");
  js << j.dump(2) << "\n";
}

World load_world(const std::string& dir) {
  std::ifstream js(dir + "/world.json");
  if (!js) throw StructuralError("cannot open " + dir + "/world.json");
  const auto j = nlohmann::json::parse(js);
  WorldConfig c;
  c.n_assets = j.at("n_assets");
  c.days = j.at("days");
  c.event_rate = j.at("event_rate");
  c.anchor_prob = j.at("anchor_prob");
  c.seed = j.at("seed");
  c.severe_threshold = j.at("severe_threshold");
  c.severe_drift = j.at("severe_drift");
  c.stress_enter = j.at("stress_enter");
  c.stress_exit = j.at("stress_exit");
  c.stress_vol_mult = j.at("stress_vol_mult");

  market::PriceSeries prices = market::load_price_series(dir + "/returns.csv", dir + "/sectors.csv");
  std::vector<EventRecord> events;
  const auto ev = util::read_csv(dir + "/events.csv");
  for (const auto& r : ev.rows) {
    if (r.size() != 7) throw StructuralError("events.csv: expected 7 columns");
    EventRecord e;
    e.asset = util::parse_int(r[0]);
    e.date = util::parse_int(r[1]);
    e.severity = util::parse_double(r[2]);
    e.pillar = pillar_from(r[3]);
    e.anchored = util::parse_int(r[4]) != 0;
    e.resolved = util::parse_int(r[5]) != 0;
    e.persistence_days = util::parse_int(r[6]);
    events.push_back(e);
  }
  MacroSeries macro;
  const auto mc = util::read_csv(dir + "/macro.csv");
  for (const auto& r : mc.rows) {
    if (r.size() != 3) throw StructuralError("macro.csv: expected 3 columns");
    macro.stress.push_back(util::parse_int(r[1]));
    macro.vol_regime.push_back(util::parse_int(r[2]));
  }
  World w(c, std::move(prices), std::move(events), std::move(macro));
  if (j.contains("checksum") && j.at("checksum").get<std::string>() != util::hex64(w.checksum()))
    throw StructuralError(dir + ": world checksum mismatch");
  return w;
}

}  // namespace macfx::evidence
