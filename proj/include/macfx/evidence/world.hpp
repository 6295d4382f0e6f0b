#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "macfx/market/market.hpp"

namespace macfx::evidence {

enum class Pillar { E, S, G };

struct EventRecord {
  int asset = 0;
  int date = 0;
  double severity = 0.0;
  Pillar pillar = Pillar::E;
  bool anchored = false;
  bool resolved = false;
  int persistence_days = 0;
};

struct WorldConfig {
  int n_assets = market::kAssets;
  int days = 1000;
  double event_rate = 0.02;  // expected events per asset-day
  double anchor_prob = 0.5;
  std::uint64_t seed = 42;
  double severe_threshold = 0.7;
  double severe_drift = -0.003;  // daily return drag while a severe event persists
  double stress_enter = 0.02;
  double stress_exit = 0.10;
  double stress_vol_mult = 1.6;

  void validate() const;
};

struct MacroSeries {
  std::vector<int> stress;      // 0/1 regime in force on each day
  std::vector<int> vol_regime;  // 0/1/2 from trailing realized market volatility
};

/// Immutable synthetic world: prices, the ESG event stream and the macro
/// regime series. Events are kept sorted by (date, asset).
class World {
 public:
  World() = default;
  World(WorldConfig cfg, market::PriceSeries prices, std::vector<EventRecord> events, MacroSeries macro);

  const WorldConfig& config() const { return cfg_; }
  const market::PriceSeries& prices() const { return prices_; }
  const std::vector<EventRecord>& events() const { return events_; }
  const MacroSeries& macro() const { return macro_; }
  int days() const { return prices_.days(); }
  int assets() const { return prices_.assets(); }

  /// Events of one asset ordered by date.
  const std::vector<EventRecord>& asset_events(int asset) const;

  /// Copy of this world with extra events merged in; prices and macro are kept.
  World with_events_appended(const std::vector<EventRecord>& extra) const;

  std::uint64_t checksum() const;

 private:
  WorldConfig cfg_;
  market::PriceSeries prices_;
  std::vector<EventRecord> events_;
  MacroSeries macro_;
  std::vector<std::vector<EventRecord>> by_asset_;
};

World generate_world(const WorldConfig& cfg);

void save_world(const World& world, const std::string& dir);
World load_world(const std::string& dir);

}  // namespace macfx::evidence
