#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "macfx/errors.hpp"
#include "macfx/evidence/context.hpp"
#include "macfx/evidence/world.hpp"
#include "test_util.hpp"

using namespace macfx;
using namespace macfx::evidence;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

World quiet_world(int days = 80) {
  WorldConfig cfg;
  cfg.days = days;
  cfg.event_rate = 0.0;
  return generate_world(cfg);
}

EvidenceContext random_context(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> count(0, 8);
  EvidenceContext c;
  c.event_count_90d = count(rng);
  c.unresolved_count = std::floor(u(rng) * (c.event_count_90d + 1));
  c.unresolved_fraction = c.unresolved_count / std::max(1.0, c.event_count_90d);
  c.last_severity = u(rng);
  c.days_since_severe = std::floor(u(rng) * 366);
  c.mean_severity_90d = u(rng);
  c.repeat_flag = u(rng) < 0.2;
  c.peer_mean_pressure = u(rng);
  c.peer_highsev_rate_30d = std::floor(u(rng) * 5) / 4;
  c.vol_regime = count(rng) % 3;
  c.stress = u(rng) < 0.3;
  c.anchored_fraction_90d = u(rng);
  c.days_since_anchored = std::floor(u(rng) * 366);
  c.last_severe_anchored = u(rng) < 0.5;
  c.weight = 0.1 * u(rng);
  c.sector_exposure = 0.3 * u(rng);
  c.cash = 0.15 * u(rng);
  c.delta_w = 0.2 * (u(rng) - 0.5);
  return c;
}

}  // namespace

TEST_CASE("generate_world: zero event rate gives an empty stream and no drift") {
  WorldConfig cfg;
  cfg.days = 200;
  cfg.event_rate = 0.0;
  const World w = generate_world(cfg);
  CHECK(w.events().empty());
  CHECK(w.days() == 200);
  CHECK(w.assets() == 30);
  WorldConfig drift_off = cfg;
  drift_off.severe_drift = 0.0;
  CHECK((generate_world(drift_off).prices().simple_returns.array() == w.prices().simple_returns.array()).all());
}

TEST_CASE("generate_world: fixed seed is byte-identical across runs") {
  WorldConfig cfg;
  cfg.days = 300;
  cfg.seed = 42;
  const auto base = std::filesystem::temp_directory_path() / "macfx_world_det";
  save_world(generate_world(cfg), (base / "a").string());
  save_world(generate_world(cfg), (base / "b").string());
  for (const char* f : {"returns.csv", "events.csv", "macro.csv", "sectors.csv", "world.json"})
    CHECK(slurp(base / "a" / f) == slurp(base / "b" / f));
  cfg.seed = 43;
  CHECK(generate_world(cfg).checksum() != load_world((base / "a").string()).checksum());
}

TEST_CASE("generate_world: event count concentrates around rate * assets * days") {
  // Poisson-style count with mean 300; 3 sigma = 3 * sqrt(300).
  const double mean = 0.02 * 30 * 500;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 42ULL}) {
    WorldConfig cfg;
    cfg.days = 500;
    cfg.event_rate = 0.02;
    cfg.seed = seed;
    const auto n = static_cast<double>(generate_world(cfg).events().size());
    CHECK(std::abs(n - mean) <= 3.0 * std::sqrt(mean));
  }
}

TEST_CASE("generate_world: invalid configurations are structural errors") {
  WorldConfig cfg;
  cfg.days = 59;
  CHECK_THROWS_AS(generate_world(cfg), StructuralError);
  cfg = WorldConfig{};
  cfg.event_rate = 1.0;
  CHECK_THROWS_AS(generate_world(cfg), StructuralError);
  cfg = WorldConfig{};
  cfg.n_assets = 20;
  CHECK_THROWS_AS(generate_world(cfg), StructuralError);
  cfg = WorldConfig{};
  cfg.anchor_prob = -0.1;
  CHECK_THROWS_AS(generate_world(cfg), StructuralError);
}

TEST_CASE("generate_world: severe events drag the affected asset's later returns") {
  WorldConfig cfg;
  cfg.days = 400;
  cfg.event_rate = 0.02;
  cfg.seed = 5;
  WorldConfig flat = cfg;
  flat.severe_drift = 0.0;
  const World a = generate_world(cfg);
  const World b = generate_world(flat);
  int checked = 0;
  for (const auto& e : a.events()) {
    if (e.severity <= 0.7 || e.date + 1 >= a.days()) continue;
    const double diff = a.prices().simple_returns(e.date + 1, e.asset) - b.prices().simple_returns(e.date + 1, e.asset);
    CHECK(diff <= -0.003 + 1e-12);
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("world CSV round trip keeps the checksum") {
  WorldConfig cfg;
  cfg.days = 120;
  cfg.seed = 9;
  const World w = generate_world(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "macfx_world_rt";
  save_world(w, dir.string());
  const World back = load_world(dir.string());
  CHECK(back.checksum() == w.checksum());
  CHECK(back.events().size() == w.events().size());
}

TEST_CASE("build_context: asset without history has zero memory and sentinel counters") {
  const World w = quiet_world();
  const auto s = market::PortfolioState::initial(30, 50);
  const EvidenceContext c = build_context(w, 3, 50, s, 0.01);
  CHECK(c.last_severity == 0.0);
  CHECK(c.unresolved_count == 0.0);
  CHECK(c.event_count_90d == 0.0);
  CHECK(c.mean_severity_90d == 0.0);
  CHECK(c.repeat_flag == 0.0);
  CHECK(c.days_since_severe == 365);
  CHECK(c.days_since_anchored == 365);
  CHECK(c.anchored_fraction_90d == 0.0);
  CHECK(c.delta_w == 0.01);
  CHECK(c.weight == doctest::Approx(1.0 / 30));
  CHECK(c.sector_exposure == doctest::Approx(5.0 / 30));
  c.validate();
}

TEST_CASE("build_context: single anchored severe event yesterday") {
  const World base = quiet_world();
  EventRecord e;
  e.asset = 4;
  e.date = 39;
  e.severity = 0.9;
  e.anchored = true;
  e.persistence_days = 10;
  const World w = base.with_events_appended({e});
  const EvidenceContext c = build_context(w, 4, 40, market::PortfolioState::initial(30, 40), 0.0);
  CHECK(c.last_severity == 0.9);
  CHECK(c.anchored_fraction_90d == 1.0);
  CHECK(c.days_since_severe == 1);
  CHECK(c.days_since_anchored == 1);
  CHECK(c.last_severe_anchored == 1.0);
  CHECK(c.event_count_90d == 1.0);
  CHECK(c.unresolved_count == 1.0);
  // sector peers see the event through the meso features
  const EvidenceContext peer = build_evidence(w, 3, 40);
  CHECK(peer.peer_mean_pressure == doctest::Approx(0.9 * std::exp(-1.0 / 30) / 4));
  CHECK(peer.peer_highsev_rate_30d == doctest::Approx(0.25));
  CHECK(build_evidence(w, 10, 40).peer_mean_pressure == 0.0);
}

TEST_CASE("build_context: resolution after persistence and the 90-day window") {
  const World base = quiet_world(300);
  EventRecord e;
  e.asset = 0;
  e.date = 10;
  e.severity = 0.4;
  e.resolved = true;
  e.persistence_days = 20;
  const World w = base.with_events_appended({e});
  CHECK(build_evidence(w, 0, 29).unresolved_count == 1.0);
  CHECK(build_evidence(w, 0, 30).unresolved_count == 0.0);
  CHECK(build_evidence(w, 0, 99).event_count_90d == 1.0);
  CHECK(build_evidence(w, 0, 100).event_count_90d == 0.0);
  CHECK(build_evidence(w, 0, 100).last_severity == 0.4);
  CHECK(build_evidence(w, 0, 9).last_severity == 0.0);
}

TEST_CASE("build_context: unknown asset or date is a structural error") {
  const World w = quiet_world();
  const auto s = market::PortfolioState::initial(30, 0);
  CHECK_THROWS_AS(build_context(w, 30, 5, s, 0.0), StructuralError);
  CHECK_THROWS_AS(build_context(w, 0, 80, s, 0.0), StructuralError);
  CHECK_THROWS_AS(build_context(w, 0, -1, s, 0.0), StructuralError);
}

TEST_CASE("point-in-time: appending events after the date never changes the context") {
  WorldConfig cfg;
  cfg.days = 250;
  cfg.seed = 12;
  const World w = generate_world(cfg);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> day(0, 248);
  std::uniform_int_distribution<int> asset(0, 29);
  const auto s = market::PortfolioState::initial(30, 0);
  for (int k = 0; k < 200; ++k) {
    const int d = day(rng);
    std::vector<EventRecord> future;
    for (int j = 0; j < 10; ++j) {
      EventRecord e;
      e.asset = asset(rng);
      e.date = std::uniform_int_distribution<int>(d + 1, 249)(rng);
      e.severity = 0.95;
      e.anchored = true;
      future.push_back(e);
    }
    const World w2 = w.with_events_appended(future);
    for (int i = 0; i < 30; ++i) {
      const EvidenceContext a = build_context(w, i, d, s, 0.02);
      const EvidenceContext b = build_context(w2, i, d, s, 0.02);
      CHECK(a == b);
    }
  }
}

TEST_CASE("weak_labels: empty evidence") {
  EvidenceContext c;
  c.delta_w = 0.03;
  c.stress = 1.0;
  const WeakLabels l = weak_labels(c);
  CHECK(l.y[0] == 0.0);
  CHECK(l.y[1] == 0.0);
  CHECK(l.y[2] == doctest::Approx(0.1));
  for (double u : l.u) CHECK(u == 1.0);
  c.stress = 0.0;
  CHECK(weak_labels(c).y[2] == 0.0);
}

TEST_CASE("weak_labels: non-buying trades carry no add label") {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 1000; ++k) {
    EvidenceContext c = random_context(rng);
    c.delta_w = -std::abs(c.delta_w);
    CHECK(weak_labels(c).y[0] == 0.0);
    c.delta_w = 0.0;
    CHECK(weak_labels(c).y[0] == 0.0);
  }
}

TEST_CASE("weak_labels: severe anchored event today at a full buy") {
  EvidenceContext c;
  c.last_severity = 0.6;
  c.days_since_severe = 0;
  c.last_severe_anchored = 1.0;
  c.event_count_90d = 1;
  c.anchored_fraction_90d = 1;
  c.delta_w = 0.05;
  const double top = weak_labels(c).y[0];
  CHECK(top == doctest::Approx(0.6 * 1.5));
  for (double dw = -0.1; dw <= 0.2; dw += 0.005) {
    c.delta_w = dw;
    CHECK(weak_labels(c).y[0] <= top + 1e-15);
  }
  c.delta_w = 0.025;
  CHECK(weak_labels(c).y[0] == doctest::Approx(0.45));
  c.delta_w = 0.05;
  c.repeat_flag = 1.0;
  c.last_severity = 0.8;
  CHECK(weak_labels(c).y[0] == 1.0);
}

TEST_CASE("weak_labels: hold, spill and uncertainty formulas") {
  EvidenceContext c;
  c.unresolved_fraction = 0.5;
  c.mean_severity_90d = 0.4;
  c.days_since_severe = 30;
  c.peer_mean_pressure = 0.5;
  c.peer_highsev_rate_30d = 0.25;
  c.event_count_90d = 2;
  c.anchored_fraction_90d = 0.5;
  const WeakLabels l = weak_labels(c);
  CHECK(l.y[1] == doctest::Approx(0.25 + 0.12 + 0.2 * std::exp(-0.5)));
  CHECK(l.y[2] == doctest::Approx(0.3 + 0.075));
  CHECK(l.u[1] == doctest::Approx(0.7 * 0.6 + 0.3 * 0.5));
  c.event_count_90d = 9;
  c.anchored_fraction_90d = 1.0;
  CHECK(weak_labels(c).u[0] == 0.05);
}

TEST_CASE("weak_labels: monotone in the trade and bounded on random contexts") {
  std::mt19937_64 rng(99);
  int bad_range = 0, bad_mono = 0;
  for (int k = 0; k < 100000; ++k) {
    EvidenceContext c = random_context(rng);
    const WeakLabels l = weak_labels(c);
    for (int h = 0; h < 3; ++h) {
      if (!(l.y[h] >= 0 && l.y[h] <= 1)) ++bad_range;
      if (!(l.u[h] >= 0.05 && l.u[h] <= 1)) ++bad_range;
    }
    double prev = -1.0;
    for (double dw : {-0.05, -0.02, 0.0, 0.01, 0.02, 0.04, 0.05, 0.08}) {
      c.delta_w = dw;
      const double y = weak_labels(c).y[0];
      if (y < prev) ++bad_mono;
      prev = y;
    }
  }
  CHECK(bad_range == 0);
  CHECK(bad_mono == 0);
}

TEST_CASE("generated world couples severe events with higher add labels") {
  WorldConfig cfg;
  cfg.days = 500;
  cfg.seed = 42;
  const World w = generate_world(cfg);
  const EvidenceTable table(w);
  double sum_all = 0.0, sum_sev = 0.0;
  int n_all = 0, n_sev = 0;
  for (int t = 0; t < w.days(); ++t) {
    for (int i = 0; i < w.assets(); ++i) {
      EvidenceContext c = table.at(t, i);
      c.delta_w = 0.05;
      const double y = weak_labels(c).y[0];
      sum_all += y;
      ++n_all;
      if (c.days_since_severe < 30) {
        sum_sev += y;
        ++n_sev;
      }
    }
  }
  REQUIRE(n_sev > 0);
  CHECK(sum_sev / n_sev > sum_all / n_all);
}

TEST_CASE("context validation flags non-finite and out-of-range features") {
  EvidenceContext c;
  c.delta_w = std::nan("");
  CHECK_THROWS_AS(c.validate(), NumericError);
  c = EvidenceContext{};
  c.stress = 0.5;
  CHECK_THROWS_AS(c.validate(), StructuralError);
  c = EvidenceContext{};
  c.peer_highsev_rate_30d = 1.5;
  CHECK_THROWS_AS(c.validate(), StructuralError);
}

TEST_CASE("evidence table matches direct construction") {
  WorldConfig cfg;
  cfg.days = 100;
  const World w = generate_world(cfg);
  const EvidenceTable t(w);
  for (int d : {0, 17, 99})
    for (int i : {0, 13, 29}) {
      const EvidenceContext a = t.at(d, i);
      const EvidenceContext b = build_evidence(w, i, d);
      CHECK(a == b);
    }
  CHECK_THROWS_AS(t.at(100, 0), StructuralError);
}
