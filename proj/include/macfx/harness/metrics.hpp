#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "macfx/diffcore/mlp.hpp"

namespace macfx::harness {

using diff::Mat;

struct FinancialMetrics {
  double total_return = 0.0;  // fraction; reports show percent
  double sharpe = 0.0;
  double calmar = 0.0;
  double turnover = 0.0;  // mean daily sum |dw|, fraction
  double max_drawdown = 0.0;
};

inline constexpr double kCalmarCap = 100.0;

/// `nav` has T+1 points; `weights` is N x (T+1) with the starting weights in
/// column 0, so turnover averages T daily changes.
FinancialMetrics financial_metrics(std::span<const double> nav, const Mat& weights);

/// The five reported columns in display units.
inline const std::array<std::string, 5> kMetricColumns{"return_pct", "sharpe", "calmar", "turnover_pct",
                                                       "esg_violation"};

struct RunMetrics {
  std::string method;
  std::uint64_t seed = 0;
  std::array<double, 5> values{};  // ordered as kMetricColumns

  double get(const std::string& column) const;
};

RunMetrics make_run_metrics(const std::string& method, std::uint64_t seed, const FinancialMetrics& f,
                            double esg_violation);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single seed
  int n = 0;

  double standard_error() const;
};

Aggregate aggregate(std::span<const double> xs);

struct MetricsReport {
  std::vector<RunMetrics> runs;
  std::vector<std::string> methods;  // display order
  std::map<std::string, std::string> checksums;

  /// Mean and spread of one column over a method's seeds.
  Aggregate summary(const std::string& method, const std::string& column) const;
  void validate() const;
};

nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunMetrics& r);
RunMetrics run_metrics_from_json(const nlohmann::json& j);

/// One row per method with mean and std columns.
std::string render_csv(const MetricsReport& r);
/// Aligned plain-text table of "mean ± std" cells.
std::string render_text(const MetricsReport& r);

}  // namespace macfx::harness
