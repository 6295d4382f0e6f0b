#include "macfx/harness/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "macfx/errors.hpp"
#include "macfx/util/csv.hpp"

namespace macfx::harness {

using nlohmann::json;

FinancialMetrics financial_metrics(std::span<const double> nav, const Mat& weights) {
  if (nav.size() < 2) throw StructuralError("nav path needs at least two points");
  const auto steps = static_cast<Eigen::Index>(nav.size() - 1);
  if (weights.cols() != steps + 1) throw StructuralError("weights path must have one column per nav point");
  for (double v : nav)
    if (!(std::isfinite(v) && v > 0.0)) throw NumericError("nav path must be finite and positive");

  FinancialMetrics m;
  m.total_return = nav.back() / nav.front() - 1.0;

  std::vector<double> logr(static_cast<std::size_t>(steps));
  for (Eigen::Index t = 0; t < steps; ++t) logr[t] = std::log(nav[t + 1] / nav[t]);
  double mean = 0.0;
  for (double r : logr) mean += r;
  mean /= static_cast<double>(steps);
  double var = 0.0;
  for (double r : logr) var += (r - mean) * (r - mean);
  const double sd = steps > 1 ? std::sqrt(var / static_cast<double>(steps - 1)) : 0.0;
  m.sharpe = sd < 1e-12 ? 0.0 : mean / sd * std::sqrt(252.0);

  double peak = nav.front();
  for (double v : nav) {
    peak = std::max(peak, v);
    m.max_drawdown = std::max(m.max_drawdown, 1.0 - v / peak);
  }
  const double annual = std::pow(nav.back() / nav.front(), 252.0 / static_cast<double>(steps)) - 1.0;
  if (m.max_drawdown < 1e-6)
    m.calmar = annual > 0.0 ? kCalmarCap : (annual < 0.0 ? -kCalmarCap : 0.0);
  else
    m.calmar = annual / m.max_drawdown;

  double turnover = 0.0;
  for (Eigen::Index t = 1; t <= steps; ++t) turnover += (weights.col(t) - weights.col(t - 1)).cwiseAbs().sum();
  m.turnover = turnover / static_cast<double>(steps);
  return m;
}

double RunMetrics::get(const std::string& column) const {
  for (std::size_t i = 0; i < kMetricColumns.size(); ++i)
    if (kMetricColumns[i] == column) return values[i];
  throw StructuralError("unknown metric column '" + column + "'");
}

RunMetrics make_run_metrics(const std::string& method, std::uint64_t seed, const FinancialMetrics& f,
                            double esg_violation) {
  if (!(esg_violation >= 0.0)) throw NumericError("ESG violation must be nonnegative");
  if (!(f.turnover >= 0.0)) throw NumericError("turnover must be nonnegative");
  RunMetrics r;
  r.method = method;
  r.seed = seed;
  r.values = {100.0 * f.total_return, f.sharpe, f.calmar, 100.0 * f.turnover, esg_violation};
  return r;
}

double Aggregate::standard_error() const { return n > 0 ? stddev / std::sqrt(static_cast<double>(n)) : 0.0; }

Aggregate aggregate(std::span<const double> xs) {
  Aggregate a;
  a.n = static_cast<int>(xs.size());
  if (xs.empty()) return a;
  for (double x : xs) a.mean += x;
  a.mean /= static_cast<double>(a.n);
  if (a.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - a.mean) * (x - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(a.n - 1));
  }
  return a;
}

Aggregate MetricsReport::summary(const std::string& method, const std::string& column) const {
  std::vector<double> xs;
  for (const auto& r : runs)
    if (r.method == method) xs.push_back(r.get(column));
  if (xs.empty()) throw StructuralError("report has no runs for method '" + method + "'");
  return aggregate(xs);
}

void MetricsReport::validate() const {
  for (const auto& r : runs) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      throw StructuralError("run for unlisted method '" + r.method + "'");
    if (r.get("esg_violation") < 0.0 || r.get("turnover_pct") < 0.0)
      throw StructuralError("report contains a negative violation or turnover");
  }
}

json to_json(const RunMetrics& r) {
  json j = {{"method", r.method}, {"seed", r.seed}};
  for (std::size_t i = 0; i < kMetricColumns.size(); ++i) j[kMetricColumns[i]] = r.values[i];
  return j;
}

RunMetrics run_metrics_from_json(const json& j) {
  RunMetrics r;
  r.method = j.at("method").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  for (std::size_t i = 0; i < kMetricColumns.size(); ++i) r.values[i] = j.at(kMetricColumns[i]).get<double>();
  return r;
}

json to_json(const MetricsReport& r) {
  json runs = json::array();
  for (const auto& x : r.runs) runs.push_back(to_json(x));
  json summary = json::object();
  for (const auto& m : r.methods) {
    json row = json::object();
    for (const auto& c : kMetricColumns) {
      const auto a = r.summary(m, c);
      row[c] = {{"mean", a.mean}, {"std", a.stddev}, {"n", a.n}};
    }
    summary[m] = row;
  }
  return {{"columns", kMetricColumns}, {"methods", r.methods}, {"runs", runs}, {"summary", summary},
          {"checksums", r.checksums}};
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  r.methods = j.at("methods").get<std::vector<std::string>>();
  for (const auto& x : j.at("runs")) r.runs.push_back(run_metrics_from_json(x));
  if (j.contains("checksums")) r.checksums = j.at("checksums").get<std::map<std::string, std::string>>();
  r.validate();
  return r;
}

std::string render_csv(const MetricsReport& r) {
  std::ostringstream out;
  out << "method";
  for (const auto& c : kMetricColumns) out << "," << c << "_mean," << c << "_std";
  out << ",seeds\n";
  for (const auto& m : r.methods) {
    out << m;
    int n = 0;
    for (const auto& c : kMetricColumns) {
      const auto a = r.summary(m, c);
      out << "," << util::format_double(a.mean) << "," << util::format_double(a.stddev);
      n = a.n;
    }
    out << "," << n << "\n";
  }
  return out.str();
}

std::string render_text(const MetricsReport& r) {
  const std::array<std::string, 5> titles{"Return (%)", "Sharpe", "Calmar", "Turnover (%)", "ESG Violation"};
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"Method"});
  for (const auto& t : titles) cells.back().push_back(t);
  for (const auto& m : r.methods) {
    std::vector<std::string> row{m};
    for (const auto& c : kMetricColumns) {
      const auto a = r.summary(m, c);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3f ± %.3f", a.mean, a.stddev);
      row.emplace_back(buf);
    }
    cells.push_back(std::move(row));
  }
  // "±" is two bytes but one column wide
  const auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> widths(cells.front().size(), 0);
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], width(row[i]));
  std::ostringstream out;
  for (std::size_t r_i = 0; r_i < cells.size(); ++r_i) {
    const auto& row = cells[r_i];
    for (std::size_t i = 0; i < row.size(); ++i) {
      const std::string pad(widths[i] - width(row[i]), ' ');
      if (i == 0) out << row[i] << pad;
      else out << "  " << pad << row[i];
    }
    out << "\n";
    if (r_i == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w + 2;
      out << std::string(total - 2, '-') << "\n";
    }
  }
  return out.str();
}

}  // namespace macfx::harness
