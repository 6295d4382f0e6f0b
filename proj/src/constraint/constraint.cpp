#include "macfx/constraint/constraint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "macfx/errors.hpp"
#include "macfx/util/stats.hpp"

namespace macfx::constraint {

namespace {

constexpr double kBudgetFloor = 1e-6;
constexpr int kMinWarmSteps = 50;

}  // namespace

void Budgets::validate() const {
  for (int k = 0; k < field::kHeads; ++k) {
    if (!(std::isfinite(b[k]) && b[k] > 0.0)) throw StructuralError("budget for head " + std::to_string(k) + " is not positive");
    if (!(q[k] > 0.0 && q[k] <= 1.0)) throw StructuralError("calibration quantile outside (0, 1]");
  }
}

double centered_softplus(double x, double tau) {
  if (!(tau > 0.0)) throw ContractError("gate temperature must be positive");
  const double z = tau * x;
  const double shift = std::numbers::ln2 / tau;
  if (z > 30.0) return x - shift;
  if (z < -30.0) return 0.0;
  return std::max(0.0, std::log1p(std::exp(z)) / tau - shift);
}

CostBundle aggregate_costs(std::span<const field::FieldOutput> outputs, const Vec& delta_w, const Vec& w_next,
                           const Head3& eta, double tau) {
  const auto n = static_cast<Eigen::Index>(outputs.size());
  if (delta_w.size() != n || w_next.size() != n) throw StructuralError("cost aggregation length mismatch");
  CostBundle cb;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w_next[i] < 0.0) throw ContractError("negative post-trade weight in cost aggregation");
    const double gate = centered_softplus(delta_w[i], tau);
    const auto& o = outputs[i];
    for (int k = 0; k < field::kHeads; ++k) {
      cb.c[k] += gate * o.rho_delta[k] + eta[k] * w_next[i] * o.rho_w[k];
      cb.u_bar[k] += w_next[i] * o.u[k];
    }
  }
  return cb;
}

Budgets calibrate_budgets(std::span<const CostBundle> warm, const Head3& q, std::string source) {
  if (warm.empty()) throw StructuralError("budget calibration on an empty warm-start run");
  if (static_cast<int>(warm.size()) < kMinWarmSteps)
    throw StructuralError("budget calibration needs at least 50 warm-start steps");
  Budgets b;
  b.q = q;
  b.source = std::move(source);
  for (int k = 0; k < field::kHeads; ++k) {
    if (!(q[k] > 0.0 && q[k] <= 1.0)) throw StructuralError("calibration quantile outside (0, 1]");
    std::vector<double> xs;
    xs.reserve(warm.size());
    for (const auto& c : warm) xs.push_back(c.c[k]);
    b.b[k] = std::max(kBudgetFloor, util::quantile_type7(std::move(xs), q[k]));
  }
  return b;
}

PressureWeights pressure_weights(const Head3& c_hat, const Head3& u_hat, const Budgets& budgets, const Head3& beta,
                                 double lambda_u, double eps_safe, double lambda_max) {
  if (!(eps_safe > 0.0)) throw ContractError("eps_safe must be positive");
  PressureWeights p;
  p.c_hat = c_hat;
  p.u_hat = u_hat;
  p.b = budgets.b;
  for (int k = 0; k < field::kHeads; ++k) {
    if (!std::isfinite(c_hat[k]) || !std::isfinite(u_hat[k])) throw NumericError("non-finite pressure input");
    const double slack = std::max(eps_safe, budgets.b[k] - c_hat[k]);
    p.lambda[k] = std::clamp(beta[k] * (1.0 + lambda_u * u_hat[k]) / slack, 0.0, lambda_max);
  }
  return p;
}

CostStats rollout_cost_stats(std::span<const CostBundle> costs) {
  if (costs.empty()) throw StructuralError("cost statistics of an empty rollout");
  CostStats s;
  for (const auto& c : costs)
    for (int k = 0; k < field::kHeads; ++k) {
      s.c_hat[k] += c.c[k];
      s.u_hat[k] += c.u_bar[k];
    }
  const double n = static_cast<double>(costs.size());
  for (int k = 0; k < field::kHeads; ++k) {
    s.c_hat[k] /= n;
    s.u_hat[k] /= n;
  }
  return s;
}

double esg_violation(std::span<const CostBundle> costs, const Budgets& budgets) {
  if (costs.empty()) throw StructuralError("ESG violation of an empty rollout");
  budgets.validate();
  double worst = 0.0;
  for (const auto& c : costs)
    for (int k = 0; k < field::kHeads; ++k) worst = std::max(worst, c.c[k] / budgets.b[k]);
  return worst;
}

nlohmann::json to_json(const Budgets& b) { return {{"b", b.b}, {"q", b.q}, {"source", b.source}}; }

Budgets budgets_from_json(const nlohmann::json& j) {
  Budgets b;
  b.b = j.at("b").get<Head3>();
  b.q = j.at("q").get<Head3>();
  b.source = j.value("source", "");
  b.validate();
  return b;
}

void save_budgets(const Budgets& b, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw StructuralError("cannot write budgets " + path);
  out << to_json(b).dump(2) << "\n";
}

Budgets load_budgets(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open budgets " + path);
  return budgets_from_json(nlohmann::json::parse(in));
}

}  // namespace macfx::constraint
