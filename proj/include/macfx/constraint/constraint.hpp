#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "macfx/field/field.hpp"

namespace macfx::constraint {

using diff::Vec;
using Head3 = std::array<double, field::kHeads>;

struct ConstraintParams {
  double tau = 50.0;
  Head3 eta{0.0, 1.0, 1.0};
  Head3 q{0.9, 0.9, 0.9};
};

struct CostBundle {
  Head3 c{};
  Head3 u_bar{};
};

struct Budgets {
  Head3 b{};
  Head3 q{};
  std::string source;

  void validate() const;
};

struct PressureWeights {
  Head3 lambda{};
  Head3 c_hat{};
  Head3 u_hat{};
  Head3 b{};
};

/// max(0, softplus(tau x)/tau - log 2/tau), switching to the linear
/// asymptote once |tau x| > 30.
double centered_softplus(double x, double tau);

CostBundle aggregate_costs(std::span<const field::FieldOutput> outputs, const Vec& delta_w, const Vec& w_next,
                           const Head3& eta, double tau);

Budgets calibrate_budgets(std::span<const CostBundle> warm, const Head3& q, std::string source = "");

PressureWeights pressure_weights(const Head3& c_hat, const Head3& u_hat, const Budgets& budgets, const Head3& beta,
                                 double lambda_u, double eps_safe, double lambda_max);

struct CostStats {
  Head3 c_hat{};
  Head3 u_hat{};
};

CostStats rollout_cost_stats(std::span<const CostBundle> costs);

/// Largest realized cost-to-budget ratio over steps and heads.
double esg_violation(std::span<const CostBundle> costs, const Budgets& budgets);

nlohmann::json to_json(const Budgets& b);
Budgets budgets_from_json(const nlohmann::json& j);
void save_budgets(const Budgets& b, const std::string& path);
Budgets load_budgets(const std::string& path);

}  // namespace macfx::constraint
