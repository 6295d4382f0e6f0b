#include "macfx/diffcore/autodiff.hpp"

#include <string>

#include "macfx/errors.hpp"

namespace macfx::diff {

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

std::vector<double> Tape::adjoints(int out) const {
  std::vector<double> adj(nodes_.size(), 0.0);
  if (out < 0) return adj;
  adj[out] = 1.0;
  for (int i = out; i >= 0; --i) {
    const Node& n = nodes_[i];
    const double a = adj[i];
    if (a == 0.0) continue;
    if (n.lhs >= 0) adj[n.lhs] += a * n.d_lhs;
    if (n.rhs >= 0) adj[n.rhs] += a * n.d_rhs;
  }
  return adj;
}

Eigen::VectorXd value_and_grad(const ScalarObjective& objective, const Eigen::VectorXd& at, double* value) {
  Tape& tape = Tape::active();
  tape.clear();
  std::vector<Var> inputs;
  inputs.reserve(at.size());
  for (Eigen::Index i = 0; i < at.size(); ++i) inputs.emplace_back(at[i], tape.leaf());
  const Var out = objective(std::span<const Var>(inputs));
  if (!std::isfinite(out.v)) {
    tape.clear();
    throw NumericError("objective is not finite (" + std::to_string(out.v) + ")");
  }
  if (value) *value = out.v;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(at.size());
  if (out.id >= 0) {
    const auto adj = tape.adjoints(out.id);
    for (Eigen::Index i = 0; i < at.size(); ++i) g[i] = adj[inputs[i].id];
  }
  tape.clear();
  return g;
}

Eigen::VectorXd grad(const ScalarObjective& objective, const Eigen::VectorXd& at) {
  return value_and_grad(objective, at, nullptr);
}

}  // namespace macfx::diff
