#include "macfx/diffcore/solvers.hpp"

#include <string>

#include "macfx/errors.hpp"

namespace macfx::diff {

CgResult conjugate_gradient(const LinearOperator& matvec, const Vec& rhs, int max_iters, double residual_tol) {
  if (!rhs.allFinite()) throw NumericError("conjugate gradient: right-hand side is not finite");
  if (residual_tol <= 0) throw ContractError("conjugate gradient: residual tolerance must be positive");
  CgResult res;
  res.x = Vec::Zero(rhs.size());
  Vec r = rhs;
  Vec p = r;
  double rr = r.squaredNorm();
  const double target = residual_tol * rhs.norm();
  res.residual_norm = std::sqrt(rr);
  if (res.residual_norm <= target) {
    res.converged = true;
    return res;
  }
  for (int it = 1; it <= max_iters; ++it) {
    const Vec Ap = matvec(p);
    const double pAp = p.dot(Ap);
    if (!Ap.allFinite() || !std::isfinite(pAp))
      throw NumericError("conjugate gradient: non-finite value at iteration " + std::to_string(it));
    if (pAp <= 0)
      throw NumericError("conjugate gradient: operator not positive definite at iteration " + std::to_string(it));
    const double alpha = rr / pAp;
    res.x += alpha * p;
    r -= alpha * Ap;
    const double rr_new = r.squaredNorm();
    res.iterations = it;
    res.residual_norm = std::sqrt(rr_new);
    if (!std::isfinite(rr_new))
      throw NumericError("conjugate gradient: non-finite residual at iteration " + std::to_string(it));
    if (res.residual_norm <= target) {
      res.converged = true;
      break;
    }
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  return res;
}

Adam::Adam(Eigen::Index n, AdamConfig cfg) : cfg_(cfg), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

void Adam::step(Vec& params, const Vec& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw StructuralError("Adam: parameter or gradient length mismatch");
  if (!grad.allFinite()) throw NumericError("Adam: gradient is not finite");
  Vec g = grad;
  if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * params;
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  params.array() -= cfg_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
}

}  // namespace macfx::diff
