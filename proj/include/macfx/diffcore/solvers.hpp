#pragma once

#include <functional>

#include "macfx/diffcore/mlp.hpp"

namespace macfx::diff {

using LinearOperator = std::function<Vec(const Vec&)>;

struct CgResult {
  Vec x;
  int iterations = 0;
  double residual_norm = 0.0;  // ||A x - b|| tracked by the recursion
  bool converged = false;
};

/// Conjugate gradient for symmetric positive definite operators. Stops when
/// the residual falls to residual_tol * ||rhs|| or after max_iters.
CgResult conjugate_gradient(const LinearOperator& matvec, const Vec& rhs, int max_iters, double residual_tol);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

/// Adam minimizer over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index n, AdamConfig cfg);

  void step(Vec& params, const Vec& grad);
  long steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  Vec m_;
  Vec v_;
  long t_ = 0;
};

}  // namespace macfx::diff
