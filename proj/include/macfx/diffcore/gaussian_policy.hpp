#pragma once

#include <cstdint>
#include <random>

#include "macfx/diffcore/mlp.hpp"

namespace macfx::diff {

/// Diagonal Gaussian policy: an MLP produces the mean, log_std is a free
/// state-independent vector. The flat parameter vector is the network block
/// followed by log_std.
class GaussianPolicy {
 public:
  static constexpr double kMinLogStd = -5.0;
  static constexpr double kMaxLogStd = 2.0;

  GaussianPolicy() = default;
  GaussianPolicy(ParamVector net, Vec log_std);

  static GaussianPolicy create(const Layout& layout, std::uint64_t seed, double init_log_std,
                               double final_layer_scale);

  const ParamVector& net() const { return net_; }
  const Vec& log_std() const { return log_std_; }
  int obs_dim() const { return net_.input_dim(); }
  int act_dim() const { return net_.output_dim(); }
  Eigen::Index num_params() const { return net_.size() + log_std_.size(); }

  Vec flat() const;
  /// Replaces all parameters; log_std entries are clamped into the bounds.
  void set_flat(const Vec& flat);

  /// Means for a batch of observations (obs_dim x B).
  Mat mean(const Mat& obs, ForwardTape* tape = nullptr) const;
  Vec mean(const Vec& obs) const;

  Vec sample(const Vec& obs, std::mt19937_64& rng) const;

  double log_prob_at_mean(const Vec& mu, const Vec& action) const;
  Vec log_probs(const Mat& obs, const Mat& actions) const;

  /// Gradient of (1/B) * sum_b weights[b] * log pi(actions_b | obs_b) with
  /// respect to the flat parameters.
  Vec weighted_log_prob_grad(const Mat& obs, const Mat& actions, const Vec& weights) const;

 private:
  ParamVector net_;
  Vec log_std_;
};

/// Mean over observations of KL(old || candidate), summed over action dims.
double mean_kl(const GaussianPolicy& old_policy, const GaussianPolicy& candidate, const Mat& obs);

/// Gradient of mean_kl with respect to the candidate's flat parameters.
Vec mean_kl_grad(const GaussianPolicy& old_policy, const GaussianPolicy& candidate, const Mat& obs);

/// Fisher matrix of the action distribution averaged over a fixed batch of
/// states, i.e. the Hessian of the mean self-KL at coincidence. The product
/// is evaluated as J^T Sigma^-1 J v for the mean block plus 2 v on the log_std
/// block, using a forward (JVP) and reverse sweep through the mean network.
class FisherOperator {
 public:
  FisherOperator(const GaussianPolicy& policy, const Mat& states);

  Vec apply(const Vec& v, double damping) const;
  Eigen::Index dim() const { return policy_.num_params(); }

 private:
  GaussianPolicy policy_;
  ForwardTape tape_;
  Vec inv_var_;
  Eigen::Index batch_ = 0;
};

Vec fisher_vector_product(const GaussianPolicy& policy, const Mat& states, const Vec& v, double damping);

}  // namespace macfx::diff
