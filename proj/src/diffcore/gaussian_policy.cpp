#include "macfx/diffcore/gaussian_policy.hpp"

#include <numbers>

#include "macfx/errors.hpp"

namespace macfx::diff {

namespace {

Vec clamp_log_std(const Vec& v) {
  Vec out = v;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i])) throw NumericError("log_std entry " + std::to_string(i) + " is not finite");
    out[i] = std::clamp(out[i], GaussianPolicy::kMinLogStd, GaussianPolicy::kMaxLogStd);
  }
  return out;
}

void require_batch(const Mat& obs, int obs_dim) {
  if (obs.cols() == 0) throw StructuralError("empty state batch");
  if (obs.rows() != obs_dim)
    throw StructuralError("observation width " + std::to_string(obs.rows()) + " does not match policy input " +
                          std::to_string(obs_dim));
}

}  // namespace

GaussianPolicy::GaussianPolicy(ParamVector net, Vec log_std) : net_(std::move(net)) {
  if (log_std.size() != net_.output_dim())
    throw StructuralError("log_std length does not match action width");
  log_std_ = clamp_log_std(log_std);
}

GaussianPolicy GaussianPolicy::create(const Layout& layout, std::uint64_t seed, double init_log_std,
                                      double final_layer_scale) {
  ParamVector p = init_params(layout, seed, final_layer_scale);
  return GaussianPolicy(std::move(p), Vec::Constant(layout.back().out, init_log_std));
}

Vec GaussianPolicy::flat() const {
  Vec out(num_params());
  out << net_.values, log_std_;
  return out;
}

void GaussianPolicy::set_flat(const Vec& flat) {
  if (flat.size() != num_params()) throw StructuralError("flat parameter length does not match policy");
  net_.values = flat.head(net_.size());
  log_std_ = clamp_log_std(flat.tail(log_std_.size()));
}

Mat GaussianPolicy::mean(const Mat& obs, ForwardTape* tape) const { return forward_batch(net_, obs, tape); }

Vec GaussianPolicy::mean(const Vec& obs) const { return mlp_forward(net_, obs); }

Vec GaussianPolicy::sample(const Vec& obs, std::mt19937_64& rng) const {
  Vec mu = mean(obs);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index d = 0; d < mu.size(); ++d) mu[d] += std::exp(log_std_[d]) * normal(rng);
  return mu;
}

double GaussianPolicy::log_prob_at_mean(const Vec& mu, const Vec& action) const {
  double lp = 0.0;
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (Eigen::Index d = 0; d < mu.size(); ++d) {
    const double z = (action[d] - mu[d]) * std::exp(-log_std_[d]);
    lp += -0.5 * z * z - log_std_[d] - half_log_2pi;
  }
  return lp;
}

Vec GaussianPolicy::log_probs(const Mat& obs, const Mat& actions) const {
  require_batch(obs, obs_dim());
  const Mat mu = mean(obs);
  Vec out(obs.cols());
  for (Eigen::Index b = 0; b < obs.cols(); ++b) out[b] = log_prob_at_mean(mu.col(b), actions.col(b));
  return out;
}

Vec GaussianPolicy::weighted_log_prob_grad(const Mat& obs, const Mat& actions, const Vec& weights) const {
  require_batch(obs, obs_dim());
  if (actions.cols() != obs.cols() || weights.size() != obs.cols() || actions.rows() != act_dim())
    throw StructuralError("action or weight batch does not match observations");
  ForwardTape tape;
  const Mat mu = mean(obs, &tape);
  const Eigen::Index B = obs.cols();
  const Vec inv_var = (-2.0 * log_std_).array().exp();
  Mat g_mu(act_dim(), B);
  Vec g_ls = Vec::Zero(act_dim());
  for (Eigen::Index b = 0; b < B; ++b) {
    const Vec diff = actions.col(b) - mu.col(b);
    const double w = weights[b] / static_cast<double>(B);
    g_mu.col(b) = w * diff.cwiseProduct(inv_var);
    g_ls += w * (diff.array().square() * inv_var.array() - 1.0).matrix();
  }
  Vec out(num_params());
  out << backward(net_, tape, g_mu), g_ls;
  return out;
}

double mean_kl(const GaussianPolicy& old_policy, const GaussianPolicy& candidate, const Mat& obs) {
  require_batch(obs, old_policy.obs_dim());
  const Mat mo = old_policy.mean(obs);
  const Mat mn = candidate.mean(obs);
  const Vec& so = old_policy.log_std();
  const Vec& sn = candidate.log_std();
  const Vec var_o = (2.0 * so).array().exp();
  const Vec inv_var_n = (-2.0 * sn).array().exp();
  double const_part = 0.0;
  for (Eigen::Index d = 0; d < so.size(); ++d)
    const_part += sn[d] - so[d] + 0.5 * var_o[d] * inv_var_n[d] - 0.5;
  double quad = 0.0;
  for (Eigen::Index b = 0; b < obs.cols(); ++b)
    quad += 0.5 * ((mo.col(b) - mn.col(b)).array().square() * inv_var_n.array()).sum();
  return const_part + quad / static_cast<double>(obs.cols());
}

Vec mean_kl_grad(const GaussianPolicy& old_policy, const GaussianPolicy& candidate, const Mat& obs) {
  require_batch(obs, old_policy.obs_dim());
  const Mat mo = old_policy.mean(obs);
  ForwardTape tape;
  const Mat mn = candidate.mean(obs, &tape);
  const Eigen::Index B = obs.cols();
  const Vec var_o = (2.0 * old_policy.log_std()).array().exp();
  const Vec inv_var_n = (-2.0 * candidate.log_std()).array().exp();
  Mat g_mu = (mn - mo).array().colwise() * inv_var_n.array() / static_cast<double>(B);
  Vec g_ls = Vec::Ones(inv_var_n.size()) - var_o.cwiseProduct(inv_var_n);
  Vec sq = Vec::Zero(inv_var_n.size());
  for (Eigen::Index b = 0; b < B; ++b) sq += (mo.col(b) - mn.col(b)).array().square().matrix();
  g_ls -= (sq / static_cast<double>(B)).cwiseProduct(inv_var_n);
  Vec out(candidate.num_params());
  out << backward(candidate.net(), tape, g_mu), g_ls;
  return out;
}

FisherOperator::FisherOperator(const GaussianPolicy& policy, const Mat& states) : policy_(policy) {
  require_batch(states, policy.obs_dim());
  policy_.mean(states, &tape_);
  inv_var_ = (-2.0 * policy.log_std()).array().exp();
  batch_ = states.cols();
}

Vec FisherOperator::apply(const Vec& v, double damping) const {
  if (v.size() != dim()) throw StructuralError("vector length does not match policy parameters");
  if (damping < 0) throw ContractError("damping must be nonnegative");
  const Eigen::Index n_net = policy_.net().size();
  const Vec v_net = v.head(n_net);
  Mat jv = jvp(policy_.net(), tape_, v_net);
  jv = jv.array().colwise() * inv_var_.array() / static_cast<double>(batch_);
  Vec out(dim());
  out << backward(policy_.net(), tape_, jv), 2.0 * v.tail(v.size() - n_net);
  out += damping * v;
  return out;
}

Vec fisher_vector_product(const GaussianPolicy& policy, const Mat& states, const Vec& v, double damping) {
  return FisherOperator(policy, states).apply(v, damping);
}

}  // namespace macfx::diff
