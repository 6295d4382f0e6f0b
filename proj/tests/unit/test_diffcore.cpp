#include <doctest.h>

#include <array>

#include "macfx/diffcore/autodiff.hpp"
#include "macfx/diffcore/gaussian_policy.hpp"
#include "macfx/diffcore/mlp.hpp"
#include "macfx/diffcore/solvers.hpp"
#include "macfx/errors.hpp"
#include "test_util.hpp"

using namespace macfx;
using namespace macfx::diff;

namespace {

ParamVector hand_221() {
  const auto fx = testutil::load_fixture("mlp_221.json");
  Layout layout{{2, 2, Activation::tanh}, {2, 1, Activation::identity}};
  Vec v(param_count(layout));
  // column-major W1, then b1, then W2, b2
  v << fx["W1_rows"][0][0].get<double>(), fx["W1_rows"][1][0].get<double>(), fx["W1_rows"][0][1].get<double>(),
      fx["W1_rows"][1][1].get<double>(), fx["b1"][0].get<double>(), fx["b1"][1].get<double>(),
      fx["W2_row"][0].get<double>(), fx["W2_row"][1].get<double>(), fx["b2"].get<double>();
  return ParamVector(layout, v);
}

ParamVector random_params(const Layout& layout, std::uint64_t seed) {
  ParamVector p = init_params(layout, seed, 0.5);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  p.values += testutil::random_vec(p.size(), rng, 0.05);
  return p;
}

}  // namespace

TEST_CASE("mlp_forward: identity single linear layer passes input through") {
  Layout layout{{2, 2, Activation::identity}};
  Vec v(6);
  v << 1, 0, 0, 1, 0, 0;
  ParamVector p(layout, v);
  Vec x(2);
  x << 1, 2;
  const Vec y = mlp_forward(p, x);
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);
}

TEST_CASE("mlp_forward: zero weights return the bias") {
  Layout layout{{3, 2, Activation::identity}};
  ParamVector p = ParamVector::zeros(layout);
  p.values[6] = 0.25;
  p.values[7] = -1.5;
  std::mt19937_64 rng(3);
  for (int k = 0; k < 5; ++k) {
    const Vec y = mlp_forward(p, testutil::random_vec(3, rng));
    CHECK(y[0] == 0.25);
    CHECK(y[1] == -1.5);
  }
}

TEST_CASE("mlp_forward: 2-2-1 network matches the hand trace") {
  const auto fx = testutil::load_fixture("mlp_221.json");
  const ParamVector p = hand_221();
  Vec x(2);
  x << fx["input"][0].get<double>(), fx["input"][1].get<double>();
  CHECK(mlp_forward(p, x)[0] == doctest::Approx(fx["output"].get<double>()).epsilon(1e-14));
  ForwardTape tape;
  forward_batch(p, x, &tape);
  CHECK(tape.activations[1](1, 0) == doctest::Approx(fx["h1"][1].get<double>()).epsilon(1e-14));
  CHECK(tape.activations[2](0, 0) == doctest::Approx(fx["output"].get<double>()).epsilon(1e-14));
}

TEST_CASE("mlp_forward: dimension mismatch is a structural error") {
  const ParamVector p = hand_221();
  CHECK_THROWS_AS(mlp_forward(p, Vec::Zero(3)), StructuralError);
  CHECK_THROWS_AS(forward_batch(p, Mat::Zero(1, 4)), StructuralError);
  CHECK_THROWS_AS(ParamVector(p.layout, Vec::Zero(4)), StructuralError);
  CHECK_THROWS_AS(validate_layout({{2, 3, Activation::tanh}, {2, 1, Activation::identity}}), StructuralError);
}

TEST_CASE("param_count sums weights plus biases") {
  const std::array<int, 2> hidden{64, 64};
  const Layout l = make_layout(93, hidden, 31, Activation::tanh, Activation::identity);
  CHECK(param_count(l) == static_cast<std::size_t>(94 * 64 + 65 * 64 + 65 * 31));
}

TEST_CASE("grad: analytic scalar cases") {
  Vec at(1);
  at << 3.0;
  const Vec g = grad([](std::span<const Var> w) { return w[0] * w[0]; }, at);
  CHECK(g[0] == doctest::Approx(6.0));
  const Vec z = grad([](std::span<const Var>) { return Var(4.0); }, Vec::Ones(3));
  CHECK(z.isZero(0.0));
  CHECK_THROWS_AS(grad([](std::span<const Var> w) { return log(w[0] - w[0]); }, at), NumericError);
}

TEST_CASE("grad: tape route agrees with the batched reverse sweep") {
  const std::array<int, 1> hidden{4};
  const Layout layout = make_layout(3, hidden, 2, Activation::tanh, Activation::sigmoid);
  const ParamVector p = random_params(layout, 11);
  Vec x(3);
  x << 0.3, -1.2, 0.8;
  Vec c(2);
  c << 0.7, -1.1;
  const auto objective = [&](std::span<const Var> theta) {
    std::vector<Var> in(x.data(), x.data() + x.size());
    auto out = mlp_forward_generic<Var>(layout, theta, std::span<const Var>(in));
    return out[0] * c[0] + out[1] * c[1];
  };
  const Vec g_tape = grad(objective, p.values);
  ForwardTape tape;
  forward_batch(p, x, &tape);
  const Vec g_rev = backward(p, tape, c);
  CHECK((g_tape - g_rev).lpNorm<Eigen::Infinity>() < 1e-12);
  const auto y = mlp_forward_generic<double>(layout, std::span<const double>(p.values.data(), p.values.size()),
                                             std::span<const double>(x.data(), x.size()));
  CHECK(y[1] == doctest::Approx(mlp_forward(p, x)[1]).epsilon(1e-14));
}

TEST_CASE("grad: reverse sweep matches finite differences for every repo network shape") {
  const std::array<int, 2> hidden{64, 64};
  const std::vector<std::pair<const char*, Layout>> shapes = {
      {"policy", make_layout(93, hidden, 31, Activation::tanh, Activation::identity)},
      {"critic", make_layout(93, hidden, 1, Activation::tanh, Activation::identity)},
      {"field", make_layout(20, hidden, 9, Activation::tanh, Activation::sigmoid)},
      {"scalar_field", make_layout(20, hidden, 2, Activation::tanh, Activation::sigmoid)},
  };
  for (const auto& [name, layout] : shapes) {
    int failures = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed * 7919 + 1);
      ParamVector p = random_params(layout, seed);
      const Mat x = testutil::random_mat(layout.front().in, 3, rng);
      const Mat c = testutil::random_mat(layout.back().out, 3, rng);
      ForwardTape tape;
      forward_batch(p, x, &tape);
      const Vec g = backward(p, tape, c);
      const auto f = [&](const Vec& theta) {
        ParamVector q(layout, theta);
        return (forward_batch(q, x).array() * c.array()).sum();
      };
      const Vec dir = testutil::random_vec(p.size(), rng);
      if (!testutil::rel_close(g.dot(dir), testutil::central_difference(f, p.values, dir), 1e-4)) ++failures;
      std::uniform_int_distribution<Eigen::Index> pick(0, p.size() - 1);
      for (int k = 0; k < 4; ++k) {
        const Eigen::Index i = pick(rng);
        const Vec e = Vec::Unit(p.size(), i);
        if (!testutil::rel_close(g[i], testutil::central_difference(f, p.values, e), 1e-4)) ++failures;
      }
    }
    INFO(name);
    CHECK(failures == 0);
  }
}

TEST_CASE("jvp matches finite differences of the forward pass") {
  const std::array<int, 2> hidden{8, 8};
  const Layout layout = make_layout(5, hidden, 3, Activation::tanh, Activation::identity);
  const ParamVector p = random_params(layout, 5);
  std::mt19937_64 rng(5);
  const Mat x = testutil::random_mat(5, 4, rng);
  ForwardTape tape;
  forward_batch(p, x, &tape);
  const Vec dir = testutil::random_vec(p.size(), rng);
  const Mat j = jvp(p, tape, dir);
  const double h = 1e-5;
  const Mat fd = (forward_batch(ParamVector(layout, p.values + h * dir), x) -
                  forward_batch(ParamVector(layout, p.values - h * dir), x)) /
                 (2 * h);
  CHECK((j - fd).lpNorm<Eigen::Infinity>() < 1e-7);
}

TEST_CASE("policy log-prob and KL gradients match finite differences") {
  const std::array<int, 1> hidden{6};
  const Layout layout = make_layout(4, hidden, 3, Activation::tanh, Activation::identity);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed + 100);
    GaussianPolicy pol = GaussianPolicy::create(layout, seed, -0.5, 1.0);
    const Mat obs = testutil::random_mat(4, 5, rng);
    const Mat act = testutil::random_mat(3, 5, rng);
    const Vec w = testutil::random_vec(5, rng);
    const Vec g = pol.weighted_log_prob_grad(obs, act, w);
    const auto f = [&](const Vec& theta) {
      GaussianPolicy q = pol;
      q.set_flat(theta);
      return q.log_probs(obs, act).dot(w) / 5.0;
    };
    const Vec dir = testutil::random_vec(pol.num_params(), rng);
    CHECK(testutil::rel_close(g.dot(dir), testutil::central_difference(f, pol.flat(), dir), 1e-4));

    GaussianPolicy cand = pol;
    cand.set_flat(pol.flat() + 0.1 * testutil::random_vec(pol.num_params(), rng));
    const Vec gk = mean_kl_grad(pol, cand, obs);
    const auto fk = [&](const Vec& theta) {
      GaussianPolicy q = pol;
      q.set_flat(theta);
      return mean_kl(pol, q, obs);
    };
    CHECK(testutil::rel_close(gk.dot(dir), testutil::central_difference(fk, cand.flat(), dir), 1e-4));
    CHECK(std::abs(mean_kl(pol, pol, obs)) < 1e-15);
    CHECK(mean_kl(pol, cand, obs) >= 0.0);
  }
}

TEST_CASE("log density matches the closed-form univariate Gaussian") {
  Layout layout{{1, 1, Activation::identity}};
  Vec v(2);
  v << 0.0, 0.4;
  Vec ls(1);
  ls << std::log(0.5);
  GaussianPolicy pol(ParamVector(layout, v), ls);
  Mat obs = Mat::Zero(1, 1);
  Mat act(1, 1);
  act << 1.0;
  const double expected = -0.5 * std::pow((1.0 - 0.4) / 0.5, 2) - std::log(0.5) - 0.5 * std::log(2 * M_PI);
  CHECK(pol.log_probs(obs, act)[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("fisher_vector_product: univariate Gaussian mean has Fisher 1/sigma^2") {
  Layout layout{{1, 1, Activation::identity}};
  const double sigma = 0.3;
  Vec ls(1);
  ls << std::log(sigma);
  GaussianPolicy pol(ParamVector(layout, Vec::Zero(2)), ls);
  const Mat states = Mat::Zero(1, 7);  // zero inputs isolate the bias as the mean
  Vec v = Vec::Zero(3);
  v[1] = 1.7;
  const Vec fv = fisher_vector_product(pol, states, v, 0.0);
  CHECK(fv[1] == doctest::Approx(1.7 / (sigma * sigma)).epsilon(1e-12));
  CHECK(fv[0] == 0.0);
  CHECK(fv[2] == 0.0);
  CHECK(fisher_vector_product(pol, states, Vec::Zero(3), 0.3).isZero(0.0));
  CHECK_THROWS_AS(fisher_vector_product(pol, Mat::Zero(1, 0), v, 0.0), StructuralError);
}

TEST_CASE("fisher_vector_product: tiny policy matches explicit matrix oracles") {
  Layout layout{{1, 1, Activation::identity}};
  Vec theta(2);
  theta << 0.8, -0.2;
  Vec ls(1);
  ls << -0.7;
  GaussianPolicy pol(ParamVector(layout, theta), ls);
  Mat states(1, 4);
  states << 0.5, -1.0, 2.0, 0.1;
  const double inv_var = std::exp(1.4);
  // Independent assembly: mean = w x + b, so J_b = [x_b, 1]; log_std block is 2.
  Mat F = Mat::Zero(3, 3);
  for (int b = 0; b < 4; ++b) {
    Vec j(2);
    j << states(0, b), 1.0;
    F.topLeftCorner(2, 2) += inv_var * j * j.transpose() / 4.0;
  }
  F(2, 2) = 2.0;
  Vec v(3);
  v << 0.3, -1.1, 0.6;
  const double damping = 0.05;
  const Vec fv = fisher_vector_product(pol, states, v, damping);
  CHECK((fv - (F + damping * Mat::Identity(3, 3)) * v).norm() < 1e-12);

  Mat cols(3, 3);
  for (int i = 0; i < 3; ++i) cols.col(i) = fisher_vector_product(pol, states, Vec::Unit(3, i), 0.0);
  CHECK((cols * v + damping * v - fv).norm() < 1e-12);
}

TEST_CASE("fisher_vector_product equals the finite-difference Hessian of the mean KL") {
  const std::array<int, 2> hidden{8, 8};
  const Layout layout = make_layout(6, hidden, 4, Activation::tanh, Activation::identity);
  GaussianPolicy pol = GaussianPolicy::create(layout, 17, -1.0, 1.0);
  std::mt19937_64 rng(17);
  const Mat states = testutil::random_mat(6, 20, rng);
  const Vec v = testutil::random_vec(pol.num_params(), rng);
  const double h = 1e-5;
  GaussianPolicy plus = pol, minus = pol;
  plus.set_flat(pol.flat() + h * v);
  minus.set_flat(pol.flat() - h * v);
  const Vec hv = (mean_kl_grad(pol, plus, states) - mean_kl_grad(pol, minus, states)) / (2 * h);
  const Vec fv = fisher_vector_product(pol, states, v, 0.0);
  CHECK((hv - fv).norm() <= 1e-6 * std::max(1.0, fv.norm()));
}

TEST_CASE("fisher_vector_product is symmetric and positive semidefinite") {
  const std::array<int, 2> hidden{16, 16};
  const Layout layout = make_layout(10, hidden, 5, Activation::tanh, Activation::identity);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GaussianPolicy pol = GaussianPolicy::create(layout, seed, -1.0, 0.5);
    std::mt19937_64 rng(seed + 1000);
    const Mat states = testutil::random_mat(10, 32, rng);
    FisherOperator F(pol, states);
    const Vec u = testutil::random_vec(pol.num_params(), rng);
    const Vec v = testutil::random_vec(pol.num_params(), rng);
    CHECK(std::abs(v.dot(F.apply(u, 0.0)) - u.dot(F.apply(v, 0.0))) <= 1e-8);
    CHECK(v.dot(F.apply(v, 0.0)) >= 0.0);
    CHECK(v.dot(F.apply(v, 0.01)) > 0.0);
  }
}

TEST_CASE("conjugate_gradient: closed-form cases") {
  const LinearOperator identity = [](const Vec& x) { return x; };
  Vec rhs(3);
  rhs << 1, -2, 0.5;
  const CgResult r1 = conjugate_gradient(identity, rhs, 10, 1e-10);
  CHECK(r1.iterations == 1);
  CHECK((r1.x - rhs).norm() < 1e-15);

  Mat A(2, 2);
  A << 2, 0, 0, 4;
  Vec b(2);
  b << 2, 4;
  const CgResult r2 = conjugate_gradient([&](const Vec& x) { return Vec(A * x); }, b, 10, 1e-12);
  CHECK(r2.x[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r2.x[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r2.converged);

  const CgResult r3 = conjugate_gradient(identity, Vec::Zero(4), 10, 1e-10);
  CHECK(r3.x.isZero(0.0));
  CHECK(r3.iterations == 0);
}

TEST_CASE("conjugate_gradient: matches a direct solve on random SPD systems") {
  for (int n = 1; n <= 20; ++n) {
    std::mt19937_64 rng(n * 31);
    const Mat M = testutil::random_mat(n, n, rng);
    const Mat A = M * M.transpose() + 0.5 * Mat::Identity(n, n);
    const Vec b = testutil::random_vec(n, rng);
    const CgResult r = conjugate_gradient([&](const Vec& x) { return Vec(A * x); }, b, 10 * n, 1e-12);
    const Vec direct = A.llt().solve(b);
    INFO("n = " << n);
    CHECK((r.x - direct).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK((A * r.x - b).norm() <= 1e-12 * b.norm() * 10);
  }
}

TEST_CASE("conjugate_gradient: non-finite intermediates name the iteration") {
  int calls = 0;
  const LinearOperator bad = [&](const Vec& x) {
    ++calls;
    Vec y = x;
    y[1] *= 3.0;
    if (calls == 2) y[0] = std::nan("");
    return y;
  };
  Vec b(3);
  b << 1, 2, 3;
  try {
    conjugate_gradient(bad, b, 10, 1e-14);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("iteration 2") != std::string::npos);
  }
  Vec inf_rhs = b;
  inf_rhs[0] = INFINITY;
  CHECK_THROWS_AS(conjugate_gradient(bad, inf_rhs, 5, 1e-8), NumericError);
}

TEST_CASE("Adam: first step moves each coordinate by lr against the gradient sign") {
  Adam opt(3, AdamConfig{.lr = 0.01});
  Vec p(3);
  p << 1.0, -2.0, 0.5;
  Vec g(3);
  g << 4.0, -0.001, 0.0;
  const Vec before = p;
  opt.step(p, g);
  CHECK(p[0] == doctest::Approx(before[0] - 0.01).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(before[1] + 0.01).epsilon(1e-4));
  CHECK(p[2] == before[2]);
}

TEST_CASE("Adam: minimizes a convex quadratic, weight decay shrinks the minimizer") {
  Vec target(2);
  target << 1.0, -3.0;
  for (double wd : {0.0, 0.5}) {
    Adam opt(2, AdamConfig{.lr = 0.05, .weight_decay = wd});
    Vec p = Vec::Zero(2);
    for (int i = 0; i < 4000; ++i) opt.step(p, 2.0 * (p - target));
    const Vec expected = 2.0 * target / (2.0 + wd);
    CHECK((p - expected).norm() < 1e-3);
  }
}
