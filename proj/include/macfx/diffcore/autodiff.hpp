#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace macfx::diff {

// Scalar reverse-mode tape. Each node records up to two parents with the
// local partials; the tape is thread-local so independent threads never
// share nodes.
class Tape {
 public:
  struct Node {
    int lhs = -1;
    int rhs = -1;
    double d_lhs = 0.0;
    double d_rhs = 0.0;
  };

  int push(int lhs, double d_lhs, int rhs, double d_rhs) {
    nodes_.push_back({lhs, rhs, d_lhs, d_rhs});
    return static_cast<int>(nodes_.size()) - 1;
  }
  int leaf() { return push(-1, 0.0, -1, 0.0); }
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  // Adjoints of every node with respect to node `out`.
  std::vector<double> adjoints(int out) const;

  static Tape& active();

 private:
  std::vector<Node> nodes_;
};

struct Var {
  double v = 0.0;
  int id = -1;  // -1 marks a constant

  Var() = default;
  Var(double value) : v(value) {}  // NOLINT: implicit lift of constants
  Var(double value, int node) : v(value), id(node) {}

  double value() const { return v; }
};

namespace tape_detail {
inline Var unary(const Var& a, double value, double da) {
  if (a.id < 0) return Var(value);
  return Var(value, Tape::active().push(a.id, da, -1, 0.0));
}
inline Var binary(const Var& a, const Var& b, double value, double da, double db) {
  if (a.id < 0 && b.id < 0) return Var(value);
  if (a.id < 0) return Var(value, Tape::active().push(b.id, db, -1, 0.0));
  if (b.id < 0) return Var(value, Tape::active().push(a.id, da, -1, 0.0));
  return Var(value, Tape::active().push(a.id, da, b.id, db));
}
}  // namespace tape_detail

inline Var operator+(const Var& a, const Var& b) { return tape_detail::binary(a, b, a.v + b.v, 1.0, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return tape_detail::binary(a, b, a.v - b.v, 1.0, -1.0); }
inline Var operator*(const Var& a, const Var& b) { return tape_detail::binary(a, b, a.v * b.v, b.v, a.v); }
inline Var operator/(const Var& a, const Var& b) {
  return tape_detail::binary(a, b, a.v / b.v, 1.0 / b.v, -a.v / (b.v * b.v));
}
inline Var operator-(const Var& a) { return tape_detail::unary(a, -a.v, -1.0); }
inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

inline Var tanh(const Var& a) {
  const double t = std::tanh(a.v);
  return tape_detail::unary(a, t, 1.0 - t * t);
}
inline Var sigmoid(const Var& a) {
  const double s = a.v >= 0 ? 1.0 / (1.0 + std::exp(-a.v)) : std::exp(a.v) / (1.0 + std::exp(a.v));
  return tape_detail::unary(a, s, s * (1.0 - s));
}
inline Var exp(const Var& a) {
  const double e = std::exp(a.v);
  return tape_detail::unary(a, e, e);
}
inline Var log(const Var& a) { return tape_detail::unary(a, std::log(a.v), 1.0 / a.v); }
inline Var square(const Var& a) { return tape_detail::unary(a, a.v * a.v, 2.0 * a.v); }
inline Var relu(const Var& a) { return tape_detail::unary(a, a.v > 0 ? a.v : 0.0, a.v > 0 ? 1.0 : 0.0); }
inline Var max(const Var& a, const Var& b) { return a.v >= b.v ? a + Var(0.0) * b : b + Var(0.0) * a; }

using ScalarObjective = std::function<Var(std::span<const Var>)>;

// Gradient of a scalar objective built from Var operations, evaluated at
// `at`. Throws NumericError when the objective is not finite.
Eigen::VectorXd grad(const ScalarObjective& objective, const Eigen::VectorXd& at);

// Same, also returning the objective value.
Eigen::VectorXd value_and_grad(const ScalarObjective& objective, const Eigen::VectorXd& at, double* value);

}  // namespace macfx::diff
