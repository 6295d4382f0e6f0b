#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace macfx::diff {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Activation { identity, tanh, sigmoid };

std::string_view to_string(Activation act);
Activation activation_from_string(std::string_view name);

struct LayerSpec {
  int in = 0;
  int out = 0;
  Activation act = Activation::identity;

  bool operator==(const LayerSpec&) const = default;
};

using Layout = std::vector<LayerSpec>;

/// Number of scalars needed by `layout`: sum of (in + 1) * out.
std::size_t param_count(const Layout& layout);

/// Throws StructuralError when layers do not chain or have empty widths.
void validate_layout(const Layout& layout);

/// Builds `in -> hidden... -> out` with `hidden_act` on hidden layers.
Layout make_layout(int in, std::span<const int> hidden, int out, Activation hidden_act,
                   Activation out_act);

/// Flat parameters of a feedforward network. Per layer the block is the
/// column-major (out x in) weight matrix followed by the bias.
struct ParamVector {
  Layout layout;
  Vec values;

  ParamVector() = default;
  ParamVector(Layout layout, Vec values);

  static ParamVector zeros(Layout layout);

  int input_dim() const { return layout.front().in; }
  int output_dim() const { return layout.back().out; }
  Eigen::Index size() const { return values.size(); }

  void check_finite() const;
};

/// Scaled orthogonal-like random init (rows orthonormalised by QR, gain
/// sqrt(2) on hidden layers) with zero biases. The final layer's weights are
/// multiplied by `final_layer_scale`.
ParamVector init_params(const Layout& layout, std::uint64_t seed, double final_layer_scale = 1.0);

/// Activations cached by forward_batch; columns are samples.
struct ForwardTape {
  std::vector<Mat> activations;  // activations[0] is the input
};

/// Batched evaluation; `inputs` is (input_dim x batch).
Mat forward_batch(const ParamVector& params, const Mat& inputs, ForwardTape* tape = nullptr);

Vec mlp_forward(const ParamVector& params, const Vec& input);

/// Reverse sweep. `grad_out` is (output_dim x batch); the result is the
/// gradient summed over the batch, in the layout of `params`.
Vec backward(const ParamVector& params, const ForwardTape& tape, const Mat& grad_out,
             Mat* grad_input = nullptr);

/// Forward-mode directional derivative of the outputs along a parameter-space
/// direction, evaluated at the inputs recorded in `tape`.
Mat jvp(const ParamVector& params, const ForwardTape& tape, const Vec& direction);

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Scalar reference evaluation usable with any arithmetic type that provides
/// tanh/sigmoid via ADL (double, diff::Var).
template <class T>
std::vector<T> mlp_forward_generic(const Layout& layout, std::span<const T> params,
                                   std::span<const T> input) {
  using std::tanh;
  std::vector<T> a(input.begin(), input.end());
  std::size_t off = 0;
  for (const auto& l : layout) {
    std::vector<T> z;
    z.reserve(l.out);
    const std::size_t bias_off = off + static_cast<std::size_t>(l.in) * l.out;
    for (int o = 0; o < l.out; ++o) {
      T acc = params[bias_off + o];
      for (int i = 0; i < l.in; ++i) acc = acc + params[off + static_cast<std::size_t>(i) * l.out + o] * a[i];
      switch (l.act) {
        case Activation::identity: break;
        case Activation::tanh: acc = tanh(acc); break;
        case Activation::sigmoid: acc = sigmoid(acc); break;
      }
      z.push_back(acc);
    }
    off = bias_off + l.out;
    a = std::move(z);
  }
  return a;
}

}  // namespace macfx::diff
