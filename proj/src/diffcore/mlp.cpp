#include "macfx/diffcore/mlp.hpp"

#include <random>

#include "macfx/errors.hpp"

namespace macfx::diff {

namespace {

using ConstMatMap = Eigen::Map<const Mat>;
using ConstVecMap = Eigen::Map<const Vec>;

void apply_activation(Activation act, Mat& z) {
  switch (act) {
    case Activation::identity: return;
    case Activation::tanh: z = z.array().tanh().matrix(); return;
    case Activation::sigmoid: z = z.unaryExpr([](double x) { return sigmoid(x); }); return;
  }
}

// Derivative of the activation expressed through its output.
Mat activation_slope(Activation act, const Mat& a) {
  switch (act) {
    case Activation::identity: return Mat::Ones(a.rows(), a.cols());
    case Activation::tanh: return (1.0 - a.array().square()).matrix();
    case Activation::sigmoid: return (a.array() * (1.0 - a.array())).matrix();
  }
  return Mat::Ones(a.rows(), a.cols());
}

}  // namespace

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "identity") return Activation::identity;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw StructuralError("unknown activation '" + std::string(name) + "'");
}

std::size_t param_count(const Layout& layout) {
  std::size_t n = 0;
  for (const auto& l : layout) n += static_cast<std::size_t>(l.in + 1) * l.out;
  return n;
}

void validate_layout(const Layout& layout) {
  if (layout.empty()) throw StructuralError("network layout has no layers");
  for (std::size_t k = 0; k < layout.size(); ++k) {
    if (layout[k].in <= 0 || layout[k].out <= 0)
      throw StructuralError("layer " + std::to_string(k) + " has a non-positive width");
    if (k > 0 && layout[k].in != layout[k - 1].out)
      throw StructuralError("layer " + std::to_string(k) + " input width " +
                            std::to_string(layout[k].in) + " does not match previous output " +
                            std::to_string(layout[k - 1].out));
  }
}

Layout make_layout(int in, std::span<const int> hidden, int out, Activation hidden_act,
                   Activation out_act) {
  Layout layout;
  int prev = in;
  for (int h : hidden) {
    layout.push_back({prev, h, hidden_act});
    prev = h;
  }
  layout.push_back({prev, out, out_act});
  validate_layout(layout);
  return layout;
}

ParamVector::ParamVector(Layout layout_, Vec values_)
    : layout(std::move(layout_)), values(std::move(values_)) {
  validate_layout(layout);
  if (static_cast<std::size_t>(values.size()) != param_count(layout))
    throw StructuralError("parameter vector has " + std::to_string(values.size()) +
                          " entries, layout needs " + std::to_string(param_count(layout)));
}

ParamVector ParamVector::zeros(Layout layout) {
  const auto n = static_cast<Eigen::Index>(param_count(layout));
  return ParamVector(std::move(layout), Vec::Zero(n));
}

void ParamVector::check_finite() const {
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i]))
      throw NumericError("parameter " + std::to_string(i) + " is not finite");
}

ParamVector init_params(const Layout& layout, std::uint64_t seed, double final_layer_scale) {
  ParamVector p = ParamVector::zeros(layout);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const auto& l = layout[k];
    const bool last = k + 1 == layout.size();
    Mat g(std::max(l.out, l.in), std::min(l.out, l.in));
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ() * Mat::Identity(g.rows(), g.cols());
    // Column signs follow R's diagonal so the draw is uniform over orthogonal matrices.
    Mat r = qr.matrixQR().topRows(g.cols()).triangularView<Eigen::Upper>();
    for (Eigen::Index c = 0; c < q.cols(); ++c)
      if (r(c, c) < 0) q.col(c) *= -1.0;
    Mat w = l.out >= l.in ? q : Mat(q.transpose());
    const double gain = last ? final_layer_scale : std::sqrt(2.0);
    Eigen::Map<Mat>(p.values.data() + off, l.out, l.in) = gain * w;
    off += static_cast<std::size_t>(l.in + 1) * l.out;
  }
  return p;
}

Mat forward_batch(const ParamVector& params, const Mat& inputs, ForwardTape* tape) {
  if (inputs.rows() != params.input_dim())
    throw StructuralError("input width " + std::to_string(inputs.rows()) + " does not match layer width " +
                          std::to_string(params.input_dim()));
  if (tape) {
    tape->activations.clear();
    tape->activations.push_back(inputs);
  }
  Mat a = inputs;
  std::size_t off = 0;
  for (const auto& l : params.layout) {
    ConstMatMap w(params.values.data() + off, l.out, l.in);
    ConstVecMap b(params.values.data() + off + static_cast<std::size_t>(l.in) * l.out, l.out);
    Mat z = w * a;
    z.colwise() += b;
    apply_activation(l.act, z);
    a = std::move(z);
    if (tape) tape->activations.push_back(a);
    off += static_cast<std::size_t>(l.in + 1) * l.out;
  }
  return a;
}

Vec mlp_forward(const ParamVector& params, const Vec& input) {
  if (input.size() != params.input_dim())
    throw StructuralError("input width " + std::to_string(input.size()) + " does not match layer width " +
                          std::to_string(params.input_dim()));
  Vec a = input;
  std::size_t off = 0;
  for (const auto& l : params.layout) {
    ConstMatMap w(params.values.data() + off, l.out, l.in);
    ConstVecMap b(params.values.data() + off + static_cast<std::size_t>(l.in) * l.out, l.out);
    Mat z = w * a + b;
    apply_activation(l.act, z);
    a = z;
    off += static_cast<std::size_t>(l.in + 1) * l.out;
  }
  return a;
}

Vec backward(const ParamVector& params, const ForwardTape& tape, const Mat& grad_out, Mat* grad_input) {
  const auto& layout = params.layout;
  if (tape.activations.size() != layout.size() + 1)
    throw StructuralError("forward tape does not match network depth");
  if (grad_out.rows() != params.output_dim() || grad_out.cols() != tape.activations.back().cols())
    throw StructuralError("output gradient has the wrong shape");

  Vec grad = Vec::Zero(params.size());
  std::vector<std::size_t> offsets(layout.size());
  std::size_t off = 0;
  for (std::size_t k = 0; k < layout.size(); ++k) {
    offsets[k] = off;
    off += static_cast<std::size_t>(layout[k].in + 1) * layout[k].out;
  }

  Mat upstream = grad_out;
  for (std::size_t kk = layout.size(); kk-- > 0;) {
    const auto& l = layout[kk];
    const Mat& a_out = tape.activations[kk + 1];
    const Mat& a_in = tape.activations[kk];
    Mat delta = (upstream.array() * activation_slope(l.act, a_out).array()).matrix();
    Eigen::Map<Mat>(grad.data() + offsets[kk], l.out, l.in) = delta * a_in.transpose();
    Eigen::Map<Vec>(grad.data() + offsets[kk] + static_cast<std::size_t>(l.in) * l.out, l.out) =
        delta.rowwise().sum();
    if (kk > 0 || grad_input) {
      ConstMatMap w(params.values.data() + offsets[kk], l.out, l.in);
      upstream = w.transpose() * delta;
    }
  }
  if (grad_input) *grad_input = upstream;
  return grad;
}

Mat jvp(const ParamVector& params, const ForwardTape& tape, const Vec& direction) {
  if (direction.size() != params.size()) throw StructuralError("direction does not match parameter layout");
  if (tape.activations.size() != params.layout.size() + 1)
    throw StructuralError("forward tape does not match network depth");
  const Eigen::Index batch = tape.activations.front().cols();
  Mat tangent = Mat::Zero(params.input_dim(), batch);
  std::size_t off = 0;
  for (std::size_t k = 0; k < params.layout.size(); ++k) {
    const auto& l = params.layout[k];
    ConstMatMap w(params.values.data() + off, l.out, l.in);
    ConstMatMap dw(direction.data() + off, l.out, l.in);
    ConstVecMap db(direction.data() + off + static_cast<std::size_t>(l.in) * l.out, l.out);
    Mat dz = dw * tape.activations[k];
    if (k > 0) dz.noalias() += w * tangent;
    dz.colwise() += db;
    tangent = (dz.array() * activation_slope(l.act, tape.activations[k + 1]).array()).matrix();
    off += static_cast<std::size_t>(l.in + 1) * l.out;
  }
  return tangent;
}

}  // namespace macfx::diff
