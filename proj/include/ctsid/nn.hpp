#pragma once

// Single-hidden-layer feedforward networks over a flat parameter vector, with
// hand-written vector-Jacobian products.
//
// Storage of one network block (all row-major):
//   W1 (n_hidden x n_in) | b1 (n_hidden) | W2 (n_out x n_hidden) | b2 (n_out)
//
// Batched entry points take one sample per column.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctsid/error.hpp"

namespace ctsid {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Matrix = Eigen::MatrixXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { ReLU, Tanh };

inline std::string_view to_string(Activation a) { return a == Activation::ReLU ? "relu" : "tanh"; }

inline Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

struct MlpLayout {
  Index n_in = 1;
  Index n_hidden = 1;
  Index n_out = 1;
  Activation activation = Activation::ReLU;

  std::size_t size() const {
    return static_cast<std::size_t>(n_hidden * n_in + n_hidden + n_out * n_hidden + n_out);
  }

  void validate() const {
    if (n_in < 1 || n_hidden < 1 || n_out < 1)
      throw DimensionError("MLP dimensions must all be >= 1");
  }
};

struct ParameterBlock {
  std::string name;
  std::size_t offset = 0;
  Index rows = 0;
  Index cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

// Registry of named blocks inside a flat parameter vector. Blocks are laid out
// contiguously in registration order.
class ParameterLayout {
 public:
  std::size_t add(std::string name, Index rows, Index cols) {
    if (rows < 1 || cols < 1) throw DimensionError("parameter block '" + name + "' is empty");
    for (const auto& b : blocks_)
      if (b.name == name) throw ConfigError("parameter block '" + name + "' registered twice");
    const std::size_t offset = size_;
    blocks_.push_back({std::move(name), offset, rows, cols});
    size_ += blocks_.back().size();
    return offset;
  }

  // Registers `<prefix>.W1`, `.b1`, `.W2`, `.b2`; returns the offset of W1.
  std::size_t add_mlp(const std::string& prefix, const MlpLayout& mlp) {
    mlp.validate();
    const std::size_t offset = add(prefix + ".W1", mlp.n_hidden, mlp.n_in);
    add(prefix + ".b1", mlp.n_hidden, 1);
    add(prefix + ".W2", mlp.n_out, mlp.n_hidden);
    add(prefix + ".b2", mlp.n_out, 1);
    return offset;
  }

  const ParameterBlock& block(std::string_view name) const {
    for (const auto& b : blocks_)
      if (b.name == name) return b;
    throw ConfigError("no parameter block named '" + std::string(name) + "'");
  }

  std::span<const ParameterBlock> blocks() const { return blocks_; }
  std::size_t size() const { return size_; }

  bool operator==(const ParameterLayout& other) const {
    if (blocks_.size() != other.blocks_.size()) return false;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& a = blocks_[i];
      const auto& b = other.blocks_[i];
      if (a.name != b.name || a.offset != b.offset || a.rows != b.rows || a.cols != b.cols)
        return false;
    }
    return true;
  }

 private:
  std::vector<ParameterBlock> blocks_;
  std::size_t size_ = 0;
};

struct ParameterVector {
  ParameterLayout layout;
  Vector values;

  std::span<const double> block(std::string_view name) const {
    const auto& b = layout.block(name);
    return {values.data() + b.offset, b.size()};
  }
};

namespace detail {

using ConstRowMap = Eigen::Map<const RowMajorMatrix>;
using RowMap = Eigen::Map<RowMajorMatrix>;
using ConstVecMap = Eigen::Map<const Vector>;
using VecMap = Eigen::Map<Vector>;

struct MlpConstView {
  ConstRowMap w1, w2;
  ConstVecMap b1, b2;

  MlpConstView(const MlpLayout& l, std::span<const double> p)
      : w1(p.data(), l.n_hidden, l.n_in),
        w2(p.data() + l.n_hidden * l.n_in + l.n_hidden, l.n_out, l.n_hidden),
        b1(p.data() + l.n_hidden * l.n_in, l.n_hidden),
        b2(p.data() + l.n_hidden * l.n_in + l.n_hidden + l.n_out * l.n_hidden, l.n_out) {}
};

struct MlpView {
  RowMap w1, w2;
  VecMap b1, b2;

  MlpView(const MlpLayout& l, std::span<double> p)
      : w1(p.data(), l.n_hidden, l.n_in),
        w2(p.data() + l.n_hidden * l.n_in + l.n_hidden, l.n_out, l.n_hidden),
        b1(p.data() + l.n_hidden * l.n_in, l.n_hidden),
        b2(p.data() + l.n_hidden * l.n_in + l.n_hidden + l.n_out * l.n_hidden, l.n_out) {}
};

inline void check_params(const MlpLayout& l, std::size_t n) {
  require_dims(n == l.size(), "MLP parameter block length");
}

inline Matrix pre_activation(const MlpConstView& v, const Matrix& inputs) {
  Matrix z = v.w1 * inputs;
  z.colwise() += v.b1;
  return z;
}

inline Matrix activate(Activation a, const Matrix& z) {
  if (a == Activation::ReLU) return z.cwiseMax(0.0);
  return z.array().tanh().matrix();
}

// d activation / dz evaluated at z. ReLU'(0) is taken as 0.
inline Matrix activation_slope(Activation a, const Matrix& z) {
  if (a == Activation::ReLU) return (z.array() > 0.0).cast<double>().matrix();
  return (1.0 - z.array().tanh().square()).matrix();
}

}  // namespace detail

// Weights ~ N(0, 1e-4^2), biases exactly zero. Deterministic for a given seed.
inline Vector init_mlp(const MlpLayout& layout, std::uint64_t seed, double weight_std = 1e-4) {
  layout.validate();
  Vector p = Vector::Zero(static_cast<Index>(layout.size()));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, weight_std);
  detail::MlpView v(layout, {p.data(), layout.size()});
  for (Index i = 0; i < v.w1.size(); ++i) v.w1.data()[i] = normal(rng);
  for (Index i = 0; i < v.w2.size(); ++i) v.w2.data()[i] = normal(rng);
  return p;
}

inline Matrix mlp_forward_batch(const MlpLayout& layout, std::span<const double> params,
                                const Matrix& inputs) {
  detail::check_params(layout, params.size());
  detail::require_dims(inputs.rows() == layout.n_in, "MLP input width");
  detail::MlpConstView v(layout, params);
  Matrix out = v.w2 * detail::activate(layout.activation, detail::pre_activation(v, inputs));
  out.colwise() += v.b2;
  return out;
}

inline Vector mlp_forward(const MlpLayout& layout, std::span<const double> params,
                          const Vector& input) {
  return mlp_forward_batch(layout, params, input);
}

// Accumulates cot^T d(out)/d(params), summed over columns, into `param_cot`.
// When `input_cot` is non-null it receives cot^T d(out)/d(input) column-wise.
inline void mlp_vjp_batch(const MlpLayout& layout, std::span<const double> params,
                          const Matrix& inputs, const Matrix& cot, std::span<double> param_cot,
                          Matrix* input_cot) {
  detail::check_params(layout, params.size());
  detail::check_params(layout, param_cot.size());
  detail::require_dims(inputs.rows() == layout.n_in, "MLP input width");
  detail::require_dims(cot.rows() == layout.n_out && cot.cols() == inputs.cols(),
                       "MLP cotangent shape");
  detail::MlpConstView v(layout, params);
  detail::MlpView g(layout, param_cot);

  const Matrix z = detail::pre_activation(v, inputs);
  const Matrix h = detail::activate(layout.activation, z);
  g.w2.noalias() += cot * h.transpose();
  g.b2 += cot.rowwise().sum();
  const Matrix dz = ((v.w2.transpose() * cot).array() *
                     detail::activation_slope(layout.activation, z).array())
                        .matrix();
  g.w1.noalias() += dz * inputs.transpose();
  g.b1 += dz.rowwise().sum();
  if (input_cot) *input_cot = v.w1.transpose() * dz;
}

struct MlpCotangents {
  Vector params;
  Vector input;
};

inline MlpCotangents mlp_vjp(const MlpLayout& layout, std::span<const double> params,
                             const Vector& input, const Vector& cot) {
  detail::require_dims(cot.size() == layout.n_out, "MLP cotangent length");
  MlpCotangents out{Vector::Zero(static_cast<Index>(layout.size())), Vector()};
  Matrix in_cot;
  mlp_vjp_batch(layout, params, input, cot, {out.params.data(), layout.size()}, &in_cot);
  out.input = in_cot.col(0);
  return out;
}

}  // namespace ctsid
