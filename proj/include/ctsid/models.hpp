#pragma once

// Neural state-space model structures: x' = f(x, u; theta), y = g(x; theta).
//
//   GeneralSS      f = N_f(x,u)                 g = N_g(x)
//   Incremental    f = A x + B u + N_f(x,u)     g = C x + N_g(x)
//   FullyObserved  f = N_f(x,u)                 g = x
//   CtsPhysics     f = (N_f1(x1,u), N_f2(x1,x2,u))   g = x2
//   EmpsPhysics    f = (x2, N_f(x2,u))          g = x1
//
// For CtsPhysics the u input of N_f2 can be disabled (fed as zero), which
// gives the variant without the overflow path.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctsid/nn.hpp"

namespace ctsid {

enum class StructureKind { GeneralSS, Incremental, FullyObserved, CtsPhysics, EmpsPhysics };

inline std::string_view to_string(StructureKind k) {
  switch (k) {
    case StructureKind::GeneralSS: return "general_ss";
    case StructureKind::Incremental: return "incremental";
    case StructureKind::FullyObserved: return "fully_observed";
    case StructureKind::CtsPhysics: return "cts_physics";
    case StructureKind::EmpsPhysics: return "emps_physics";
  }
  return "?";
}

inline StructureKind structure_kind_from_string(std::string_view s) {
  for (auto k : {StructureKind::GeneralSS, StructureKind::Incremental, StructureKind::FullyObserved,
                 StructureKind::CtsPhysics, StructureKind::EmpsPhysics})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown model variant '" + std::string(s) + "'");
}

struct LinearPart {
  Matrix a;  // n_x x n_x
  Matrix b;  // n_x x n_u
  Matrix c;  // n_y x n_x
};

class ModelStructure {
 public:
  static ModelStructure general_ss(Index n_x, Index n_u, Index n_y, Index hidden_f,
                                   Index hidden_g, Activation act) {
    ModelStructure s(StructureKind::GeneralSS, n_x, n_u, n_y);
    s.add_net("f", {n_x + n_u, hidden_f, n_x, act});
    s.add_net("g", {n_x, hidden_g, n_y, act});
    return s;
  }

  static ModelStructure incremental(LinearPart linear, Index hidden_f, Index hidden_g,
                                    Activation act) {
    const Index n_x = linear.a.rows();
    const Index n_u = linear.b.cols();
    const Index n_y = linear.c.rows();
    detail::require_dims(linear.a.cols() == n_x, "A_L must be n_x x n_x");
    detail::require_dims(linear.b.rows() == n_x, "B_L must be n_x x n_u");
    detail::require_dims(linear.c.cols() == n_x, "C_L must be n_y x n_x");
    ModelStructure s = general_ss(n_x, n_u, n_y, hidden_f, hidden_g, act);
    s.kind_ = StructureKind::Incremental;
    s.linear_ = std::move(linear);
    return s;
  }

  static ModelStructure fully_observed(Index n_x, Index n_u, Index hidden, Activation act) {
    ModelStructure s(StructureKind::FullyObserved, n_x, n_u, n_x);
    s.add_net("f", {n_x + n_u, hidden, n_x, act});
    return s;
  }

  static ModelStructure cts_physics(Index hidden, Activation act, bool input_in_f2 = true) {
    ModelStructure s(StructureKind::CtsPhysics, 2, 1, 1);
    s.add_net("f1", {2, hidden, 1, act});
    s.add_net("f2", {3, hidden, 1, act});
    s.cts_input_in_f2_ = input_in_f2;
    return s;
  }

  static ModelStructure emps_physics(Index hidden, Activation act) {
    ModelStructure s(StructureKind::EmpsPhysics, 2, 1, 1);
    s.add_net("f", {2, hidden, 1, act});
    return s;
  }

  StructureKind kind() const { return kind_; }
  Index n_x() const { return n_x_; }
  Index n_u() const { return n_u_; }
  Index n_y() const { return n_y_; }
  std::size_t n_params() const { return layout_.size(); }
  const ParameterLayout& layout() const { return layout_; }
  const std::optional<LinearPart>& linear() const { return linear_; }
  bool cts_input_in_f2() const { return cts_input_in_f2_; }

  struct Net {
    std::string name;
    MlpLayout mlp;
    std::size_t offset;
  };
  const std::vector<Net>& networks() const { return nets_; }

  // Each network is seeded with `seed + index`.
  Vector init_params(std::uint64_t seed) const {
    Vector p(static_cast<Index>(n_params()));
    for (std::size_t i = 0; i < nets_.size(); ++i)
      p.segment(static_cast<Index>(nets_[i].offset), static_cast<Index>(nets_[i].mlp.size())) =
          init_mlp(nets_[i].mlp, seed + i);
    return p;
  }

  // ---- batched evaluation (one sample per column) --------------------------

  Matrix eval_f_batch(std::span<const double> params, const Matrix& x, const Matrix& u) const {
    check(params, x, &u);
    switch (kind_) {
      case StructureKind::GeneralSS:
      case StructureKind::FullyObserved:
        return forward(0, params, stack(x, u));
      case StructureKind::Incremental: {
        Matrix dx = forward(0, params, stack(x, u));
        dx.noalias() += linear_->a * x;
        dx.noalias() += linear_->b * u;
        return dx;
      }
      case StructureKind::CtsPhysics: {
        Matrix dx(2, x.cols());
        dx.row(0) = forward(0, params, cts_f1_input(x, u));
        dx.row(1) = forward(1, params, cts_f2_input(x, u));
        return dx;
      }
      case StructureKind::EmpsPhysics: {
        Matrix dx(2, x.cols());
        dx.row(0) = x.row(1);
        dx.row(1) = forward(0, params, emps_input(x, u));
        return dx;
      }
    }
    return {};
  }

  Matrix eval_g_batch(std::span<const double> params, const Matrix& x) const {
    check(params, x, nullptr);
    switch (kind_) {
      case StructureKind::GeneralSS: return forward(1, params, x);
      case StructureKind::Incremental: {
        Matrix y = forward(1, params, x);
        y.noalias() += linear_->c * x;
        return y;
      }
      case StructureKind::FullyObserved: return x;
      case StructureKind::CtsPhysics: return x.row(1);
      case StructureKind::EmpsPhysics: return x.row(0);
    }
    return {};
  }

  // Accumulates the parameter cotangent into `param_cot`; x_cot / u_cot are
  // overwritten when non-null.
  void vjp_f_batch(std::span<const double> params, const Matrix& x, const Matrix& u,
                   const Matrix& cot, std::span<double> param_cot, Matrix* x_cot,
                   Matrix* u_cot) const {
    check(params, x, &u);
    detail::require_dims(param_cot.size() == n_params(), "parameter cotangent length");
    detail::require_dims(cot.rows() == n_x_ && cot.cols() == x.cols(), "f cotangent shape");
    const Index batch = x.cols();
    switch (kind_) {
      case StructureKind::GeneralSS:
      case StructureKind::FullyObserved:
      case StructureKind::Incremental: {
        Matrix in_cot;
        backward(0, params, stack(x, u), cot, param_cot, &in_cot);
        if (x_cot) *x_cot = in_cot.topRows(n_x_);
        if (u_cot) *u_cot = in_cot.bottomRows(n_u_);
        if (kind_ == StructureKind::Incremental) {
          if (x_cot) x_cot->noalias() += linear_->a.transpose() * cot;
          if (u_cot) u_cot->noalias() += linear_->b.transpose() * cot;
        }
        return;
      }
      case StructureKind::CtsPhysics: {
        Matrix c1, c2;
        backward(0, params, cts_f1_input(x, u), cot.row(0), param_cot, &c1);
        backward(1, params, cts_f2_input(x, u), cot.row(1), param_cot, &c2);
        if (x_cot) {
          x_cot->resize(2, batch);
          x_cot->row(0) = c1.row(0) + c2.row(0);
          x_cot->row(1) = c2.row(1);
        }
        if (u_cot) {
          *u_cot = c1.row(1);
          if (cts_input_in_f2_) *u_cot += c2.row(2);
        }
        return;
      }
      case StructureKind::EmpsPhysics: {
        Matrix c;
        backward(0, params, emps_input(x, u), cot.row(1), param_cot, &c);
        if (x_cot) {
          x_cot->resize(2, batch);
          x_cot->row(0).setZero();
          x_cot->row(1) = cot.row(0) + c.row(0);
        }
        if (u_cot) *u_cot = c.row(1);
        return;
      }
    }
  }

  void vjp_g_batch(std::span<const double> params, const Matrix& x, const Matrix& cot,
                   std::span<double> param_cot, Matrix* x_cot) const {
    check(params, x, nullptr);
    detail::require_dims(param_cot.size() == n_params(), "parameter cotangent length");
    detail::require_dims(cot.rows() == n_y_ && cot.cols() == x.cols(), "g cotangent shape");
    switch (kind_) {
      case StructureKind::GeneralSS:
      case StructureKind::Incremental: {
        Matrix c;
        backward(1, params, x, cot, param_cot, x_cot ? &c : nullptr);
        if (x_cot) {
          *x_cot = std::move(c);
          if (kind_ == StructureKind::Incremental) x_cot->noalias() += linear_->c.transpose() * cot;
        }
        return;
      }
      case StructureKind::FullyObserved:
        if (x_cot) *x_cot = cot;
        return;
      case StructureKind::CtsPhysics:
        if (x_cot) {
          *x_cot = Matrix::Zero(2, x.cols());
          x_cot->row(1) = cot.row(0);
        }
        return;
      case StructureKind::EmpsPhysics:
        if (x_cot) {
          *x_cot = Matrix::Zero(2, x.cols());
          x_cot->row(0) = cot.row(0);
        }
        return;
    }
  }

  // ---- single-sample conveniences -----------------------------------------

  Vector eval_f(std::span<const double> params, const Vector& x, const Vector& u) const {
    return eval_f_batch(params, x, u);
  }

  Vector eval_g(std::span<const double> params, const Vector& x) const {
    return eval_g_batch(params, x);
  }

  struct FCotangents {
    Vector params, x, u;
  };

  FCotangents vjp_f(std::span<const double> params, const Vector& x, const Vector& u,
                    const Vector& cot) const {
    FCotangents out{Vector::Zero(static_cast<Index>(n_params())), {}, {}};
    Matrix xc, uc;
    vjp_f_batch(params, x, u, cot, {out.params.data(), n_params()}, &xc, &uc);
    out.x = xc.col(0);
    out.u = uc.col(0);
    return out;
  }

  struct GCotangents {
    Vector params, x;
  };

  GCotangents vjp_g(std::span<const double> params, const Vector& x, const Vector& cot) const {
    GCotangents out{Vector::Zero(static_cast<Index>(n_params())), {}};
    Matrix xc;
    vjp_g_batch(params, x, cot, {out.params.data(), n_params()}, &xc);
    out.x = xc.col(0);
    return out;
  }

 private:
  ModelStructure(StructureKind k, Index n_x, Index n_u, Index n_y)
      : kind_(k), n_x_(n_x), n_u_(n_u), n_y_(n_y) {
    if (n_x < 1 || n_u < 1 || n_y < 1) throw DimensionError("model dimensions must be >= 1");
  }

  void add_net(std::string name, MlpLayout mlp) {
    const std::size_t offset = layout_.add_mlp(name, mlp);
    nets_.push_back({std::move(name), mlp, offset});
  }

  std::span<const double> net_params(std::size_t i, std::span<const double> p) const {
    return p.subspan(nets_[i].offset, nets_[i].mlp.size());
  }

  Matrix forward(std::size_t i, std::span<const double> p, const Matrix& in) const {
    return mlp_forward_batch(nets_[i].mlp, net_params(i, p), in);
  }

  void backward(std::size_t i, std::span<const double> p, const Matrix& in, const Matrix& cot,
                std::span<double> g, Matrix* in_cot) const {
    mlp_vjp_batch(nets_[i].mlp, net_params(i, p), in, cot,
                  g.subspan(nets_[i].offset, nets_[i].mlp.size()), in_cot);
  }

  void check(std::span<const double> params, const Matrix& x, const Matrix* u) const {
    detail::require_dims(params.size() == n_params(), "parameter vector length");
    detail::require_dims(x.rows() == n_x_, "state length");
    if (u) detail::require_dims(u->rows() == n_u_ && u->cols() == x.cols(), "input length");
  }

  static Matrix stack(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() + b.rows(), a.cols());
    out << a, b;
    return out;
  }

  static Matrix cts_f1_input(const Matrix& x, const Matrix& u) {
    Matrix in(2, x.cols());
    in << x.row(0), u.row(0);
    return in;
  }

  Matrix cts_f2_input(const Matrix& x, const Matrix& u) const {
    Matrix in(3, x.cols());
    in.topRows(2) = x;
    if (cts_input_in_f2_)
      in.row(2) = u.row(0);
    else
      in.row(2).setZero();
    return in;
  }

  static Matrix emps_input(const Matrix& x, const Matrix& u) {
    Matrix in(2, x.cols());
    in << x.row(1), u.row(0);
    return in;
  }

  StructureKind kind_;
  Index n_x_, n_u_, n_y_;
  ParameterLayout layout_;
  std::vector<Net> nets_;
  std::optional<LinearPart> linear_;
  bool cts_input_in_f2_ = true;
};

}  // namespace ctsid
