#pragma once

// Fixed-step integration of x' = f(x, u) with reverse-mode sweeps through the
// solver steps, and one-step scheme residuals for consistency penalties.
//
// Inputs are sampled on the integration grid. Between samples they are held
// (zero-order hold) or, optionally, linearly interpolated for intermediate
// stage/substep times.

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "ctsid/models.hpp"

namespace ctsid {

enum class Scheme { ForwardEuler, RK44, BackwardEulerResidual, CrankNicolsonResidual };

inline std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::ForwardEuler: return "forward_euler";
    case Scheme::RK44: return "rk44";
    case Scheme::BackwardEulerResidual: return "backward_euler";
    case Scheme::CrankNicolsonResidual: return "crank_nicolson";
  }
  return "?";
}

inline Scheme scheme_from_string(std::string_view s) {
  for (auto k : {Scheme::ForwardEuler, Scheme::RK44, Scheme::BackwardEulerResidual,
                 Scheme::CrankNicolsonResidual})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown scheme '" + std::string(s) + "'");
}

inline bool is_explicit(Scheme s) { return s == Scheme::ForwardEuler || s == Scheme::RK44; }

enum class Interpolation { ZeroOrderHold, Linear };

inline std::string_view to_string(Interpolation i) {
  return i == Interpolation::ZeroOrderHold ? "zoh" : "linear";
}

inline Interpolation interpolation_from_string(std::string_view s) {
  if (s == "zoh") return Interpolation::ZeroOrderHold;
  if (s == "linear") return Interpolation::Linear;
  throw ConfigError("unknown interpolation '" + std::string(s) + "'");
}

struct IntegratorOptions {
  Scheme scheme = Scheme::ForwardEuler;
  Interpolation interpolation = Interpolation::ZeroOrderHold;
  int substeps = 1;
};

namespace detail {

// Everything needed to replay one explicit micro-step backwards.
struct StepRecord {
  std::array<Matrix, 4> stage_x;
  std::array<Matrix, 4> stage_u;
  RowVector dt;
};

inline Matrix scale_columns(const Matrix& m, const RowVector& s) {
  return (m.array().rowwise() * s.array()).matrix();
}

inline Matrix input_at(const Matrix& u0, const Matrix& u1, Interpolation interp, double frac) {
  if (interp == Interpolation::ZeroOrderHold || frac == 0.0) return u0;
  return u0 + frac * (u1 - u0);
}

// One explicit micro-step covering the fraction [f0, f1] of a sampling
// interval whose end-point inputs are u0 and u1.
inline Matrix explicit_step(const ModelStructure& model, std::span<const double> p, const Matrix& x,
                            const Matrix& u0, const Matrix& u1, const RowVector& dt, Scheme scheme,
                            Interpolation interp, double f0, double f1, StepRecord* rec) {
  if (scheme == Scheme::ForwardEuler) {
    Matrix ua = input_at(u0, u1, interp, f0);
    Matrix k1 = model.eval_f_batch(p, x, ua);
    if (rec) {
      rec->stage_x[0] = x;
      rec->stage_u[0] = std::move(ua);
      rec->dt = dt;
    }
    return x + scale_columns(k1, dt);
  }
  if (scheme != Scheme::RK44) throw ConfigError("scheme is not an explicit integrator");
  const double fm = 0.5 * (f0 + f1);
  Matrix ua = input_at(u0, u1, interp, f0);
  Matrix um = input_at(u0, u1, interp, fm);
  Matrix ub = input_at(u0, u1, interp, f1);
  const RowVector half = 0.5 * dt;
  Matrix x2 = x;
  const Matrix k1 = model.eval_f_batch(p, x, ua);
  x2 += scale_columns(k1, half);
  const Matrix k2 = model.eval_f_batch(p, x2, um);
  Matrix x3 = x + scale_columns(k2, half);
  const Matrix k3 = model.eval_f_batch(p, x3, um);
  Matrix x4 = x + scale_columns(k3, dt);
  const Matrix k4 = model.eval_f_batch(p, x4, ub);
  Matrix next = x + scale_columns(k1 + 2.0 * k2 + 2.0 * k3 + k4, dt / 6.0);
  if (rec) {
    rec->stage_x = {x, std::move(x2), std::move(x3), std::move(x4)};
    rec->stage_u = {std::move(ua), um, std::move(um), std::move(ub)};
    rec->dt = dt;
  }
  return next;
}

// Given the cotangent of the step output, accumulates into `param_cot` and
// returns the cotangent of the step input state.
inline Matrix explicit_step_vjp(const ModelStructure& model, std::span<const double> p,
                                const StepRecord& rec, Scheme scheme, const Matrix& cot,
                                std::span<double> param_cot) {
  Matrix x_cot = cot;
  Matrix sx;
  if (scheme == Scheme::ForwardEuler) {
    model.vjp_f_batch(p, rec.stage_x[0], rec.stage_u[0], scale_columns(cot, rec.dt), param_cot,
                      &sx, nullptr);
    x_cot += sx;
    return x_cot;
  }
  const RowVector& dt = rec.dt;
  Matrix k4_cot = scale_columns(cot, dt / 6.0);
  Matrix k3_cot = scale_columns(cot, dt / 3.0);
  Matrix k2_cot = k3_cot;
  Matrix k1_cot = k4_cot;

  model.vjp_f_batch(p, rec.stage_x[3], rec.stage_u[3], k4_cot, param_cot, &sx, nullptr);
  x_cot += sx;
  k3_cot += scale_columns(sx, dt);

  model.vjp_f_batch(p, rec.stage_x[2], rec.stage_u[2], k3_cot, param_cot, &sx, nullptr);
  x_cot += sx;
  k2_cot += scale_columns(sx, 0.5 * dt);

  model.vjp_f_batch(p, rec.stage_x[1], rec.stage_u[1], k2_cot, param_cot, &sx, nullptr);
  x_cot += sx;
  k1_cot += scale_columns(sx, 0.5 * dt);

  model.vjp_f_batch(p, rec.stage_x[0], rec.stage_u[0], k1_cot, param_cot, &sx, nullptr);
  x_cot += sx;
  return x_cot;
}

}  // namespace detail

// States of B independent trajectories at m grid points, plus the per
// micro-step records for the reverse sweep.
struct BatchRollout {
  std::vector<Matrix> states;
  std::vector<detail::StepRecord> steps;
  int substeps = 1;
};

// `u[h]` holds the inputs at grid point h (n_u x B), `dt[h]` the length of
// interval h -> h+1 for every column.
inline BatchRollout rollout_batch(const ModelStructure& model, std::span<const double> p,
                                  const Matrix& x0, const std::vector<Matrix>& u,
                                  const std::vector<RowVector>& dt, const IntegratorOptions& opt) {
  if (!is_explicit(opt.scheme))
    throw ConfigError("simulation requires forward_euler or rk44, got " +
                      std::string(to_string(opt.scheme)));
  if (opt.substeps < 1) throw ConfigError("substeps must be >= 1");
  detail::require_dims(!u.empty() && dt.size() + 1 == u.size(), "rollout input/step counts");
  detail::require_dims(x0.rows() == model.n_x(), "initial state length");
  if (!x0.allFinite()) throw DivergenceError(0, "initial state");

  BatchRollout r;
  r.substeps = opt.substeps;
  r.states.reserve(u.size());
  r.steps.resize(dt.size() * static_cast<std::size_t>(opt.substeps));
  r.states.push_back(x0);
  const double inv = 1.0 / opt.substeps;
  for (std::size_t h = 0; h + 1 < u.size(); ++h) {
    const RowVector sub_dt = dt[h] * inv;
    Matrix x = r.states.back();
    for (int k = 0; k < opt.substeps; ++k) {
      auto& rec = r.steps[h * static_cast<std::size_t>(opt.substeps) + static_cast<std::size_t>(k)];
      x = detail::explicit_step(model, p, x, u[h], u[h + 1], sub_dt, opt.scheme, opt.interpolation,
                                k * inv, (k + 1) * inv, &rec);
    }
    if (!x.allFinite()) throw DivergenceError(h + 1, "rollout");
    r.states.push_back(std::move(x));
  }
  return r;
}

// Reverse sweep. `state_cot[h]` is the cotangent injected at grid point h.
// Returns the cotangent of x0; the parameter cotangent is accumulated.
inline Matrix backprop_rollout_batch(const ModelStructure& model, std::span<const double> p,
                                     const BatchRollout& r, const IntegratorOptions& opt,
                                     const std::vector<Matrix>& state_cot,
                                     std::span<double> param_cot) {
  detail::require_dims(state_cot.size() == r.states.size(), "one cotangent per grid point");
  Matrix carry = state_cot.back();
  const auto sub = static_cast<std::size_t>(r.substeps);
  for (std::size_t h = r.states.size() - 1; h-- > 0;) {
    for (std::size_t k = sub; k-- > 0;)
      carry = detail::explicit_step_vjp(model, p, r.steps[h * sub + k], opt.scheme, carry,
                                        param_cot);
    carry += state_cot[h];
  }
  return carry;
}

struct Trajectory {
  Vector grid;    // relative times, grid[0] == 0
  Matrix states;  // n_x x grid.size()
  BatchRollout record;
};

namespace detail {

inline void check_grid(const Vector& grid) {
  if (grid.size() < 1) throw DataError("empty time grid");
  for (Index k = 1; k < grid.size(); ++k)
    if (!(grid[k] > grid[k - 1]))
      throw DataError("time grid is not strictly increasing at index " + std::to_string(k));
}

}  // namespace detail

// Simulates one trajectory; `u_samples` has one column per grid point.
inline Trajectory simulate(const ModelStructure& model, std::span<const double> p,
                           const Vector& x0, const Matrix& u_samples, const Vector& grid,
                           const IntegratorOptions& opt) {
  detail::check_grid(grid);
  detail::require_dims(u_samples.cols() == grid.size() && u_samples.rows() == model.n_u(),
                       "input samples must match the grid");
  std::vector<Matrix> u(static_cast<std::size_t>(grid.size()));
  std::vector<RowVector> dt(u.size() - 1);
  for (Index k = 0; k < grid.size(); ++k) {
    u[static_cast<std::size_t>(k)] = u_samples.col(k);
    if (k + 1 < grid.size()) dt[static_cast<std::size_t>(k)] = RowVector::Constant(1, grid[k + 1] - grid[k]);
  }
  Trajectory t;
  t.grid = grid.array() - grid[0];
  t.record = rollout_batch(model, p, x0, u, dt, opt);
  t.states.resize(model.n_x(), grid.size());
  for (Index k = 0; k < grid.size(); ++k) t.states.col(k) = t.record.states[static_cast<std::size_t>(k)];
  return t;
}

struct SimulationCotangents {
  Vector params;
  Vector x0;
};

// `state_cot` has one column per grid point (zero where unused).
inline SimulationCotangents backprop_simulate(const ModelStructure& model,
                                              std::span<const double> p, const Trajectory& traj,
                                              const IntegratorOptions& opt,
                                              const Matrix& state_cot) {
  detail::require_dims(state_cot.rows() == model.n_x() && state_cot.cols() == traj.states.cols(),
                       "one state cotangent per grid point");
  std::vector<Matrix> cots(static_cast<std::size_t>(state_cot.cols()));
  for (Index k = 0; k < state_cot.cols(); ++k) cots[static_cast<std::size_t>(k)] = state_cot.col(k);
  SimulationCotangents out{Vector::Zero(static_cast<Index>(model.n_params())), {}};
  out.x0 = backprop_rollout_batch(model, p, traj.record, opt, cots, {out.params.data(), model.n_params()});
  return out;
}

// ---- one-step residuals ----------------------------------------------------
//
//   ForwardEuler           x1 - x0 - dt f(x0, u0)
//   RK44                   x1 - (RK44 step from x0)
//   BackwardEulerResidual  x1 - x0 - dt f(x1, u1)
//   CrankNicolsonResidual  x1 - x0 - dt/2 (f(x0, u0) + f(x1, u1))

inline Matrix scheme_residual_batch(Scheme scheme, const ModelStructure& model,
                                    std::span<const double> p, const Matrix& x0, const Matrix& x1,
                                    const Matrix& u0, const Matrix& u1, const RowVector& dt,
                                    Interpolation interp = Interpolation::ZeroOrderHold) {
  detail::require_dims(x0.rows() == model.n_x() && x1.rows() == model.n_x() &&
                           x0.cols() == x1.cols() && dt.size() == x0.cols(),
                       "residual operand shapes");
  for (Index i = 0; i < dt.size(); ++i)
    if (!(dt[i] > 0.0)) throw DataError("residual step must be positive");
  switch (scheme) {
    case Scheme::ForwardEuler:
    case Scheme::RK44:
      return x1 - detail::explicit_step(model, p, x0, u0, u1, dt, scheme, interp, 0.0, 1.0, nullptr);
    case Scheme::BackwardEulerResidual:
      return x1 - x0 - detail::scale_columns(model.eval_f_batch(p, x1, u1), dt);
    case Scheme::CrankNicolsonResidual:
      return x1 - x0 -
             detail::scale_columns(model.eval_f_batch(p, x0, u0) + model.eval_f_batch(p, x1, u1),
                                   0.5 * dt);
  }
  return {};
}

// Accumulates into `param_cot`; x0_cot and x1_cot are overwritten.
inline void vjp_scheme_residual_batch(Scheme scheme, const ModelStructure& model,
                                      std::span<const double> p, const Matrix& x0,
                                      const Matrix& x1, const Matrix& u0, const Matrix& u1,
                                      const RowVector& dt, const Matrix& cot,
                                      std::span<double> param_cot, Matrix& x0_cot, Matrix& x1_cot,
                                      Interpolation interp = Interpolation::ZeroOrderHold) {
  detail::require_dims(cot.rows() == model.n_x() && cot.cols() == x0.cols(),
                       "residual cotangent shape");
  Matrix sx;
  switch (scheme) {
    case Scheme::ForwardEuler:
    case Scheme::RK44: {
      detail::StepRecord rec;
      detail::explicit_step(model, p, x0, u0, u1, dt, scheme, interp, 0.0, 1.0, &rec);
      x1_cot = cot;
      x0_cot = detail::explicit_step_vjp(model, p, rec, scheme, -cot, param_cot);
      return;
    }
    case Scheme::BackwardEulerResidual:
      model.vjp_f_batch(p, x1, u1, detail::scale_columns(-cot, dt), param_cot, &sx, nullptr);
      x1_cot = cot + sx;
      x0_cot = -cot;
      return;
    case Scheme::CrankNicolsonResidual: {
      const Matrix c = detail::scale_columns(-cot, 0.5 * dt);
      model.vjp_f_batch(p, x1, u1, c, param_cot, &sx, nullptr);
      x1_cot = cot + sx;
      model.vjp_f_batch(p, x0, u0, c, param_cot, &sx, nullptr);
      x0_cot = -cot + sx;
      return;
    }
  }
}

inline Vector scheme_residual(Scheme scheme, const ModelStructure& model, std::span<const double> p,
                              const Vector& x_prev, const Vector& x_next, const Vector& u_prev,
                              const Vector& u_next, double dt,
                              Interpolation interp = Interpolation::ZeroOrderHold) {
  return scheme_residual_batch(scheme, model, p, x_prev, x_next, u_prev, u_next,
                               RowVector::Constant(1, dt), interp);
}

struct ResidualCotangents {
  Vector params, x_prev, x_next;
};

inline ResidualCotangents vjp_scheme_residual(Scheme scheme, const ModelStructure& model,
                                              std::span<const double> p, const Vector& x_prev,
                                              const Vector& x_next, const Vector& u_prev,
                                              const Vector& u_next, double dt, const Vector& cot,
                                              Interpolation interp = Interpolation::ZeroOrderHold) {
  ResidualCotangents out{Vector::Zero(static_cast<Index>(model.n_params())), {}, {}};
  Matrix c0, c1;
  vjp_scheme_residual_batch(scheme, model, p, x_prev, x_next, u_prev, u_next,
                            RowVector::Constant(1, dt), cot, {out.params.data(), model.n_params()},
                            c0, c1, interp);
  out.x_prev = c0.col(0);
  out.x_next = c1.col(0);
  return out;
}

}  // namespace ctsid
