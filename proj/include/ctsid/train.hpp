#pragma once

// Fitting criteria and the optimization loop.
//
//   TSEM         truncated simulation error: q subsequences of length m are
//                simulated from hidden initial states x~_{s_j}; the simulated
//                states are tied to x~ by an alpha-weighted penalty.
//   SCI          soft-constrained integration: no simulation; outputs are
//                fitted from x~ directly and the one-step residual of an
//                integration scheme along x~ is penalized.
//   FullSim      plain simulation error over the whole record.
//   OneStepPred  one-step forward-Euler prediction error on measured outputs
//                (fully observed structures only).
//
// All losses are evaluated in fixed-size chunks whose partial results are
// summed in chunk order, so results are identical for any worker count.

#include <algorithm>
#include <chrono>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ctsid/data.hpp"
#include "ctsid/ode.hpp"
#include "ctsid/parallel.hpp"

namespace ctsid {

enum class Algorithm { TSEM, SCI, FullSim, OneStepPred };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::TSEM: return "tsem";
    case Algorithm::SCI: return "sci";
    case Algorithm::FullSim: return "full_sim";
    case Algorithm::OneStepPred: return "one_step";
  }
  return "?";
}

inline Algorithm algorithm_from_string(std::string_view s) {
  for (auto a : {Algorithm::TSEM, Algorithm::SCI, Algorithm::FullSim, Algorithm::OneStepPred})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown algorithm '" + std::string(s) + "'");
}

enum class HiddenInit { MeasuredOutput, FiniteDifferenceVelocity, Zeros };

inline std::string_view to_string(HiddenInit h) {
  switch (h) {
    case HiddenInit::MeasuredOutput: return "measured_output";
    case HiddenInit::FiniteDifferenceVelocity: return "finite_difference_velocity";
    case HiddenInit::Zeros: return "zeros";
  }
  return "?";
}

inline HiddenInit hidden_init_from_string(std::string_view s) {
  for (auto h : {HiddenInit::MeasuredOutput, HiddenInit::FiniteDifferenceVelocity, HiddenInit::Zeros})
    if (to_string(h) == s) return h;
  throw ConfigError("unknown hidden-state initialization '" + std::string(s) + "'");
}

enum class OptimizerKind { Adam, SGD };

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  Algorithm algorithm = Algorithm::TSEM;
  int iterations = 1000;
  Index batch_size = 64;
  Index seq_len = 64;  // 0 selects the whole record
  double lr = 1e-3;
  double alpha = 1.0;
  IntegratorOptions integrator;
  std::uint64_t seed = 0;
  HiddenInit hidden_init = HiddenInit::MeasuredOutput;
  OptimizerKind optimizer = OptimizerKind::Adam;
  AdamOptions adam;
  int workers = 1;

  Index resolved_seq_len(Index n) const { return seq_len == 0 ? n : seq_len; }

  void validate(Index n) const {
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    const Index m = resolved_seq_len(n);
    if (m < 1 || m > n) throw ConfigError("seq_len must be in [1, N]");
    if (algorithm == Algorithm::SCI && m < 2) throw ConfigError("sci needs seq_len >= 2");
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (!(alpha >= 0)) throw ConfigError("alpha must be >= 0");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (algorithm != Algorithm::SCI && !is_explicit(integrator.scheme))
      throw ConfigError("simulation-based fitting needs forward_euler or rk44");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.epsilon > 0))
      throw ConfigError("invalid Adam hyperparameters");
  }
};

// ---- batch sampling --------------------------------------------------------

// Start indices are drawn without replacement from a shuffled permutation of
// all admissible starts {0, ..., N-m-1} (just {0} when m >= N-1); the
// permutation is reshuffled when exhausted.
class BatchSampler {
 public:
  BatchSampler(Index n, Index m, std::uint64_t seed) : rng_(seed) {
    if (m > n) throw ConfigError("subsequence length exceeds dataset length");
    pool_.resize(static_cast<std::size_t>(std::max<Index>(1, n - m)));
    std::iota(pool_.begin(), pool_.end(), Index{0});
    pos_ = pool_.size();
  }

  std::vector<Index> next(Index q) {
    std::vector<Index> s(static_cast<std::size_t>(q));
    for (auto& v : s) {
      if (pos_ == pool_.size()) {
        std::shuffle(pool_.begin(), pool_.end(), rng_);
        pos_ = 0;
      }
      v = pool_[pos_++];
    }
    return s;
  }

  std::size_t admissible() const { return pool_.size(); }

 private:
  std::vector<Index> pool_;
  std::size_t pos_ = 0;
  std::mt19937_64 rng_;
};

inline std::vector<Index> sample_batch_starts(Index n, Index m, Index q, BatchSampler& sampler) {
  if (m > n) throw ConfigError("subsequence length exceeds dataset length");
  return sampler.next(q);
}

// Batch tensors laid out per time offset h: y[h] is n_y x q, and so on.
struct Batch {
  std::vector<Index> starts;
  Index m = 0;
  std::vector<Matrix> y, u, x_hidden;
  Matrix tau;  // q x m, tau(j, h) = t[s_j + h] - t[s_j]
};

inline Batch make_batch(const Dataset& d, const Matrix& hidden, const std::vector<Index>& starts,
                        Index m) {
  const auto q = static_cast<Index>(starts.size());
  for (Index s : starts)
    if (s < 0 || s + m > d.size()) throw ConfigError("batch start index out of range");
  Batch b;
  b.starts = starts;
  b.m = m;
  b.tau.resize(q, m);
  b.y.assign(static_cast<std::size_t>(m), Matrix(d.n_y(), q));
  b.u.assign(static_cast<std::size_t>(m), Matrix(d.n_u(), q));
  b.x_hidden.assign(static_cast<std::size_t>(m), Matrix(hidden.rows(), q));
  for (Index h = 0; h < m; ++h) {
    auto hh = static_cast<std::size_t>(h);
    for (Index j = 0; j < q; ++j) {
      const Index k = starts[static_cast<std::size_t>(j)] + h;
      b.y[hh].col(j) = d.y.col(k);
      b.u[hh].col(j) = d.u.col(k);
      b.x_hidden[hh].col(j) = hidden.col(k);
      b.tau(j, h) = d.t[k] - d.t[starts[static_cast<std::size_t>(j)]];
    }
  }
  return b;
}

// ---- losses ------------------------------------------------------------------

struct LossAndGrads {
  double total = 0.0;
  double fit = 0.0;
  double reg = 0.0;
  Vector grad_params;
  Matrix grad_hidden;          // n_x x N, zero outside `touched`
  std::vector<Index> touched;  // sorted sample indices covered by the batch
};

inline constexpr Index kSubsequenceChunk = 32;
inline constexpr Index kColumnChunk = 1024;

namespace detail {

inline void check_train_inputs(const ModelStructure& model, std::span<const double> params,
                               const Matrix& hidden, const Dataset& d) {
  require_dims(params.size() == model.n_params(), "parameter vector length");
  require_dims(hidden.rows() == model.n_x() && hidden.cols() == d.size(), "hidden state shape");
  require_dims(d.n_u() == model.n_u() && d.n_y() == model.n_y(), "dataset channels vs model");
}

inline std::vector<Index> covered_indices(const std::vector<Index>& starts, Index m) {
  std::vector<Index> out;
  out.reserve(starts.size() * static_cast<std::size_t>(m));
  for (Index s : starts)
    for (Index h = 0; h < m; ++h) out.push_back(s + h);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct ChunkResult {
  double fit = 0.0;
  double reg = 0.0;
  Vector grad_params;
  std::vector<std::pair<Index, Vector>> hidden_grads;  // (sample index, gradient)
};

inline LossAndGrads reduce_chunks(std::vector<ChunkResult>& chunks, const ModelStructure& model,
                                  Index n, double alpha, std::vector<Index> touched) {
  LossAndGrads out;
  out.grad_params = Vector::Zero(static_cast<Index>(model.n_params()));
  out.grad_hidden = Matrix::Zero(model.n_x(), n);
  for (auto& c : chunks) {
    out.fit += c.fit;
    out.reg += c.reg;
    out.grad_params += c.grad_params;
    for (auto& [k, g] : c.hidden_grads) out.grad_hidden.col(k) += g;
  }
  out.total = out.fit + alpha * out.reg;
  out.touched = std::move(touched);
  return out;
}

}  // namespace detail

inline LossAndGrads tsem_loss_and_grads(const ModelStructure& model, std::span<const double> params,
                                        const Matrix& hidden, const Dataset& d,
                                        const std::vector<Index>& starts, Index m, double alpha,
                                        const IntegratorOptions& integ, int workers = 1) {
  detail::check_train_inputs(model, params, hidden, d);
  if (starts.empty() || m < 1) throw ConfigError("empty batch");
  const auto q = static_cast<Index>(starts.size());
  const double scale = 1.0 / static_cast<double>(q * m);
  const Index n_chunks = (q + kSubsequenceChunk - 1) / kSubsequenceChunk;
  std::vector<detail::ChunkResult> chunks(static_cast<std::size_t>(n_chunks));

  parallel_for(static_cast<std::size_t>(n_chunks), workers, [&](std::size_t c) {
    const Index j0 = static_cast<Index>(c) * kSubsequenceChunk;
    const std::vector<Index> sub(starts.begin() + j0,
                                 starts.begin() + std::min(q, j0 + kSubsequenceChunk));
    const Batch b = make_batch(d, hidden, sub, m);
    const auto qc = static_cast<Index>(sub.size());
    std::vector<RowVector> dt(static_cast<std::size_t>(m - 1));
    for (Index h = 0; h + 1 < m; ++h) dt[static_cast<std::size_t>(h)] = b.tau.col(h + 1).transpose() - b.tau.col(h).transpose();

    auto& res = chunks[c];
    res.grad_params = Vector::Zero(static_cast<Index>(model.n_params()));
    std::span<double> gp(res.grad_params.data(), model.n_params());
    BatchRollout r;
    try {
      r = rollout_batch(model, params, b.x_hidden[0], b.u, dt, integ);
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.step(), "tsem subsequence chunk starting at sample " +
                                          std::to_string(sub.front()));
    }
    std::vector<Matrix> state_cot(static_cast<std::size_t>(m));
    std::vector<Matrix> reg_diff(static_cast<std::size_t>(m));
    for (Index h = 0; h < m; ++h) {
      const auto hh = static_cast<std::size_t>(h);
      const Matrix y_err = model.eval_g_batch(params, r.states[hh]) - b.y[hh];
      reg_diff[hh] = r.states[hh] - b.x_hidden[hh];
      res.fit += scale * y_err.squaredNorm();
      res.reg += scale * reg_diff[hh].squaredNorm();
      Matrix xc;
      model.vjp_g_batch(params, r.states[hh], 2.0 * scale * y_err, gp, &xc);
      state_cot[hh] = xc + (2.0 * alpha * scale) * reg_diff[hh];
    }
    const Matrix x0_cot = backprop_rollout_batch(model, params, r, integ, state_cot, gp);
    res.hidden_grads.reserve(static_cast<std::size_t>(qc * m));
    for (Index j = 0; j < qc; ++j)
      for (Index h = 0; h < m; ++h) {
        Vector g = (-2.0 * alpha * scale) * reg_diff[static_cast<std::size_t>(h)].col(j);
        if (h == 0) g += x0_cot.col(j);
        res.hidden_grads.emplace_back(sub[static_cast<std::size_t>(j)] + h, std::move(g));
      }
  });
  return detail::reduce_chunks(chunks, model, d.size(), alpha, detail::covered_indices(starts, m));
}

inline LossAndGrads sci_loss_and_grads(const ModelStructure& model, std::span<const double> params,
                                       const Matrix& hidden, const Dataset& d,
                                       const std::vector<Index>& starts, Index m, double alpha,
                                       Scheme scheme,
                                       Interpolation interp = Interpolation::ZeroOrderHold,
                                       int workers = 1) {
  detail::check_train_inputs(model, params, hidden, d);
  if (starts.empty() || m < 1) throw ConfigError("empty batch");
  for (Index s : starts)
    if (s < 0 || s + m > d.size()) throw ConfigError("batch start index out of range");
  const auto q = static_cast<Index>(starts.size());
  const double scale = 1.0 / static_cast<double>(q * m);

  // Column k of the fit term and pair (k-1, k) of the residual term, in
  // subsequence-major order.
  std::vector<Index> fit_cols, pair_cols;
  for (Index s : starts)
    for (Index h = 0; h < m; ++h) {
      fit_cols.push_back(s + h);
      if (h > 0) pair_cols.push_back(s + h);
    }
  const auto n_fit = static_cast<Index>(fit_cols.size());
  const auto n_pair = static_cast<Index>(pair_cols.size());
  const Index fit_chunks = (n_fit + kColumnChunk - 1) / kColumnChunk;
  const Index pair_chunks = (n_pair + kColumnChunk - 1) / kColumnChunk;
  std::vector<detail::ChunkResult> chunks(static_cast<std::size_t>(fit_chunks + pair_chunks));

  parallel_for(chunks.size(), workers, [&](std::size_t c) {
    auto& res = chunks[c];
    res.grad_params = Vector::Zero(static_cast<Index>(model.n_params()));
    std::span<double> gp(res.grad_params.data(), model.n_params());
    const bool is_fit = static_cast<Index>(c) < fit_chunks;
    const Index lo = (is_fit ? static_cast<Index>(c) : static_cast<Index>(c) - fit_chunks) * kColumnChunk;
    const auto& cols = is_fit ? fit_cols : pair_cols;
    const Index hi = std::min(static_cast<Index>(cols.size()), lo + kColumnChunk);
    const Index w = hi - lo;
    if (is_fit) {
      Matrix x(model.n_x(), w), y(model.n_y(), w);
      for (Index i = 0; i < w; ++i) {
        x.col(i) = hidden.col(cols[static_cast<std::size_t>(lo + i)]);
        y.col(i) = d.y.col(cols[static_cast<std::size_t>(lo + i)]);
      }
      const Matrix err = model.eval_g_batch(params, x) - y;
      res.fit = scale * err.squaredNorm();
      Matrix xc;
      model.vjp_g_batch(params, x, 2.0 * scale * err, gp, &xc);
      for (Index i = 0; i < w; ++i) res.hidden_grads.emplace_back(cols[static_cast<std::size_t>(lo + i)], xc.col(i));
      return;
    }
    Matrix x0(model.n_x(), w), x1(model.n_x(), w), u0(model.n_u(), w), u1(model.n_u(), w);
    RowVector dt(w);
    for (Index i = 0; i < w; ++i) {
      const Index k = cols[static_cast<std::size_t>(lo + i)];
      x0.col(i) = hidden.col(k - 1);
      x1.col(i) = hidden.col(k);
      u0.col(i) = d.u.col(k - 1);
      u1.col(i) = d.u.col(k);
      dt[i] = d.t[k] - d.t[k - 1];
    }
    const Matrix r = scheme_residual_batch(scheme, model, params, x0, x1, u0, u1, dt, interp);
    if (!r.allFinite()) throw DivergenceError(static_cast<std::size_t>(cols[static_cast<std::size_t>(lo)]), "sci residual");
    res.reg = scale * r.squaredNorm();
    Matrix c0, c1;
    vjp_scheme_residual_batch(scheme, model, params, x0, x1, u0, u1, dt, (2.0 * alpha * scale) * r,
                              gp, c0, c1, interp);
    res.hidden_grads.reserve(static_cast<std::size_t>(2 * w));
    for (Index i = 0; i < w; ++i) {
      const Index k = cols[static_cast<std::size_t>(lo + i)];
      res.hidden_grads.emplace_back(k - 1, c0.col(i));
      res.hidden_grads.emplace_back(k, c1.col(i));
    }
  });
  return detail::reduce_chunks(chunks, model, d.size(), alpha, detail::covered_indices(starts, m));
}

struct FullSimLoss {
  double loss = 0.0;
  Vector grad_params;
  Vector grad_x0;
};

// J = (1/N) sum_k ||y_sim(t_k) - y_k||^2 over one simulation of the full record.
inline FullSimLoss full_sim_loss_and_grads(const ModelStructure& model,
                                           std::span<const double> params, const Vector& x0,
                                           const Dataset& d, const IntegratorOptions& integ) {
  detail::require_dims(d.n_u() == model.n_u() && d.n_y() == model.n_y(), "dataset channels vs model");
  const Trajectory traj = simulate(model, params, x0, d.u, d.t, integ);
  const double scale = 1.0 / static_cast<double>(d.size());
  const Matrix err = model.eval_g_batch(params, traj.states) - d.y;
  FullSimLoss out;
  out.loss = scale * err.squaredNorm();
  Vector g_out = Vector::Zero(static_cast<Index>(model.n_params()));
  Matrix xc;
  model.vjp_g_batch(params, traj.states, 2.0 * scale * err, {g_out.data(), model.n_params()}, &xc);
  SimulationCotangents sc = backprop_simulate(model, params, traj, integ, xc);
  out.grad_params = sc.params + g_out;
  out.grad_x0 = std::move(sc.x0);
  return out;
}

struct OneStepLoss {
  double loss = 0.0;
  Vector grad_params;
};

// J = sum_{t=1}^{N-1} ||y_t - y_{t-1} - dt_t f(y_{t-1}, u_{t-1})||^2 with the
// measured outputs taken as states.
inline OneStepLoss one_step_pred_loss_and_grads(const ModelStructure& model,
                                                std::span<const double> params, const Dataset& d,
                                                int workers = 1) {
  if (model.kind() != StructureKind::FullyObserved)
    throw ConfigError("one-step prediction requires the fully_observed structure");
  detail::require_dims(params.size() == model.n_params(), "parameter vector length");
  detail::require_dims(d.n_u() == model.n_u() && d.n_y() == model.n_y(), "dataset channels vs model");
  const Index n_pairs = d.size() - 1;
  const Index n_chunks = (n_pairs + kColumnChunk - 1) / kColumnChunk;
  std::vector<OneStepLoss> parts(static_cast<std::size_t>(n_chunks));
  parallel_for(parts.size(), workers, [&](std::size_t c) {
    const Index lo = static_cast<Index>(c) * kColumnChunk;
    const Index w = std::min(n_pairs, lo + kColumnChunk) - lo;
    const Matrix y0 = d.y.middleCols(lo, w);
    const Matrix u0 = d.u.middleCols(lo, w);
    const RowVector dt = (d.t.segment(lo + 1, w) - d.t.segment(lo, w)).transpose();
    const Matrix err = d.y.middleCols(lo + 1, w) - y0 -
                       detail::scale_columns(model.eval_f_batch(params, y0, u0), dt);
    auto& p = parts[c];
    p.loss = err.squaredNorm();
    p.grad_params = Vector::Zero(static_cast<Index>(model.n_params()));
    model.vjp_f_batch(params, y0, u0, detail::scale_columns(-2.0 * err, dt),
                      {p.grad_params.data(), model.n_params()}, nullptr, nullptr);
  });
  OneStepLoss out{0.0, Vector::Zero(static_cast<Index>(model.n_params()))};
  for (const auto& p : parts) {
    out.loss += p.loss;
    out.grad_params += p.grad_params;
  }
  return out;
}

// ---- optimizers ------------------------------------------------------------

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t step = 0;

  AdamState() = default;
  explicit AdamState(Index n) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}
};

inline void adam_step(AdamState& s, std::span<double> vars, std::span<const double> grads,
                      double lr, const AdamOptions& o = {}) {
  detail::require_dims(vars.size() == grads.size() && static_cast<Index>(vars.size()) == s.m.size(),
                       "adam operand lengths");
  ++s.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const auto k = static_cast<Index>(i);
    s.m[k] = o.beta1 * s.m[k] + (1.0 - o.beta1) * grads[i];
    s.v[k] = o.beta2 * s.v[k] + (1.0 - o.beta2) * grads[i] * grads[i];
    vars[i] -= lr * (s.m[k] / c1) / (std::sqrt(s.v[k] / c2) + o.epsilon);
  }
}

// Adam restricted to the listed columns of a column-major variable matrix;
// moments of other columns are left untouched. The step counter is shared.
inline void adam_step_columns(AdamState& s, Matrix& vars, const Matrix& grads,
                              const std::vector<Index>& columns, double lr,
                              const AdamOptions& o = {}) {
  detail::require_dims(vars.rows() == grads.rows() && vars.cols() == grads.cols() &&
                           vars.size() == s.m.size(),
                       "adam operand shapes");
  ++s.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(s.step));
  const Index rows = vars.rows();
  for (Index col : columns)
    for (Index r = 0; r < rows; ++r) {
      const Index k = col * rows + r;
      const double g = grads(r, col);
      s.m[k] = o.beta1 * s.m[k] + (1.0 - o.beta1) * g;
      s.v[k] = o.beta2 * s.v[k] + (1.0 - o.beta2) * g * g;
      vars(r, col) -= lr * (s.m[k] / c1) / (std::sqrt(s.v[k] / c2) + o.epsilon);
    }
}

// ---- fitting loop ------------------------------------------------------------

// Copies measured outputs into the state channels they observe:
// fully_observed x = y, cts_physics x2 = y, emps_physics x1 = y, otherwise the
// first min(n_x, n_y) channels.
inline Matrix init_hidden(const ModelStructure& model, const Dataset& d, HiddenInit policy) {
  Matrix x = Matrix::Zero(model.n_x(), d.size());
  if (policy == HiddenInit::Zeros) return x;
  switch (model.kind()) {
    case StructureKind::FullyObserved: x = d.y; break;
    case StructureKind::CtsPhysics: x.row(1) = d.y.row(0); break;
    case StructureKind::EmpsPhysics: x.row(0) = d.y.row(0); break;
    default: {
      const Index k = std::min(model.n_x(), model.n_y());
      x.topRows(k) = d.y.topRows(k);
    }
  }
  if (policy == HiddenInit::FiniteDifferenceVelocity) {
    if (model.n_x() != 2 || model.n_y() != 1)
      throw ConfigError("finite_difference_velocity needs a position/velocity state");
    x.row(0) = d.y.row(0);
    x.row(1) = finite_diff_estimate(d.y.row(0).transpose(), d.t).transpose();
  }
  return x;
}

struct FitReport {
  Vector initial_params;
  Matrix initial_hidden;
  Vector params;
  Matrix hidden;
  std::vector<double> j_tot, j_fit, j_reg;
  double seconds = 0.0;
  TrainConfig config;
};

class FitError : public Error {
 public:
  FitError(const std::string& what, int iteration, std::shared_ptr<FitReport> partial)
      : Error("fit aborted at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration),
        partial_(std::move(partial)) {}

  int iteration() const { return iteration_; }
  const FitReport& partial() const { return *partial_; }

 private:
  int iteration_;
  std::shared_ptr<FitReport> partial_;
};

using ProgressCallback = std::function<void(int iteration, const FitReport&)>;

struct FitOptions {
  std::optional<Vector> initial_params;
  std::optional<Matrix> initial_hidden;
  ProgressCallback progress;
  int progress_every = 1000;
};

inline FitReport fit(const TrainConfig& cfg, const Dataset& d, const ModelStructure& model,
                     const FitOptions& opts = {}) {
  d.validate();
  cfg.validate(d.size());
  detail::require_dims(d.n_u() == model.n_u() && d.n_y() == model.n_y(), "dataset channels vs model");
  if (cfg.algorithm == Algorithm::OneStepPred && model.kind() != StructureKind::FullyObserved)
    throw ConfigError("one-step prediction requires the fully_observed structure");

  auto rep = std::make_shared<FitReport>();
  rep->config = cfg;
  rep->params = opts.initial_params ? *opts.initial_params : model.init_params(cfg.seed);
  detail::require_dims(rep->params.size() == static_cast<Index>(model.n_params()), "initial parameters");
  rep->hidden = opts.initial_hidden ? *opts.initial_hidden : init_hidden(model, d, cfg.hidden_init);
  detail::require_dims(rep->hidden.rows() == model.n_x() && rep->hidden.cols() == d.size(),
                       "initial hidden states");
  rep->initial_params = rep->params;
  rep->initial_hidden = rep->hidden;

  const Index n = d.size();
  const Index m = cfg.resolved_seq_len(n);
  const Index q = cfg.algorithm == Algorithm::TSEM || cfg.algorithm == Algorithm::SCI ? cfg.batch_size : 1;
  BatchSampler sampler(n, m, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamState theta_state(rep->params.size());
  AdamState hidden_state(rep->hidden.size());
  std::span<double> theta(rep->params.data(), static_cast<std::size_t>(rep->params.size()));

  auto update_theta = [&](const Vector& g) {
    if (cfg.optimizer == OptimizerKind::Adam)
      adam_step(theta_state, theta, {g.data(), static_cast<std::size_t>(g.size())}, cfg.lr, cfg.adam);
    else
      rep->params -= cfg.lr * g;
  };
  auto update_hidden = [&](const Matrix& g, const std::vector<Index>& cols) {
    if (cfg.optimizer == OptimizerKind::Adam) {
      adam_step_columns(hidden_state, rep->hidden, g, cols, cfg.lr, cfg.adam);
    } else {
      for (Index c : cols) rep->hidden.col(c) -= cfg.lr * g.col(c);
    }
  };

  const auto t0 = std::chrono::steady_clock::now();
  for (int it = 0; it < cfg.iterations; ++it) {
    try {
      double jt = 0, jf = 0, jr = 0;
      switch (cfg.algorithm) {
        case Algorithm::TSEM:
        case Algorithm::SCI: {
          const auto starts = sample_batch_starts(n, m, q, sampler);
          const LossAndGrads lg =
              cfg.algorithm == Algorithm::TSEM
                  ? tsem_loss_and_grads(model, theta, rep->hidden, d, starts, m, cfg.alpha,
                                        cfg.integrator, cfg.workers)
                  : sci_loss_and_grads(model, theta, rep->hidden, d, starts, m, cfg.alpha,
                                       cfg.integrator.scheme, cfg.integrator.interpolation,
                                       cfg.workers);
          jt = lg.total;
          jf = lg.fit;
          jr = lg.reg;
          if (!std::isfinite(jt)) throw DivergenceError(0, "non-finite loss");
          update_theta(lg.grad_params);
          update_hidden(lg.grad_hidden, lg.touched);
          break;
        }
        case Algorithm::FullSim: {
          const FullSimLoss l = full_sim_loss_and_grads(model, theta, rep->hidden.col(0), d, cfg.integrator);
          jt = jf = l.loss;
          if (!std::isfinite(jt)) throw DivergenceError(0, "non-finite loss");
          Matrix g = Matrix::Zero(rep->hidden.rows(), rep->hidden.cols());
          g.col(0) = l.grad_x0;
          update_theta(l.grad_params);
          update_hidden(g, {0});
          break;
        }
        case Algorithm::OneStepPred: {
          const OneStepLoss l = one_step_pred_loss_and_grads(model, theta, d, cfg.workers);
          jt = jf = l.loss;
          if (!std::isfinite(jt)) throw DivergenceError(0, "non-finite loss");
          update_theta(l.grad_params);
          break;
        }
      }
      rep->j_tot.push_back(jt);
      rep->j_fit.push_back(jf);
      rep->j_reg.push_back(jr);
    } catch (const Error& e) {
      rep->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      throw FitError(e.what(), it, rep);
    }
    if (opts.progress && opts.progress_every > 0 && (it + 1) % opts.progress_every == 0)
      opts.progress(it + 1, *rep);
  }
  rep->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return *rep;
}

}  // namespace ctsid
