#pragma once

// Channel-wise fit indices. Inputs are n_y x N (one sample per column).

#include <cmath>

#include "ctsid/nn.hpp"

namespace ctsid {

inline Vector r2(const Matrix& y_meas, const Matrix& y_sim) {
  detail::require_dims(y_meas.rows() == y_sim.rows() && y_meas.cols() == y_sim.cols(),
                       "r2 operands must have equal shapes");
  if (y_meas.cols() < 2) throw DataError("r2 needs at least two samples");
  Vector out(y_meas.rows());
  for (Index c = 0; c < y_meas.rows(); ++c) {
    const auto meas = y_meas.row(c).array();
    const double den = (meas - meas.mean()).square().sum();
    if (!(den > 0.0)) throw DataError("r2 undefined for a constant measured channel");
    out[c] = 1.0 - (meas - y_sim.row(c).array()).square().sum() / den;
  }
  return out;
}

inline Vector rmse(const Matrix& y_meas, const Matrix& y_sim) {
  detail::require_dims(y_meas.rows() == y_sim.rows() && y_meas.cols() == y_sim.cols(),
                       "rmse operands must have equal shapes");
  if (y_meas.cols() < 1) throw DataError("rmse needs at least one sample");
  return ((y_meas - y_sim).array().square().rowwise().mean()).sqrt().matrix();
}

struct MetricReport {
  Vector r2;
  Vector rmse;
  Index n = 0;
};

inline MetricReport evaluate_metrics(const Matrix& y_meas, const Matrix& y_sim) {
  return {r2(y_meas, y_sim), rmse(y_meas, y_sim), y_meas.cols()};
}

}  // namespace ctsid
