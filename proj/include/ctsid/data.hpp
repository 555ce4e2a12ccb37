#pragma once

// Sampled input/output datasets, the nonlinear RLC generator, CSV I/O and the
// preprocessing transforms (decimation, affine channel scaling, time units,
// finite-difference velocity estimates).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ctsid/nn.hpp"

namespace ctsid {

// One experiment. Sequences store one sample per column.
struct Dataset {
  Vector t;  // seconds (or the configured time unit), strictly increasing
  Matrix u;  // n_u x N
  Matrix y;  // n_y x N
  std::vector<std::string> input_names;
  std::vector<std::string> output_names;
  // Human-readable channel labels; default to the names.
  std::vector<std::string> input_labels;
  std::vector<std::string> output_labels;

  Index size() const { return t.size(); }
  Index n_u() const { return u.rows(); }
  Index n_y() const { return y.rows(); }

  void fill_default_names() {
    auto fill = [](std::vector<std::string>& names, Index n, char prefix) {
      if (static_cast<Index>(names.size()) == n) return;
      names.clear();
      for (Index i = 0; i < n; ++i) names.push_back(prefix + std::to_string(i + 1));
    };
    fill(input_names, n_u(), 'u');
    fill(output_names, n_y(), 'y');
    if (static_cast<Index>(input_labels.size()) != n_u()) input_labels = input_names;
    if (static_cast<Index>(output_labels.size()) != n_y()) output_labels = output_names;
  }

  void validate() const {
    if (t.size() < 1) throw DataError("dataset is empty");
    if (u.cols() != t.size() || y.cols() != t.size())
      throw DataError("dataset sequences have unequal lengths");
    for (Index k = 1; k < t.size(); ++k)
      if (!(t[k] > t[k - 1]))
        throw DataError("time is not strictly increasing at sample " + std::to_string(k));
    if (!t.allFinite() || !u.allFinite() || !y.allFinite())
      throw DataError("dataset contains non-finite values");
  }

  bool is_uniform(double rel_tol = 1e-9) const {
    if (t.size() < 3) return true;
    const double dt = t[1] - t[0];
    for (Index k = 2; k < t.size(); ++k)
      if (std::abs((t[k] - t[k - 1]) - dt) > rel_tol * std::abs(dt)) return false;
    return true;
  }

  double sample_time() const { return t.size() > 1 ? t[1] - t[0] : 0.0; }
};

// ---- RLC benchmark ---------------------------------------------------------

// Saturating ferrite inductance L(i_L).
inline double rlc_inductance(double i_l, double l0) {
  return l0 * (0.9 * (std::atan(-5.0 * (std::abs(i_l) - 5.0)) / std::numbers::pi + 0.5) + 0.1);
}

struct RlcConfig {
  double resistance = 3.0;       // ohm
  double capacitance = 270e-9;   // F
  double l0 = 50e-6;             // H
  Index n_samples = 4000;
  double sample_time = 0.5e-6;   // s
  // Nominal input bandwidth. The second-order Butterworth low-pass that shapes
  // the white noise has its corner at this value in rad/s.
  double input_bandwidth = 150e3;
  double input_std = 80.0;        // V
  double noise_std_v = 10.0;      // V, on v_C
  double noise_std_i = 1.0;       // A, on i_L
  std::uint64_t seed = 0;
  int substeps = 10;

  void validate() const {
    if (!(resistance > 0 && capacitance > 0 && l0 > 0 && sample_time > 0 && input_bandwidth > 0 &&
          input_std >= 0))
      throw ConfigError("RLC parameters must be positive");
    if (n_samples < 2) throw ConfigError("RLC n_samples must be >= 2");
    if (noise_std_v < 0 || noise_std_i < 0) throw ConfigError("noise stds must be >= 0");
    if (substeps < 1) throw ConfigError("RLC substeps must be >= 1");
    if (input_bandwidth / (2.0 * std::numbers::pi) >= 0.5 / sample_time)
      throw ConfigError("input bandwidth is above the Nyquist frequency");
  }
};

// Second-order Butterworth low-pass, bilinear transform with pre-warping.
struct Biquad {
  double b0, b1, b2, a1, a2;

  static Biquad butterworth_lowpass(double cutoff_hz, double sample_rate) {
    const double k = std::tan(std::numbers::pi * cutoff_hz / sample_rate);
    const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k * k);
    const double b0 = k * k * norm;
    return {b0, 2.0 * b0, b0, 2.0 * (k * k - 1.0) * norm,
            (1.0 - std::numbers::sqrt2 * k + k * k) * norm};
  }

  std::vector<double> filter(const std::vector<double>& x) const {
    std::vector<double> y(x.size());
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      y[k] = b0 * x[k] + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = x[k];
      y2 = y1;
      y1 = y[k];
    }
    return y;
  }
};

inline Vector rlc_dynamics(const RlcConfig& c, const Vector& x, double v_in) {
  const double l = rlc_inductance(x[1], c.l0);
  Vector dx(2);
  dx[0] = x[1] / c.capacitance;
  dx[1] = (-x[0] - c.resistance * x[1] + v_in) / l;
  return dx;
}

struct RlcDatasets {
  Dataset clean;
  Dataset noisy;
};

inline RlcDatasets generate_rlc(const RlcConfig& c) {
  c.validate();
  const auto n = static_cast<std::size_t>(c.n_samples);
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> white(n);
  for (auto& w : white) w = normal(rng);
  const auto shaped = Biquad::butterworth_lowpass(c.input_bandwidth / (2.0 * std::numbers::pi),
                                                  1.0 / c.sample_time)
                          .filter(white);
  double mean = 0.0;
  for (double v : shaped) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : shaped) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  const double gain = sd > 0.0 ? c.input_std / sd : 0.0;

  Dataset d;
  d.t.resize(c.n_samples);
  d.u.resize(1, c.n_samples);
  d.y.resize(2, c.n_samples);
  for (Index k = 0; k < c.n_samples; ++k) {
    d.t[k] = static_cast<double>(k) * c.sample_time;
    d.u(0, k) = shaped[static_cast<std::size_t>(k)] * gain;
  }

  Vector x = Vector::Zero(2);
  const double h = c.sample_time / c.substeps;
  for (Index k = 0; k < c.n_samples; ++k) {
    d.y.col(k) = x;
    if (k + 1 == c.n_samples) break;
    const double v = d.u(0, k);
    for (int s = 0; s < c.substeps; ++s) {
      const Vector k1 = rlc_dynamics(c, x, v);
      const Vector k2 = rlc_dynamics(c, x + 0.5 * h * k1, v);
      const Vector k3 = rlc_dynamics(c, x + 0.5 * h * k2, v);
      const Vector k4 = rlc_dynamics(c, x + h * k3, v);
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  d.input_names = {"u1"};
  d.output_names = {"y1", "y2"};
  d.input_labels = {"v_in"};
  d.output_labels = {"v_C", "i_L"};

  RlcDatasets out{d, d};
  const double stds[2] = {c.noise_std_v, c.noise_std_i};
  for (Index ch = 0; ch < 2; ++ch) {
    if (stds[ch] == 0.0) continue;
    for (Index k = 0; k < c.n_samples; ++k) out.noisy.y(ch, k) += stds[ch] * normal(rng);
  }
  return out;
}

// ---- CSV -------------------------------------------------------------------

struct CsvSchema {
  std::string time_column = "t";
  // Empty lists select every `u<k>` / `y<k>` column in file order.
  std::vector<std::string> input_columns;
  std::vector<std::string> output_columns;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline bool is_prefixed_index(const std::string& name, char prefix) {
  return name.size() > 1 && name[0] == prefix &&
         std::all_of(name.begin() + 1, name.end(), [](char ch) { return ch >= '0' && ch <= '9'; });
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, std::size_t row, const std::string& column) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != last)
    throw DataError("non-numeric cell '" + s + "' at row " + std::to_string(row) + ", column '" +
                    column + "'");
  return v;
}

}  // namespace detail

inline Dataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  std::vector<std::string> header;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    header = detail::split_csv_line(line);
    break;
  }
  if (header.empty()) throw DataError("'" + path + "' has no header row");

  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("'" + path + "' is missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t t_col = column(schema.time_column);
  std::vector<std::string> in_names = schema.input_columns;
  std::vector<std::string> out_names = schema.output_columns;
  if (in_names.empty())
    for (const auto& h : header)
      if (detail::is_prefixed_index(h, 'u')) in_names.push_back(h);
  if (out_names.empty())
    for (const auto& h : header)
      if (detail::is_prefixed_index(h, 'y')) out_names.push_back(h);
  if (in_names.empty() || out_names.empty())
    throw DataError("'" + path + "' declares no input or no output columns");
  std::vector<std::size_t> in_cols, out_cols;
  for (const auto& n : in_names) in_cols.push_back(column(n));
  for (const auto& n : out_names) out_cols.push_back(column(n));

  std::vector<double> t;
  std::vector<std::vector<double>> u(in_cols.size()), y(out_cols.size());
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(row) + " (line " + std::to_string(line_no) +
                      ") has " + std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    const double tk = detail::parse_double(cells[t_col], row, header[t_col]);
    if (!t.empty() && !(tk > t.back()))
      throw DataError("time is not increasing at row " + std::to_string(row) + " (line " +
                      std::to_string(line_no) + ")");
    t.push_back(tk);
    for (std::size_t i = 0; i < in_cols.size(); ++i)
      u[i].push_back(detail::parse_double(cells[in_cols[i]], row, header[in_cols[i]]));
    for (std::size_t i = 0; i < out_cols.size(); ++i)
      y[i].push_back(detail::parse_double(cells[out_cols[i]], row, header[out_cols[i]]));
    ++row;
  }
  if (t.empty()) throw DataError("'" + path + "' has no data rows");

  Dataset d;
  const auto n = static_cast<Index>(t.size());
  d.t = Eigen::Map<const Vector>(t.data(), n);
  d.u.resize(static_cast<Index>(u.size()), n);
  d.y.resize(static_cast<Index>(y.size()), n);
  for (std::size_t i = 0; i < u.size(); ++i)
    d.u.row(static_cast<Index>(i)) = Eigen::Map<const RowVector>(u[i].data(), n);
  for (std::size_t i = 0; i < y.size(); ++i)
    d.y.row(static_cast<Index>(i)) = Eigen::Map<const RowVector>(y[i].data(), n);
  d.input_names = in_names;
  d.output_names = out_names;
  d.fill_default_names();
  d.validate();
  return d;
}

// Writes `t,<inputs>,<outputs>[,<extra>]` with shortest round-trip formatting.
// Lines in `comments` are emitted first, prefixed with '#'.
inline void save_csv(const Dataset& d, const std::string& path,
                     const std::vector<std::string>& comments = {},
                     const std::vector<std::pair<std::string, RowVector>>& extra = {}) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  Dataset named = d;
  named.fill_default_names();
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "t";
  for (const auto& n : named.input_names) out << ',' << n;
  for (const auto& n : named.output_names) out << ',' << n;
  for (const auto& e : extra) {
    detail::require_dims(e.second.size() == d.size(), "extra CSV column length");
    out << ',' << e.first;
  }
  out << '\n';
  for (Index k = 0; k < d.size(); ++k) {
    out << detail::format_double(d.t[k]);
    for (Index i = 0; i < d.n_u(); ++i) out << ',' << detail::format_double(d.u(i, k));
    for (Index i = 0; i < d.n_y(); ++i) out << ',' << detail::format_double(d.y(i, k));
    for (const auto& e : extra) out << ',' << detail::format_double(e.second[k]);
    out << '\n';
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

// ---- transforms ------------------------------------------------------------

// Keeps every `factor`-th sample starting at index 0. With `prefilter`, inputs
// and outputs first pass through a causal moving average of length `factor`.
inline Dataset decimate(const Dataset& d, int factor, bool prefilter = false) {
  if (factor < 1) throw ConfigError("decimation factor must be >= 1");
  Dataset src = d;
  if (prefilter && factor > 1) {
    auto smooth = [factor](Matrix& m) {
      Matrix out = m;
      for (Index k = 0; k < m.cols(); ++k) {
        const Index lo = std::max<Index>(0, k - factor + 1);
        out.col(k) = m.middleCols(lo, k - lo + 1).rowwise().mean();
      }
      m = std::move(out);
    };
    smooth(src.u);
    smooth(src.y);
  }
  const Index n = (d.size() + factor - 1) / factor;
  Dataset out = src;
  out.t.resize(n);
  out.u.resize(d.n_u(), n);
  out.y.resize(d.n_y(), n);
  for (Index k = 0; k < n; ++k) {
    out.t[k] = src.t[k * factor];
    out.u.col(k) = src.u.col(k * factor);
    out.y.col(k) = src.y.col(k * factor);
  }
  return out;
}

// value_out = scale * value_in + offset
struct AffineTransform {
  double scale = 1.0;
  double offset = 0.0;

  double apply(double v) const { return scale * v + offset; }
  double invert(double v) const { return (v - offset) / scale; }
};

struct ChannelRef {
  enum class Kind { Input, Output } kind = Kind::Output;
  Index index = 0;
};

// Resolves a channel by column name or label.
inline ChannelRef find_channel(const Dataset& d, const std::string& name) {
  Dataset named = d;
  named.fill_default_names();
  for (Index i = 0; i < d.n_u(); ++i)
    if (named.input_names[static_cast<std::size_t>(i)] == name ||
        named.input_labels[static_cast<std::size_t>(i)] == name)
      return {ChannelRef::Kind::Input, i};
  for (Index i = 0; i < d.n_y(); ++i)
    if (named.output_names[static_cast<std::size_t>(i)] == name ||
        named.output_labels[static_cast<std::size_t>(i)] == name)
      return {ChannelRef::Kind::Output, i};
  throw ConfigError("dataset has no channel '" + name + "'");
}

inline Dataset apply_affine(const Dataset& d, ChannelRef ch, const AffineTransform& tr) {
  Dataset out = d;
  auto row = ch.kind == ChannelRef::Kind::Input ? out.u.row(ch.index) : out.y.row(ch.index);
  row = (tr.scale * row.array() + tr.offset).matrix();
  return out;
}

struct NormalizedChannel {
  Dataset dataset;
  AffineTransform transform;
};

// Affine map of one channel onto [lo, hi] over this dataset's range.
inline NormalizedChannel normalize_channel(const Dataset& d, ChannelRef ch, double lo = -1.0,
                                           double hi = 1.0) {
  const auto row = ch.kind == ChannelRef::Kind::Input ? d.u.row(ch.index) : d.y.row(ch.index);
  const double mn = row.minCoeff();
  const double mx = row.maxCoeff();
  if (!(mx > mn)) throw DataError("cannot normalize a constant channel");
  AffineTransform tr;
  tr.scale = (hi - lo) / (mx - mn);
  tr.offset = lo - tr.scale * mn;
  return {apply_affine(d, ch, tr), tr};
}

// v_k = (y_{k+1} - y_k) / (t_{k+1} - t_k), last entry repeated.
inline Vector finite_diff_estimate(const Vector& y, const Vector& t) {
  if (y.size() < 2 || t.size() != y.size())
    throw DataError("finite differences need at least two samples of matching length");
  Vector v(y.size());
  for (Index k = 0; k + 1 < y.size(); ++k) v[k] = (y[k + 1] - y[k]) / (t[k + 1] - t[k]);
  v[y.size() - 1] = v[y.size() - 2];
  return v;
}

// ---- preprocessing pipeline ------------------------------------------------

struct ScaleTimeStep {
  double unit = 1.0;  // t_new = t / unit
};
struct AffineStep {
  std::string channel;
  AffineTransform transform;
};
struct NormalizeStep {
  std::string channel;
  double lo = -1.0, hi = 1.0;
};
struct DecimateStep {
  int factor = 1;
  bool prefilter = false;
};
using PreprocessStep = std::variant<ScaleTimeStep, AffineStep, NormalizeStep, DecimateStep>;

// Steps are fitted once (normalization ranges taken from the training data)
// and then replayed on other datasets. Output channels can be mapped back to
// original units with `invert_outputs`.
class Preprocessor {
 public:
  Preprocessor() = default;
  explicit Preprocessor(std::vector<PreprocessStep> steps) : steps_(std::move(steps)) {}

  Dataset fit_apply(const Dataset& d) {
    resolved_.clear();
    Dataset cur = d;
    for (const auto& s : steps_) {
      if (const auto* n = std::get_if<NormalizeStep>(&s)) {
        auto res = normalize_channel(cur, find_channel(cur, n->channel), n->lo, n->hi);
        resolved_.push_back(AffineStep{n->channel, res.transform});
        cur = std::move(res.dataset);
      } else {
        resolved_.push_back(s);
        cur = apply_one(cur, s);
      }
    }
    fitted_ = true;
    return cur;
  }

  Dataset apply(const Dataset& d) const {
    if (!fitted_) throw ConfigError("preprocessor used before fit_apply");
    Dataset cur = d;
    for (const auto& s : resolved_) cur = apply_one(cur, s);
    return cur;
  }

  // Maps model-unit outputs (n_y x N) back to the units of the raw data.
  Matrix invert_outputs(const Dataset& reference, Matrix y) const {
    return invert(reference, std::move(y), ChannelRef::Kind::Output);
  }

  Matrix invert_inputs(const Dataset& reference, Matrix u) const {
    return invert(reference, std::move(u), ChannelRef::Kind::Input);
  }

  Vector invert_time(Vector t) const {
    for (auto it = resolved_.rbegin(); it != resolved_.rend(); ++it)
      if (const auto* s = std::get_if<ScaleTimeStep>(&*it)) t *= s->unit;
    return t;
  }

  // Every step with its resolved parameters.
  const std::vector<PreprocessStep>& resolved() const { return resolved_; }

 private:
  Matrix invert(const Dataset& reference, Matrix m, ChannelRef::Kind kind) const {
    for (auto it = resolved_.rbegin(); it != resolved_.rend(); ++it)
      if (const auto* a = std::get_if<AffineStep>(&*it)) {
        const ChannelRef ch = find_channel(reference, a->channel);
        if (ch.kind == kind)
          m.row(ch.index) = ((m.row(ch.index).array() - a->transform.offset) / a->transform.scale).matrix();
      }
    return m;
  }

  static Dataset apply_one(const Dataset& d, const PreprocessStep& s) {
    if (const auto* st = std::get_if<ScaleTimeStep>(&s)) {
      if (!(st->unit > 0)) throw ConfigError("time unit must be positive");
      Dataset out = d;
      out.t /= st->unit;
      return out;
    }
    if (const auto* a = std::get_if<AffineStep>(&s)) {
      if (a->transform.scale == 0.0) throw ConfigError("channel scale must be nonzero");
      return apply_affine(d, find_channel(d, a->channel), a->transform);
    }
    if (const auto* dc = std::get_if<DecimateStep>(&s)) return decimate(d, dc->factor, dc->prefilter);
    throw ConfigError("normalize step must be resolved before replay");
  }

  std::vector<PreprocessStep> steps_;
  std::vector<PreprocessStep> resolved_;
  bool fitted_ = false;
};

}  // namespace ctsid
