#pragma once

// Run-config plumbing and the generate / train / eval / export commands behind
// the `ctsid` executable. Needs nlohmann/json and CLI11 on the include path.
//
// Config precedence, lowest to highest: file < CTSID_* environment < flags.
// Environment names map onto config keys with `__` as the nesting separator,
// e.g. CTSID_TRAIN__LR=1e-3 sets train.lr. Relative paths written in the config
// file resolve against the file's directory.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ctsid/data.hpp"
#include "ctsid/metrics.hpp"
#include "ctsid/train.hpp"

extern char** environ;

namespace ctsid::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Mirrors configs/run_config.schema.json.
inline const char* const kRunConfigSchema = R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "ctsid run configuration",
  "type": "object",
  "additionalProperties": false,
  "required": ["dataset", "model", "train"],
  "properties": {
    "seed": {"type": "integer", "minimum": 0},
    "output_dir": {"type": "string", "minLength": 1},
    "dataset": {"$ref": "#/$defs/dataset"},
    "test_dataset": {"$ref": "#/$defs/dataset"},
    "preprocessing": {"type": "array", "items": {"$ref": "#/$defs/step"}},
    "model": {"$ref": "#/$defs/model"},
    "train": {"$ref": "#/$defs/train"},
    "eval": {"$ref": "#/$defs/eval"}
  },
  "$defs": {
    "positive": {"type": "number", "exclusiveMinimum": 0},
    "nonnegative": {"type": "number", "minimum": 0},
    "names": {"type": "array", "items": {"type": "string", "minLength": 1}, "minItems": 1},
    "matrix": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
    "rlc": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "resistance": {"$ref": "#/$defs/positive"},
        "capacitance": {"$ref": "#/$defs/positive"},
        "l0": {"$ref": "#/$defs/positive"},
        "n_samples": {"type": "integer", "minimum": 2},
        "sample_time": {"$ref": "#/$defs/positive"},
        "input_bandwidth": {"$ref": "#/$defs/positive"},
        "input_std": {"$ref": "#/$defs/nonnegative"},
        "noise_std_v": {"$ref": "#/$defs/nonnegative"},
        "noise_std_i": {"$ref": "#/$defs/nonnegative"},
        "seed": {"type": "integer", "minimum": 0},
        "substeps": {"type": "integer", "minimum": 1}
      }
    },
    "dataset": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "path": {"type": "string", "minLength": 1},
        "rlc": {"$ref": "#/$defs/rlc"},
        "variant": {"enum": ["noisy", "clean"]},
        "time_column": {"type": "string", "minLength": 1},
        "input_columns": {"$ref": "#/$defs/names"},
        "output_columns": {"$ref": "#/$defs/names"},
        "input_labels": {"$ref": "#/$defs/names"},
        "output_labels": {"$ref": "#/$defs/names"}
      },
      "oneOf": [{"required": ["path"]}, {"required": ["rlc"]}]
    },
    "step": {
      "oneOf": [
        {
          "type": "object",
          "additionalProperties": false,
          "required": ["type", "unit"],
          "properties": {"type": {"const": "scale_time"}, "unit": {"$ref": "#/$defs/positive"}}
        },
        {
          "type": "object",
          "additionalProperties": false,
          "required": ["type", "channel", "scale"],
          "properties": {
            "type": {"const": "affine"},
            "channel": {"type": "string", "minLength": 1},
            "scale": {"type": "number"},
            "offset": {"type": "number"}
          }
        },
        {
          "type": "object",
          "additionalProperties": false,
          "required": ["type", "channel"],
          "properties": {
            "type": {"const": "normalize"},
            "channel": {"type": "string", "minLength": 1},
            "lo": {"type": "number"},
            "hi": {"type": "number"}
          }
        },
        {
          "type": "object",
          "additionalProperties": false,
          "required": ["type", "factor"],
          "properties": {
            "type": {"const": "decimate"},
            "factor": {"type": "integer", "minimum": 1},
            "prefilter": {"type": "boolean"}
          }
        }
      ]
    },
    "model": {
      "type": "object",
      "additionalProperties": false,
      "required": ["structure"],
      "properties": {
        "structure": {"enum": ["general_ss", "incremental", "fully_observed", "cts_physics", "emps_physics"]},
        "n_x": {"type": "integer", "minimum": 1},
        "n_u": {"type": "integer", "minimum": 1},
        "n_y": {"type": "integer", "minimum": 1},
        "hidden": {"type": "integer", "minimum": 1},
        "hidden_g": {"type": "integer", "minimum": 1},
        "activation": {"enum": ["relu", "tanh"]},
        "input_in_f2": {"type": "boolean"},
        "linear": {
          "type": "object",
          "additionalProperties": false,
          "required": ["a", "b", "c"],
          "properties": {
            "a": {"$ref": "#/$defs/matrix"},
            "b": {"$ref": "#/$defs/matrix"},
            "c": {"$ref": "#/$defs/matrix"}
          }
        }
      }
    },
    "train": {
      "type": "object",
      "additionalProperties": false,
      "required": ["algorithm"],
      "properties": {
        "algorithm": {"enum": ["tsem", "sci", "full_sim", "one_step"]},
        "iterations": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "seq_len": {"type": "integer", "minimum": 0},
        "lr": {"$ref": "#/$defs/positive"},
        "alpha": {"$ref": "#/$defs/nonnegative"},
        "scheme": {"enum": ["forward_euler", "rk44", "backward_euler", "crank_nicolson"]},
        "interpolation": {"enum": ["zoh", "linear"]},
        "substeps": {"type": "integer", "minimum": 1},
        "hidden_init": {"enum": ["measured_output", "finite_difference_velocity", "zeros"]},
        "optimizer": {"enum": ["adam", "sgd"]},
        "adam": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "epsilon": {"$ref": "#/$defs/positive"}
          }
        },
        "workers": {"type": "integer", "minimum": 1},
        "progress_every": {"type": "integer", "minimum": 0}
      }
    },
    "eval": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "initial_state": {
          "oneOf": [
            {"enum": ["zeros", "report"]},
            {"type": "array", "items": {"type": "number"}, "minItems": 1}
          ]
        },
        "scheme": {"enum": ["forward_euler", "rk44"]},
        "substeps": {"type": "integer", "minimum": 1}
      }
    }
  }
})json";

// ---- schema validation -------------------------------------------------------

// Validator for the JSON Schema keywords the run-config schema uses: $ref into
// $defs, type, const, enum, numeric bounds, minLength, items, minItems,
// maxItems, required, properties, additionalProperties: false, oneOf.
class SchemaValidator {
 public:
  explicit SchemaValidator(json schema) : root_(std::move(schema)) {}

  void validate(const json& doc) const {
    if (auto err = check(root_, doc, "")) throw ConfigError("config" + *err);
  }

 private:
  static std::string where(const std::string& path) { return path.empty() ? "" : " at " + path; }

  static bool has_type(const json& v, const std::string& t) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "boolean") return v.is_boolean();
    if (t == "null") return v.is_null();
    if (t == "number") return v.is_number();
    if (t == "integer") {
      if (v.is_number_integer()) return true;
      if (!v.is_number_float()) return false;
      const double d = v.get<double>();
      return std::isfinite(d) && d == std::floor(d);
    }
    return false;
  }

  std::optional<std::string> check(const json& s, const json& v, const std::string& path) const {
    if (s.contains("$ref")) {
      const std::string ref = s["$ref"];
      const std::string prefix = "#/$defs/";
      if (ref.rfind(prefix, 0) != 0) throw Error("unsupported schema reference '" + ref + "'");
      return check(root_["$defs"][ref.substr(prefix.size())], v, path);
    }
    if (s.contains("type") && !has_type(v, s["type"]))
      return where(path) + ": expected " + s["type"].get<std::string>() + ", got " + v.dump();
    if (s.contains("const") && v != s["const"])
      return where(path) + ": expected " + s["const"].dump();
    if (s.contains("enum")) {
      bool found = false;
      for (const auto& e : s["enum"]) found = found || e == v;
      if (!found) return where(path) + ": " + v.dump() + " is not one of " + s["enum"].dump();
    }
    if (v.is_number()) {
      const double x = v.get<double>();
      if (s.contains("minimum") && x < s["minimum"].get<double>())
        return where(path) + ": must be >= " + s["minimum"].dump();
      if (s.contains("exclusiveMinimum") && !(x > s["exclusiveMinimum"].get<double>()))
        return where(path) + ": must be > " + s["exclusiveMinimum"].dump();
      if (s.contains("exclusiveMaximum") && !(x < s["exclusiveMaximum"].get<double>()))
        return where(path) + ": must be < " + s["exclusiveMaximum"].dump();
    }
    if (v.is_string() && s.contains("minLength") &&
        v.get<std::string>().size() < s["minLength"].get<std::size_t>())
      return where(path) + ": string too short";
    if (v.is_array()) {
      if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>())
        return where(path) + ": needs at least " + s["minItems"].dump() + " items";
      if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>())
        return where(path) + ": allows at most " + s["maxItems"].dump() + " items";
      if (s.contains("items"))
        for (std::size_t i = 0; i < v.size(); ++i)
          if (auto e = check(s["items"], v[i], path + "[" + std::to_string(i) + "]")) return e;
    }
    if (v.is_object()) {
      if (s.contains("required"))
        for (const auto& r : s["required"])
          if (!v.contains(r.get<std::string>()))
            return where(path) + ": missing required key '" + r.get<std::string>() + "'";
      const json props = s.value("properties", json::object());
      for (const auto& [k, sub] : v.items()) {
        const std::string child = path.empty() ? k : path + "." + k;
        if (props.contains(k)) {
          if (auto e = check(props[k], sub, child)) return e;
        } else if (s.contains("additionalProperties") && s["additionalProperties"] == false) {
          return " at " + child + ": unknown key";
        }
      }
    }
    if (s.contains("oneOf")) {
      std::vector<std::string> errs;
      int ok = 0;
      for (const auto& branch : s["oneOf"]) {
        if (auto e = check(branch, v, path))
          errs.push_back(*e);
        else
          ++ok;
      }
      if (ok == 0) {
        std::string msg = where(path) + ": matches no allowed form (";
        for (std::size_t i = 0; i < errs.size(); ++i) msg += (i ? "; " : "") + errs[i];
        return msg + ")";
      }
      if (ok > 1) return where(path) + ": ambiguous, matches several allowed forms";
    }
    return std::nullopt;
  }

  json root_;
};

inline const SchemaValidator& run_config_validator() {
  static const SchemaValidator v(json::parse(kRunConfigSchema));
  return v;
}

// ---- config loading ----------------------------------------------------------

using EnvList = std::vector<std::pair<std::string, std::string>>;

inline EnvList process_environment() {
  EnvList env;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv = *e;
    const auto eq = kv.find('=');
    if (eq != std::string::npos) env.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return env;
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;
};

// Values parse as JSON when they can (numbers, booleans, arrays), otherwise
// they are taken as plain strings.
inline json parse_env_value(const std::string& raw) {
  try {
    return json::parse(raw);
  } catch (const json::parse_error&) {
    return raw;
  }
}

// Only variables whose first segment names a top-level config key are used,
// so unrelated CTSID_* variables pass through untouched.
inline void apply_env(json& cfg, const EnvList& env) {
  static const std::vector<std::string> top = {"seed",  "output_dir", "dataset", "test_dataset",
                                               "preprocessing", "model", "train", "eval"};
  std::vector<std::pair<std::string, std::string>> sorted(env.begin(), env.end());
  std::sort(sorted.begin(), sorted.end());
  for (const auto& [name, value] : sorted) {
    if (name.rfind("CTSID_", 0) != 0) continue;
    std::string rest = name.substr(6);
    std::transform(rest.begin(), rest.end(), rest.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::vector<std::string> keys;
    for (std::size_t pos = 0;;) {
      const auto sep = rest.find("__", pos);
      keys.push_back(rest.substr(pos, sep - pos));
      if (sep == std::string::npos) break;
      pos = sep + 2;
    }
    if (std::find(top.begin(), top.end(), keys.front()) == top.end()) continue;
    json* node = &cfg;
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
      if (!node->contains(keys[i]) || !(*node)[keys[i]].is_object()) (*node)[keys[i]] = json::object();
      node = &(*node)[keys[i]];
    }
    (*node)[keys.back()] = parse_env_value(value);
  }
}

inline void apply_overrides(json& cfg, const Overrides& ov) {
  if (ov.seed) cfg["seed"] = *ov.seed;
  if (ov.workers) cfg["train"]["workers"] = *ov.workers;
  if (ov.out) cfg["output_dir"] = *ov.out;
}

inline std::string fnv1a_hex(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Hash of the canonical (key-sorted) dump of the effective config. The output
// directory and worker count are left out: they do not change any result.
inline std::string config_hash(json cfg) {
  cfg.erase("output_dir");
  if (cfg.contains("train") && cfg["train"].is_object()) cfg["train"].erase("workers");
  return fnv1a_hex(cfg.dump());
}

struct RunConfig {
  json doc;
  std::string hash;

  std::uint64_t seed() const { return doc.value("seed", std::uint64_t{0}); }
  fs::path output_dir() const { return doc.value("output_dir", std::string("runs")); }
};

// ---- config -> library objects -------------------------------------------------

inline RlcConfig rlc_from_json(const json& j, std::uint64_t run_seed) {
  RlcConfig c;
  c.resistance = j.value("resistance", c.resistance);
  c.capacitance = j.value("capacitance", c.capacitance);
  c.l0 = j.value("l0", c.l0);
  c.n_samples = j.value("n_samples", c.n_samples);
  c.sample_time = j.value("sample_time", c.sample_time);
  c.input_bandwidth = j.value("input_bandwidth", c.input_bandwidth);
  c.input_std = j.value("input_std", c.input_std);
  c.noise_std_v = j.value("noise_std_v", c.noise_std_v);
  c.noise_std_i = j.value("noise_std_i", c.noise_std_i);
  c.seed = j.value("seed", run_seed);
  c.substeps = j.value("substeps", c.substeps);
  return c;
}

inline json rlc_to_json(const RlcConfig& c) {
  return {{"resistance", c.resistance},   {"capacitance", c.capacitance},
          {"l0", c.l0},                   {"n_samples", c.n_samples},
          {"sample_time", c.sample_time}, {"input_bandwidth", c.input_bandwidth},
          {"input_std", c.input_std},     {"noise_std_v", c.noise_std_v},
          {"noise_std_i", c.noise_std_i}, {"seed", c.seed},
          {"substeps", c.substeps}};
}

inline std::vector<PreprocessStep> steps_from_json(const json& arr) {
  std::vector<PreprocessStep> steps;
  for (const auto& s : arr) {
    const std::string type = s.at("type");
    if (type == "scale_time")
      steps.push_back(ScaleTimeStep{s.at("unit").get<double>()});
    else if (type == "affine")
      steps.push_back(AffineStep{s.at("channel"), {s.at("scale").get<double>(), s.value("offset", 0.0)}});
    else if (type == "normalize")
      steps.push_back(NormalizeStep{s.at("channel"), s.value("lo", -1.0), s.value("hi", 1.0)});
    else
      steps.push_back(DecimateStep{s.at("factor").get<int>(), s.value("prefilter", false)});
  }
  return steps;
}

inline Matrix matrix_from_json(const json& j, const char* what) {
  const auto rows = static_cast<Index>(j.size());
  const auto cols = rows ? static_cast<Index>(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (static_cast<Index>(j[static_cast<std::size_t>(r)].size()) != cols)
      throw ConfigError(std::string("model.linear.") + what + " is ragged");
    for (Index c = 0; c < cols; ++c) m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  return m;
}

inline ModelStructure model_from_json(const json& j) {
  const StructureKind kind = structure_kind_from_string(j.at("structure").get<std::string>());
  const Activation act = activation_from_string(j.value("activation", std::string("relu")));
  const Index hidden = j.value("hidden", Index{64});
  const Index hidden_g = j.value("hidden_g", hidden);
  auto need = [&](const char* key) -> Index {
    if (!j.contains(key))
      throw ConfigError("model." + std::string(key) + " is required for " + std::string(to_string(kind)));
    return j[key].get<Index>();
  };
  switch (kind) {
    case StructureKind::GeneralSS:
      return ModelStructure::general_ss(need("n_x"), need("n_u"), need("n_y"), hidden, hidden_g, act);
    case StructureKind::Incremental: {
      if (!j.contains("linear")) throw ConfigError("model.linear is required for incremental");
      const json& l = j["linear"];
      return ModelStructure::incremental(
          {matrix_from_json(l["a"], "a"), matrix_from_json(l["b"], "b"), matrix_from_json(l["c"], "c")},
          hidden, hidden_g, act);
    }
    case StructureKind::FullyObserved: {
      const Index n_x = need("n_x");
      if (j.contains("n_y") && j["n_y"].get<Index>() != n_x)
        throw ConfigError("fully_observed needs n_y == n_x");
      return ModelStructure::fully_observed(n_x, need("n_u"), hidden, act);
    }
    case StructureKind::CtsPhysics:
      return ModelStructure::cts_physics(hidden, act, j.value("input_in_f2", true));
    case StructureKind::EmpsPhysics:
      return ModelStructure::emps_physics(hidden, act);
  }
  throw ConfigError("unknown model structure");
}

inline TrainConfig train_from_json(const json& j, std::uint64_t seed) {
  TrainConfig c;
  c.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seq_len = j.value("seq_len", c.seq_len);
  c.lr = j.value("lr", c.lr);
  c.alpha = j.value("alpha", c.alpha);
  c.integrator.scheme = scheme_from_string(j.value("scheme", std::string("forward_euler")));
  c.integrator.interpolation = interpolation_from_string(j.value("interpolation", std::string("zoh")));
  c.integrator.substeps = j.value("substeps", 1);
  c.hidden_init = hidden_init_from_string(j.value("hidden_init", std::string("measured_output")));
  c.optimizer = j.value("optimizer", std::string("adam")) == "sgd" ? OptimizerKind::SGD : OptimizerKind::Adam;
  if (j.contains("adam")) {
    c.adam.beta1 = j["adam"].value("beta1", c.adam.beta1);
    c.adam.beta2 = j["adam"].value("beta2", c.adam.beta2);
    c.adam.epsilon = j["adam"].value("epsilon", c.adam.epsilon);
  }
  c.workers = j.value("workers", 1);
  c.seed = seed;
  return c;
}

// Scheme used to simulate a fitted model: the training scheme when it is
// explicit, RK44 otherwise, unless eval.scheme says differently.
inline IntegratorOptions eval_integrator(const json& cfg) {
  const TrainConfig t = train_from_json(cfg["train"], 0);
  IntegratorOptions o = t.integrator;
  if (!is_explicit(o.scheme)) o.scheme = Scheme::RK44;
  const json ev = cfg.value("eval", json::object());
  if (ev.contains("scheme")) o.scheme = scheme_from_string(ev["scheme"].get<std::string>());
  if (ev.contains("substeps")) o.substeps = ev["substeps"];
  return o;
}

// ---- datasets ----------------------------------------------------------------

// CSV comment carrying channel labels: "labels u1=v_in y1=v_C y2=i_L".
inline std::string labels_comment(const Dataset& d) {
  Dataset n = d;
  n.fill_default_names();
  std::string s = "labels";
  for (std::size_t i = 0; i < n.input_names.size(); ++i) s += " " + n.input_names[i] + "=" + n.input_labels[i];
  for (std::size_t i = 0; i < n.output_names.size(); ++i)
    s += " " + n.output_names[i] + "=" + n.output_labels[i];
  return s;
}

inline std::map<std::string, std::string> read_csv_labels(const fs::path& path) {
  std::map<std::string, std::string> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line) && !line.empty() && line[0] == '#') {
    std::istringstream ss(line.substr(1));
    std::string word;
    ss >> word;
    if (word != "labels") continue;
    while (ss >> word) {
      const auto eq = word.find('=');
      if (eq != std::string::npos) out[word.substr(0, eq)] = word.substr(eq + 1);
    }
  }
  return out;
}

inline Dataset load_dataset_csv(const fs::path& path, const json& block) {
  CsvSchema schema;
  schema.time_column = block.value("time_column", std::string("t"));
  if (block.contains("input_columns")) schema.input_columns = block["input_columns"].get<std::vector<std::string>>();
  if (block.contains("output_columns"))
    schema.output_columns = block["output_columns"].get<std::vector<std::string>>();
  Dataset d = load_csv(path.string(), schema);
  const auto labels = read_csv_labels(path);
  for (std::size_t i = 0; i < d.input_names.size(); ++i)
    if (auto it = labels.find(d.input_names[i]); it != labels.end()) d.input_labels[i] = it->second;
  for (std::size_t i = 0; i < d.output_names.size(); ++i)
    if (auto it = labels.find(d.output_names[i]); it != labels.end()) d.output_labels[i] = it->second;
  auto set = [](std::vector<std::string>& dst, const json& src, const char* what) {
    const auto v = src.get<std::vector<std::string>>();
    if (v.size() != dst.size()) throw ConfigError(std::string("dataset.") + what + " has the wrong length");
    dst = v;
  };
  if (block.contains("input_labels")) set(d.input_labels, block["input_labels"], "input_labels");
  if (block.contains("output_labels")) set(d.output_labels, block["output_labels"], "output_labels");
  return d;
}

inline Dataset load_dataset(const json& block, std::uint64_t run_seed) {
  if (block.contains("rlc")) {
    const RlcDatasets g = generate_rlc(rlc_from_json(block["rlc"], run_seed));
    return block.value("variant", std::string("noisy")) == "clean" ? g.clean : g.noisy;
  }
  return load_dataset_csv(block.at("path").get<std::string>(), block);
}

// Benchmark sanity checks; mismatches are reported, never fatal.
inline std::vector<std::string> benchmark_warnings(StructureKind kind, const Dataset& raw,
                                                   const Dataset& processed, int decimation) {
  std::vector<std::string> w;
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-6 * std::abs(b); };
  if (kind == StructureKind::CtsPhysics) {
    if (raw.size() != 1024) w.push_back("CTS records have 1024 samples, got " + std::to_string(raw.size()));
    if (!near(raw.sample_time(), 5.0) && !near(raw.sample_time(), 4.0))
      w.push_back("CTS sample time is expected around 4-5 s, got " + detail::format_double(raw.sample_time()));
  }
  if (kind == StructureKind::EmpsPhysics) {
    if (processed.size() != 4968)
      w.push_back("decimated EMPS records have 4968 samples, got " + std::to_string(processed.size()));
    if (!near(raw.sample_time() * decimation, 5e-3))
      w.push_back("decimated EMPS sample time should be 5 ms, got " +
                  detail::format_double(raw.sample_time() * decimation) + " s");
  }
  return w;
}

// ---- loading + validation ----------------------------------------------------

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// Checks that go beyond the schema but still run before any computation.
inline void check_semantics(const json& cfg) {
  for (const char* key : {"dataset", "test_dataset"}) {
    if (!cfg.contains(key) || !cfg[key].contains("path")) continue;
    const fs::path p = cfg[key]["path"].get<std::string>();
    if (!fs::is_regular_file(p))
      throw ConfigError(std::string("config at ") + key + ".path: dataset '" + p.string() + "' does not exist");
  }
  for (const char* key : {"dataset", "test_dataset"})
    if (cfg.contains(key) && cfg[key].contains("rlc")) rlc_from_json(cfg[key]["rlc"], 0).validate();
  const ModelStructure model = model_from_json(cfg["model"]);
  const TrainConfig t = train_from_json(cfg["train"], 0);
  if (t.algorithm == Algorithm::OneStepPred && model.kind() != StructureKind::FullyObserved)
    throw ConfigError("one_step requires the fully_observed structure");
  if (t.algorithm != Algorithm::SCI && !is_explicit(t.integrator.scheme))
    throw ConfigError("train.scheme must be forward_euler or rk44 for simulation-based fitting");
  if (cfg.contains("eval") && cfg["eval"].contains("initial_state") && cfg["eval"]["initial_state"].is_array() &&
      static_cast<Index>(cfg["eval"]["initial_state"].size()) != model.n_x())
    throw ConfigError("eval.initial_state needs " + std::to_string(model.n_x()) + " entries");
}

// Validates an already-merged document and stamps its hash.
inline RunConfig make_run_config(json doc) {
  run_config_validator().validate(doc);
  check_semantics(doc);
  std::string hash = config_hash(doc);
  return {std::move(doc), std::move(hash)};
}

inline RunConfig load_run_config(const fs::path& path, const EnvList& env, const Overrides& ov) {
  json doc = read_json_file(path);
  if (!doc.is_object()) throw ConfigError("config root must be an object");
  const fs::path base = fs::absolute(path).parent_path();
  auto rebase = [&](json& node, const char* key) {
    if (node.is_object() && node.contains(key) && node[key].is_string()) {
      const fs::path p = node[key].get<std::string>();
      if (p.is_relative()) node[key] = (base / p).lexically_normal().string();
    }
  };
  rebase(doc, "output_dir");
  if (doc.contains("dataset")) rebase(doc["dataset"], "path");
  if (doc.contains("test_dataset")) rebase(doc["test_dataset"], "path");
  apply_env(doc, env);
  apply_overrides(doc, ov);
  return make_run_config(std::move(doc));
}

// ---- report I/O -----------------------------------------------------------------

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    std::vector<double> v(static_cast<std::size_t>(m.cols()));
    for (Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(std::move(v));
  }
  return rows;
}

inline Matrix matrix_from_rows(const json& rows) {
  const auto n_r = static_cast<Index>(rows.size());
  const auto n_c = n_r ? static_cast<Index>(rows[0].size()) : 0;
  Matrix m(n_r, n_c);
  for (Index r = 0; r < n_r; ++r)
    for (Index c = 0; c < n_c; ++c) m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return m;
}

inline json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline json layout_to_json(const ParameterLayout& layout) {
  json blocks = json::array();
  for (const auto& b : layout.blocks())
    blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"rows", b.rows}, {"cols", b.cols}});
  return blocks;
}

inline json metrics_to_json(const MetricReport& m, const std::vector<std::string>& channels) {
  return {{"channels", channels}, {"r2", vector_to_json(m.r2)}, {"rmse", vector_to_json(m.rmse)}, {"n", m.n}};
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << j.dump(1) << '\n';
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

// params.csv: one value per row, tagged with its block; layout.json describes
// the blocks so a mismatched structure is caught on load.
inline void write_params(const fs::path& dir, const ModelStructure& model, const Vector& p,
                         const std::string& hash) {
  std::ofstream out(dir / "params.csv");
  if (!out) throw DataError("cannot write '" + (dir / "params.csv").string() + "'");
  out << "# config_hash " << hash << "\n# structure " << to_string(model.kind()) << "\nblock,index,value\n";
  for (const auto& b : model.layout().blocks())
    for (std::size_t i = 0; i < b.size(); ++i)
      out << b.name << ',' << i << ',' << detail::format_double(p[static_cast<Index>(b.offset + i)]) << '\n';
  write_json(dir / "layout.json", {{"config_hash", hash},
                                   {"structure", to_string(model.kind())},
                                   {"n_params", model.n_params()},
                                   {"blocks", layout_to_json(model.layout())}});
}

inline Vector read_params(const fs::path& csv, const ModelStructure& model) {
  const fs::path manifest = csv.parent_path() / "layout.json";
  if (fs::exists(manifest)) {
    const json m = read_json_file(manifest);
    if (m.value("structure", std::string()) != to_string(model.kind()) ||
        m.value("blocks", json::array()) != layout_to_json(model.layout()))
      throw ConfigError("parameter layout in '" + manifest.string() + "' does not match the configured model");
  }
  std::ifstream in(csv);
  if (!in) throw DataError("cannot open '" + csv.string() + "'");
  std::vector<double> values;
  std::string line;
  bool header = false;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 3) throw DataError("params row " + std::to_string(row) + " needs 3 cells");
    values.push_back(detail::parse_double(cells[2], row++, "value"));
  }
  if (values.size() != model.n_params())
    throw ConfigError("parameter layout mismatch: file has " + std::to_string(values.size()) +
                      " values, model needs " + std::to_string(model.n_params()));
  return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

// ---- shared run preparation ------------------------------------------------------

struct PreparedRun {
  ModelStructure model;
  TrainConfig train;
  Preprocessor pre;
  Dataset raw_train, train_data;
  std::optional<Dataset> raw_test, test_data;
  std::vector<std::string> warnings;
};

inline PreparedRun prepare(const RunConfig& rc) {
  const json& cfg = rc.doc;
  PreparedRun r{model_from_json(cfg["model"]), train_from_json(cfg["train"], rc.seed()),
                Preprocessor(steps_from_json(cfg.value("preprocessing", json::array()))), {}, {}, {}, {}, {}};
  r.raw_train = load_dataset(cfg["dataset"], rc.seed());
  r.train_data = r.pre.fit_apply(r.raw_train);
  if (cfg.contains("test_dataset")) {
    r.raw_test = load_dataset(cfg["test_dataset"], rc.seed());
    r.test_data = r.pre.apply(*r.raw_test);
  }
  if (r.train_data.n_u() != r.model.n_u() || r.train_data.n_y() != r.model.n_y())
    throw ConfigError("dataset has " + std::to_string(r.train_data.n_u()) + " inputs / " +
                      std::to_string(r.train_data.n_y()) + " outputs, model expects " +
                      std::to_string(r.model.n_u()) + " / " + std::to_string(r.model.n_y()));
  int decimation = 1;
  for (const auto& s : r.pre.resolved())
    if (const auto* d = std::get_if<DecimateStep>(&s)) decimation *= d->factor;
  r.warnings = benchmark_warnings(r.model.kind(), r.raw_train, r.train_data, decimation);
  return r;
}

// Simulated and measured outputs in the units of the raw data.
struct SimulatedSeries {
  Vector t;
  Matrix measured;
  Matrix simulated;
  MetricReport metrics;
  std::vector<std::string> channels;
};

inline SimulatedSeries simulate_dataset(const ModelStructure& model, const Vector& params, const Vector& x0,
                                        const Dataset& processed, const Dataset& raw, const Preprocessor& pre,
                                        const IntegratorOptions& integ) {
  detail::require_dims(x0.size() == model.n_x(), "initial state");
  const std::span<const double> p(params.data(), static_cast<std::size_t>(params.size()));
  const Vector grid = processed.t.array() - processed.t[0];
  const Trajectory traj = simulate(model, p, x0, processed.u, grid, integ);
  SimulatedSeries s;
  s.t = pre.invert_time(processed.t);
  s.measured = pre.invert_outputs(raw, processed.y);
  s.simulated = pre.invert_outputs(raw, model.eval_g_batch(p, traj.states));
  s.metrics = evaluate_metrics(s.measured, s.simulated);
  Dataset named = raw;
  named.fill_default_names();
  s.channels = named.output_labels;
  return s;
}

inline json series_to_json(const SimulatedSeries& s) {
  json measured = json::object(), simulated = json::object();
  for (std::size_t c = 0; c < s.channels.size(); ++c) {
    const auto i = static_cast<Index>(c);
    measured[s.channels[c]] = vector_to_json(s.measured.row(i).transpose());
    simulated[s.channels[c]] = vector_to_json(s.simulated.row(i).transpose());
  }
  return {{"t", vector_to_json(s.t)}, {"measured", measured}, {"simulated", simulated}};
}

inline Vector initial_state_from(const json& init, const ModelStructure& model, const Matrix* report_hidden) {
  if (init.is_array()) {
    const Vector x0 = vector_from_json(init);
    if (x0.size() != model.n_x())
      throw ConfigError("initial state needs " + std::to_string(model.n_x()) + " entries");
    return x0;
  }
  if (init == "zeros") return Vector::Zero(model.n_x());
  if (!report_hidden) throw ConfigError("initial state 'report' needs a FitReport");
  if (report_hidden->rows() != model.n_x() || report_hidden->cols() < 1)
    throw ConfigError("FitReport hidden states do not match the model");
  return report_hidden->col(0);
}

// ---- commands ----------------------------------------------------------------------

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory '" + dir.string() + "'");
}

inline int cmd_generate(const RunConfig& rc, std::ostream& log) {
  const json& cfg = rc.doc;
  if (!cfg["dataset"].contains("rlc")) throw ConfigError("generate needs a dataset.rlc block");
  const fs::path dir = rc.output_dir();
  ensure_dir(dir);
  json sidecar = {{"config_hash", rc.hash}, {"seed", rc.seed()}, {"files", json::object()}};
  for (const char* key : {"dataset", "test_dataset"}) {
    if (!cfg.contains(key) || !cfg[key].contains("rlc")) continue;
    const RlcConfig c = rlc_from_json(cfg[key]["rlc"], rc.seed());
    const RlcDatasets g = generate_rlc(c);
    const std::vector<std::string> comments = {"ctsid rlc dataset", "config_hash " + rc.hash,
                                               "seed " + std::to_string(c.seed), labels_comment(g.clean)};
    const std::string stem = std::string(key) == "dataset" ? "train" : "test";
    const fs::path clean = dir / (stem + "_clean.csv"), noisy = dir / (stem + "_noisy.csv");
    save_csv(g.clean, clean.string(), comments);
    save_csv(g.noisy, noisy.string(), comments);
    sidecar["files"][stem] = {{"clean", clean.filename().string()},
                              {"noisy", noisy.filename().string()},
                              {"rlc", rlc_to_json(c)}};
    log << "wrote " << clean.string() << " and " << noisy.string() << " (" << c.n_samples << " samples)\n";
  }
  write_json(dir / "generate.json", sidecar);
  return 0;
}

inline json report_json(const RunConfig& rc, const PreparedRun& run, const FitReport& rep) {
  json j;
  j["config_hash"] = rc.hash;
  j["config"] = rc.doc;
  j["status"] = "ok";
  j["structure"] = to_string(run.model.kind());
  j["algorithm"] = to_string(rep.config.algorithm);
  j["seconds"] = rep.seconds;
  j["iterations_completed"] = rep.j_tot.size();
  j["trace"] = {{"j_tot", rep.j_tot}, {"j_fit", rep.j_fit}, {"j_reg", rep.j_reg}};
  j["adam"] = {{"beta1", rep.config.adam.beta1},
               {"beta2", rep.config.adam.beta2},
               {"epsilon", rep.config.adam.epsilon},
               {"lr", rep.config.lr}};
  j["layout"] = layout_to_json(run.model.layout());
  j["initial_params"] = vector_to_json(rep.initial_params);
  j["params"] = vector_to_json(rep.params);
  j["initial_hidden"] = matrix_to_json(rep.initial_hidden);
  j["hidden"] = matrix_to_json(rep.hidden);
  j["warnings"] = run.warnings;
  return j;
}

inline void add_evaluations(json& report, const RunConfig& rc, const PreparedRun& run, const FitReport& rep,
                            std::ostream& log) {
  const IntegratorOptions integ = eval_integrator(rc.doc);
  const SimulatedSeries tr = simulate_dataset(run.model, rep.params, rep.hidden.col(0), run.train_data,
                                              run.raw_train, run.pre, integ);
  report["metrics"]["train"] = metrics_to_json(tr.metrics, tr.channels);
  report["series"]["train"] = series_to_json(tr);
  log << "train R2 " << tr.metrics.r2.transpose() << "  RMSE " << tr.metrics.rmse.transpose() << '\n';
  if (run.test_data) {
    const json init = rc.doc.value("eval", json::object()).value("initial_state", json("report"));
    const Vector x0 = initial_state_from(init, run.model, &rep.hidden);
    const SimulatedSeries te =
        simulate_dataset(run.model, rep.params, x0, *run.test_data, *run.raw_test, run.pre, integ);
    report["metrics"]["test"] = metrics_to_json(te.metrics, te.channels);
    report["series"]["test"] = series_to_json(te);
    log << "test  R2 " << te.metrics.r2.transpose() << "  RMSE " << te.metrics.rmse.transpose() << '\n';
  }
}

inline int cmd_train(const RunConfig& rc, std::ostream& log, std::ostream& err) {
  PreparedRun run = prepare(rc);
  for (const auto& w : run.warnings) err << "warning: " << w << '\n';
  const fs::path dir = rc.output_dir();
  ensure_dir(dir);
  FitOptions opts;
  opts.progress_every = rc.doc["train"].value("progress_every", 1000);
  opts.progress = [&log](int it, const FitReport& r) {
    log << "iter " << it << "  J " << r.j_tot.back() << "  fit " << r.j_fit.back() << "  reg " << r.j_reg.back()
        << '\n';
  };
  try {
    const FitReport rep = fit(run.train, run.train_data, run.model, opts);
    json report = report_json(rc, run, rep);
    add_evaluations(report, rc, run, rep, log);
    write_json(dir / "report.json", report);
    write_params(dir, run.model, rep.params, rc.hash);
    log << "fit finished in " << rep.seconds << " s, report in " << (dir / "report.json").string() << '\n';
    return 0;
  } catch (const FitError& e) {
    json report = report_json(rc, run, e.partial());
    report["status"] = "diverged";
    report["error"] = e.what();
    report["failed_iteration"] = e.iteration();
    write_json(dir / "report.json", report);
    write_params(dir, run.model, e.partial().params, rc.hash);
    err << "error: " << e.what() << "\npartial report written to " << (dir / "report.json").string() << '\n';
    return 2;
  }
}

struct EvalArgs {
  fs::path params;                     // report.json or params.csv
  std::string dataset;                 // "train", "test", or a CSV path; empty picks test if configured
  std::optional<std::string> initial;  // "zeros", "report" or comma-separated values
};

inline json parse_initial_flag(const std::string& s) {
  if (s == "zeros" || s == "report") return s;
  json arr = json::array();
  std::istringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) arr.push_back(detail::parse_double(cell, 0, "initial-state"));
  return arr;
}

inline int cmd_eval(const RunConfig& rc, const EvalArgs& a, std::ostream& log) {
  PreparedRun run = prepare(rc);
  Vector params;
  std::optional<Matrix> hidden;
  if (a.params.extension() == ".json") {
    const json rep = read_json_file(a.params);
    if (!rep.contains("params") || !rep.contains("layout")) throw DataError("'" + a.params.string() + "' is not a FitReport");
    if (rep["layout"] != layout_to_json(run.model.layout()) ||
        rep.value("structure", std::string()) != to_string(run.model.kind()))
      throw ConfigError("parameter layout in the report does not match the configured model");
    params = vector_from_json(rep["params"]);
    hidden = matrix_from_rows(rep["hidden"]);
  } else {
    params = read_params(a.params, run.model);
  }

  const Dataset* processed = &run.train_data;
  const Dataset* raw = &run.raw_train;
  std::optional<Dataset> ext_raw, ext;
  std::string which = a.dataset.empty() ? (run.test_data ? "test" : "train") : a.dataset;
  if (which == "test") {
    if (!run.test_data) throw ConfigError("config has no test_dataset");
    processed = &*run.test_data;
    raw = &*run.raw_test;
  } else if (which != "train") {
    ext_raw = load_dataset_csv(which, rc.doc["dataset"]);
    ext = run.pre.apply(*ext_raw);
    processed = &*ext;
    raw = &*ext_raw;
  }
  const json init = a.initial ? parse_initial_flag(*a.initial)
                              : rc.doc.value("eval", json::object()).value("initial_state", json("report"));
  const Vector x0 = initial_state_from(init, run.model, hidden ? &*hidden : nullptr);
  const SimulatedSeries s =
      simulate_dataset(run.model, params, x0, *processed, *raw, run.pre, eval_integrator(rc.doc));

  const fs::path dir = rc.output_dir();
  ensure_dir(dir);
  Dataset traj;
  traj.t = s.t;
  traj.u = run.pre.invert_inputs(*raw, processed->u);
  traj.y = s.measured;
  Dataset named = *raw;
  named.fill_default_names();
  traj.input_names = named.input_names;
  traj.output_names = named.output_names;
  traj.input_labels = named.input_labels;
  traj.output_labels = named.output_labels;
  std::vector<std::pair<std::string, RowVector>> extra;
  for (Index c = 0; c < s.simulated.rows(); ++c)
    extra.emplace_back(named.output_names[static_cast<std::size_t>(c)] + "_sim", s.simulated.row(c));
  save_csv(traj, (dir / "trajectory.csv").string(),
           {"ctsid eval trajectory", "config_hash " + rc.hash, labels_comment(traj)}, extra);
  write_json(dir / "eval.json", {{"config_hash", rc.hash},
                                 {"params", a.params.string()},
                                 {"dataset", which},
                                 {"initial_state", vector_to_json(x0)},
                                 {"metrics", metrics_to_json(s.metrics, s.channels)}});
  log << "R2 " << s.metrics.r2.transpose() << "  RMSE " << s.metrics.rmse.transpose() << "  (N=" << s.metrics.n
      << ")\n";
  return 0;
}

// ---- export ------------------------------------------------------------------------

using LongSeries = std::map<std::string, std::vector<std::pair<double, double>>>;

inline void write_long_csv(const fs::path& path, const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series,
                           const std::vector<std::string>& comments) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "series,time,value\n";
  for (const auto& [name, pts] : series)
    for (const auto& [t, v] : pts) out << name << ',' << detail::format_double(t) << ',' << detail::format_double(v) << '\n';
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

inline LongSeries read_long_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  LongSeries out;
  std::string line;
  bool header = false;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = detail::split_csv_line(line);
    if (!header) {
      if (cells != std::vector<std::string>{"series", "time", "value"})
        throw DataError("'" + path.string() + "' is not a series,time,value file");
      header = true;
      continue;
    }
    if (cells.size() != 3) throw DataError("row " + std::to_string(row) + " needs 3 cells");
    out[cells[0]].emplace_back(detail::parse_double(cells[1], row, "time"), detail::parse_double(cells[2], row, "value"));
    ++row;
  }
  return out;
}

// Loss traces as loss/<name> over iteration 1..n, and <set>/<channel>/measured
// and <set>/<channel>/simulated over time.
inline int cmd_export(const fs::path& report_path, const fs::path& out_dir, std::ostream& log) {
  const json rep = read_json_file(report_path);
  if (!rep.is_object() || !rep.contains("trace") || !rep.contains("config_hash"))
    throw DataError("'" + report_path.string() + "' is not a FitReport");
  std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
  try {
    for (const char* k : {"j_tot", "j_fit", "j_reg"}) {
      const auto v = rep["trace"].at(k).get<std::vector<double>>();
      std::vector<std::pair<double, double>> pts;
      for (std::size_t i = 0; i < v.size(); ++i) pts.emplace_back(static_cast<double>(i + 1), v[i]);
      series.emplace_back(std::string("loss/") + k, std::move(pts));
    }
    const json all = rep.value("series", json::object());
    for (const auto& [set, s] : all.items()) {
      const auto t = s.at("t").get<std::vector<double>>();
      for (const char* kind : {"measured", "simulated"})
        for (const auto& [ch, vals] : s.at(kind).items()) {
          const auto v = vals.get<std::vector<double>>();
          if (v.size() != t.size()) throw DataError("series " + set + "/" + ch + " has the wrong length");
          std::vector<std::pair<double, double>> pts;
          for (std::size_t i = 0; i < v.size(); ++i) pts.emplace_back(t[i], v[i]);
          series.emplace_back(set + "/" + ch + "/" + kind, std::move(pts));
        }
    }
  } catch (const json::exception& e) {
    throw DataError("malformed report '" + report_path.string() + "': " + e.what());
  }
  ensure_dir(out_dir);
  const fs::path out = out_dir / "export.csv";
  write_long_csv(out, series, {"ctsid export", "config_hash " + rep["config_hash"].get<std::string>()});
  log << "wrote " << series.size() << " series to " << out.string() << '\n';
  return 0;
}

// ---- argument parsing -------------------------------------------------------------

inline int run(int argc, const char* const* argv, const EnvList& env, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continuous-time neural state-space identification"};
  app.require_subcommand(1);
  std::string config, out_dir, params, dataset, initial, report;
  std::uint64_t seed = 0;
  int workers = 1;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "run configuration JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "run seed (overrides config)");
    sub->add_option("--workers", workers, "parallel subsequence workers")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_dir, "output directory (overrides config)");
  };
  auto* gen = app.add_subcommand("generate", "write clean and noisy RLC datasets");
  common(gen);
  auto* train = app.add_subcommand("train", "fit a model and write a FitReport");
  common(train);
  auto* eval = app.add_subcommand("eval", "simulate a fitted model on a dataset");
  common(eval);
  eval->add_option("--params", params, "report.json or params.csv")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", dataset, "train, test, or a CSV path");
  eval->add_option("--initial-state", initial, "zeros, report, or comma-separated values");
  auto* exp = app.add_subcommand("export", "write plot-ready long-format CSV from a report");
  exp->add_option("--report", report, "report.json")->required()->check(CLI::ExistingFile);
  exp->add_option("--out", out_dir, "output directory (default: next to the report)");
  auto* schema = app.add_subcommand("schema", "print the run-config JSON schema");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (schema->parsed()) {
      out << kRunConfigSchema << '\n';
      return 0;
    }
    if (exp->parsed())
      return cmd_export(report, out_dir.empty() ? fs::path(report).parent_path() : fs::path(out_dir), out);
    CLI::App* sub = app.get_subcommands().front();
    Overrides ov;
    if (sub->count("--seed")) ov.seed = seed;
    if (sub->count("--workers")) ov.workers = workers;
    if (sub->count("--out")) ov.out = fs::absolute(out_dir).string();
    const RunConfig rc = load_run_config(config, env, ov);
    if (gen->parsed()) return cmd_generate(rc, out);
    if (train->parsed()) return cmd_train(rc, out, err);
    EvalArgs a{params, dataset, std::nullopt};
    if (eval->count("--initial-state")) a.initial = initial;
    return cmd_eval(rc, a, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace ctsid::cli
