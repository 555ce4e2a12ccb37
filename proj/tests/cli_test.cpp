#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctsid/cli.hpp"

namespace fs = std::filesystem;
using ctsid::cli::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::path(CTSID_TEST_TMP) / "cli" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json small_rlc_config(std::uint64_t noise = 1) {
  json rlc = {{"n_samples", 400}, {"seed", 3}};
  if (noise == 0) {
    rlc["noise_std_v"] = 0.0;
    rlc["noise_std_i"] = 0.0;
  }
  json test = {{"n_samples", 300}, {"seed", 11}, {"input_bandwidth", 200e3}, {"input_std", 60.0}};
  return {{"seed", 0},
          {"dataset", {{"rlc", rlc}}},
          {"test_dataset", {{"rlc", test}, {"variant", "clean"}}},
          {"preprocessing",
           json::array({{{"type", "scale_time"}, {"unit", 1e-8}},
                        {{"type", "affine"}, {"channel", "y1"}, {"scale", 0.1}},
                        {{"type", "affine"}, {"channel", "u1"}, {"scale", 0.1}}})},
          {"model", {{"structure", "fully_observed"}, {"n_x", 2}, {"n_u", 1}, {"hidden", 8}}},
          {"train",
           {{"algorithm", "tsem"},
            {"iterations", 3},
            {"batch_size", 4},
            {"seq_len", 16},
            {"lr", 1e-4},
            {"progress_every", 0}}},
          {"eval", {{"initial_state", "zeros"}}}};
}

fs::path write_config(const fs::path& dir, const json& cfg, const std::string& name = "run.json") {
  const fs::path p = dir / name;
  std::ofstream(p) << cfg.dump(2);
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args, const ctsid::cli::EnvList& env = {}) {
  args.insert(args.begin(), "ctsid");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = ctsid::cli::run(static_cast<int>(argv.size()), argv.data(), env, out, err);
  return {code, out.str(), err.str()};
}

std::size_t data_rows(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::size_t n = 0;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    ++n;
  }
  return n;
}

}  // namespace

TEST(Schema, PublishedFileMatchesEmbeddedCopy) {
  const json file = ctsid::cli::read_json_file(fs::path(CTSID_SOURCE_DIR) / "configs" / "run_config.schema.json");
  EXPECT_EQ(file, json::parse(ctsid::cli::kRunConfigSchema));
}

TEST(Schema, ShippedConfigsPassSchema) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(fs::path(CTSID_SOURCE_DIR) / "configs")) {
    if (e.path().extension() != ".json" || e.path().filename() == "run_config.schema.json") continue;
    SCOPED_TRACE(e.path().string());
    EXPECT_NO_THROW(ctsid::cli::run_config_validator().validate(ctsid::cli::read_json_file(e.path())));
    ++n;
  }
  EXPECT_GE(n, 7);
}

TEST(Schema, RejectsWithLocation) {
  const auto& v = ctsid::cli::run_config_validator();
  auto message = [&](const json& cfg) {
    try {
      v.validate(cfg);
    } catch (const ctsid::ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  json c = small_rlc_config();
  c["train"]["lr"] = -1.0;
  EXPECT_NE(message(c).find("train.lr"), std::string::npos);
  c = small_rlc_config();
  c["model"]["structure"] = "lstm";
  EXPECT_NE(message(c).find("model.structure"), std::string::npos);
  c = small_rlc_config();
  c["train"]["learning_rate"] = 1e-3;
  EXPECT_NE(message(c).find("unknown key"), std::string::npos);
  c = small_rlc_config();
  c["preprocessing"].push_back({{"type", "fft"}});
  EXPECT_NE(message(c).find("preprocessing[3]"), std::string::npos);
  c = small_rlc_config();
  c["dataset"] = json::object();
  EXPECT_NE(message(c).find("dataset"), std::string::npos);
  c = small_rlc_config();
  c.erase("train");
  EXPECT_NE(message(c).find("train"), std::string::npos);
  EXPECT_EQ(message(small_rlc_config()), "");
}

TEST(Config, PrecedenceFileEnvFlag) {
  const fs::path dir = fresh_dir("precedence");
  const fs::path cfg = write_config(dir, small_rlc_config());
  const ctsid::cli::EnvList env = {{"CTSID_SEED", "5"},
                                   {"CTSID_TRAIN__LR", "0.5"},
                                   {"CTSID_DATASET__RLC__N_SAMPLES", "123"},
                                   {"CTSID_TEST_TMP", "/ignored"},
                                   {"HOME", "/root"}};
  auto rc = ctsid::cli::load_run_config(cfg, {}, {});
  EXPECT_EQ(rc.seed(), 0u);
  EXPECT_DOUBLE_EQ(rc.doc["train"]["lr"].get<double>(), 1e-4);

  rc = ctsid::cli::load_run_config(cfg, env, {});
  EXPECT_EQ(rc.seed(), 5u);
  EXPECT_DOUBLE_EQ(rc.doc["train"]["lr"].get<double>(), 0.5);
  EXPECT_EQ(rc.doc["dataset"]["rlc"]["n_samples"].get<int>(), 123);
  EXPECT_FALSE(rc.doc.contains("test_tmp"));

  ctsid::cli::Overrides ov;
  ov.seed = 7;
  ov.workers = 3;
  ov.out = "/tmp/elsewhere";
  rc = ctsid::cli::load_run_config(cfg, env, ov);
  EXPECT_EQ(rc.seed(), 7u);
  EXPECT_EQ(rc.doc["train"]["workers"].get<int>(), 3);
  EXPECT_EQ(rc.output_dir(), fs::path("/tmp/elsewhere"));
}

TEST(Config, EnvValuesStillValidated) {
  const fs::path dir = fresh_dir("envbad");
  const fs::path cfg = write_config(dir, small_rlc_config());
  EXPECT_THROW(ctsid::cli::load_run_config(cfg, {{"CTSID_TRAIN__LR", "fast"}}, {}), ctsid::ConfigError);
}

TEST(Config, HashIgnoresOutputAndWorkers) {
  const fs::path dir = fresh_dir("hash");
  const fs::path cfg = write_config(dir, small_rlc_config());
  ctsid::cli::Overrides a, b;
  a.out = "/tmp/a";
  a.workers = 1;
  b.out = "/tmp/b";
  b.workers = 4;
  EXPECT_EQ(ctsid::cli::load_run_config(cfg, {}, a).hash, ctsid::cli::load_run_config(cfg, {}, b).hash);
  ctsid::cli::Overrides c;
  c.seed = 9;
  EXPECT_NE(ctsid::cli::load_run_config(cfg, {}, a).hash, ctsid::cli::load_run_config(cfg, {}, c).hash);
  EXPECT_EQ(ctsid::cli::config_hash(json{{"x", 1}}).size(), 16u);
}

TEST(Config, RelativePathsResolveAgainstConfigDir) {
  const fs::path dir = fresh_dir("relative");
  fs::create_directories(dir / "data");
  ctsid::RlcConfig r;
  r.n_samples = 50;
  ctsid::save_csv(ctsid::generate_rlc(r).noisy, (dir / "data" / "d.csv").string());
  json c = small_rlc_config();
  c["dataset"] = {{"path", "data/d.csv"}};
  c["output_dir"] = "out";
  const auto rc = ctsid::cli::load_run_config(write_config(dir, c), {}, {});
  EXPECT_EQ(fs::path(rc.doc["dataset"]["path"].get<std::string>()), (dir / "data" / "d.csv").lexically_normal());
  EXPECT_EQ(rc.output_dir(), (dir / "out").lexically_normal());
}

TEST(Generate, DefaultRlcWrites4000RowsAtHalfMicrosecond) {
  const fs::path dir = fresh_dir("gen_default");
  json c = small_rlc_config();
  c["dataset"] = {{"rlc", json::object()}};
  c.erase("test_dataset");
  const auto r = run_cli({"generate", "--config", write_config(dir, c).string(), "--out", (dir / "o").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto d = ctsid::load_csv((dir / "o" / "train_noisy.csv").string());
  EXPECT_EQ(d.size(), 4000);
  EXPECT_NEAR(d.sample_time(), 0.5e-6, 1e-18);
  EXPECT_TRUE(d.is_uniform());
  EXPECT_EQ(data_rows(dir / "o" / "train_clean.csv"), 4000u);
  const json side = ctsid::cli::read_json_file(dir / "o" / "generate.json");
  EXPECT_EQ(side["seed"].get<int>(), 0);
  EXPECT_EQ(side["files"]["train"]["rlc"]["n_samples"].get<int>(), 4000);
  const std::string hash = side["config_hash"];
  EXPECT_NE(slurp(dir / "o" / "train_noisy.csv").find("config_hash " + hash), std::string::npos);
}

TEST(Generate, SameSeedGivesIdenticalFiles) {
  const fs::path dir = fresh_dir("gen_repeat");
  const fs::path cfg = write_config(dir, small_rlc_config());
  ASSERT_EQ(run_cli({"generate", "--config", cfg.string(), "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run_cli({"generate", "--config", cfg.string(), "--out", (dir / "b").string()}).code, 0);
  for (const char* f : {"train_noisy.csv", "train_clean.csv", "test_noisy.csv", "generate.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  ASSERT_EQ(run_cli({"generate", "--config", cfg.string(), "--seed", "4", "--out", (dir / "c").string()}).code, 0);
  // An explicit rlc.seed wins over the run seed; only the provenance comment changes.
  const auto a = ctsid::load_csv((dir / "a" / "train_noisy.csv").string());
  const auto c = ctsid::load_csv((dir / "c" / "train_noisy.csv").string());
  EXPECT_EQ(a.y, c.y);
  EXPECT_EQ(a.u, c.u);
}

TEST(Generate, RunSeedFeedsGeneratorWithoutExplicitSeed) {
  const fs::path dir = fresh_dir("gen_seed");
  json c = small_rlc_config();
  c["dataset"]["rlc"].erase("seed");
  const fs::path cfg = write_config(dir, c);
  ASSERT_EQ(run_cli({"generate", "--config", cfg.string(), "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run_cli({"generate", "--config", cfg.string(), "--seed", "4", "--out", (dir / "b").string()}).code, 0);
  EXPECT_NE(slurp(dir / "a" / "train_clean.csv"), slurp(dir / "b" / "train_clean.csv"));
}

TEST(Generate, ZeroNoiseGivesIdenticalCleanAndNoisyFiles) {
  const fs::path dir = fresh_dir("gen_zero");
  const auto r = run_cli({"generate", "--config", write_config(dir, small_rlc_config(0)).string(), "--out",
                          (dir / "o").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "o" / "train_clean.csv"), slurp(dir / "o" / "train_noisy.csv"));
}

TEST(Generate, GeneratedCsvCarriesLabels) {
  const fs::path dir = fresh_dir("gen_labels");
  ASSERT_EQ(run_cli({"generate", "--config", write_config(dir, small_rlc_config()).string(), "--out",
                     (dir / "o").string()})
                .code,
            0);
  const auto d = ctsid::cli::load_dataset_csv(dir / "o" / "train_noisy.csv", json::object());
  EXPECT_EQ(d.output_labels, (std::vector<std::string>{"v_C", "i_L"}));
  EXPECT_EQ(d.input_labels, (std::vector<std::string>{"v_in"}));
}

TEST(Train, ZeroIterationsGivesEmptyTraceAndInitialParams) {
  const fs::path dir = fresh_dir("train_zero");
  json c = small_rlc_config();
  c["train"]["iterations"] = 0;
  const auto r = run_cli({"train", "--config", write_config(dir, c).string(), "--out", (dir / "o").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = ctsid::cli::read_json_file(dir / "o" / "report.json");
  EXPECT_TRUE(rep["trace"]["j_tot"].empty());
  EXPECT_TRUE(rep["trace"]["j_fit"].empty());
  EXPECT_TRUE(rep["trace"]["j_reg"].empty());
  EXPECT_EQ(rep["params"], rep["initial_params"]);
  EXPECT_EQ(rep["params"].size(), ctsid::cli::model_from_json(c["model"]).n_params());
  EXPECT_EQ(rep["status"], "ok");
  const std::string hash = rep["config_hash"];
  EXPECT_EQ(hash.size(), 16u);
  EXPECT_NE(slurp(dir / "o" / "params.csv").find(hash), std::string::npos);
  EXPECT_EQ(ctsid::cli::read_json_file(dir / "o" / "layout.json")["config_hash"], hash);
}

TEST(Train, MissingDatasetFailsBeforeCompute) {
  const fs::path dir = fresh_dir("train_missing");
  json c = small_rlc_config();
  c["dataset"] = {{"path", "nowhere/absent.csv"}};
  const auto r = run_cli({"train", "--config", write_config(dir, c).string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("does not exist"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "o"));
}

TEST(Train, InvalidConfigFailsBeforeCompute) {
  const fs::path dir = fresh_dir("train_invalid");
  json c = small_rlc_config();
  c["train"]["algorithm"] = "one_step";
  c["model"] = {{"structure", "cts_physics"}, {"hidden", 4}};
  const auto r = run_cli({"train", "--config", write_config(dir, c).string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("fully_observed"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "o"));
}

TEST(Train, TraceLengthMatchesIterations) {
  const fs::path dir = fresh_dir("train_trace");
  json c = small_rlc_config();
  c["train"]["iterations"] = 7;
  ASSERT_EQ(run_cli({"train", "--config", write_config(dir, c).string(), "--out", (dir / "o").string()}).code, 0);
  const json rep = ctsid::cli::read_json_file(dir / "o" / "report.json");
  EXPECT_EQ(rep["trace"]["j_tot"].size(), 7u);
  EXPECT_EQ(rep["iterations_completed"].get<int>(), 7);
  EXPECT_DOUBLE_EQ(rep["adam"]["beta1"].get<double>(), 0.9);
  EXPECT_DOUBLE_EQ(rep["adam"]["beta2"].get<double>(), 0.999);
  EXPECT_DOUBLE_EQ(rep["adam"]["epsilon"].get<double>(), 1e-8);
  EXPECT_TRUE(rep["metrics"].contains("train"));
  EXPECT_TRUE(rep["metrics"].contains("test"));
  EXPECT_EQ(rep["config"]["train"]["iterations"].get<int>(), 7);
}

TEST(Train, EndToEndDeterministic) {
  const fs::path dir = fresh_dir("train_det");
  json c = small_rlc_config();
  c["train"]["iterations"] = 20;
  const fs::path cfg = write_config(dir, c);
  ASSERT_EQ(run_cli({"train", "--config", cfg.string(), "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run_cli({"train", "--config", cfg.string(), "--out", (dir / "b").string(), "--workers", "2"}).code, 0);
  const json a = ctsid::cli::read_json_file(dir / "a" / "report.json");
  const json b = ctsid::cli::read_json_file(dir / "b" / "report.json");
  EXPECT_EQ(a["trace"], b["trace"]);
  EXPECT_EQ(a["params"], b["params"]);
  EXPECT_EQ(a["metrics"], b["metrics"]);
  EXPECT_EQ(a["config_hash"], b["config_hash"]);
  EXPECT_EQ(slurp(dir / "a" / "params.csv"), slurp(dir / "b" / "params.csv"));
}

TEST(Train, DivergenceExitsNonzeroWithPartialReport) {
  const fs::path dir = fresh_dir("train_diverge");
  json c = small_rlc_config();
  c["train"]["optimizer"] = "sgd";
  c["train"]["lr"] = 1e30;
  c["train"]["iterations"] = 50;
  const auto r = run_cli({"train", "--config", write_config(dir, c).string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("fit aborted at iteration"), std::string::npos) << r.err;
  const json rep = ctsid::cli::read_json_file(dir / "o" / "report.json");
  EXPECT_EQ(rep["status"], "diverged");
  EXPECT_LT(rep["trace"]["j_tot"].size(), 50u);
}

class TrainedRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fresh_dir("trained");
    json c = small_rlc_config();
    c["train"]["iterations"] = 3;
    cfg_ = write_config(dir_, c);
    const auto r = run_cli({"train", "--config", cfg_.string(), "--out", (dir_ / "run").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static inline fs::path dir_, cfg_;
};

TEST_F(TrainedRun, EvalOnTrainingSetMatchesReportMetric) {
  const auto r = run_cli({"eval", "--config", cfg_.string(), "--params", (dir_ / "run" / "report.json").string(),
                          "--dataset", "train", "--initial-state", "report", "--out", (dir_ / "ev").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = ctsid::cli::read_json_file(dir_ / "run" / "report.json");
  const json ev = ctsid::cli::read_json_file(dir_ / "ev" / "eval.json");
  const auto a = rep["metrics"]["train"]["r2"].get<std::vector<double>>();
  const auto b = ev["metrics"]["r2"].get<std::vector<double>>();
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  EXPECT_EQ(ev["config_hash"], rep["config_hash"]);
}

TEST_F(TrainedRun, EvalFromParamsCsvMatchesReport) {
  const auto a = run_cli({"eval", "--config", cfg_.string(), "--params", (dir_ / "run" / "report.json").string(),
                          "--initial-state", "zeros", "--out", (dir_ / "ev_json").string()});
  const auto b = run_cli({"eval", "--config", cfg_.string(), "--params", (dir_ / "run" / "params.csv").string(),
                          "--initial-state", "zeros", "--out", (dir_ / "ev_csv").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(ctsid::cli::read_json_file(dir_ / "ev_json" / "eval.json")["metrics"],
            ctsid::cli::read_json_file(dir_ / "ev_csv" / "eval.json")["metrics"]);
  EXPECT_EQ(ctsid::cli::read_json_file(dir_ / "ev_csv" / "eval.json")["dataset"], "test");
}

TEST_F(TrainedRun, ReportInitialStateNeedsReport) {
  const auto r = run_cli({"eval", "--config", cfg_.string(), "--params", (dir_ / "run" / "params.csv").string(),
                          "--initial-state", "report", "--out", (dir_ / "ev_bad").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("FitReport"), std::string::npos);
}

TEST_F(TrainedRun, ExplicitInitialStateIsUsed) {
  const auto r = run_cli({"eval", "--config", cfg_.string(), "--params", (dir_ / "run" / "report.json").string(),
                          "--initial-state", "0.25,-0.5", "--out", (dir_ / "ev_x0").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json ev = ctsid::cli::read_json_file(dir_ / "ev_x0" / "eval.json");
  EXPECT_EQ(ev["initial_state"], json::array({0.25, -0.5}));
  const auto d = ctsid::load_csv((dir_ / "ev_x0" / "trajectory.csv").string(), {"t", {"u1"}, {"y1_sim", "y2_sim"}});
  EXPECT_DOUBLE_EQ(d.y(0, 0), 2.5);  // v_C model unit is 10 V
  EXPECT_DOUBLE_EQ(d.y(1, 0), -0.5);
}

TEST_F(TrainedRun, TrajectoryRoundTripsThroughLoadCsv) {
  ASSERT_EQ(run_cli({"eval", "--config", cfg_.string(), "--params", (dir_ / "run" / "report.json").string(),
                     "--dataset", "test", "--out", (dir_ / "ev_rt").string()})
                .code,
            0);
  const fs::path traj = dir_ / "ev_rt" / "trajectory.csv";
  const auto measured = ctsid::load_csv(traj.string());
  const auto simulated = ctsid::load_csv(traj.string(), {"t", {"u1"}, {"y1_sim", "y2_sim"}});
  ctsid::RlcConfig tc;
  tc.n_samples = 300;
  tc.seed = 11;
  tc.input_bandwidth = 200e3;
  tc.input_std = 60.0;
  const auto truth = ctsid::generate_rlc(tc).clean;
  ASSERT_EQ(measured.size(), truth.size());
  EXPECT_LT((measured.t - truth.t).cwiseAbs().maxCoeff(), 1e-18);
  EXPECT_LT((measured.y - truth.y).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((measured.u - truth.u).cwiseAbs().maxCoeff(), 1e-9);
  const json ev = ctsid::cli::read_json_file(dir_ / "ev_rt" / "eval.json");
  const auto r2 = ctsid::r2(measured.y, simulated.y);
  EXPECT_NEAR(r2[0], ev["metrics"]["r2"][0].get<double>(), 1e-12);
  EXPECT_NEAR(r2[1], ev["metrics"]["r2"][1].get<double>(), 1e-12);
  EXPECT_NE(slurp(traj).find("config_hash " + ev["config_hash"].get<std::string>()), std::string::npos);
}

TEST_F(TrainedRun, LayoutMismatchIsRejected) {
  json c = small_rlc_config();
  c["model"]["hidden"] = 5;
  const fs::path other = write_config(dir_, c, "other.json");
  for (const char* p : {"report.json", "params.csv"}) {
    const auto r = run_cli({"eval", "--config", other.string(), "--params", (dir_ / "run" / p).string(),
                            "--initial-state", "zeros", "--out", (dir_ / "ev_mis").string()});
    EXPECT_EQ(r.code, 1) << p;
    EXPECT_NE(r.err.find("layout"), std::string::npos) << r.err;
  }
}

TEST_F(TrainedRun, ExportHasThreeRowsPerLossComponent) {
  const auto r = run_cli({"export", "--report", (dir_ / "run" / "report.json").string(), "--out",
                          (dir_ / "exp").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = ctsid::cli::read_long_csv(dir_ / "exp" / "export.csv");
  for (const char* k : {"loss/j_tot", "loss/j_fit", "loss/j_reg"}) {
    ASSERT_TRUE(s.count(k)) << k;
    EXPECT_EQ(s.at(k).size(), 3u);
  }
}

TEST_F(TrainedRun, ExportRoundTripsValues) {
  ASSERT_EQ(run_cli({"export", "--report", (dir_ / "run" / "report.json").string(), "--out",
                     (dir_ / "exp_rt").string()})
                .code,
            0);
  const auto s = ctsid::cli::read_long_csv(dir_ / "exp_rt" / "export.csv");
  const json rep = ctsid::cli::read_json_file(dir_ / "run" / "report.json");
  const auto jt = rep["trace"]["j_tot"].get<std::vector<double>>();
  for (std::size_t i = 0; i < jt.size(); ++i) {
    EXPECT_EQ(s.at("loss/j_tot")[i].first, static_cast<double>(i + 1));
    EXPECT_NEAR(s.at("loss/j_tot")[i].second, jt[i], 1e-12 * std::abs(jt[i]));
  }
  const auto t = rep["series"]["test"]["t"].get<std::vector<double>>();
  const auto sim = rep["series"]["test"]["simulated"]["i_L"].get<std::vector<double>>();
  const auto& pts = s.at("test/i_L/simulated");
  ASSERT_EQ(pts.size(), sim.size());
  for (std::size_t i = 0; i < sim.size(); ++i) {
    EXPECT_EQ(pts[i].first, t[i]);
    EXPECT_NEAR(pts[i].second, sim[i], 1e-12 * std::max(1.0, std::abs(sim[i])));
  }
}

TEST_F(TrainedRun, RlcExportHasMeasuredAndSimulatedChannels) {
  ASSERT_EQ(run_cli({"export", "--report", (dir_ / "run" / "report.json").string(), "--out",
                     (dir_ / "exp_ch").string()})
                .code,
            0);
  const auto s = ctsid::cli::read_long_csv(dir_ / "exp_ch" / "export.csv");
  for (const char* set : {"train", "test"})
    for (const char* ch : {"v_C", "i_L"})
      for (const char* kind : {"measured", "simulated"}) {
        const std::string name = std::string(set) + "/" + ch + "/" + kind;
        ASSERT_TRUE(s.count(name)) << name;
        EXPECT_EQ(s.at(name).size(), std::string(set) == "train" ? 400u : 300u);
      }
  EXPECT_NE(slurp(dir_ / "exp_ch" / "export.csv").find("config_hash"), std::string::npos);
}

TEST(Export, MalformedReportIsRejected) {
  const fs::path dir = fresh_dir("export_bad");
  std::ofstream(dir / "r.json") << R"({"config_hash": "x", "trace": {"j_tot": [1, 2]}})";
  const auto r = run_cli({"export", "--report", (dir / "r.json").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("malformed"), std::string::npos) << r.err;
  std::ofstream(dir / "n.json") << "not json";
  EXPECT_EQ(run_cli({"export", "--report", (dir / "n.json").string()}).code, 1);
}

TEST(Cli, UsageErrors) {
  EXPECT_NE(run_cli({}).code, 0);
  EXPECT_NE(run_cli({"train"}).code, 0);
  EXPECT_NE(run_cli({"train", "--config", "/definitely/not/here.json"}).code, 0);
  const auto r = run_cli({"schema"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(json::parse(r.out), json::parse(ctsid::cli::kRunConfigSchema));
}

TEST(Benchmarks, SizeMismatchesOnlyWarn) {
  ctsid::Dataset d;
  d.t = ctsid::Vector::LinSpaced(100, 0.0, 99.0 * 4.0);
  d.u = ctsid::Matrix::Zero(1, 100);
  d.y = ctsid::Matrix::Zero(1, 100);
  EXPECT_EQ(ctsid::cli::benchmark_warnings(ctsid::StructureKind::CtsPhysics, d, d, 1).size(), 1u);
  d.t = ctsid::Vector::LinSpaced(1024, 0.0, 1023.0 * 5.0);
  d.u = ctsid::Matrix::Zero(1, 1024);
  d.y = ctsid::Matrix::Zero(1, 1024);
  EXPECT_TRUE(ctsid::cli::benchmark_warnings(ctsid::StructureKind::CtsPhysics, d, d, 1).empty());
  EXPECT_EQ(ctsid::cli::benchmark_warnings(ctsid::StructureKind::EmpsPhysics, d, d, 5).size(), 2u);
  EXPECT_TRUE(ctsid::cli::benchmark_warnings(ctsid::StructureKind::FullyObserved, d, d, 1).empty());
}
