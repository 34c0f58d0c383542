#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "darht/checkpoint.hpp"
#include "darht/errors.hpp"
#include "darht/experiment.hpp"

using namespace darht;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("darht_exp_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small enough to run the whole pipeline in a second or two.
json tiny_config() {
  return json::parse(R"({
    "seed": 3,
    "data": {"kind": "blobs", "classes": 3, "count": 150, "dims": 36, "separation": 2,
             "weak_shift": 0.02, "example_shape": [1, 6, 6]},
    "teachers": [
      {"name": "fat-mlp", "architecture": "mlp-deep", "algorithm": "fat", "epochs": 2, "lr": 0.02,
       "attack": {"steps": 3}},
      {"name": "trades-cnn", "architecture": "cnn-small", "algorithm": "trades", "epochs": 2, "lr": 0.02,
       "attack": {"steps": 3}}
    ],
    "student": {"epochs": 2, "mc_passes": 2, "eval_mc_passes": 2, "log_examples": 20, "lr": 0.02,
                "attack": {"steps": 3}},
    "attacks": [
      {"kind": "fgsm"},
      {"kind": "pgd", "steps": 3},
      {"kind": "square", "query_budget": 20}
    ]
  })");
}

}  // namespace

TEST(ExperimentConfigTest, ParsesFractionsAndDefaults) {
  json j = tiny_config();
  j["attacks"][0]["epsilon"] = "4/255";
  const auto cfg = ExperimentConfig::from_json(j);
  EXPECT_FLOAT_EQ(cfg.attacks[0].config.epsilon, 4.0f / 255.0f);
  EXPECT_FLOAT_EQ(cfg.attacks[1].config.epsilon, 8.0f / 255.0f);
  EXPECT_EQ(cfg.attacks[1].config.steps, 3u);
  EXPECT_EQ(cfg.attacks[2].config.query_budget, 20u);
  EXPECT_EQ(cfg.attacks[2].name, "square");
  EXPECT_EQ(cfg.teachers[1].train.algorithm, TrainAlgorithm::Trades);
  EXPECT_EQ(cfg.student.distill.inner, InnerAttack::Fat);
  EXPECT_EQ(cfg.data.example_shape, (Shape{1, 6, 6}));
}

TEST(ExperimentConfigTest, UnknownKeysAndBadValuesAreFormatErrors) {
  json j = tiny_config();
  j["student"]["epochz"] = 3;
  EXPECT_THROW(ExperimentConfig::from_json(j), FormatError);
  j = tiny_config();
  j["attacks"][0]["kind"] = "deepfool";
  EXPECT_THROW(ExperimentConfig::from_json(j), FormatError);
  j = tiny_config();
  j["attacks"][0]["epsilon"] = "eight";
  EXPECT_THROW(ExperimentConfig::from_json(j), FormatError);
  j = tiny_config();
  j.erase("teachers");
  EXPECT_THROW(ExperimentConfig::from_json(j), FormatError);
}

TEST(ExperimentConfigTest, MissingFileNamesThePath) {
  try {
    ExperimentConfig::load("/no/such/experiment.json");
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("/no/such/experiment.json"), std::string::npos);
  }
}

TEST(ExperimentConfigTest, SeedDrivesEveryComponentSeed) {
  auto a = ExperimentConfig::from_json(tiny_config());
  auto b = a;
  b.seed = 4;
  b.apply_seed();
  EXPECT_NE(a.data.synthetic.seed, b.data.synthetic.seed);
  EXPECT_NE(a.teachers[0].train.seed, b.teachers[0].train.seed);
  EXPECT_NE(a.teachers[0].init_seed, a.teachers[1].init_seed);
  EXPECT_NE(a.student.distill.seed, b.student.distill.seed);
  EXPECT_NE(a.attacks[0].config.seed, a.attacks[1].config.seed);
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash(), ExperimentConfig::from_json(tiny_config()).hash());
}

TEST(ExperimentConfigTest, JsonRoundTripKeepsHash) {
  const auto a = ExperimentConfig::from_json(tiny_config());
  const auto b = ExperimentConfig::from_json(a.to_json());
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.hash(), b.hash());
}

TEST(ValidateExperiment, TeacherWithDifferentKRejectedBeforeTraining) {
  const auto dir = temp_dir("k_mismatch");
  save_checkpoint(Model::build(mlp_deep({1, 6, 6}, 2), 1), dir / "two_class.ckpt");
  json j = tiny_config();
  j["teachers"][1] = {{"name", "odd"}, {"checkpoint", (dir / "two_class.ckpt").string()}};
  j["output"] = (dir / "out").string();
  const auto cfg = ExperimentConfig::from_json(j);
  std::ostringstream log;
  EXPECT_THROW(run_experiment(cfg, Subcommand::Pipeline, log), ValidationError);
  EXPECT_FALSE(fs::exists(dir / "out" / "teachers"));
  EXPECT_TRUE(log.str().empty());
}

TEST(ValidateExperiment, OtherInconsistenciesRejected) {
  const auto data = prepare_data(ExperimentConfig::from_json(tiny_config()));
  json j = tiny_config();
  j["teachers"][1]["checkpoint"] = "/no/such.ckpt";
  EXPECT_THROW(validate_experiment(ExperimentConfig::from_json(j), data), ValidationError);
  j = tiny_config();
  j["teachers"][1]["name"] = "fat-mlp";
  EXPECT_THROW(validate_experiment(ExperimentConfig::from_json(j), data), ValidationError);
  j = tiny_config();
  j["teachers"][0]["name"] = "../escape";
  EXPECT_THROW(validate_experiment(ExperimentConfig::from_json(j), data), ValidationError);
  j = tiny_config();
  j["student"]["adversarial_probability"] = 2.0;
  EXPECT_THROW(validate_experiment(ExperimentConfig::from_json(j), data), ValidationError);
  j = tiny_config();
  j["data"].erase("example_shape");  // cnn-small needs images
  EXPECT_THROW(validate_experiment(ExperimentConfig::from_json(j), prepare_data(ExperimentConfig::from_json(j))),
               ValidationError);
}

TEST(RunExperiment, LaterStagesNeedEarlierArtifacts) {
  const auto dir = temp_dir("order");
  json j = tiny_config();
  j["output"] = dir.string();
  const auto cfg = ExperimentConfig::from_json(j);
  std::ostringstream log;
  EXPECT_THROW(run_experiment(cfg, Subcommand::Distill, log), UsageError);
  EXPECT_THROW(run_experiment(cfg, Subcommand::Report, log), UsageError);
}

TEST(RunExperiment, PipelineEmitsAllArtifactKinds) {
  const auto dir = temp_dir("pipeline");
  json j = tiny_config();
  j["output"] = dir.string();
  const auto cfg = ExperimentConfig::from_json(j);
  std::ostringstream log;
  const auto result = run_experiment(cfg, Subcommand::Pipeline, log, "tiny.json");
  for (const char* f : {"teachers/fat-mlp.ckpt", "teachers/trades-cnn.ckpt", "teachers/fat-mlp.csv", "student.ckpt",
                        "distill.csv", "metrics/student.csv", "metrics/student.json", "metrics/trades-cnn.csv",
                        "transfer.csv", "transfer.json", "report.csv", "report.json", "manifest-pipeline.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(result.artifacts.size(), 16u);

  const json manifest = json::parse(slurp(dir / "manifest-pipeline.json"));
  EXPECT_EQ(manifest["config_hash"], cfg.hash());
  EXPECT_EQ(manifest["seeds"]["master"], 3);
  EXPECT_EQ(manifest["artifacts"].size(), 16u);

  EXPECT_EQ(slurp(dir / "metrics/student.csv").substr(0, 29), "attack,clean,robust,w_robust\n");
  // The report's W-Robust column is the mean of its own clean and robust
  // columns, up to the 2-decimal rounding of each.
  std::istringstream rows(slurp(dir / "report.csv"));
  std::string line;
  std::getline(rows, line);
  EXPECT_EQ(line, "model,attack,clean,robust,w_robust");
  int n = 0;
  while (std::getline(rows, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 5u);
    EXPECT_NEAR(std::stod(cells[4]), (std::stod(cells[2]) + std::stod(cells[3])) / 2.0, 0.0051);
    ++n;
  }
  EXPECT_EQ(n, 9);  // 3 models x 3 attacks
  const json report = json::parse(slurp(dir / "report.json"));
  for (const auto& [name, m] : report["models"].items())
    for (const auto& a : m["attacks"])
      EXPECT_EQ(a["w_robust"].get<double>(), (a["clean"].get<double>() + a["robust"].get<double>()) / 2.0);
}

TEST(RunExperiment, SubcommandsAreByteDeterministic) {
  std::map<std::string, std::string> first;
  for (int r = 0; r < 2; ++r) {
    const auto dir = temp_dir("determinism" + std::to_string(r));
    json j = tiny_config();
    j["output"] = dir.string();
    const auto cfg = ExperimentConfig::from_json(j);
    std::ostringstream log;
    for (auto sub : {Subcommand::TrainTeachers, Subcommand::Distill, Subcommand::AttackEval, Subcommand::TransferEval,
                     Subcommand::Report})
      run_experiment(cfg, sub, log);
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      const std::string rel = fs::relative(e.path(), dir).generic_string();
      if (rel.starts_with("manifest")) continue;
      const std::string bytes = slurp(e.path());
      if (r == 0) first[rel] = bytes;
      else EXPECT_EQ(first[rel], bytes) << rel;
    }
  }
  EXPECT_GE(first.size(), 16u);
}
