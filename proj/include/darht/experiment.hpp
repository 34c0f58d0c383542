#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "darht/adv_train.hpp"
#include "darht/attacks.hpp"
#include "darht/data.hpp"
#include "darht/distill.hpp"

namespace darht {

struct DataSection {
  std::string kind = "blobs";  // blobs | rings | textures | idx
  SyntheticConfig synthetic;
  std::filesystem::path idx_images, idx_labels;
  double test_fraction = 0.25;
  std::uint64_t split_seed = 0;
  std::optional<Shape> example_shape;  // view examples with this shape, e.g. [1,6,6]
};

struct TeacherSection {
  std::string name;
  std::string architecture = "mlp-deep";
  TeacherTrainConfig train;
  std::uint64_t init_seed = 0;
  std::optional<std::filesystem::path> checkpoint;  // use a saved model instead of training
};

struct StudentSection {
  std::string architecture = "mlp-deep";
  float dropout = 0.25f;
  DistillConfig distill;
  std::uint64_t init_seed = 0;
  std::uint64_t eval_seed = 0;  // MC dropout stream at evaluation
};

struct AttackSection {
  std::string name;  // report label, defaults to the attack kind
  AttackKind kind = AttackKind::Pgd;
  AttackConfig config;
};

// One experiment. Every seed is derived from `seed`, so --seed reseeds the
// whole run.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataSection data;
  std::vector<TeacherSection> teachers;
  StudentSection student;
  std::vector<AttackSection> attacks;
  std::filesystem::path output = "runs/default";

  // Relative paths inside `j` resolve against `base_dir`.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  // UsageError naming the path when it cannot be read; FormatError on bad JSON.
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  std::string hash() const;  // CRC-32 of the canonical JSON, hex

  // Sets every component seed from `seed`.
  void apply_seed();
};

struct PreparedData {
  Dataset train;
  Dataset test;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

// Throws ValidationError when teachers, student and data disagree on K or
// input shape, names collide, or a referenced checkpoint is missing. Runs
// before any training.
void validate_experiment(const ExperimentConfig& cfg, const PreparedData& data);

enum class Subcommand { TrainTeachers, Distill, AttackEval, TransferEval, Report, Pipeline };

std::string to_string(Subcommand s);
Subcommand parse_subcommand(const std::string& name);

struct RunResult {
  std::vector<std::filesystem::path> artifacts;  // relative to the output directory
  std::filesystem::path manifest;
};

// Executes a subcommand, writing artifacts and a manifest under
// cfg.output. Progress goes to `log`.
RunResult run_experiment(const ExperimentConfig& cfg, Subcommand sub, std::ostream& log,
                         const std::string& config_path = {});

}  // namespace darht
