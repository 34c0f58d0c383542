// darht <subcommand> --config <path> [--out <dir>] [--seed <u64>]
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "darht/errors.hpp"
#include "darht/experiment.hpp"

namespace {

constexpr const char* kOutEnv = "DARHT_OUT_DIR";

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kInvalid = 3, kBadFile = 4 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarially robust distillation from heterogeneous teachers"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;

  const char* subs[][2] = {
      {"train-teachers", "train every teacher that has no checkpoint and save it"},
      {"distill", "train the student from the saved teachers"},
      {"attack-eval", "clean and robust accuracy of student and teachers per attack"},
      {"transfer-eval", "student-to-teacher transferability and recovery rates"},
      {"report", "join metrics and transfer results into one table"},
      {"pipeline", "run all of the above in order"},
  };
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s[0], s[1]);
    sub->add_option("--config", config_path, "experiment JSON")->required();
    sub->add_option("--out", out_dir, std::string("output directory (overrides ") + kOutEnv + " and the config)");
    sub->add_option("--seed", seed, "master seed")->each([&](const std::string&) { seed_given = true; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (!std::filesystem::exists(config_path)) {
      std::cerr << "darht: config file not found: " << config_path << "\n";
      return kUsage;
    }
    darht::ExperimentConfig cfg = darht::ExperimentConfig::load(config_path);
    if (seed_given) {
      cfg.seed = seed;
      cfg.apply_seed();
    }
    if (!out_dir.empty()) cfg.output = out_dir;
    else if (const char* env = std::getenv(kOutEnv); env && *env) cfg.output = env;

    const auto result = darht::run_experiment(cfg, darht::parse_subcommand(name), std::cout, config_path);
    std::cout << "wrote " << result.artifacts.size() << " artifacts, manifest "
              << (cfg.output / result.manifest).string() << "\n";
    return kOk;
  } catch (const darht::ValidationError& e) {
    std::cerr << "darht " << name << ": invalid experiment: " << e.what() << "\n";
    return kInvalid;
  } catch (const darht::FormatError& e) {
    std::cerr << "darht " << name << ": " << e.what() << "\n";
    return kBadFile;
  } catch (const darht::CorruptionError& e) {
    std::cerr << "darht " << name << ": " << e.what() << "\n";
    return kBadFile;
  } catch (const darht::UsageError& e) {
    std::cerr << "darht " << name << ": " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "darht " << name << ": " << e.what() << "\n";
    return kFailure;
  }
}
