#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cloes/config.hpp"

namespace cloes {

inline constexpr const char* kToolVersion = "cloes 1.0.0";

/// Which part of the dataset a command reads.
enum class Split { kAll, kTrain, kTest };

struct CommandOptions {
  std::string command;
  std::string config_path;  // empty: built-in defaults
  Config config;            // resolved: file, then flag overrides
  std::string dataset_path;
  std::string model_path;
  std::string out_dir = ".";
  std::optional<Split> split;  // unset: the command's default

  bool compare = false;  // eval
  // gradcheck
  double tolerance = 1e-4;
  double step = 1e-5;
  double init_scale = 0.5;
  double corrupt_gradient = 0.0;
};

/// Each returns the process exit code; diagnostics go to `err`, data to files
/// under options.out_dir, and every successful run writes manifest.json there.
int cmd_datagen(const CommandOptions& options, std::ostream& err);
int cmd_train(const CommandOptions& options, std::ostream& err);
int cmd_eval(const CommandOptions& options, std::ostream& err);
int cmd_simulate(const CommandOptions& options, std::ostream& err);
int cmd_gradcheck(const CommandOptions& options, std::ostream& err);
/// Re-runs the command recorded in a manifest with its config snapshot,
/// writing into out_dir.
int cmd_replay(const std::string& manifest_path, const std::string& out_dir, std::ostream& err);

nlohmann::json options_to_json(const CommandOptions& options);
CommandOptions options_from_manifest(const nlohmann::json& manifest);

/// Full command line, argv[0] excluded.
int run_cli(const std::vector<std::string>& args, std::ostream& err);

}  // namespace cloes
