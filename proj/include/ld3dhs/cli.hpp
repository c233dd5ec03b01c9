#pragma once

// Subcommand implementations behind the ld3dhs executable. Each returns the
// process exit code and reports through `out`; failures surface as
// ConfigError / std::invalid_argument (exit 2), NumericError (3) or IoError (4).

#include "ld3dhs/scene.hpp"
#include "ld3dhs/taxonomy.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace ld3dhs {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumeric = 3, kExitIo = 4 };

// Runs `body`, mapping exceptions to exit codes and printing them to `err`.
int run_guarded(std::ostream& err, const std::function<int()>& body);

// "uniform", "power:<exponent>", or a comma-separated fine frequency list.
ImbalanceProfile parse_profile(const std::string& text, int fine_classes, std::uint64_t seed);

// Output root: $LD3DHS_OUT when set, else "runs".
std::filesystem::path default_output_root();

// Git-style blob id: sha1("blob <size>\0" + bytes), lowercase hex.
std::string blob_hash(std::string_view bytes);

// Inputs, resolved config and outputs of one command invocation. The input
// hash covers every input byte and the resolved config.
struct RunManifest {
  std::string run_id;
  std::string command;
  nlohmann::ordered_json config;
  std::filesystem::path dataset_manifest;
  std::vector<std::pair<std::filesystem::path, std::string>> inputs;  // path, blob hash
  std::string input_hash;
  nlohmann::ordered_json outputs = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const;
};

RunManifest make_run_manifest(const std::string& command, const nlohmann::ordered_json& config,
                              const std::filesystem::path& dataset_manifest,
                              const std::vector<std::filesystem::path>& extra_inputs = {});

struct GenerateArgs {
  std::filesystem::path taxonomy;
  std::string profile = "uniform";
  int count = 8;
  int points = 2048;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> layout_seed;  // class placement; defaults to `seed`
  std::optional<double> color_noise;
  std::optional<std::filesystem::path> out;
};
int cmd_generate(const GenerateArgs& args, std::ostream& out);

struct TrainArgs {
  std::filesystem::path config;
  std::filesystem::path data;
  std::vector<std::string> overrides;
  std::optional<std::filesystem::path> resume;
  std::optional<std::filesystem::path> out;
  bool quiet = false;
};
int cmd_train(const TrainArgs& args, std::ostream& out);

struct EvalArgs {
  std::optional<std::filesystem::path> checkpoint;
  bool oracle = false;  // ground-truth predictor instead of a checkpoint
  std::filesystem::path data;
  std::optional<std::filesystem::path> out;  // report file
};
int cmd_eval(const EvalArgs& args, std::ostream& out);

struct AblateArgs {
  std::filesystem::path config;
  std::filesystem::path train_data;
  std::filesystem::path eval_data;
  std::vector<std::string> switches{"LDF", "CFG", "ADB", "L_con", "L_chc", "L_bis"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::string> overrides;
  std::optional<std::filesystem::path> out;
};
int cmd_ablate(const AblateArgs& args, std::ostream& out);

struct PlotArgs {
  std::vector<std::filesystem::path> reports;
  std::vector<std::string> labels;  // defaults to report file stems
  std::optional<std::filesystem::path> log;
  std::optional<std::filesystem::path> out;
};
int cmd_plot(const PlotArgs& args, std::ostream& out);

}  // namespace ld3dhs
