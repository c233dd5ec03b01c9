#pragma once

// Training loop. One step runs, in order: forward pass, main-branch losses,
// prototype EMA update (outside the graph), auxiliary losses against the
// updated bank, the weighted total, backward, and one optimizer step.

#include "ld3dhs/checkpoint.hpp"
#include "ld3dhs/config.hpp"
#include "ld3dhs/losses.hpp"
#include "ld3dhs/metrics.hpp"
#include "ld3dhs/model.hpp"
#include "ld3dhs/optim.hpp"
#include "ld3dhs/protobank.hpp"
#include "ld3dhs/scene.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ld3dhs {

struct StepGraph {
  std::unique_ptr<ForwardContext> ctx;
  FeatureBundle features;
};

// Dropout masks derive from `step_seed` only, so equal seeds give equal graphs.
StepGraph forward_step(const Model& model, const Batch& batch, std::uint64_t step_seed, bool training);

// EMA update of both branches from the current batch. Reads values only.
void update_bank(PrototypeBank& bank, const FeatureBundle& features, const Batch& batch);

struct AssembledLoss {
  ag::Var total;
  LossReport report;
};

// Builds every loss term over `features` with `bank` held fixed. Disabled
// terms (use_* switches) report 0; auxiliary terms enter the graph only where
// lambda * gate is nonzero. Throws NumericError on a non-finite component.
AssembledLoss assemble_losses(const FeatureBundle& features, const Batch& batch, const PrototypeBank& bank,
                              const TrainConfig& cfg, const std::vector<bool>& gates,
                              std::span<const MappingMatrix> mappings, std::uint64_t step_seed);

// gate[h] from the class histogram of `scenes` at each level.
std::vector<bool> compute_gates(std::span<const Scene> scenes, const HierarchySpec& taxonomy, double threshold);
std::vector<std::vector<double>> split_frequencies(std::span<const Scene> scenes, const HierarchySpec& taxonomy);

class Trainer {
 public:
  Trainer(RunConfig cfg, HierarchySpec taxonomy, std::vector<bool> gates);
  // Resumes model, bank and optimizer from a checkpoint.
  Trainer(RunConfig cfg, const Checkpoint& ckpt, std::vector<bool> gates);

  LossReport step(const Batch& batch, std::uint64_t step_seed, double lr);

  const RunConfig& config() const { return cfg_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const PrototypeBank& bank() const { return bank_; }
  const AdamW& optimizer() const { return optimizer_; }
  const std::vector<bool>& gates() const { return gates_; }
  const std::vector<MappingMatrix>& mappings() const { return mappings_; }

 private:
  RunConfig cfg_;
  Model model_;
  PrototypeBank bank_;
  AdamW optimizer_;
  std::vector<bool> gates_;
  std::vector<MappingMatrix> mappings_;
};

std::uint64_t model_init_seed(std::uint64_t run_seed);
std::uint64_t step_seed(std::uint64_t run_seed, int epoch, int step_in_epoch);

// Indices of scenes assigned to validation by a hash of name and seed.
// Training keeps at least one scene.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
Split split_scenes(std::span<const Scene> scenes, double val_fraction, std::uint64_t seed);

struct FitOptions {
  std::filesystem::path out_dir;   // empty: nothing written
  bool validate = true;            // per-epoch validation + best checkpoint
  std::optional<std::filesystem::path> resume;
  std::function<void(const nlohmann::ordered_json&)> on_record;  // every log record as produced
};

struct FitResult {
  Checkpoint last;
  std::optional<Checkpoint> best;
  std::optional<MetricsReport> best_report;
  int best_epoch = -1;
  std::vector<bool> gates;
  std::vector<nlohmann::ordered_json> log;
};

// Epoch loop over the training part of `scenes`. Validation uses the held-out
// part, or the training scenes when the split leaves none. With an out_dir,
// writes train_log.jsonl, last.ckpt and best.ckpt.
FitResult fit(std::span<const Scene> scenes, const HierarchySpec& taxonomy, const RunConfig& cfg,
              const FitOptions& options = {});

enum class AblationSwitch { LDF, CFG, ADB, Con, Chc, Bis };
AblationSwitch parse_ablation_switch(std::string_view name);
std::string to_string(AblationSwitch s);
RunConfig disable(RunConfig cfg, AblationSwitch s);

// The rarest third of fine classes by training frequency (at least one).
std::vector<int> minority_classes(std::span<const double> fine_frequencies);

struct AblationRun {
  std::string variant;  // "full" or the disabled switch
  std::uint64_t seed = 0;
  RunConfig config;
  MetricsReport report;
  double minority_iou = 0.0;
  std::size_t trainable_scalars = 0;
};

struct AblationReport {
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  std::vector<int> minority;
  std::vector<AblationRun> runs;

  const AblationRun& run(const std::string& variant, std::uint64_t seed) const;
  double mean_avg_miou(const std::string& variant) const;
  double mean_minority_iou(const std::string& variant) const;
};

// Trains the full model and one variant per switch for every seed, evaluating
// the final weights on `eval_scenes`.
AblationReport ablate(std::span<const Scene> train_scenes, std::span<const Scene> eval_scenes,
                      const HierarchySpec& taxonomy, const RunConfig& base, std::span<const AblationSwitch> switches,
                      std::span<const std::uint64_t> seeds,
                      const std::function<void(const AblationRun&)>& on_run = {});

nlohmann::ordered_json to_json(const AblationReport& report);
std::string format_ablation_table(const AblationReport& report);

}  // namespace ld3dhs
