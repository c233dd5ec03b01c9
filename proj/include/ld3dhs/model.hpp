#pragma once

// The differentiable segmentation network: a shared point encoder, one
// decoder + guidance fusion + classifier per hierarchy level, and a separate
// auxiliary encoder with per-level projection heads.

#include "ld3dhs/autograd.hpp"
#include "ld3dhs/predictor.hpp"
#include "ld3dhs/scene.hpp"
#include "ld3dhs/taxonomy.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace ld3dhs {

struct ModelConfig {
  int input_features = 3;                  // C; the encoder sees 3 + C columns
  std::vector<int> encoder_hidden{64, 64};  // per-point perceptron widths
  int encoder_dim = 64;                    // D
  std::vector<int> decoder_dims{64};       // D_h; one entry is broadcast to every level
  int aux_dim = 32;                        // D_aux
  double aux_width_factor = 0.5;           // aux encoder widths relative to the main encoder
  double alpha = 1.0;                      // guidance weight
  double dropout = 0.5;                    // classifier dropout
  bool detach_guidance = false;
  // Ablation control: one decoder/fusion/classifier shared by all levels,
  // emitting max_h K(h) logits of which level h reads the first K(h).
  bool shared_decoder = false;

  int decoder_dim(int level) const;
  void validate(int num_levels) const;
  bool operator==(const ModelConfig&) const = default;
};

// One trainable array. Keys are "<module>/<level>/<layer>" with level "-"
// for modules shared across levels.
struct Parameter {
  std::string module;
  int level = -1;
  std::string layer;
  Eigen::MatrixXd value;

  std::string key() const;
};

class ParameterStore {
 public:
  std::size_t add(Parameter p);
  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::optional<std::size_t> find(const std::string& key) const;
  std::size_t index(const std::string& key) const;  // throws std::out_of_range
  std::size_t scalar_count() const;
  // Indices of parameters belonging to `module` (and `level`, unless nullopt).
  std::vector<std::size_t> select(const std::string& module, std::optional<int> level = std::nullopt) const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Leaf variables for one forward pass. Parameters stay immutable; gradients
// are read back from the leaves after ag::backward.
class ForwardContext {
 public:
  explicit ForwardContext(const ParameterStore& store) : store_(&store), leaves_(store.size()) {}
  ag::Var param(std::size_t index);
  ag::Var param(const std::string& key) { return param(store_->index(key)); }
  // One matrix per parameter, zero for parameters the graph never touched.
  std::vector<Eigen::MatrixXd> gradients() const;

 private:
  const ParameterStore* store_;
  std::vector<ag::Var> leaves_;
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* dropout_rng = nullptr;  // required when training with dropout > 0
  bool with_aux = true;
};

struct ClassifierOutput {
  ag::Var h_fused;
  ag::Var logits;
  ag::Var y_prob;
};

// Per-forward products for a batch of N points.
struct FeatureBundle {
  ag::Var z;                          // N x D
  std::vector<ag::Var> h_mid;         // N x D_h
  std::vector<ag::Var> h_fused;       // N x D_h
  std::vector<ag::Var> logits;        // N x K_h
  std::vector<ag::Var> y_prob;        // N x K_h, rows on the simplex
  std::vector<ag::Var> f_aux;         // N x D_aux, unit rows (empty without aux)
  std::vector<ag::Var> h_proj;        // N x D_aux, h_mid mapped for bi-branch terms
};

class Model : public Predictor {
 public:
  Model(ModelConfig config, HierarchySpec taxonomy, std::uint64_t init_seed);
  // Restores a model around existing parameter values (checkpoint load).
  Model(ModelConfig config, HierarchySpec taxonomy, ParameterStore params);

  const ModelConfig& config() const { return config_; }
  const HierarchySpec& taxonomy() const override { return taxonomy_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  int num_levels() const { return taxonomy_.num_levels(); }

  ag::Var encode(const Batch& batch, ForwardContext& ctx) const;
  ag::Var decode_hierarchy(const ag::Var& z, int level, ForwardContext& ctx) const;
  // `guidance` is the previous level's probabilities, or nullopt at level 0.
  ClassifierOutput guide_and_classify(const ag::Var& h_mid, const std::optional<ag::Var>& guidance, int level,
                                      ForwardContext& ctx, const ForwardOptions& opts) const;
  std::vector<ag::Var> encode_aux(const Batch& batch, ForwardContext& ctx) const;
  ag::Var project_mid_for_bis(const ag::Var& h_mid, int level, ForwardContext& ctx) const;

  FeatureBundle forward(const Batch& batch, ForwardContext& ctx, const ForwardOptions& opts = {}) const;

  // Argmax labels per level (inference mode, no aux branch).
  std::vector<LabelArray> predict(const Scene& scene) const override;

 private:
  void build(std::uint64_t init_seed);
  std::size_t add_linear(std::mt19937_64& rng, const std::string& module, int level, const std::string& layer,
                         int in, int out, bool bias = true);
  ag::Var linear(const ag::Var& x, const std::string& module, int level, const std::string& layer,
                 ForwardContext& ctx, bool bias = true) const;
  ag::Var point_encoder(const Batch& batch, const std::string& module, ForwardContext& ctx) const;
  int level_key(int level) const { return config_.shared_decoder ? -1 : level; }

  ModelConfig config_;
  HierarchySpec taxonomy_;
  ParameterStore params_;
};

}  // namespace ld3dhs
