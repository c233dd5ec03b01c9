#pragma once

// Run configuration: model shape plus every training hyperparameter.
//
// File schema (JSON):
//   {
//     "model": { "input_features": 3, "encoder_hidden": [64, 64], "encoder_dim": 64,
//                "decoder_dims": [64], "aux_dim": 32, "aux_width_factor": 0.5,
//                "alpha": 1.0, "dropout": 0.5, "detach_guidance": false,
//                "shared_decoder": false },
//     "train": { "epochs": 100, "seed": 0, "batch_size": 4,            <- required
//                "lr_start": 0.01, "lr_end": 1e-5, "beta1": 0.9, "beta2": 0.999,
//                "adam_eps": 1e-8, "weight_decay": 1e-4, "lambda": 1.0,
//                "ema_beta": 0.999, "temperature": 0.07, "label_smoothing": 0.2,
//                "gini_threshold": 0.6, "per_class_cap": 64,
//                "chc_variant": "literal", "contrastive_form": "infonce",
//                "use_con": true, "use_chc": true, "use_bis": true,
//                "val_fraction": 0.1, "augment": true,
//                "scale_min": 0.9, "scale_max": 1.1, "jitter_sigma": 0.005,
//                "color_drop_prob": 0.2 }
//   }
// Unknown keys and wrongly typed values raise ConfigError with the dotted
// key path.

#include "ld3dhs/losses.hpp"
#include "ld3dhs/model.hpp"
#include "ld3dhs/scene.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ld3dhs {

struct TrainConfig {
  int epochs = 100;
  std::uint64_t seed = 0;
  int batch_size = 4;
  double lr_start = 0.01;
  double lr_end = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  double lambda = 1.0;
  double ema_beta = 0.999;
  double temperature = 0.07;
  double label_smoothing = 0.2;
  double gini_threshold = 0.6;
  int per_class_cap = 64;
  ChcVariant chc_variant = ChcVariant::Literal;
  ContrastiveForm contrastive_form = ContrastiveForm::InfoNce;
  bool use_con = true;
  bool use_chc = true;
  bool use_bis = true;
  double val_fraction = 0.1;
  bool augment = true;
  AugmentParams augment_params{};

  void validate() const;
  bool operator==(const TrainConfig& o) const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  bool operator==(const RunConfig& o) const { return model == o.model && train == o.train; }
};

// Every key with its default value (required keys included).
nlohmann::ordered_json to_json(const RunConfig& cfg);
nlohmann::ordered_json to_json(const ModelConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model");

// "a.b.c=value". The value is parsed as JSON when possible, otherwise taken as
// a string. A bare key that is not a top-level section resolves to the unique
// section containing it ("lambda=0" -> "train.lambda").
void apply_override(nlohmann::json& doc, std::string_view assignment);

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
RunConfig parse_run_config(std::string_view text, const std::vector<std::string>& overrides = {});

}  // namespace ld3dhs
