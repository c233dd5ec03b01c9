#pragma once

// Checkpoint container (little-endian):
//   char[8]  magic "LD3DCKP1"
//   u64      header length L
//   L bytes  JSON header
//   f64[]    array payload, concatenated in header order, row-major
//
// The header holds the model config, the taxonomy text, training progress,
// free-form metadata, and an "arrays" index of {name, rows, cols}. Names:
//   param/<module>/<level>/<layer>
//   bank/<level>/<main|aux>          (plus "init" flags in the header)
//   adam/m/<param key>, adam/v/<param key>
// Values round-trip bit-exactly.

#include "ld3dhs/model.hpp"
#include "ld3dhs/optim.hpp"
#include "ld3dhs/protobank.hpp"
#include "ld3dhs/taxonomy.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>

namespace ld3dhs {

struct Checkpoint {
  ModelConfig model_config;
  HierarchySpec taxonomy;
  ParameterStore params;
  std::optional<PrototypeBank> bank;
  std::optional<AdamWState> optimizer;
  int epochs_completed = 0;
  nlohmann::json meta = nlohmann::json::object();  // run config snapshot, best metric, ...
};

Checkpoint make_checkpoint(const Model& model, const PrototypeBank* bank, const AdamW* optimizer, int epochs_completed,
                           nlohmann::json meta = nlohmann::json::object());

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Model restore_model(const Checkpoint& ckpt);

}  // namespace ld3dhs
