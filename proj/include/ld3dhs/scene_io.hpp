#pragma once

// Scene files and dataset manifests.
//
// Scene file (little-endian):
//   char[8]  magic "LD3DSCN1"
//   u32      levels H
//   u32      feature dim C
//   u64      points N
//   u32      name length L, then L bytes of UTF-8 name
//   f64[N*3] positions, row-major
//   f64[N*C] features, row-major
//   i32[H*N] labels, level by level
//
// Manifest (JSON): {"format": "ld3dhs-dataset", "version": 1,
//   "taxonomy": <path>, "scenes": [<path>, ...], "generator": {...}}
// with paths relative to the manifest's directory.

#include "ld3dhs/scene.hpp"
#include "ld3dhs/taxonomy.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ld3dhs {

void write_scene(const Scene& scene, const std::filesystem::path& path);
Scene read_scene(const std::filesystem::path& path);

struct Dataset {
  HierarchySpec taxonomy;
  std::vector<Scene> scenes;
  std::filesystem::path manifest_path;  // empty for in-memory datasets
};

// Loads the taxonomy and every scene, validating each against it.
Dataset load_dataset(const std::filesystem::path& manifest);

// Files referenced by the manifest (taxonomy first, then scenes), resolved.
std::vector<std::filesystem::path> dataset_files(const std::filesystem::path& manifest);

}  // namespace ld3dhs
