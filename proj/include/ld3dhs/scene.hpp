#pragma once

// Synthetic hierarchical point-cloud scenes, augmentation, and batching.

#include "ld3dhs/taxonomy.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ld3dhs {

using LabelArray = std::vector<int>;

struct Scene {
  std::string name;
  Eigen::MatrixXd positions;  // N x 3, meters
  Eigen::MatrixXd features;   // N x C, colors in [0, 1]
  std::vector<LabelArray> labels;  // one array of length N per level

  Eigen::Index num_points() const { return positions.rows(); }
  Eigen::Index feature_dim() const { return features.cols(); }
};

// Throws std::invalid_argument unless the scene is non-empty, finite, in
// range for `spec`, and hierarchy-consistent.
void validate_scene(const Scene& scene, const HierarchySpec& spec);

// Class imbalance is declared at the finest level and induced upward.
struct ImbalanceProfile {
  std::vector<double> fine_frequencies;
  std::uint64_t seed = 0;   // fixes the class layout shared by every scene
  double color_noise = 0.05;     // per-point Gaussian color noise
  double sibling_spread = 0.25;  // color distance between siblings

  static ImbalanceProfile uniform(int fine_classes, std::uint64_t seed);
  // f_i proportional to (i + 1)^-exponent.
  static ImbalanceProfile power_law(int fine_classes, double exponent, std::uint64_t seed);

  // Sum of fine frequencies over each class at `level`.
  std::vector<double> level_frequencies(const HierarchySpec& spec, int level) const;
  void validate(const HierarchySpec& spec) const;
};

// Deterministic in (spec, profile, n_points, seed). Every fine class receives
// at least one point; the remaining points are drawn multinomially.
Scene generate_scene(const HierarchySpec& spec, const ImbalanceProfile& profile, int n_points, std::uint64_t seed);

struct AugmentParams {
  double scale_min = 0.9;
  double scale_max = 1.1;
  double jitter_sigma = 0.005;
  double color_drop_prob = 0.2;

  static AugmentParams identity() { return {1.0, 1.0, 0.0, 0.0}; }
};

// Uniform scaling about the origin, Gaussian jitter, and whole-scene color
// dropping. Labels are untouched.
Scene augment(const Scene& scene, std::uint64_t seed, const AugmentParams& params = {});

// Empirical frequency of each class at `level`.
std::vector<double> class_frequencies(const Scene& scene, int level, int num_classes);
std::vector<double> class_frequencies(std::span<const Scene> scenes, int level, int num_classes);

// Several scenes concatenated row-wise. `offsets` delimit scenes so that
// per-scene pooling stays per scene.
struct Batch {
  Eigen::MatrixXd inputs;  // N x (3 + C)
  std::vector<Eigen::Index> offsets;
  std::vector<LabelArray> labels;

  Eigen::Index num_points() const { return inputs.rows(); }
  int num_levels() const { return static_cast<int>(labels.size()); }
};

Batch make_batch(std::span<const Scene* const> scenes);
Batch make_batch(const Scene& scene);

}  // namespace ld3dhs
