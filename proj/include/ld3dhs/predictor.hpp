#pragma once

#include "ld3dhs/scene.hpp"
#include "ld3dhs/taxonomy.hpp"

#include <vector>

namespace ld3dhs {

// Anything that labels every point of a scene at every hierarchy level.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual const HierarchySpec& taxonomy() const = 0;
  virtual std::vector<LabelArray> predict(const Scene& scene) const = 0;
};

// Returns each scene's own ground-truth labels; evaluation reference point.
class GroundTruthPredictor : public Predictor {
 public:
  explicit GroundTruthPredictor(HierarchySpec spec) : spec_(std::move(spec)) {}
  const HierarchySpec& taxonomy() const override { return spec_; }
  std::vector<LabelArray> predict(const Scene& scene) const override { return scene.labels; }

 private:
  HierarchySpec spec_;
};

}  // namespace ld3dhs
