#pragma once

// Label hierarchies and the parent-child mapping matrices between adjacent
// levels. Levels are 0-based: level 0 is the coarsest, level H-1 the finest.

#include <Eigen/Dense>

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ld3dhs {

class HierarchySpec {
 public:
  HierarchySpec() = default;

  // parent_of[0] must be empty; parent_of[h][c] is the index at level h-1 of
  // the parent of class c at level h. Throws std::invalid_argument when the
  // structure violates any hierarchy invariant.
  HierarchySpec(std::string name, std::vector<std::string> level_names,
                std::vector<std::vector<std::string>> class_names,
                std::vector<std::vector<int>> parent_of);

  const std::string& name() const { return name_; }
  int num_levels() const { return static_cast<int>(class_names_.size()); }
  int num_classes(int level) const;
  int max_classes() const;
  const std::string& level_name(int level) const { return level_names_.at(level); }
  const std::vector<std::string>& class_names(int level) const { return class_names_.at(level); }
  // Parent index at level-1 of `child` at `level` (level >= 1).
  int parent(int level, int child) const;
  const std::vector<int>& parents(int level) const { return parent_of_.at(level); }
  // Ancestor of a fine-level class at `target_level`.
  int ancestor(int level, int cls, int target_level) const;
  std::vector<int> class_counts() const;

  bool operator==(const HierarchySpec&) const = default;

 private:
  void validate() const;

  std::string name_;
  std::vector<std::string> level_names_;
  std::vector<std::vector<std::string>> class_names_;
  std::vector<std::vector<int>> parent_of_;
};

// Binary K(level) x K(level-1) indicator: entries(c, p) = 1 iff p is the
// parent of c.
struct MappingMatrix {
  int level = 0;
  Eigen::MatrixXd entries;

  int fine_classes() const { return static_cast<int>(entries.rows()); }
  int coarse_classes() const { return static_cast<int>(entries.cols()); }
  bool is_child(int child, int parent) const { return entries(child, parent) != 0.0; }
  // Column index of the single nonzero in row `child`.
  int parent_of(int child) const;
};

MappingMatrix build_mapping(const HierarchySpec& spec, int level);
std::vector<MappingMatrix> build_all_mappings(const HierarchySpec& spec);

// Each fine class is assigned to its most co-occurring coarse class; ties go
// to the lowest coarse index.
MappingMatrix derive_mapping_from_labels(std::span<const int> coarse_labels, std::span<const int> fine_labels,
                                         int coarse_classes, int fine_classes, int level = 1);

// Row i of the result is A * coarse.row(i)^T: the (soft) indicator over the
// children of point i's coarse distribution.
Eigen::MatrixXd project_labels_down(const Eigen::MatrixXd& coarse, const MappingMatrix& mapping);

// Fraction of points whose fine prediction is a child of their coarse
// prediction. Empty input yields 1.
double consistency_rate(std::span<const int> pred_fine, std::span<const int> pred_coarse,
                        const MappingMatrix& mapping);

// Taxonomy text format:
//
//   # comment
//   name = s3dis-h
//   [level coarse]
//   static_elements
//   openings
//   [level fine]
//   wall : static_elements
//
// The first level lists bare class names; every later level lists
// "child : parent" with the parent named at the previous level.
HierarchySpec parse_taxonomy(std::string_view text);
std::string format_taxonomy(const HierarchySpec& spec);
HierarchySpec load_taxonomy(const std::filesystem::path& path);
void save_taxonomy(const HierarchySpec& spec, const std::filesystem::path& path);

}  // namespace ld3dhs
