#include "ld3dhs/taxonomy.hpp"

#include "ld3dhs/errors.hpp"
#include "ld3dhs/file_util.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace ld3dhs {

HierarchySpec::HierarchySpec(std::string name, std::vector<std::string> level_names,
                             std::vector<std::vector<std::string>> class_names,
                             std::vector<std::vector<int>> parent_of)
    : name_(std::move(name)),
      level_names_(std::move(level_names)),
      class_names_(std::move(class_names)),
      parent_of_(std::move(parent_of)) {
  validate();
}

void HierarchySpec::validate() const {
  const std::size_t levels = class_names_.size();
  if (levels == 0) throw std::invalid_argument("taxonomy needs at least one level");
  if (level_names_.size() != levels) throw std::invalid_argument("one name per level required");
  if (parent_of_.size() != levels) throw std::invalid_argument("parent_of must have one entry per level");
  if (!parent_of_[0].empty()) throw std::invalid_argument("the coarsest level has no parents");
  for (std::size_t h = 0; h < levels; ++h) {
    const auto& names = class_names_[h];
    if (names.empty()) throw std::invalid_argument("level '" + level_names_[h] + "' has no classes");
    std::set<std::string> unique(names.begin(), names.end());
    if (unique.size() != names.size()) {
      throw std::invalid_argument("duplicate class name in level '" + level_names_[h] + "'");
    }
    if (h == 0) continue;
    if (names.size() < class_names_[h - 1].size()) {
      throw std::invalid_argument("level '" + level_names_[h] + "' has fewer classes than its parent level");
    }
    const auto& parents = parent_of_[h];
    if (parents.size() != names.size()) {
      throw std::invalid_argument("level '" + level_names_[h] + "' needs one parent per class");
    }
    std::vector<int> children(class_names_[h - 1].size(), 0);
    for (std::size_t c = 0; c < parents.size(); ++c) {
      if (parents[c] < 0 || parents[c] >= static_cast<int>(children.size())) {
        throw std::invalid_argument("class '" + names[c] + "' has an out-of-range parent");
      }
      ++children[parents[c]];
    }
    for (std::size_t p = 0; p < children.size(); ++p) {
      if (children[p] == 0) {
        throw std::invalid_argument("class '" + class_names_[h - 1][p] + "' at level '" + level_names_[h - 1] +
                                    "' has no children");
      }
    }
  }
}

int HierarchySpec::num_classes(int level) const {
  return static_cast<int>(class_names_.at(static_cast<std::size_t>(level)).size());
}

int HierarchySpec::max_classes() const {
  int m = 0;
  for (const auto& names : class_names_) m = std::max(m, static_cast<int>(names.size()));
  return m;
}

int HierarchySpec::parent(int level, int child) const {
  if (level < 1 || level >= num_levels()) throw std::out_of_range("level has no parent level");
  return parent_of_[level].at(static_cast<std::size_t>(child));
}

int HierarchySpec::ancestor(int level, int cls, int target_level) const {
  if (target_level > level) throw std::invalid_argument("ancestor level must not be finer");
  while (level > target_level) {
    cls = parent(level, cls);
    --level;
  }
  return cls;
}

std::vector<int> HierarchySpec::class_counts() const {
  std::vector<int> out;
  for (const auto& names : class_names_) out.push_back(static_cast<int>(names.size()));
  return out;
}

int MappingMatrix::parent_of(int child) const {
  for (int p = 0; p < coarse_classes(); ++p) {
    if (entries(child, p) != 0.0) return p;
  }
  throw std::logic_error("mapping row has no parent");
}

MappingMatrix build_mapping(const HierarchySpec& spec, int level) {
  if (level < 1 || level >= spec.num_levels()) {
    throw std::out_of_range("mapping level " + std::to_string(level) + " outside [1, " +
                            std::to_string(spec.num_levels() - 1) + "]");
  }
  MappingMatrix m;
  m.level = level;
  m.entries = Eigen::MatrixXd::Zero(spec.num_classes(level), spec.num_classes(level - 1));
  for (int c = 0; c < spec.num_classes(level); ++c) m.entries(c, spec.parent(level, c)) = 1.0;
  return m;
}

std::vector<MappingMatrix> build_all_mappings(const HierarchySpec& spec) {
  std::vector<MappingMatrix> out;
  for (int h = 1; h < spec.num_levels(); ++h) out.push_back(build_mapping(spec, h));
  return out;
}

MappingMatrix derive_mapping_from_labels(std::span<const int> coarse_labels, std::span<const int> fine_labels,
                                         int coarse_classes, int fine_classes, int level) {
  if (coarse_labels.size() != fine_labels.size()) throw std::invalid_argument("label arrays differ in length");
  if (coarse_classes < 1 || fine_classes < 1) throw std::invalid_argument("class counts must be positive");
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(fine_classes, coarse_classes);
  for (std::size_t i = 0; i < fine_labels.size(); ++i) {
    const int f = fine_labels[i];
    const int c = coarse_labels[i];
    if (f < 0 || f >= fine_classes || c < 0 || c >= coarse_classes) {
      throw std::out_of_range("label out of range at index " + std::to_string(i));
    }
    ++counts(f, c);
  }
  MappingMatrix m;
  m.level = level;
  m.entries = Eigen::MatrixXd::Zero(fine_classes, coarse_classes);
  for (int f = 0; f < fine_classes; ++f) {
    int best = 0;
    for (int c = 1; c < coarse_classes; ++c) {
      if (counts(f, c) > counts(f, best)) best = c;
    }
    if (counts(f, best) == 0) {
      throw std::invalid_argument("fine class " + std::to_string(f) + " never occurs in the labels");
    }
    m.entries(f, best) = 1.0;
  }
  return m;
}

Eigen::MatrixXd project_labels_down(const Eigen::MatrixXd& coarse, const MappingMatrix& mapping) {
  if (coarse.cols() != mapping.coarse_classes()) {
    throw std::invalid_argument("coarse width " + std::to_string(coarse.cols()) + " does not match mapping width " +
                                std::to_string(mapping.coarse_classes()));
  }
  return coarse * mapping.entries.transpose();
}

double consistency_rate(std::span<const int> pred_fine, std::span<const int> pred_coarse,
                        const MappingMatrix& mapping) {
  if (pred_fine.size() != pred_coarse.size()) throw std::invalid_argument("prediction arrays differ in length");
  if (pred_fine.empty()) return 1.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred_fine.size(); ++i) {
    const int f = pred_fine[i];
    const int c = pred_coarse[i];
    if (f < 0 || f >= mapping.fine_classes() || c < 0 || c >= mapping.coarse_classes()) {
      throw std::out_of_range("prediction out of range at index " + std::to_string(i));
    }
    if (mapping.is_child(f, c)) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(pred_fine.size());
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

HierarchySpec parse_taxonomy(std::string_view text) {
  std::string name;
  std::vector<std::string> level_names;
  std::vector<std::vector<std::string>> classes;
  std::vector<std::vector<std::string>> parent_names;

  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError("taxonomy:" + std::to_string(line_no), msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.rfind("[level", 0) != 0) fail("expected '[level NAME]'");
      std::string lname = trim(std::string_view(line).substr(6, line.size() - 7));
      if (lname.empty()) fail("level needs a name");
      level_names.push_back(lname);
      classes.emplace_back();
      parent_names.emplace_back();
      continue;
    }
    if (level_names.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string::npos || trim(line.substr(0, eq)) != "name") fail("expected 'name = ...' or a level");
      name = trim(line.substr(eq + 1));
      continue;
    }
    if (classes.size() == 1) {
      if (line.find(':') != std::string::npos) fail("the first level cannot declare parents");
      classes.back().push_back(line);
    } else {
      const auto colon = line.find(':');
      if (colon == std::string::npos) fail("expected 'child : parent'");
      classes.back().push_back(trim(line.substr(0, colon)));
      parent_names.back().push_back(trim(line.substr(colon + 1)));
    }
  }
  if (classes.empty()) throw ConfigError("taxonomy", "no levels declared");

  std::vector<std::vector<int>> parent_of(classes.size());
  for (std::size_t h = 1; h < classes.size(); ++h) {
    std::unordered_map<std::string, int> index;
    for (std::size_t p = 0; p < classes[h - 1].size(); ++p) index[classes[h - 1][p]] = static_cast<int>(p);
    for (std::size_t c = 0; c < classes[h].size(); ++c) {
      auto it = index.find(parent_names[h][c]);
      if (it == index.end()) {
        throw ConfigError("taxonomy", "class '" + classes[h][c] + "' names unknown parent '" + parent_names[h][c] +
                                          "' in level '" + level_names[h - 1] + "'");
      }
      parent_of[h].push_back(it->second);
    }
  }
  try {
    return HierarchySpec(name, level_names, classes, parent_of);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("taxonomy", e.what());
  }
}

std::string format_taxonomy(const HierarchySpec& spec) {
  std::ostringstream out;
  out << "name = " << spec.name() << "\n";
  for (int h = 0; h < spec.num_levels(); ++h) {
    out << "[level " << spec.level_name(h) << "]\n";
    for (int c = 0; c < spec.num_classes(h); ++c) {
      out << spec.class_names(h)[static_cast<std::size_t>(c)];
      if (h > 0) out << " : " << spec.class_names(h - 1)[static_cast<std::size_t>(spec.parent(h, c))];
      out << "\n";
    }
  }
  return out.str();
}

HierarchySpec load_taxonomy(const std::filesystem::path& path) { return parse_taxonomy(read_text_file(path)); }

void save_taxonomy(const HierarchySpec& spec, const std::filesystem::path& path) {
  write_text_file(path, format_taxonomy(spec));
}

}  // namespace ld3dhs
