#include "ld3dhs/scene.hpp"

#include "ld3dhs/file_util.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace ld3dhs {

void validate_scene(const Scene& scene, const HierarchySpec& spec) {
  const Eigen::Index n = scene.num_points();
  if (n < 1) throw std::invalid_argument("scene '" + scene.name + "' has no points");
  if (scene.positions.cols() != 3) throw std::invalid_argument("positions must be N x 3");
  if (scene.features.rows() != n) throw std::invalid_argument("features must have one row per point");
  if (!scene.positions.allFinite() || !scene.features.allFinite()) {
    throw std::invalid_argument("scene '" + scene.name + "' has non-finite coordinates or features");
  }
  if (static_cast<int>(scene.labels.size()) != spec.num_levels()) {
    throw std::invalid_argument("scene '" + scene.name + "' label levels do not match taxonomy '" + spec.name() + "'");
  }
  for (int h = 0; h < spec.num_levels(); ++h) {
    const auto& lab = scene.labels[static_cast<std::size_t>(h)];
    if (static_cast<Eigen::Index>(lab.size()) != n) throw std::invalid_argument("label array length mismatch");
    for (int l : lab) {
      if (l < 0 || l >= spec.num_classes(h)) throw std::invalid_argument("label out of range");
    }
    if (h == 0) continue;
    const auto& up = scene.labels[static_cast<std::size_t>(h - 1)];
    for (std::size_t i = 0; i < lab.size(); ++i) {
      if (spec.parent(h, lab[i]) != up[i]) {
        throw std::invalid_argument("scene '" + scene.name + "' labels are not hierarchy-consistent");
      }
    }
  }
}

ImbalanceProfile ImbalanceProfile::uniform(int fine_classes, std::uint64_t seed) {
  ImbalanceProfile p;
  p.fine_frequencies.assign(static_cast<std::size_t>(fine_classes), 1.0 / fine_classes);
  p.seed = seed;
  return p;
}

ImbalanceProfile ImbalanceProfile::power_law(int fine_classes, double exponent, std::uint64_t seed) {
  ImbalanceProfile p;
  p.seed = seed;
  double total = 0.0;
  for (int i = 0; i < fine_classes; ++i) {
    p.fine_frequencies.push_back(std::pow(i + 1.0, -exponent));
    total += p.fine_frequencies.back();
  }
  for (double& f : p.fine_frequencies) f /= total;
  return p;
}

std::vector<double> ImbalanceProfile::level_frequencies(const HierarchySpec& spec, int level) const {
  const int fine = spec.num_levels() - 1;
  std::vector<double> out(static_cast<std::size_t>(spec.num_classes(level)), 0.0);
  for (int c = 0; c < spec.num_classes(fine); ++c) {
    out[static_cast<std::size_t>(spec.ancestor(fine, c, level))] += fine_frequencies[static_cast<std::size_t>(c)];
  }
  return out;
}

void ImbalanceProfile::validate(const HierarchySpec& spec) const {
  const int k = spec.num_classes(spec.num_levels() - 1);
  if (static_cast<int>(fine_frequencies.size()) != k) {
    throw std::invalid_argument("profile has " + std::to_string(fine_frequencies.size()) +
                                " frequencies but the finest level has " + std::to_string(k) + " classes");
  }
  double sum = 0.0;
  for (double f : fine_frequencies) {
    if (!(f > 0.0)) throw std::invalid_argument("every frequency must be > 0");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("frequencies must sum to 1");
  if (!(color_noise >= 0.0) || !(sibling_spread >= 0.0)) throw std::invalid_argument("noise parameters must be >= 0");
}

namespace {

struct Box {
  Eigen::Vector3d lo;
  Eigen::Vector3d size;
};

struct Layout {
  std::vector<std::vector<Box>> boxes;     // per fine class
  std::vector<Eigen::Vector3d> colors;     // per fine class
};

Eigen::Vector3d hue_color(double hue) {
  // HSV -> RGB with S = 0.8, V = 0.9.
  const double s = 0.8;
  const double v = 0.9;
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Layout make_layout(const HierarchySpec& spec, const ImbalanceProfile& profile) {
  std::mt19937_64 rng(mix_seed(profile.seed, 0x1a70u));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int fine = spec.num_levels() - 1;
  const int k = spec.num_classes(fine);

  std::vector<int> count(static_cast<std::size_t>(k));
  int total = 0;
  for (int& c : count) {
    c = 1 + static_cast<int>(rng() % 3);
    total += c;
  }
  // Unit cells on an nx x ny x 2 grid; each box lives inside its own cell.
  const int nz = 2;
  int nxy = 1;
  while (nxy * nxy * nz < total) ++nxy;
  std::vector<int> cells(static_cast<std::size_t>(nxy * nxy * nz));
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);

  Layout layout;
  layout.boxes.resize(static_cast<std::size_t>(k));
  std::size_t next = 0;
  for (int c = 0; c < k; ++c) {
    for (int b = 0; b < count[static_cast<std::size_t>(c)]; ++b) {
      const int cell = cells[next++];
      const Eigen::Vector3d origin(cell % nxy, (cell / nxy) % nxy, cell / (nxy * nxy));
      Box box;
      for (int a = 0; a < 3; ++a) box.size[a] = 0.4 + 0.4 * unit(rng);
      if (unit(rng) < 0.3) box.size[static_cast<int>(rng() % 3)] = 0.08;  // plane-like
      for (int a = 0; a < 3; ++a) box.lo[a] = origin[a] + 0.05 + (0.9 - box.size[a]) * unit(rng);
      layout.boxes[static_cast<std::size_t>(c)].push_back(box);
    }
  }

  // Coarse ancestors get evenly spaced hues; each finer level perturbs its
  // parent's color by a shrinking random offset.
  const int k0 = spec.num_classes(0);
  std::vector<std::vector<Eigen::Vector3d>> level_colors(static_cast<std::size_t>(spec.num_levels()));
  for (int c = 0; c < k0; ++c) level_colors[0].push_back(hue_color(static_cast<double>(c) / k0));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int h = 1; h < spec.num_levels(); ++h) {
    const double spread = profile.sibling_spread * std::pow(0.5, h - 1);
    for (int c = 0; c < spec.num_classes(h); ++c) {
      Eigen::Vector3d dir(gauss(rng), gauss(rng), gauss(rng));
      dir /= std::max(dir.norm(), 1e-12);
      Eigen::Vector3d col = level_colors[static_cast<std::size_t>(h - 1)][static_cast<std::size_t>(spec.parent(h, c))] +
                            spread * dir;
      level_colors[static_cast<std::size_t>(h)].push_back(col.cwiseMax(0.05).cwiseMin(0.95));
    }
  }
  layout.colors = level_colors.back();
  return layout;
}

}  // namespace

Scene generate_scene(const HierarchySpec& spec, const ImbalanceProfile& profile, int n_points, std::uint64_t seed) {
  profile.validate(spec);
  const int fine = spec.num_levels() - 1;
  const int k = spec.num_classes(fine);
  if (n_points < k) {
    throw std::invalid_argument("n_points (" + std::to_string(n_points) + ") must be >= the number of fine classes (" +
                                std::to_string(k) + ")");
  }
  const Layout layout = make_layout(spec, profile);
  std::mt19937_64 rng(mix_seed(seed, 0x5ce9u));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Per-scene placement jitter of every box.
  std::vector<std::vector<Box>> boxes = layout.boxes;
  for (auto& cls : boxes) {
    for (auto& b : cls) {
      for (int a = 0; a < 3; ++a) b.lo[a] += 0.1 * (unit(rng) - 0.5);
    }
  }

  LabelArray fine_labels(static_cast<std::size_t>(n_points));
  std::iota(fine_labels.begin(), fine_labels.begin() + k, 0);
  std::discrete_distribution<int> pick(profile.fine_frequencies.begin(), profile.fine_frequencies.end());
  for (int i = k; i < n_points; ++i) fine_labels[static_cast<std::size_t>(i)] = pick(rng);
  std::shuffle(fine_labels.begin(), fine_labels.end(), rng);

  Scene scene;
  scene.name = "scene_" + std::to_string(seed);
  scene.positions.resize(n_points, 3);
  scene.features.resize(n_points, 3);
  for (int i = 0; i < n_points; ++i) {
    const int c = fine_labels[static_cast<std::size_t>(i)];
    const auto& cls_boxes = boxes[static_cast<std::size_t>(c)];
    const Box& b = cls_boxes[static_cast<std::size_t>(rng() % cls_boxes.size())];
    for (int a = 0; a < 3; ++a) scene.positions(i, a) = b.lo[a] + b.size[a] * unit(rng);
    for (int a = 0; a < 3; ++a) {
      const double v = layout.colors[static_cast<std::size_t>(c)][a] + profile.color_noise * gauss(rng);
      scene.features(i, a) = std::clamp(v, 0.0, 1.0);
    }
  }

  scene.labels.resize(static_cast<std::size_t>(spec.num_levels()));
  scene.labels[static_cast<std::size_t>(fine)] = std::move(fine_labels);
  for (int h = fine - 1; h >= 0; --h) {
    const auto& below = scene.labels[static_cast<std::size_t>(h + 1)];
    auto& lab = scene.labels[static_cast<std::size_t>(h)];
    lab.resize(below.size());
    for (std::size_t i = 0; i < below.size(); ++i) lab[i] = spec.parent(h + 1, below[i]);
  }
  return scene;
}

Scene augment(const Scene& scene, std::uint64_t seed, const AugmentParams& params) {
  if (params.scale_min > params.scale_max) throw std::invalid_argument("scale_min > scale_max");
  std::mt19937_64 rng(mix_seed(seed, 0xa06u));
  Scene out = scene;
  double s = params.scale_min;
  if (params.scale_max > params.scale_min) {
    s = std::uniform_real_distribution<double>(params.scale_min, params.scale_max)(rng);
  }
  out.positions *= s;
  if (params.jitter_sigma > 0.0) {
    std::normal_distribution<double> jitter(0.0, params.jitter_sigma);
    for (Eigen::Index i = 0; i < out.positions.rows(); ++i) {
      for (Eigen::Index a = 0; a < 3; ++a) out.positions(i, a) += jitter(rng);
    }
  }
  if (params.color_drop_prob > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < params.color_drop_prob) {
    out.features.setZero();
  }
  return out;
}

std::vector<double> class_frequencies(const Scene& scene, int level, int num_classes) {
  return class_frequencies(std::span<const Scene>(&scene, 1), level, num_classes);
}

std::vector<double> class_frequencies(std::span<const Scene> scenes, int level, int num_classes) {
  if (num_classes < 1) throw std::invalid_argument("num_classes must be positive");
  std::vector<double> freq(static_cast<std::size_t>(num_classes), 0.0);
  std::size_t total = 0;
  for (const Scene& s : scenes) {
    if (level < 0 || level >= static_cast<int>(s.labels.size())) throw std::out_of_range("hierarchy level out of range");
    for (int l : s.labels[static_cast<std::size_t>(level)]) {
      if (l < 0 || l >= num_classes) throw std::out_of_range("label out of range");
      freq[static_cast<std::size_t>(l)] += 1.0;
    }
    total += s.labels[static_cast<std::size_t>(level)].size();
  }
  if (total > 0) {
    for (double& f : freq) f /= static_cast<double>(total);
  }
  return freq;
}

Batch make_batch(std::span<const Scene* const> scenes) {
  if (scenes.empty()) throw std::invalid_argument("empty batch");
  const Eigen::Index c = scenes.front()->feature_dim();
  const std::size_t levels = scenes.front()->labels.size();
  Eigen::Index total = 0;
  for (const Scene* s : scenes) {
    if (s->feature_dim() != c || s->labels.size() != levels) throw std::invalid_argument("batch scenes disagree in shape");
    total += s->num_points();
  }
  Batch b;
  b.inputs.resize(total, 3 + c);
  b.labels.resize(levels);
  b.offsets.push_back(0);
  Eigen::Index row = 0;
  for (const Scene* s : scenes) {
    const Eigen::Index n = s->num_points();
    b.inputs.block(row, 0, n, 3) = s->positions;
    if (c > 0) b.inputs.block(row, 3, n, c) = s->features;
    for (std::size_t h = 0; h < levels; ++h) {
      b.labels[h].insert(b.labels[h].end(), s->labels[h].begin(), s->labels[h].end());
    }
    row += n;
    b.offsets.push_back(row);
  }
  return b;
}

Batch make_batch(const Scene& scene) {
  const Scene* one[] = {&scene};
  return make_batch(std::span<const Scene* const>(one));
}

}  // namespace ld3dhs
