#pragma once

// Independent oracles and fixtures shared by the unit tests and the
// acceptance binary. Nothing here calls the routine it checks.

#include "ld3dhs/model.hpp"
#include "ld3dhs/scene.hpp"
#include "ld3dhs/taxonomy.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace ld3dhs::testing {

// Pairwise |f_i - f_j| over i < j, doubled, accumulated in long double.
inline double gini_oracle(const std::vector<double>& f) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (std::size_t j = i + 1; j < f.size(); ++j) acc += std::fabs(static_cast<long double>(f[i]) - f[j]);
  }
  return static_cast<double>(2.0L * acc / (2.0L * static_cast<long double>(f.size())));
}

// IoU per class from index sets: |P ∩ T| / |P ∪ T|; nullopt when both empty.
inline std::vector<std::optional<double>> iou_set_oracle(const std::vector<int>& pred, const std::vector<int>& truth,
                                                         int k) {
  std::vector<std::optional<double>> out;
  for (int c = 0; c < k; ++c) {
    std::set<std::size_t> p, t;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == c) p.insert(i);
      if (truth[i] == c) t.insert(i);
    }
    std::vector<std::size_t> inter, uni;
    std::set_intersection(p.begin(), p.end(), t.begin(), t.end(), std::back_inserter(inter));
    std::set_union(p.begin(), p.end(), t.begin(), t.end(), std::back_inserter(uni));
    if (uni.empty()) {
      out.emplace_back(std::nullopt);
    } else {
      out.emplace_back(static_cast<double>(inter.size()) / static_cast<double>(uni.size()));
    }
  }
  return out;
}

// Group-by mean through a map of row lists.
inline std::map<int, Eigen::VectorXd> groupby_mean(const Eigen::MatrixXd& x, const std::vector<int>& labels) {
  std::map<int, std::vector<Eigen::Index>> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) rows[labels[i]].push_back(static_cast<Eigen::Index>(i));
  std::map<int, Eigen::VectorXd> out;
  for (const auto& [c, idx] : rows) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.cols());
    for (auto i : idx) acc += x.row(i).transpose();
    out[c] = acc / static_cast<double>(idx.size());
  }
  return out;
}

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Central difference of f at x[index] with step 1e-5 * max(1, |x|).
inline double central_difference(const std::function<double()>& f, double& x) {
  const double x0 = x;
  const double h = 1e-5 * std::max(1.0, std::abs(x0));
  x = x0 + h;
  const double up = f();
  x = x0 - h;
  const double down = f();
  x = x0;
  return (up - down) / (2.0 * h);
}

struct GradCheck {
  int checked = 0;
  double worst = 0.0;
  std::string worst_where;

  void add(double analytic, double numeric, const std::string& where) {
    ++checked;
    const double e = rel_error(analytic, numeric);
    if (e > worst) {
      worst = e;
      worst_where = where;
    }
  }
};

// Compares `grad` against central differences of f on `samples` random
// entries of `x`.
inline void check_matrix(GradCheck& gc, Eigen::MatrixXd& x, const Eigen::MatrixXd& grad,
                         const std::function<double()>& f, int samples, std::mt19937_64& rng,
                         const std::string& name) {
  for (int s = 0; s < samples; ++s) {
    const auto i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(x.size()));
    const double numeric = central_difference(f, x.data()[i]);
    gc.add(grad.data()[i], numeric, name + "[" + std::to_string(i) + "]");
  }
}

inline Eigen::MatrixXd random_simplex_rows(Eigen::Index n, Eigen::Index k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Eigen::MatrixXd m(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) m(i, j) = u(rng);
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

inline Eigen::MatrixXd random_unit_rows(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = g(rng);
    m.row(i).normalize();
  }
  return m;
}

inline std::vector<int> random_labels(std::size_t n, int k, std::mt19937_64& rng) {
  std::vector<int> out(n);
  for (auto& l : out) l = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
  return out;
}

// Random distribution over k entries, some of them exactly zero.
inline std::vector<double> random_distribution(int k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> f(static_cast<std::size_t>(k));
  double sum = 0.0;
  for (auto& v : f) {
    v = u(rng) < 0.2 ? 0.0 : std::pow(u(rng), 3.0);
    sum += v;
  }
  if (sum == 0.0) {
    f[0] = 1.0;
    return f;
  }
  for (auto& v : f) v /= sum;
  return f;
}

// 4 coarse / 10 fine classes.
inline HierarchySpec desk_taxonomy() {
  return HierarchySpec("desk", {"coarse", "fine"}, {{"structure", "openings", "furniture", "misc"},
                        {"wall", "floor", "ceiling", "window", "door", "table", "chair", "sofa", "board", "clutter"}},
                       {{}, {0, 0, 0, 1, 1, 2, 2, 2, 3, 3}});
}

// 2 / 3 / 5 classes over three levels.
inline HierarchySpec three_level_taxonomy() {
  return HierarchySpec("tri", {"l0", "l1", "l2"}, {{"a", "b"}, {"a1", "a2", "b1"}, {"x", "y", "z", "u", "v"}},
                       {{}, {0, 0, 1}, {0, 0, 1, 2, 2}});
}

inline std::vector<Scene> make_scenes(const HierarchySpec& spec, const ImbalanceProfile& profile, int count,
                                      int points, std::uint64_t seed) {
  std::vector<Scene> out;
  for (int i = 0; i < count; ++i) {
    Scene s = generate_scene(spec, profile, points, seed * 1000 + static_cast<std::uint64_t>(i));
    s.name = "scene_" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

// Small model widths that keep finite-difference sweeps fast.
inline ModelConfig tiny_model() {
  ModelConfig m;
  m.encoder_hidden = {12, 12};
  m.encoder_dim = 12;
  m.decoder_dims = {10};
  m.aux_dim = 8;
  m.dropout = 0.3;
  return m;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ld3dhs_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ld3dhs::testing
