#pragma once

// Class prototypes kept by exponential moving average for the main and
// auxiliary branches, plus the Gini-coefficient imbalance gate.

#include "ld3dhs/scene.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace ld3dhs {

enum class Branch { Main = 0, Aux = 1 };

struct BatchPrototypes {
  Eigen::MatrixXd means;      // K x D, zero rows for absent classes
  std::vector<bool> present;  // K
};

// Per-class mean of the rows of `features` grouped by `labels`.
BatchPrototypes batch_prototypes(const Eigen::MatrixXd& features, std::span<const int> labels, int num_classes);

// The EMA recursion runs on an unnormalized running state
//   S <- beta * S + (1 - beta) * p,
// seeded with the first observed batch mean. The prototype exposed to the
// losses is S / ||S||. Nothing here participates in autodiff.
class PrototypeBank {
 public:
  PrototypeBank() = default;
  PrototypeBank(std::vector<int> classes_per_level, int dim, double beta);

  int num_levels() const { return static_cast<int>(classes_.size()); }
  int num_classes(int level) const { return classes_.at(static_cast<std::size_t>(level)); }
  int dim() const { return dim_; }
  double beta() const { return beta_; }

  void ema_update(int level, Branch branch, const BatchPrototypes& batch);
  void ema_update(int level, Branch branch, const Eigen::MatrixXd& new_protos, const std::vector<bool>& mask);

  // Unit-norm prototypes, K x D (rows of uninitialized classes are zero).
  const Eigen::MatrixXd& prototypes(int level, Branch branch) const;
  // EMA state before normalization.
  const Eigen::MatrixXd& running_state(int level, Branch branch) const;
  bool initialized(int level, Branch branch, int cls) const;
  bool level_initialized(int level, Branch branch, std::span<const int> classes) const;

  // Raw state restore (checkpoint load); recomputes the normalized rows.
  void restore(int level, Branch branch, Eigen::MatrixXd state, std::vector<bool> init_flags);
  const std::vector<bool>& init_flags(int level, Branch branch) const;

  bool operator==(const PrototypeBank&) const = default;

 private:
  struct Slot {
    Eigen::MatrixXd state;
    Eigen::MatrixXd normalized;
    std::vector<bool> init;
    bool operator==(const Slot& o) const {
      return state == o.state && normalized == o.normalized && init == o.init;
    }
  };
  Slot& slot(int level, Branch branch);
  const Slot& slot(int level, Branch branch) const;
  static void renormalize_row(Slot& s, Eigen::Index row);

  std::vector<int> classes_;
  int dim_ = 0;
  double beta_ = 0.999;
  std::vector<Slot> slots_;  // level-major, two branches per level
};

// G = sum_i sum_j |f_i - f_j| / (2 C). Requires sum(f) == 1 within 1e-6.
double gini(std::span<const double> frequencies);

// gate[h] = gini(frequencies[h]) >= threshold.
std::vector<bool> imbalance_gate(const std::vector<std::vector<double>>& frequencies, double threshold);

}  // namespace ld3dhs
