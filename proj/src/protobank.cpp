#include "ld3dhs/protobank.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ld3dhs {

BatchPrototypes batch_prototypes(const Eigen::MatrixXd& features, std::span<const int> labels, int num_classes) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw std::invalid_argument("one label per feature row required");
  }
  if (!features.allFinite()) throw std::invalid_argument("features must be finite");
  BatchPrototypes out;
  out.means = Eigen::MatrixXd::Zero(num_classes, features.cols());
  out.present.assign(static_cast<std::size_t>(num_classes), false);
  std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= num_classes) throw std::out_of_range("label out of range");
    out.means.row(c) += features.row(static_cast<Eigen::Index>(i));
    counts[static_cast<std::size_t>(c)] += 1.0;
  }
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] > 0.0) {
      out.means.row(c) /= counts[static_cast<std::size_t>(c)];
      out.present[static_cast<std::size_t>(c)] = true;
    }
  }
  return out;
}

PrototypeBank::PrototypeBank(std::vector<int> classes_per_level, int dim, double beta)
    : classes_(std::move(classes_per_level)), dim_(dim), beta_(beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("EMA momentum must be in (0, 1)");
  if (dim < 1) throw std::invalid_argument("prototype dim must be >= 1");
  for (int k : classes_) {
    for (int b = 0; b < 2; ++b) {
      Slot s;
      s.state = Eigen::MatrixXd::Zero(k, dim);
      s.normalized = Eigen::MatrixXd::Zero(k, dim);
      s.init.assign(static_cast<std::size_t>(k), false);
      slots_.push_back(std::move(s));
    }
  }
}

PrototypeBank::Slot& PrototypeBank::slot(int level, Branch branch) {
  if (level < 0 || level >= num_levels()) throw std::out_of_range("bank level out of range");
  return slots_[static_cast<std::size_t>(2 * level + static_cast<int>(branch))];
}

const PrototypeBank::Slot& PrototypeBank::slot(int level, Branch branch) const {
  if (level < 0 || level >= num_levels()) throw std::out_of_range("bank level out of range");
  return slots_[static_cast<std::size_t>(2 * level + static_cast<int>(branch))];
}

void PrototypeBank::renormalize_row(Slot& s, Eigen::Index row) {
  const double n = s.state.row(row).norm();
  // A zero mean (e.g. two opposite unit vectors) has no direction; keep zero.
  if (n > 1e-12) {
    s.normalized.row(row) = s.state.row(row) / n;
  } else {
    s.normalized.row(row).setZero();
  }
}

void PrototypeBank::ema_update(int level, Branch branch, const BatchPrototypes& batch) {
  ema_update(level, branch, batch.means, batch.present);
}

void PrototypeBank::ema_update(int level, Branch branch, const Eigen::MatrixXd& new_protos,
                               const std::vector<bool>& mask) {
  Slot& s = slot(level, branch);
  if (new_protos.rows() != s.state.rows() || new_protos.cols() != dim_ || mask.size() != s.init.size()) {
    throw std::invalid_argument("prototype update shape mismatch at level " + std::to_string(level));
  }
  for (Eigen::Index c = 0; c < new_protos.rows(); ++c) {
    if (!mask[static_cast<std::size_t>(c)]) continue;
    if (!new_protos.row(c).allFinite()) throw std::invalid_argument("non-finite prototype for class " + std::to_string(c));
    if (!s.init[static_cast<std::size_t>(c)]) {
      s.state.row(c) = new_protos.row(c);
      s.init[static_cast<std::size_t>(c)] = true;
    } else {
      s.state.row(c) = beta_ * s.state.row(c) + (1.0 - beta_) * new_protos.row(c);
    }
    renormalize_row(s, c);
  }
}

const Eigen::MatrixXd& PrototypeBank::prototypes(int level, Branch branch) const { return slot(level, branch).normalized; }

const Eigen::MatrixXd& PrototypeBank::running_state(int level, Branch branch) const { return slot(level, branch).state; }

bool PrototypeBank::initialized(int level, Branch branch, int cls) const {
  return slot(level, branch).init.at(static_cast<std::size_t>(cls));
}

bool PrototypeBank::level_initialized(int level, Branch branch, std::span<const int> classes) const {
  const Slot& s = slot(level, branch);
  for (int c : classes) {
    if (!s.init.at(static_cast<std::size_t>(c))) return false;
  }
  return true;
}

void PrototypeBank::restore(int level, Branch branch, Eigen::MatrixXd state, std::vector<bool> init_flags) {
  Slot& s = slot(level, branch);
  if (state.rows() != s.state.rows() || state.cols() != s.state.cols() || init_flags.size() != s.init.size()) {
    throw std::invalid_argument("bank restore shape mismatch");
  }
  s.state = std::move(state);
  s.init = std::move(init_flags);
  for (Eigen::Index c = 0; c < s.state.rows(); ++c) {
    if (s.init[static_cast<std::size_t>(c)]) {
      renormalize_row(s, c);
    } else {
      s.normalized.row(c).setZero();
    }
  }
}

const std::vector<bool>& PrototypeBank::init_flags(int level, Branch branch) const { return slot(level, branch).init; }

double gini(std::span<const double> frequencies) {
  if (frequencies.empty()) throw std::invalid_argument("gini of an empty distribution");
  double sum = 0.0;
  for (double f : frequencies) {
    if (!(f >= 0.0)) throw std::invalid_argument("frequencies must be nonnegative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("frequencies must sum to 1 (got " + std::to_string(sum) + ")");
  double acc = 0.0;
  for (double fi : frequencies) {
    for (double fj : frequencies) acc += std::abs(fi - fj);
  }
  return acc / (2.0 * static_cast<double>(frequencies.size()));
}

std::vector<bool> imbalance_gate(const std::vector<std::vector<double>>& frequencies, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("gate threshold must be in [0, 1]");
  std::vector<bool> gates;
  for (const auto& f : frequencies) gates.push_back(gini(f) >= threshold);
  return gates;
}

}  // namespace ld3dhs
