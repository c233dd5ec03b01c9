#pragma once

// Adaptive-moment optimizer with decoupled weight decay, and the cosine
// learning-rate schedule.

#include "ld3dhs/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace ld3dhs {

struct AdamWState {
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
  std::int64_t step = 0;

  bool operator==(const AdamWState&) const = default;
};

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParameterStore& params, AdamWHyper hyper);

  // theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
  void step(ParameterStore& params, const std::vector<Eigen::MatrixXd>& grads, double lr);

  const AdamWState& state() const { return state_; }
  void restore(AdamWState state);
  const AdamWHyper& hyper() const { return hyper_; }

 private:
  AdamWHyper hyper_;
  AdamWState state_;
};

// lr(e) = end + (start - end) * (1 + cos(pi * e / (E - 1))) / 2 for
// e in [0, E-1]; a single-epoch run stays at `start`.
double cosine_lr(int epoch, int epochs, double start, double end);

}  // namespace ld3dhs
