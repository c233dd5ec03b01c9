#include "ld3dhs/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ld3dhs {

AdamW::AdamW(const ParameterStore& params, AdamWHyper hyper) : hyper_(hyper) {
  for (const auto& p : params) {
    state_.m.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
    state_.v.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
  }
}

void AdamW::step(ParameterStore& params, const std::vector<Eigen::MatrixXd>& grads, double lr) {
  if (grads.size() != params.size() || state_.m.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match the parameter set");
  }
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double bc1 = 1.0 - std::pow(hyper_.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i].value;
    const auto& g = grads[i];
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    m = hyper_.beta1 * m + (1.0 - hyper_.beta1) * g;
    v = hyper_.beta2 * v + (1.0 - hyper_.beta2) * g.cwiseProduct(g);
    theta *= 1.0 - lr * hyper_.weight_decay;
    theta.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + hyper_.eps);
  }
}

void AdamW::restore(AdamWState state) {
  if (state.m.size() != state_.m.size() || state.v.size() != state_.v.size()) {
    throw std::invalid_argument("optimizer state does not match the parameter set");
  }
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    if (state.m[i].rows() != state_.m[i].rows() || state.m[i].cols() != state_.m[i].cols() ||
        state.v[i].rows() != state_.v[i].rows() || state.v[i].cols() != state_.v[i].cols()) {
      throw std::invalid_argument("optimizer state shape mismatch");
    }
  }
  state_ = std::move(state);
}

double cosine_lr(int epoch, int epochs, double start, double end) {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (epoch < 0 || epoch >= epochs) throw std::out_of_range("epoch outside the schedule");
  if (epochs == 1) return start;
  const double progress = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  return end + 0.5 * (start - end) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace ld3dhs
