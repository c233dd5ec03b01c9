#include "ld3dhs/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace ld3dhs::ag {

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Matrix Var::grad() const {
  if (!node_ || node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

namespace {

Var make(Matrix value, std::vector<std::shared_ptr<Node>> parents,
         std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  n->requires_grad = any;
  if (any) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return Var(std::move(n));
}

void check_segments(std::span<const Index> offsets, Index rows) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows) {
    throw std::invalid_argument("segment offsets must span [0, rows]");
  }
  for (std::size_t s = 1; s < offsets.size(); ++s) {
    if (offsets[s] <= offsets[s - 1]) throw std::invalid_argument("empty or decreasing segment");
  }
}

}  // namespace

Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var leaf(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var scalar_constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

void backward(const Var& root) {
  if (!root.defined() || root.rows() != 1 || root.cols() != 1) {
    throw std::invalid_argument("backward root must be a 1x1 value");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  auto an = a.node();
  auto bn = b.node();
  return make(a.value() * b.value(), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * self.grad);
  });
}

Var add_row(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) throw std::invalid_argument("add_row: shape mismatch");
  auto xn = x.node();
  auto rn = row.node();
  Matrix out = x.value().rowwise() + row.value().row(0);
  return make(std::move(out), {xn, rn}, [xn, rn](Node& self) {
    if (xn->requires_grad) xn->accumulate(self.grad);
    if (rn->requires_grad) rn->accumulate(self.grad.colwise().sum());
  });
}

Var add(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("add: shape mismatch");
  auto an = a.node();
  auto bn = b.node();
  return make(a.value() + b.value(), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad);
    if (bn->requires_grad) bn->accumulate(self.grad);
  });
}

Var scale(const Var& x, double s) {
  auto xn = x.node();
  return make(x.value() * s, {xn}, [xn, s](Node& self) { xn->accumulate(self.grad * s); });
}

Var relu(const Var& x) {
  auto xn = x.node();
  Matrix out = x.value().cwiseMax(0.0);
  return make(std::move(out), {xn}, [xn](Node& self) {
    xn->accumulate((xn->value.array() > 0.0).cast<double>().matrix().cwiseProduct(self.grad));
  });
}

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row counts differ");
  auto an = a.node();
  auto bn = b.node();
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Index ca = a.cols();
  const Index cb = b.cols();
  return make(std::move(out), {an, bn}, [an, bn, ca, cb](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad.leftCols(ca));
    if (bn->requires_grad) bn->accumulate(self.grad.rightCols(cb));
  });
}

Var row_softmax(const Var& x) {
  auto xn = x.node();
  Matrix y = x.value();
  for (Index i = 0; i < y.rows(); ++i) {
    const double m = y.row(i).maxCoeff();
    y.row(i) = (y.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return make(y, {xn}, [xn](Node& self) {
    const Matrix& yv = self.value;
    Eigen::VectorXd dot = (self.grad.cwiseProduct(yv)).rowwise().sum();
    Matrix g = yv.cwiseProduct(self.grad.colwise() - dot);
    xn->accumulate(g);
  });
}

Var row_normalize(const Var& x) {
  auto xn = x.node();
  Eigen::VectorXd norms = x.value().rowwise().norm().cwiseMax(1e-12);
  Matrix y = x.value().array().colwise() / norms.array();
  return make(y, {xn}, [xn, norms](Node& self) {
    const Matrix& yv = self.value;
    Eigen::VectorXd dot = (self.grad.cwiseProduct(yv)).rowwise().sum();
    Matrix g = (self.grad - yv.cwiseProduct(dot.replicate(1, yv.cols()))).array().colwise() / norms.array();
    xn->accumulate(g);
  });
}

Var segment_max(const Var& x, std::span<const Index> offsets) {
  check_segments(offsets, x.rows());
  const Index segs = static_cast<Index>(offsets.size()) - 1;
  const Index d = x.cols();
  Matrix out(segs, d);
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> arg(segs, d);
  const Matrix& v = x.value();
  for (Index s = 0; s < segs; ++s) {
    for (Index j = 0; j < d; ++j) {
      Index best = offsets[s];
      for (Index i = offsets[s] + 1; i < offsets[s + 1]; ++i) {
        if (v(i, j) > v(best, j)) best = i;
      }
      out(s, j) = v(best, j);
      arg(s, j) = best;
    }
  }
  auto xn = x.node();
  return make(std::move(out), {xn}, [xn, arg](Node& self) {
    Matrix g = Matrix::Zero(xn->value.rows(), xn->value.cols());
    for (Index s = 0; s < arg.rows(); ++s) {
      for (Index j = 0; j < arg.cols(); ++j) g(arg(s, j), j) += self.grad(s, j);
    }
    xn->accumulate(g);
  });
}

Var segment_broadcast(const Var& g, std::span<const Index> offsets) {
  if (static_cast<Index>(offsets.size()) != g.rows() + 1) {
    throw std::invalid_argument("segment_broadcast: one row per segment required");
  }
  check_segments(offsets, offsets.back());
  std::vector<Index> offs(offsets.begin(), offsets.end());
  Matrix out(offs.back(), g.cols());
  for (Index s = 0; s + 1 < static_cast<Index>(offs.size()); ++s) {
    out.middleRows(offs[s], offs[s + 1] - offs[s]) = g.value().row(s).replicate(offs[s + 1] - offs[s], 1);
  }
  auto gn = g.node();
  return make(std::move(out), {gn}, [gn, offs](Node& self) {
    Matrix acc(gn->value.rows(), gn->value.cols());
    for (Index s = 0; s + 1 < static_cast<Index>(offs.size()); ++s) {
      acc.row(s) = self.grad.middleRows(offs[s], offs[s + 1] - offs[s]).colwise().sum();
    }
    gn->accumulate(acc);
  });
}

Var mask_multiply(const Var& x, const Matrix& mask) {
  if (mask.rows() != x.rows() || mask.cols() != x.cols()) throw std::invalid_argument("mask shape mismatch");
  auto xn = x.node();
  return make(x.value().cwiseProduct(mask), {xn},
              [xn, mask](Node& self) { xn->accumulate(self.grad.cwiseProduct(mask)); });
}

Var detach(const Var& x) { return constant(x.value()); }

Var slice_cols(const Var& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw std::invalid_argument("slice_cols: out of range");
  auto xn = x.node();
  return make(x.value().middleCols(start, count), {xn}, [xn, start, count](Node& self) {
    Matrix g = Matrix::Zero(xn->value.rows(), xn->value.cols());
    g.middleCols(start, count) = self.grad;
    xn->accumulate(g);
  });
}

Var pad_cols(const Var& x, Index width) {
  if (width < x.cols()) throw std::invalid_argument("pad_cols: width smaller than input");
  auto xn = x.node();
  Matrix out = Matrix::Zero(x.rows(), width);
  out.leftCols(x.cols()) = x.value();
  const Index c = x.cols();
  return make(std::move(out), {xn}, [xn, c](Node& self) { xn->accumulate(self.grad.leftCols(c)); });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) throw std::invalid_argument("weighted_sum: size mismatch");
  double total = 0.0;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<double> w(weights.begin(), weights.end());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].rows() != 1 || terms[i].cols() != 1) throw std::invalid_argument("weighted_sum: 1x1 terms only");
    total += w[i] * terms[i].scalar();
    parents.push_back(terms[i].node());
  }
  auto ps = parents;
  return make(Matrix::Constant(1, 1, total), std::move(parents), [ps, w](Node& self) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (ps[i]->requires_grad) ps[i]->accumulate(self.grad * w[i]);
    }
  });
}

Var scalar_op(std::vector<Var> inputs, double value, std::vector<Matrix> input_grads) {
  if (inputs.size() != input_grads.size()) throw std::invalid_argument("scalar_op: one gradient per input");
  std::vector<std::shared_ptr<Node>> parents;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (input_grads[i].rows() != inputs[i].rows() || input_grads[i].cols() != inputs[i].cols()) {
      throw std::invalid_argument("scalar_op: gradient shape mismatch");
    }
    parents.push_back(inputs[i].node());
  }
  auto ps = parents;
  return make(Matrix::Constant(1, 1, value), std::move(parents),
              [ps, grads = std::move(input_grads)](Node& self) {
                const double up = self.grad(0, 0);
                for (std::size_t i = 0; i < ps.size(); ++i) {
                  if (ps[i]->requires_grad) ps[i]->accumulate(grads[i] * up);
                }
              });
}

}  // namespace ld3dhs::ag
