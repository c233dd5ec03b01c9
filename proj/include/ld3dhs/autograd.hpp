#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Var is a handle to a node in a dynamically built graph. Every op records
// its parents and a closure that propagates the node's gradient back to them.
// Graphs are rebuilt on every forward pass and released when the last handle
// goes away.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace ld3dhs::ag {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  // Zero matrix of the value's shape when no gradient reached this node.
  Matrix grad() const;
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  double scalar() const { return node_->value(0, 0); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var leaf(Matrix value);
Var scalar_constant(double v);

// Root must be 1x1. Seeds d(root)/d(root) = 1 and walks the graph once in
// reverse topological order.
void backward(const Var& root);

Var matmul(const Var& a, const Var& b);
// x + 1*row, broadcasting a 1xD row over all rows of x.
Var add_row(const Var& x, const Var& row);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var relu(const Var& x);
Var concat_cols(const Var& a, const Var& b);
Var row_softmax(const Var& x);
// Rows divided by their L2 norm (norm floored at 1e-12).
Var row_normalize(const Var& x);
// Column-wise max over each row segment [offsets[s], offsets[s+1]); result S x D.
Var segment_max(const Var& x, std::span<const Index> offsets);
// Inverse shape of segment_max: row s of g copied to every row of segment s.
Var segment_broadcast(const Var& g, std::span<const Index> offsets);
// Elementwise product with a fixed mask (dropout with pre-scaled keep mask).
Var mask_multiply(const Var& x, const Matrix& mask);
Var detach(const Var& x);
// Columns [start, start + count) of x.
Var slice_cols(const Var& x, Index start, Index count);
// x followed by zero columns up to `width`.
Var pad_cols(const Var& x, Index width);
// Sum_i w_i * x_i over 1x1 vars.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

// Scalar node with precomputed input gradients: backward adds
// upstream * input_grads[i] to inputs[i].
Var scalar_op(std::vector<Var> inputs, double value, std::vector<Matrix> input_grads);

}  // namespace ld3dhs::ag
