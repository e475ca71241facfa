#pragma once

// Reverse-mode automatic differentiation over dense float64 matrices.
//
// A Tape records every operation in creation order; backward() walks the
// records in reverse and accumulates adjoints. Nodes that do not depend on a
// leaf are treated as constants and never receive gradient storage.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <vector>

namespace urdg::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Adjoint after Tape::backward(). Zero-sized if the node never received one.
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the adjoint of the node it is attached to.
  using Backward = std::function<void(Tape&, const Matrix& adjoint)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value);
  Var constant(Matrix value);

  /// Seeds d(output)/d(output) = 1 for a 1x1 output and propagates.
  void backward(const Var& output);

  /// Records an operation. `fn` runs only if at least one parent requires grad.
  Var record(Matrix value, const std::vector<Var>& parents, Backward fn);

  /// Adds `g` into the adjoint of `v` (no-op for constants).
  void accumulate(const Var& v, const Matrix& g);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Elementwise, equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var pow(const Var& a, double p);
/// Zero gradient wherever the input lies outside [lo, hi].
Var clamp(const Var& a, double lo, double hi);

// Broadcasting. `row` is 1 x cols(a); `col` is rows(a) x 1.
Var add_row(const Var& a, const Var& row);
Var mul_row(const Var& a, const Var& row);
Var add_col(const Var& a, const Var& col);
Var mul_col(const Var& a, const Var& col);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sums(const Var& a);  // rows x 1
Var col_sums(const Var& a);  // 1 x cols

// Structure.
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& a, const std::vector<Eigen::Index>& index);
Var detach(const Var& a);

/// One output block: `block` of row i of `sources[source]`.
struct BlockRef {
  int source = 0;
  int block = 0;
};

/// Row i of the result is the concatenation over k of
/// sources[table[i][k].source].row(i).segment(table[i][k].block * block_len, block_len).
Var gather_blocks(const std::vector<Var>& sources, const std::vector<std::vector<BlockRef>>& table,
                  Eigen::Index block_len);

// Softmax family (row-wise, max-shifted).
Var log_softmax_rows(const Var& a);
/// Log-softmax over the entries where mask(i, j) is true; other entries are 0
/// in the output and receive no gradient. Every row needs at least one entry.
Var masked_log_softmax_rows(const Var& a, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask);

// Composites built from the primitives above.
Var l2_normalize_rows(const Var& a, double eps = 1e-12);
Var affine(const Var& x, const Var& weight, const Var& bias);

}  // namespace urdg::ad
