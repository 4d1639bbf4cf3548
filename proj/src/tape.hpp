#pragma once

#include "common.hpp"

#include <cstdint>
#include <unordered_map>
#include <vector>

namespace mtlhmb {

/// Reverse-mode autodiff over dense matrices. Nodes are appended in
/// evaluation order, so the reverse sweep is a single backwards pass over the
/// node list. One tape per optimization step; values are small (mini-batch
/// sized), so the tape is rebuilt rather than reused.
class Tape {
 public:
  using Id = std::int32_t;

  Id leaf(Matrix value);
  Id matmul(Id a, Id b);
  /// y = x + ones * b, with b a 1 x cols row vector broadcast over rows.
  Id add_rowvec(Id x, Id b);
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id relu(Id x);
  Id sigmoid(Id x);
  Id concat_cols(Id a, Id b);
  Id slice_rows(Id x, int first, int count);
  Id transpose(Id x);
  /// Sum of squared entries, as a 1x1 node.
  Id frobenius_sq(Id x);
  /// Mean binary cross-entropy with predictions clamped to [kProbClamp, 1-kProbClamp].
  Id bce(Id pred, Id target);
  Id scale(Id x, double c);

  const Matrix& value(Id id) const { return nodes_[id].value; }
  double scalar(Id id) const { return nodes_[id].value(0, 0); }
  const Matrix& grad(Id id) const { return nodes_[id].grad; }

  /// Accumulates d(loss)/d(node) into every node's grad. `loss` must be 1x1.
  void backward(Id loss);

  std::size_t size() const { return nodes_.size(); }

  static constexpr double kProbClamp = 1e-7;

 private:
  enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    AddRowVec,
    Add,
    Sub,
    Relu,
    Sigmoid,
    ConcatCols,
    SliceRows,
    Transpose,
    FrobSq,
    Bce,
    Scale,
  };

  struct Node {
    Matrix value;
    Matrix grad;
    Op op = Op::Leaf;
    Id a = -1;
    Id b = -1;
    int aux0 = 0;  // SliceRows: first row
    int aux1 = 0;  // SliceRows: row count
    double caux = 0.0;  // Scale factor
  };

  Id push(Node n);
  std::vector<Node> nodes_;
};

/// Builds a loss graph on a fresh tape while binding model parameters by
/// address, so each parameter matrix appears as exactly one leaf no matter
/// how many expressions reference it. After backward(), gradients are read
/// back per bound parameter.
class GraphBuilder {
 public:
  Tape::Id param(Matrix& p);
  Tape::Id constant(const Matrix& v) { return tape_.leaf(v); }

  Tape& tape() { return tape_; }

  /// Sum over all entries of squared differences divided by the entry count.
  Tape::Id mse(Tape::Id pred, Tape::Id target);
  /// Sum over rows of the per-row mean squared error (the per-sample
  /// reconstruction/prediction loss summed over a batch).
  Tape::Id sum_row_mse(Tape::Id pred, Tape::Id target);
  /// Plain sum of squared differences.
  Tape::Id sum_sq_err(Tape::Id pred, Tape::Id target);

  void backward(Tape::Id loss) { tape_.backward(loss); }

  /// Gradient of the last backward() w.r.t. `p`; zero if the loss never
  /// touched it.
  Matrix grad_of(const Matrix& p) const;

 private:
  Tape tape_;
  std::unordered_map<const Matrix*, Tape::Id> bound_;
};

}  // namespace mtlhmb
