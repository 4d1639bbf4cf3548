#include "tape.hpp"

#include <algorithm>
#include <cmath>

namespace mtlhmb {

Tape::Id Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::leaf(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Tape::Id Tape::matmul(Id a, Id b) {
  if (nodes_[a].value.cols() != nodes_[b].value.rows())
    throw ValidationError("matmul: inner dimensions disagree");
  Node n;
  n.value = nodes_[a].value * nodes_[b].value;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

Tape::Id Tape::add_rowvec(Id x, Id b) {
  const Matrix& xv = nodes_[x].value;
  const Matrix& bv = nodes_[b].value;
  if (bv.rows() != 1 || bv.cols() != xv.cols())
    throw ValidationError("add_rowvec: bias must be 1 x cols");
  Node n;
  n.value = xv.rowwise() + bv.row(0);
  n.op = Op::AddRowVec;
  n.a = x;
  n.b = b;
  return push(std::move(n));
}

Tape::Id Tape::add(Id a, Id b) {
  Node n;
  n.value = nodes_[a].value + nodes_[b].value;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

Tape::Id Tape::sub(Id a, Id b) {
  Node n;
  n.value = nodes_[a].value - nodes_[b].value;
  n.op = Op::Sub;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

Tape::Id Tape::relu(Id x) {
  Node n;
  n.value = nodes_[x].value.cwiseMax(0.0);
  n.op = Op::Relu;
  n.a = x;
  return push(std::move(n));
}

Tape::Id Tape::sigmoid(Id x) {
  Node n;
  n.value = (1.0 / (1.0 + (-nodes_[x].value.array()).exp())).matrix();
  n.op = Op::Sigmoid;
  n.a = x;
  return push(std::move(n));
}

Tape::Id Tape::concat_cols(Id a, Id b) {
  const Matrix& av = nodes_[a].value;
  const Matrix& bv = nodes_[b].value;
  if (av.rows() != bv.rows())
    throw ValidationError("concat_cols: row counts disagree");
  Node n;
  n.value.resize(av.rows(), av.cols() + bv.cols());
  n.value << av, bv;
  n.op = Op::ConcatCols;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

Tape::Id Tape::slice_rows(Id x, int first, int count) {
  const Matrix& xv = nodes_[x].value;
  if (first < 0 || count < 0 || first + count > xv.rows())
    throw ValidationError("slice_rows: range out of bounds");
  Node n;
  n.value = xv.middleRows(first, count);
  n.op = Op::SliceRows;
  n.a = x;
  n.aux0 = first;
  n.aux1 = count;
  return push(std::move(n));
}

Tape::Id Tape::transpose(Id x) {
  Node n;
  n.value = nodes_[x].value.transpose();
  n.op = Op::Transpose;
  n.a = x;
  return push(std::move(n));
}

Tape::Id Tape::frobenius_sq(Id x) {
  Node n;
  n.value = Matrix::Constant(1, 1, nodes_[x].value.squaredNorm());
  n.op = Op::FrobSq;
  n.a = x;
  return push(std::move(n));
}

Tape::Id Tape::bce(Id pred, Id target) {
  const Matrix& p = nodes_[pred].value;
  const Matrix& t = nodes_[target].value;
  if (p.rows() != t.rows() || p.cols() != t.cols())
    throw ValidationError("bce: shape mismatch");
  if (((t.array() != 0.0) && (t.array() != 1.0)).any())
    throw ValidationError("bce: targets must be 0 or 1");
  Eigen::ArrayXXd pc = p.array().min(1.0 - kProbClamp).max(kProbClamp);
  double loss =
      -(t.array() * pc.log() + (1.0 - t.array()) * (1.0 - pc).log()).mean();
  Node n;
  n.value = Matrix::Constant(1, 1, loss);
  n.op = Op::Bce;
  n.a = pred;
  n.b = target;
  return push(std::move(n));
}

Tape::Id Tape::scale(Id x, double c) {
  Node n;
  n.value = nodes_[x].value * c;
  n.op = Op::Scale;
  n.a = x;
  n.caux = c;
  return push(std::move(n));
}

void Tape::backward(Id loss) {
  if (nodes_[loss].value.rows() != 1 || nodes_[loss].value.cols() != 1)
    throw ValidationError("backward: loss must be scalar");
  for (Node& n : nodes_) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  nodes_[loss].grad(0, 0) = 1.0;

  for (Id i = static_cast<Id>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.isZero(0.0) && n.op != Op::Leaf) continue;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul:
        nodes_[n.a].grad.noalias() += n.grad * nodes_[n.b].value.transpose();
        nodes_[n.b].grad.noalias() += nodes_[n.a].value.transpose() * n.grad;
        break;
      case Op::AddRowVec:
        nodes_[n.a].grad += n.grad;
        nodes_[n.b].grad.row(0) += n.grad.colwise().sum();
        break;
      case Op::Add:
        nodes_[n.a].grad += n.grad;
        nodes_[n.b].grad += n.grad;
        break;
      case Op::Sub:
        nodes_[n.a].grad += n.grad;
        nodes_[n.b].grad -= n.grad;
        break;
      case Op::Relu:
        nodes_[n.a].grad.array() +=
            n.grad.array() * (nodes_[n.a].value.array() > 0.0).cast<double>();
        break;
      case Op::Sigmoid:
        nodes_[n.a].grad.array() +=
            n.grad.array() * n.value.array() * (1.0 - n.value.array());
        break;
      case Op::ConcatCols: {
        const auto ac = nodes_[n.a].value.cols();
        const auto bc = nodes_[n.b].value.cols();
        nodes_[n.a].grad += n.grad.leftCols(ac);
        nodes_[n.b].grad += n.grad.rightCols(bc);
        break;
      }
      case Op::SliceRows:
        nodes_[n.a].grad.middleRows(n.aux0, n.aux1) += n.grad;
        break;
      case Op::Transpose:
        nodes_[n.a].grad += n.grad.transpose();
        break;
      case Op::FrobSq:
        nodes_[n.a].grad += 2.0 * n.grad(0, 0) * nodes_[n.a].value;
        break;
      case Op::Bce: {
        const Matrix& p = nodes_[n.a].value;
        const Matrix& t = nodes_[n.b].value;
        const double inv_count = 1.0 / static_cast<double>(p.size());
        Eigen::ArrayXXd pa = p.array();
        // Zero slope where the clamp is active.
        Eigen::ArrayXXd inside =
            ((pa > kProbClamp) && (pa < 1.0 - kProbClamp)).cast<double>();
        Eigen::ArrayXXd pc = pa.min(1.0 - kProbClamp).max(kProbClamp);
        nodes_[n.a].grad.array() += n.grad(0, 0) * inv_count * inside *
                                    (-t.array() / pc + (1.0 - t.array()) / (1.0 - pc));
        break;
      }
      case Op::Scale:
        nodes_[n.a].grad += n.caux * n.grad;
        break;
    }
  }
}

Tape::Id GraphBuilder::param(Matrix& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return it->second;
  Tape::Id id = tape_.leaf(p);
  bound_.emplace(&p, id);
  return id;
}

Tape::Id GraphBuilder::mse(Tape::Id pred, Tape::Id target) {
  Tape::Id d = tape_.sub(pred, target);
  Tape::Id s = tape_.frobenius_sq(d);
  return tape_.scale(s, 1.0 / static_cast<double>(tape_.value(pred).size()));
}

Tape::Id GraphBuilder::sum_row_mse(Tape::Id pred, Tape::Id target) {
  Tape::Id d = tape_.sub(pred, target);
  Tape::Id s = tape_.frobenius_sq(d);
  return tape_.scale(s, 1.0 / static_cast<double>(tape_.value(pred).cols()));
}

Tape::Id GraphBuilder::sum_sq_err(Tape::Id pred, Tape::Id target) {
  Tape::Id d = tape_.sub(pred, target);
  return tape_.frobenius_sq(d);
}

Matrix GraphBuilder::grad_of(const Matrix& p) const {
  auto it = bound_.find(&p);
  if (it == bound_.end()) return Matrix::Zero(p.rows(), p.cols());
  return tape_.grad(it->second);
}

}  // namespace mtlhmb
