#include "nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mtlhmb {

Mlp make_mlp(const std::vector<int>& dims, Activation hidden, Activation output, Rng& rng) {
  if (dims.size() < 2) throw ValidationError("make_mlp: need at least two dims");
  for (int d : dims)
    if (d < 1) throw ValidationError("make_mlp: dims must be positive");
  Mlp mlp;
  mlp.layers.reserve(dims.size() - 1);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const int fan_in = dims[i];
    const int fan_out = dims[i + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer layer;
    layer.weights.resize(fan_in, fan_out);
    for (int r = 0; r < fan_in; ++r)
      for (int c = 0; c < fan_out; ++c) layer.weights(r, c) = u(rng);
    layer.bias = Matrix::Zero(1, fan_out);
    layer.act = (i + 2 == dims.size()) ? output : hidden;
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

Matrix apply_activation(Activation act, const Matrix& z) {
  switch (act) {
    case Activation::Identity:
      return z;
    case Activation::ReLU:
      return z.cwiseMax(0.0);
    case Activation::Sigmoid:
      return (1.0 / (1.0 + (-z.array()).exp())).matrix();
  }
  throw ValidationError("unknown activation");
}

Matrix forward(const DenseLayer& layer, const Matrix& x) {
  if (x.cols() != layer.weights.rows())
    throw ValidationError("forward: input dim does not match layer");
  Matrix z = x * layer.weights;
  z.rowwise() += layer.bias.row(0);
  return apply_activation(layer.act, z);
}

Matrix forward(const Mlp& mlp, const Matrix& x) {
  Matrix h = x;
  for (const DenseLayer& layer : mlp.layers) h = forward(layer, h);
  return h;
}

Tape::Id forward(GraphBuilder& g, DenseLayer& layer, Tape::Id x) {
  Tape::Id z = g.tape().matmul(x, g.param(layer.weights));
  z = g.tape().add_rowvec(z, g.param(layer.bias));
  switch (layer.act) {
    case Activation::Identity:
      return z;
    case Activation::ReLU:
      return g.tape().relu(z);
    case Activation::Sigmoid:
      return g.tape().sigmoid(z);
  }
  throw ValidationError("unknown activation");
}

Tape::Id forward(GraphBuilder& g, Mlp& mlp, Tape::Id x) {
  Tape::Id h = x;
  for (DenseLayer& layer : mlp.layers) h = forward(g, layer, h);
  return h;
}

double mse_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ValidationError("mse_loss: shape mismatch");
  if (pred.size() == 0) throw ValidationError("mse_loss: empty input");
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

double bce_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ValidationError("bce_loss: shape mismatch");
  if (((target.array() != 0.0) && (target.array() != 1.0)).any())
    throw ValidationError("bce_loss: targets must be 0 or 1");
  Eigen::ArrayXXd pc =
      pred.array().min(1.0 - Tape::kProbClamp).max(Tape::kProbClamp);
  return -(target.array() * pc.log() + (1.0 - target.array()) * (1.0 - pc).log())
              .mean();
}

void ParamSet::add(std::string name, Matrix& value) {
  names_.push_back(std::move(name));
  values_.push_back(&value);
}

void ParamSet::add_layer(const std::string& prefix, DenseLayer& layer) {
  add(prefix + ".W", layer.weights);
  add(prefix + ".b", layer.bias);
}

void ParamSet::add_mlp(const std::string& prefix, Mlp& mlp) {
  for (std::size_t i = 0; i < mlp.layers.size(); ++i)
    add_layer(prefix + ".layer" + std::to_string(i), mlp.layers[i]);
}

std::size_t ParamSet::count_scalars() const {
  std::size_t n = 0;
  for (const Matrix* m : values_) n += static_cast<std::size_t>(m->size());
  return n;
}

std::vector<Matrix> ParamSet::snapshot() const {
  std::vector<Matrix> snap;
  snap.reserve(values_.size());
  for (const Matrix* m : values_) snap.push_back(*m);
  return snap;
}

void ParamSet::restore(const std::vector<Matrix>& snap) {
  if (snap.size() != values_.size())
    throw ValidationError("ParamSet::restore: size mismatch");
  for (std::size_t i = 0; i < snap.size(); ++i) *values_[i] = snap[i];
}

Adam::Adam(const ParamSet& params, AdamConfig cfg) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& p = params.value(i);
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

double Adam::effective_lr() const {
  return cfg_.lr * std::pow(cfg_.decay, static_cast<double>(step_ / cfg_.decay_interval));
}

void Adam::step(ParamSet& params, const std::vector<Matrix>& grads) {
  if (grads.size() != m_.size()) throw ValidationError("Adam::step: grad count mismatch");
  const double lr = effective_lr();
  const double t = static_cast<double>(step_ + 1);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < m_.size(); ++i) {
    const Matrix& g = grads[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Matrix mhat = m_[i] / bc1;
    Matrix vhat = v_[i] / bc2;
    params.value(i).array() -=
        lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
  }
  ++step_;
}

BatchSampler::BatchSampler(std::vector<int> indices, int batch, std::uint64_t seed)
    : order_(std::move(indices)), batch_(batch), rng_(seed) {
  if (order_.empty()) throw ValidationError("BatchSampler: empty index set");
  if (batch_ < 1) throw ValidationError("BatchSampler: batch must be positive");
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<int> BatchSampler::next() {
  if (pos_ >= order_.size()) {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  const std::size_t take = std::min<std::size_t>(batch_, order_.size() - pos_);
  std::vector<int> out(order_.begin() + pos_, order_.begin() + pos_ + take);
  pos_ += take;
  return out;
}

int BatchSampler::batches_per_pass() const {
  return static_cast<int>((order_.size() + batch_ - 1) / batch_);
}

}  // namespace mtlhmb
