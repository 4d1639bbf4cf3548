#pragma once

#include "common.hpp"
#include "tape.hpp"

#include <string>
#include <vector>

namespace mtlhmb {

enum class Activation { Identity, ReLU, Sigmoid };

struct DenseLayer {
  Matrix weights;  // in x out
  Matrix bias;     // 1 x out
  Activation act = Activation::Identity;

  int in_dim() const { return static_cast<int>(weights.rows()); }
  int out_dim() const { return static_cast<int>(weights.cols()); }
};

struct Mlp {
  std::vector<DenseLayer> layers;

  int input_dim() const { return layers.front().in_dim(); }
  int output_dim() const { return layers.back().out_dim(); }
};

/// Uniform Glorot weights, zero biases. `dims` lists layer sizes
/// [d0, d1, ..., dk]; hidden layers get `hidden`, the last layer `output`.
Mlp make_mlp(const std::vector<int>& dims, Activation hidden, Activation output, Rng& rng);

Matrix apply_activation(Activation act, const Matrix& z);
Matrix forward(const DenseLayer& layer, const Matrix& x);
Matrix forward(const Mlp& mlp, const Matrix& x);

Tape::Id forward(GraphBuilder& g, DenseLayer& layer, Tape::Id x);
Tape::Id forward(GraphBuilder& g, Mlp& mlp, Tape::Id x);

double mse_loss(const Matrix& pred, const Matrix& target);
double bce_loss(const Matrix& pred, const Matrix& target);

/// Flat ordered view over a model's parameter matrices. Identifiers are
/// stable for the life of the model; gradient vectors and optimizer moments
/// align with this order.
class ParamSet {
 public:
  void add(std::string name, Matrix& value);
  void add_mlp(const std::string& prefix, Mlp& mlp);
  void add_layer(const std::string& prefix, DenseLayer& layer);

  std::size_t size() const { return values_.size(); }
  Matrix& value(std::size_t i) { return *values_[i]; }
  const Matrix& value(std::size_t i) const { return *values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  std::size_t count_scalars() const;
  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& snap);

 private:
  std::vector<std::string> names_;
  std::vector<Matrix*> values_;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay = 0.95;     // multiplicative lr decay
  int decay_interval = 200;  // applied every this many steps
};

/// Adam with a stepwise exponential learning-rate schedule:
/// lr_eff = lr * decay^floor(step / decay_interval).
class Adam {
 public:
  Adam(const ParamSet& params, AdamConfig cfg = {});

  double effective_lr() const;
  long step_count() const { return step_; }
  void step(ParamSet& params, const std::vector<Matrix>& grads);

 private:
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long step_ = 0;
};

struct EarlyStopper {
  int patience = 30;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;

  /// Returns true when `val` improves on the best seen so far.
  bool observe(double val) {
    if (val < best) {
      best = val;
      stale = 0;
      return true;
    }
    ++stale;
    return false;
  }
  bool should_stop() const { return stale >= patience; }
};

/// Cycles over a fixed index set in shuffled order, reshuffling each time the
/// set is exhausted. The final batch of a pass may be short.
class BatchSampler {
 public:
  BatchSampler(std::vector<int> indices, int batch, std::uint64_t seed);
  std::vector<int> next();
  int batches_per_pass() const;

 private:
  std::vector<int> order_;
  std::size_t pos_ = 0;
  int batch_;
  Rng rng_;
};

}  // namespace mtlhmb
