#include "baselines.hpp"

#include <algorithm>
#include <cmath>

namespace mtlhmb {

namespace {

Matrix take_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Vector take_rows(const Vector& v, const std::vector<int>& rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(rows[i]);
  return out;
}

std::vector<int> mlp_dims(int in, int width, int depth, int out) {
  std::vector<int> dims;
  dims.push_back(in);
  for (int i = 0; i < depth - 1; ++i) dims.push_back(width);
  dims.push_back(out);
  return dims;
}

std::vector<int> iota_vec(std::size_t n) {
  std::vector<int> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  return idx;
}

}  // namespace

std::string to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::STL: return "stl";
    case BaselineKind::HTL: return "htl";
    case BaselineKind::HPS_with_HBI: return "hps_hbi";
    case BaselineKind::Step1_plus_STL: return "step1_stl";
    case BaselineKind::NaiveImpute_plus_Step2: return "naive_step2";
  }
  throw ValidationError("unknown baseline kind");
}

BaselineKind baseline_kind_from_string(const std::string& s) {
  if (s == "stl") return BaselineKind::STL;
  if (s == "htl") return BaselineKind::HTL;
  if (s == "hps_hbi") return BaselineKind::HPS_with_HBI;
  if (s == "step1_stl") return BaselineKind::Step1_plus_STL;
  if (s == "naive_step2") return BaselineKind::NaiveImpute_plus_Step2;
  throw ValidationError("unknown baseline: " + s);
}

void SupervisedNetConfig::validate() const {
  if (width < 1 || depth < 1 || batch < 1)
    throw ValidationError("net config: width/depth/batch must be positive");
  if (lr <= 0) throw ValidationError("net config: lr must be positive");
  if (patience < 1 || max_epochs < 1)
    throw ValidationError("net config: patience/max_epochs must be positive");
}

double supervised_loss(ResponseKind kind, const Vector& y_hat, const Vector& y) {
  if (kind == ResponseKind::Continuous) return (y_hat - y).squaredNorm();
  Matrix p = y_hat;
  Matrix t = y;
  return bce_loss(p, t) * static_cast<double>(y.size());
}

Mlp train_regressor(const Matrix& x_train, const Vector& y_train, const Matrix& x_val,
                    const Vector& y_val, ResponseKind kind, const SupervisedNetConfig& config) {
  config.validate();
  if (x_train.rows() < 2) throw ValidationError("train_regressor: need at least 2 training rows");
  const Activation out_act =
      kind == ResponseKind::Binary ? Activation::Sigmoid : Activation::Identity;
  Rng rng(mix_seed(config.seed, 0x57f1));
  Mlp net = make_mlp(mlp_dims(static_cast<int>(x_train.cols()), config.width, config.depth, 1),
                     Activation::ReLU, out_act, rng);

  ParamSet params;
  params.add_mlp("net", net);
  AdamConfig adam_cfg;
  adam_cfg.lr = config.lr;
  Adam adam(params, adam_cfg);

  BatchSampler sampler(iota_vec(x_train.rows()), config.batch, mix_seed(config.seed, 0x9d2));
  const int steps_per_epoch = sampler.batches_per_pass();

  auto validation = [&] { return supervised_loss(kind, forward(net, x_val).col(0), y_val); };
  EarlyStopper stopper;
  stopper.patience = config.patience;
  stopper.observe(validation());
  std::vector<Matrix> best = params.snapshot();

  for (int epoch = 0; epoch < config.max_epochs && !stopper.should_stop(); ++epoch) {
    for (int step = 0; step < steps_per_epoch; ++step) {
      const std::vector<int> rows = sampler.next();
      GraphBuilder g;
      Tape& tape = g.tape();
      Tape::Id x = g.constant(take_rows(x_train, rows));
      Tape::Id y = g.constant(take_rows(y_train, rows));
      Tape::Id y_hat = forward(g, net, x);
      Tape::Id loss = kind == ResponseKind::Continuous
                          ? g.sum_sq_err(y_hat, y)
                          : tape.scale(tape.bce(y_hat, y), static_cast<double>(rows.size()));
      g.backward(loss);
      std::vector<Matrix> grads;
      grads.reserve(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) grads.push_back(g.grad_of(params.value(i)));
      adam.step(params, grads);
    }
    if (stopper.observe(validation())) best = params.snapshot();
  }
  params.restore(best);
  return net;
}

Mlp train_stl(const TaskDataset& task, const std::vector<int>& train_rows,
              const std::vector<int>& val_rows, const SupervisedNetConfig& config) {
  Matrix x(task.rows(), task.x_anchor.cols() + task.x_specific.cols());
  x << task.x_anchor, task.x_specific;
  return train_regressor(take_rows(x, train_rows), take_rows(task.y, train_rows),
                         take_rows(x, val_rows), take_rows(task.y, val_rows), task.response_kind,
                         config);
}

MtlModel train_htl(const MultiTaskDataset& data, const SplitIndices& split, MtlConfig config) {
  config.task_input = TaskEncoderInput::OwnSource;
  config.delta = 0.0;  // no imputed inputs to penalize
  ImputedDataset wrapper;
  wrapper.base = data;
  return train_mtl(wrapper, split, config);
}

ParamSet HpsModel::params() {
  ParamSet set;
  set.add_mlp("trunk", trunk);
  for (std::size_t t = 0; t < heads.size(); ++t)
    set.add_layer("head" + std::to_string(t + 1), heads[t]);
  return set;
}

Vector predict(const HpsModel& model, int task, const Matrix& x_full) {
  return forward(model.heads[task - 1], forward(model.trunk, x_full)).col(0);
}

double hps_validation_loss(const HpsModel& model, const ImputedDataset& data,
                           const SplitIndices& split) {
  double total = 0.0;
  for (std::size_t t = 0; t < data.base.tasks.size(); ++t) {
    const TaskDataset& task = data.base.tasks[t];
    const Matrix x = take_rows(data.full_features(task.task_id), split.val[t]);
    total += supervised_loss(task.response_kind, predict(model, task.task_id, x),
                             take_rows(task.y, split.val[t]));
  }
  return total;
}

HpsModel train_hps(const ImputedDataset& data, const SplitIndices& split,
                   const SupervisedNetConfig& config) {
  config.validate();
  data.validate();
  if (!data.is_complete()) throw ValidationError("train_hps: dataset has unimputed blocks");
  const int T = data.base.layout.task_count;
  const int in_dim = data.base.layout.total_dim();

  Rng rng(mix_seed(config.seed, 0x4e5));
  HpsModel model;
  // Trunk carries depth-1 layers; the per-task affine head is the final one.
  const int trunk_depth = std::max(1, config.depth - 1);
  model.trunk = make_mlp(mlp_dims(in_dim, config.width, trunk_depth, config.width),
                         Activation::ReLU, Activation::ReLU, rng);
  for (const TaskDataset& t : data.base.tasks) {
    model.response_kinds.push_back(t.response_kind);
    const Activation act =
        t.response_kind == ResponseKind::Binary ? Activation::Sigmoid : Activation::Identity;
    Mlp head = make_mlp({config.width, 1}, act, act, rng);
    model.heads.push_back(std::move(head.layers.front()));
  }

  struct Arrays {
    Matrix x_train, x_val;
    Vector y_train, y_val;
  };
  std::vector<Arrays> arrays(T);
  std::vector<BatchSampler> samplers;
  int steps_per_epoch = 1;
  for (int t = 1; t <= T; ++t) {
    const TaskDataset& task = data.base.task(t);
    if (split.train[t - 1].size() < 2)
      throw ValidationError("train_hps: task " + std::to_string(t) + " has fewer than 2 training rows");
    const Matrix x = data.full_features(t);
    Arrays& a = arrays[t - 1];
    a.x_train = take_rows(x, split.train[t - 1]);
    a.y_train = take_rows(task.y, split.train[t - 1]);
    a.x_val = take_rows(x, split.val[t - 1]);
    a.y_val = take_rows(task.y, split.val[t - 1]);
    samplers.emplace_back(iota_vec(split.train[t - 1].size()), config.batch,
                          mix_seed(config.seed, 0x8e00 + t));
    steps_per_epoch = std::max(steps_per_epoch, samplers.back().batches_per_pass());
  }

  ParamSet params = model.params();
  AdamConfig adam_cfg;
  adam_cfg.lr = config.lr;
  Adam adam(params, adam_cfg);

  auto validation = [&] {
    double total = 0.0;
    for (int t = 1; t <= T; ++t)
      total += supervised_loss(model.response_kinds[t - 1],
                               predict(model, t, arrays[t - 1].x_val), arrays[t - 1].y_val);
    return total;
  };
  EarlyStopper stopper;
  stopper.patience = config.patience;
  stopper.observe(validation());
  std::vector<Matrix> best = params.snapshot();

  for (int epoch = 0; epoch < config.max_epochs && !stopper.should_stop(); ++epoch) {
    for (int step = 0; step < steps_per_epoch; ++step) {
      GraphBuilder g;
      Tape& tape = g.tape();
      Tape::Id loss = -1;
      for (int t = 1; t <= T; ++t) {
        const std::vector<int> rows = samplers[t - 1].next();
        Tape::Id x = g.constant(take_rows(arrays[t - 1].x_train, rows));
        Tape::Id y = g.constant(take_rows(arrays[t - 1].y_train, rows));
        Tape::Id hidden = forward(g, model.trunk, x);
        Tape::Id y_hat = forward(g, model.heads[t - 1], hidden);
        Tape::Id term = model.response_kinds[t - 1] == ResponseKind::Continuous
                            ? g.sum_sq_err(y_hat, y)
                            : tape.scale(tape.bce(y_hat, y), static_cast<double>(rows.size()));
        loss = loss < 0 ? term : tape.add(loss, term);
      }
      g.backward(loss);
      std::vector<Matrix> grads;
      grads.reserve(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) grads.push_back(g.grad_of(params.value(i)));
      adam.step(params, grads);
    }
    if (stopper.observe(validation())) best = params.snapshot();
  }
  params.restore(best);
  return model;
}

ImputedDataset naive_impute_all(const MultiTaskDataset& data, const SplitIndices& split,
                                const HbiConfig& config) {
  config.validate();
  data.validate();
  ImputedDataset out;
  out.base = data;
  const auto missing = data.layout.missing();
  const int p0 = data.layout.source_dims[0];
  for (int s = 1; s <= data.layout.task_count; ++s) {
    const bool needed = std::any_of(missing.begin(), missing.end(),
                                    [s](const auto& ts) { return ts.second == s; });
    if (!needed) continue;
    const TaskDataset& target = data.task(s);
    const std::vector<int>& train_rows = split.train[s - 1];
    if (train_rows.size() < 2)
      throw ValidationError("naive_impute_all: need at least 2 training rows for source " +
                            std::to_string(s));
    const int ps = data.layout.source_dims[s];

    Rng rng(mix_seed(config.seed, 0xa100 + s));
    Mlp encoder = make_mlp(mlp_dims(p0, config.width, config.depth, config.d_shared()),
                           Activation::ReLU, Activation::Identity, rng);
    Mlp predictor = make_mlp(mlp_dims(config.d_shared(), config.width, config.depth, ps),
                             Activation::ReLU, Activation::Identity, rng);
    ParamSet params;
    params.add_mlp("encoder", encoder);
    params.add_mlp("predictor", predictor);
    AdamConfig adam_cfg;
    adam_cfg.lr = config.lr;
    Adam adam(params, adam_cfg);

    const Matrix x0_train = take_rows(target.x_anchor, train_rows);
    const Matrix xs_train = take_rows(target.x_specific, train_rows);
    const Matrix x0_val = take_rows(target.x_anchor, split.val[s - 1]);
    const Matrix xs_val = take_rows(target.x_specific, split.val[s - 1]);
    BatchSampler sampler(iota_vec(train_rows.size()), config.batch,
                         mix_seed(config.seed, 0xb200 + s));
    const int steps_per_epoch = sampler.batches_per_pass();

    auto validation = [&] {
      const Matrix pred = forward(predictor, forward(encoder, x0_val));
      return (pred - xs_val).squaredNorm() / static_cast<double>(xs_val.cols());
    };
    EarlyStopper stopper;
    stopper.patience = config.patience;
    stopper.observe(validation());
    std::vector<Matrix> best = params.snapshot();

    for (int epoch = 0; epoch < config.max_epochs && !stopper.should_stop(); ++epoch) {
      for (int step = 0; step < steps_per_epoch; ++step) {
        const std::vector<int> rows = sampler.next();
        GraphBuilder g;
        Tape::Id x0 = g.constant(take_rows(x0_train, rows));
        Tape::Id xs = g.constant(take_rows(xs_train, rows));
        Tape::Id pred = forward(g, predictor, forward(g, encoder, x0));
        Tape::Id loss = g.sum_row_mse(pred, xs);
        g.backward(loss);
        std::vector<Matrix> grads;
        grads.reserve(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) grads.push_back(g.grad_of(params.value(i)));
        adam.step(params, grads);
      }
      if (stopper.observe(validation())) best = params.snapshot();
    }
    params.restore(best);

    for (auto [t, src] : missing) {
      if (src != s) continue;
      out.imputed_blocks[{t, s}] =
          forward(predictor, forward(encoder, data.task(t).x_anchor));
    }
  }
  out.validate();
  if (!out.is_complete()) throw ValidationError("naive_impute_all: missing blocks remain");
  return out;
}

}  // namespace mtlhmb
