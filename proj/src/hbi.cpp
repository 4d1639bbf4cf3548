#include "hbi.hpp"

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

std::vector<int> mlp_dims(int in, int width, int depth, int out) {
  std::vector<int> dims;
  dims.push_back(in);
  for (int i = 0; i < depth - 1; ++i) dims.push_back(width);
  dims.push_back(out);
  return dims;
}

double sum_row_mse(const Matrix& pred, const Matrix& target) {
  return (pred - target).squaredNorm() / static_cast<double>(pred.cols());
}

}  // namespace

void HbiConfig::validate() const {
  if (width < 1 || depth < 1 || batch < 1) throw ValidationError("hbi: width/depth/batch must be positive");
  if (lr <= 0) throw ValidationError("hbi: lr must be positive");
  if (patience < 1 || max_epochs < 1) throw ValidationError("hbi: patience/max_epochs must be positive");
}

ParamSet HbiModel::params() {
  ParamSet set;
  set.add_mlp("enc_common", enc_common);
  set.add_mlp("enc_task", enc_task);
  set.add_mlp("enc_rest", enc_rest);
  set.add_mlp("decoder", decoder);
  set.add_mlp("predictor", predictor);
  return set;
}

HbiLosses hbi_losses(const HbiModel& model, const Matrix& task_x0, const Matrix& task_xs,
                     const Matrix& rest_x0) {
  HbiLosses losses;
  const Matrix f_t = forward(model.enc_common, task_x0);
  losses.pre = sum_row_mse(forward(model.predictor, f_t), task_xs);

  Matrix fg_t(task_x0.rows(), f_t.cols() + model.enc_task.output_dim());
  fg_t << f_t, forward(model.enc_task, task_x0);
  losses.recon = sum_row_mse(forward(model.decoder, fg_t), task_x0);

  if (rest_x0.rows() > 0) {
    const Matrix f_r = forward(model.enc_common, rest_x0);
    Matrix fg_r(rest_x0.rows(), f_r.cols() + model.enc_rest.output_dim());
    fg_r << f_r, forward(model.enc_rest, rest_x0);
    losses.recon += sum_row_mse(forward(model.decoder, fg_r), rest_x0);
  }
  return losses;
}

double hbi_validation_loss(const HbiModel& model, const MultiTaskDataset& data,
                           const SplitIndices& split) {
  const int s = model.target_source;
  const TaskDataset& task = data.task(s);
  const Matrix x0 = take_rows(task.x_anchor, split.val[s - 1]);
  const Matrix xs = take_rows(task.x_specific, split.val[s - 1]);
  return sum_row_mse(forward(model.predictor, forward(model.enc_common, x0)), xs);
}

HbiModel train_hbi(const MultiTaskDataset& data, const SplitIndices& split, int target_source,
                   const HbiConfig& config) {
  config.validate();
  data.validate();
  const int s = target_source;
  if (s < 1 || s > data.layout.task_count) throw ValidationError("train_hbi: bad target source");
  const TaskDataset& target = data.task(s);
  if (!data.layout.is_observed(s, s))
    throw ValidationError("train_hbi: target source not observed in its own task");
  const std::vector<int>& train_rows = split.train[s - 1];
  if (train_rows.size() < 2) throw ValidationError("train_hbi: need at least 2 training rows");

  const int p0 = data.layout.source_dims[0];
  const int ps = data.layout.source_dims[s];

  Rng rng(mix_seed(config.seed, 0x48b1));
  HbiModel model;
  model.target_source = s;
  model.enc_common = make_mlp(mlp_dims(p0, config.width, config.depth, config.d_shared()),
                              Activation::ReLU, Activation::Identity, rng);
  model.enc_task = make_mlp(mlp_dims(p0, config.width, config.depth, config.d_private()),
                            Activation::ReLU, Activation::Identity, rng);
  model.enc_rest = make_mlp(mlp_dims(p0, config.width, config.depth, config.d_private()),
                            Activation::ReLU, Activation::Identity, rng);
  model.decoder =
      make_mlp(mlp_dims(config.d_shared() + config.d_private(), config.width, config.depth, p0),
               Activation::ReLU, Activation::Identity, rng);
  model.predictor = make_mlp(mlp_dims(config.d_shared(), config.width, config.depth, ps),
                             Activation::ReLU, Activation::Identity, rng);

  ParamSet params = model.params();
  AdamConfig adam_cfg;
  adam_cfg.lr = config.lr;
  Adam adam(params, adam_cfg);

  const Matrix x0_train = take_rows(target.x_anchor, train_rows);
  const Matrix xs_train = take_rows(target.x_specific, train_rows);
  BatchSampler target_sampler(
      [&] {
        std::vector<int> idx(train_rows.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        return idx;
      }(),
      config.batch, mix_seed(config.seed, 0x5a01));

  // One sampler per other task; each step pools one batch from each.
  std::vector<Matrix> rest_x0;
  std::vector<BatchSampler> rest_samplers;
  for (const TaskDataset& t : data.tasks) {
    if (t.task_id == s) continue;
    const std::vector<int>& rows = split.train[t.task_id - 1];
    if (rows.empty()) continue;
    rest_x0.push_back(take_rows(t.x_anchor, rows));
    std::vector<int> idx(rows.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    rest_samplers.emplace_back(std::move(idx), config.batch,
                               mix_seed(config.seed, 0x6b00 + t.task_id));
  }

  const int steps_per_epoch = target_sampler.batches_per_pass();
  EarlyStopper stopper;
  stopper.patience = config.patience;
  stopper.observe(hbi_validation_loss(model, data, split));
  std::vector<Matrix> best = params.snapshot();

  for (int epoch = 0; epoch < config.max_epochs && !stopper.should_stop(); ++epoch) {
    for (int step = 0; step < steps_per_epoch; ++step) {
      GraphBuilder g;
      Tape& tape = g.tape();
      const std::vector<int> brows = target_sampler.next();
      Tape::Id x0 = g.constant(take_rows(x0_train, brows));
      Tape::Id xs = g.constant(take_rows(xs_train, brows));
      Tape::Id f_t = forward(g, model.enc_common, x0);
      Tape::Id g_t = forward(g, model.enc_task, x0);
      Tape::Id loss = g.sum_row_mse(forward(g, model.predictor, f_t), xs);
      Tape::Id recon_t =
          g.sum_row_mse(forward(g, model.decoder, tape.concat_cols(f_t, g_t)), x0);
      loss = tape.add(loss, recon_t);
      for (std::size_t r = 0; r < rest_x0.size(); ++r) {
        Tape::Id xr = g.constant(take_rows(rest_x0[r], rest_samplers[r].next()));
        Tape::Id f_r = forward(g, model.enc_common, xr);
        Tape::Id g_r = forward(g, model.enc_rest, xr);
        Tape::Id recon_r =
            g.sum_row_mse(forward(g, model.decoder, tape.concat_cols(f_r, g_r)), xr);
        loss = tape.add(loss, recon_r);
      }
      g.backward(loss);
      std::vector<Matrix> grads;
      grads.reserve(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) grads.push_back(g.grad_of(params.value(i)));
      adam.step(params, grads);
    }
    if (stopper.observe(hbi_validation_loss(model, data, split))) best = params.snapshot();
  }
  params.restore(best);
  return model;
}

Matrix impute_source(const HbiModel& model, const Matrix& x_anchor) {
  return forward(model.predictor, forward(model.enc_common, x_anchor));
}

ImputedDataset impute_all(const MultiTaskDataset& data, const SplitIndices& split,
                          const std::vector<HbiConfig>& candidates) {
  if (candidates.empty()) throw ValidationError("impute_all: no candidate configs");
  ImputedDataset out;
  out.base = data;
  const auto missing = data.layout.missing();
  for (int s = 1; s <= data.layout.task_count; ++s) {
    const bool needed = std::any_of(missing.begin(), missing.end(),
                                    [s](const auto& ts) { return ts.second == s; });
    if (!needed) continue;
    HbiModel best_model;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      HbiConfig cfg = candidates[c];
      cfg.seed = mix_seed(cfg.seed, 0x1000 + static_cast<std::uint64_t>(s) * 64 + c);
      HbiModel model = train_hbi(data, split, s, cfg);
      const double loss = hbi_validation_loss(model, data, split);
      if (loss < best_loss) {
        best_loss = loss;
        best_model = std::move(model);
      }
    }
    for (auto [t, src] : missing) {
      if (src != s) continue;
      out.imputed_blocks[{t, s}] = impute_source(best_model, data.task(t).x_anchor);
    }
  }
  out.validate();
  if (!out.is_complete()) throw ValidationError("impute_all: missing blocks remain");
  return out;
}

}  // namespace mtlhmb
