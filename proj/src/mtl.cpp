#include "mtl.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

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

DenseLayer make_dense(int in, int out, Activation act, Rng& rng) {
  Mlp tmp = make_mlp({in, out}, act, act, rng);
  return std::move(tmp.layers.front());
}

/// Per-sample loss summed over a batch, on plain matrices.
double prediction_loss(ResponseKind kind, const Vector& y_hat, const Vector& y) {
  if (kind == ResponseKind::Continuous) return (y_hat - y).squaredNorm();
  Matrix p = y_hat;
  Matrix t = y;
  return bce_loss(p, t) * static_cast<double>(y.size());
}

}  // namespace

void MtlConfig::validate() const {
  if (enc_width < 1 || enc_depth < 1) throw ValidationError("mtl: encoder width/depth must be positive");
  if (path_depth < 1) throw ValidationError("mtl: path depth must be >= 1");
  if (batch < 1) throw ValidationError("mtl: batch must be positive");
  if (lr <= 0) throw ValidationError("mtl: lr must be positive");
  if (gamma < 0 || delta < 0 || kappa < 0)
    throw ValidationError("mtl: regularizer weights must be nonnegative");
  if (patience < 1 || max_epochs < 1) throw ValidationError("mtl: patience/max_epochs must be positive");
}

int MtlModel::task_input_dim(int task) const {
  if (task_input == TaskEncoderInput::FullConcat) return layout.total_dim();
  return layout.source_dims[task];
}

ParamSet MtlModel::params() {
  ParamSet set;
  set.add_mlp("enc_shared", enc_shared);
  for (std::size_t t = 0; t < enc_task.size(); ++t)
    set.add_mlp("enc_task" + std::to_string(t + 1), enc_task[t]);
  for (std::size_t l = 0; l < path_shared.size(); ++l)
    set.add_layer("path_shared.level" + std::to_string(l + 2), path_shared[l]);
  for (std::size_t t = 0; t < path_task.size(); ++t)
    for (std::size_t l = 0; l < path_task[t].size(); ++l)
      set.add_layer("path_task" + std::to_string(t + 1) + ".level" + std::to_string(l + 2),
                    path_task[t][l]);
  for (std::size_t t = 0; t < heads.size(); ++t)
    set.add_layer("head" + std::to_string(t + 1), heads[t]);
  return set;
}

MtlModel make_mtl_model(const BlockLayout& layout, const std::vector<ResponseKind>& kinds,
                        const MtlConfig& config) {
  config.validate();
  layout.validate();
  if (static_cast<int>(kinds.size()) != layout.task_count)
    throw ValidationError("make_mtl_model: one response kind per task required");

  MtlModel model;
  model.layout = layout;
  model.task_input = config.task_input;
  model.response_kinds = kinds;
  const int d_h = config.shared_dim();
  const int d_k = config.task_dim();
  const int w = config.width_of_path();
  const int levels = config.path_depth - 1;  // layers 2..L

  Rng rng(mix_seed(config.seed, 0x3a7d));
  model.enc_shared = make_mlp(mlp_dims(layout.source_dims[0], config.enc_width, config.enc_depth, d_h),
                              Activation::ReLU, Activation::Identity, rng);
  for (int t = 1; t <= layout.task_count; ++t) {
    const int in = config.task_input == TaskEncoderInput::FullConcat ? layout.total_dim()
                                                                     : layout.source_dims[t];
    model.enc_task.push_back(make_mlp(mlp_dims(in, config.enc_width, config.enc_depth, d_k),
                                      Activation::ReLU, Activation::Identity, rng));
  }
  int dc = d_h;
  for (int l = 0; l < levels; ++l) {
    model.path_shared.push_back(make_dense(dc, w, Activation::ReLU, rng));
    dc = w;
  }
  for (int t = 0; t < layout.task_count; ++t) {
    std::vector<DenseLayer> path;
    int dcl = d_h;
    int dpl = d_k;
    for (int l = 0; l < levels; ++l) {
      path.push_back(make_dense(dcl + dpl, w, Activation::ReLU, rng));
      dcl = w;
      dpl = w;
    }
    model.path_task.push_back(std::move(path));
  }
  const int d_cL = levels > 0 ? w : d_h;
  const int d_pL = levels > 0 ? w : d_k;
  for (int t = 0; t < layout.task_count; ++t) {
    const Activation act =
        kinds[t] == ResponseKind::Binary ? Activation::Sigmoid : Activation::Identity;
    model.heads.push_back(make_dense(d_cL + d_pL, 1, act, rng));
  }
  return model;
}

MtlForwardResult mtl_forward(const MtlModel& model, int task, const Matrix& x_anchor,
                             const Matrix& x_task_input) {
  if (task < 1 || task > model.task_count()) throw ValidationError("mtl_forward: unknown task");
  const int t = task - 1;
  Matrix h = forward(model.enc_shared, x_anchor);
  Matrix k = forward(model.enc_task[t], x_task_input);
  MtlForwardResult res;
  res.shared_latent = h;
  res.task_latent = k;
  for (int l = 0; l < model.path_levels(); ++l) {
    Matrix hk(h.rows(), h.cols() + k.cols());
    hk << h, k;
    Matrix h_next = forward(model.path_shared[l], h);
    k = forward(model.path_task[t][l], hk);
    h = std::move(h_next);
  }
  Matrix hk(h.rows(), h.cols() + k.cols());
  hk << h, k;
  res.y_hat = forward(model.heads[t], hk).col(0);
  return res;
}

Vector predict(const MtlModel& model, int task, const Matrix& x_anchor,
               const Matrix& x_task_input) {
  return mtl_forward(model, task, x_anchor, x_task_input).y_hat;
}

double r_orth(const Matrix& shared_latent, const Matrix& task_latent) {
  if (shared_latent.rows() != task_latent.rows())
    throw ValidationError("r_orth: row counts disagree");
  return (shared_latent.transpose() * task_latent).squaredNorm();
}

double r_imp(const MtlModel& model) {
  if (model.task_input != TaskEncoderInput::FullConcat) return 0.0;
  double total = 0.0;
  const BlockLayout& layout = model.layout;
  for (int t = 1; t <= model.task_count(); ++t) {
    const Matrix& first = model.enc_task[t - 1].layers.front().weights;
    for (int s = 1; s <= layout.task_count; ++s) {
      if (s == t) continue;
      total += first.middleRows(layout.source_offset(s), layout.source_dims[s]).squaredNorm();
    }
  }
  return total;
}

double r_dr(const MtlModel& model) {
  double total = 0.0;
  for (int t = 0; t < model.task_count(); ++t) {
    for (int l = 0; l < model.path_levels(); ++l) {
      const Matrix& theta_c = model.path_shared[l].weights;
      const Matrix& theta_p = model.path_task[t][l].weights;
      total += (theta_c.transpose() * theta_p.topRows(theta_c.rows())).squaredNorm();
    }
  }
  return total;
}

double total_loss(const MtlModel& model, const std::vector<MtlBatch>& batches, double gamma,
                  double delta, double kappa) {
  if (static_cast<int>(batches.size()) != model.task_count())
    throw ValidationError("total_loss: one batch per task required");
  double integ = 0.0;
  double orth = 0.0;
  for (int t = 1; t <= model.task_count(); ++t) {
    const MtlBatch& b = batches[t - 1];
    MtlForwardResult res = mtl_forward(model, t, b.x_anchor, b.x_task_input);
    integ += prediction_loss(model.response_kinds[t - 1], res.y_hat, b.y);
    orth += r_orth(res.shared_latent, res.task_latent);
  }
  return integ + gamma * orth + delta * r_imp(model) + kappa * r_dr(model);
}

namespace {

struct TaskArrays {
  Matrix x0_train, xin_train;
  Vector y_train;
  Matrix x0_val, xin_val;
  Vector y_val;
};

Tape::Id forward_on_tape(GraphBuilder& g, MtlModel& model, int task, Tape::Id x0, Tape::Id xin,
                         Tape::Id* latent_h, Tape::Id* latent_k) {
  const int t = task - 1;
  Tape& tape = g.tape();
  Tape::Id h = forward(g, model.enc_shared, x0);
  Tape::Id k = forward(g, model.enc_task[t], xin);
  *latent_h = h;
  *latent_k = k;
  for (int l = 0; l < model.path_levels(); ++l) {
    Tape::Id hk = tape.concat_cols(h, k);
    Tape::Id h_next = forward(g, model.path_shared[l], h);
    k = forward(g, model.path_task[t][l], hk);
    h = h_next;
  }
  return forward(g, model.heads[t], tape.concat_cols(h, k));
}

Tape::Id loss_on_tape(GraphBuilder& g, MtlModel& model, const std::vector<MtlBatch>& batches,
                      double gamma, double delta, double kappa) {
  Tape& tape = g.tape();
  Tape::Id loss = -1;
  auto accumulate = [&](Tape::Id term) { loss = loss < 0 ? term : tape.add(loss, term); };

  for (int t = 1; t <= model.task_count(); ++t) {
    const MtlBatch& b = batches[t - 1];
    Tape::Id x0 = g.constant(b.x_anchor);
    Tape::Id xin = g.constant(b.x_task_input);
    Tape::Id h = -1, k = -1;
    Tape::Id y_hat = forward_on_tape(g, model, t, x0, xin, &h, &k);
    Tape::Id y = g.constant(b.y);
    if (model.response_kinds[t - 1] == ResponseKind::Continuous) {
      accumulate(g.sum_sq_err(y_hat, y));
    } else {
      accumulate(tape.scale(tape.bce(y_hat, y), static_cast<double>(b.y.size())));
    }
    if (gamma > 0) {
      Tape::Id cross = tape.matmul(tape.transpose(h), k);
      accumulate(tape.scale(tape.frobenius_sq(cross), gamma));
    }
  }
  if (delta > 0 && model.task_input == TaskEncoderInput::FullConcat) {
    const BlockLayout& layout = model.layout;
    for (int t = 1; t <= model.task_count(); ++t) {
      Tape::Id first = g.param(model.enc_task[t - 1].layers.front().weights);
      for (int s = 1; s <= layout.task_count; ++s) {
        if (s == t) continue;
        Tape::Id rows = tape.slice_rows(first, layout.source_offset(s), layout.source_dims[s]);
        accumulate(tape.scale(tape.frobenius_sq(rows), delta));
      }
    }
  }
  if (kappa > 0) {
    for (int t = 0; t < model.task_count(); ++t) {
      for (int l = 0; l < model.path_levels(); ++l) {
        Tape::Id theta_c = g.param(model.path_shared[l].weights);
        Tape::Id theta_p = g.param(model.path_task[t][l].weights);
        Tape::Id shared_rows =
            tape.slice_rows(theta_p, 0, static_cast<int>(model.path_shared[l].weights.rows()));
        Tape::Id cross = tape.matmul(tape.transpose(theta_c), shared_rows);
        accumulate(tape.scale(tape.frobenius_sq(cross), kappa));
      }
    }
  }
  return loss;
}

}  // namespace

Matrix task_input_matrix(const MtlModel& model, const ImputedDataset& data, int task) {
  if (model.task_input == TaskEncoderInput::FullConcat) return data.full_features(task);
  return data.base.task(task).x_specific;
}

double mtl_validation_loss(const MtlModel& model, const ImputedDataset& data,
                           const SplitIndices& split) {
  double total = 0.0;
  for (int t = 1; t <= model.task_count(); ++t) {
    const TaskDataset& task = data.base.task(t);
    const std::vector<int>& rows = split.val[t - 1];
    const Matrix x0 = take_rows(task.x_anchor, rows);
    const Matrix xin = take_rows(task_input_matrix(model, data, t), rows);
    const Vector y = take_rows(task.y, rows);
    total += prediction_loss(model.response_kinds[t - 1],
                             predict(model, t, x0, xin), y);
  }
  return total;
}

MtlModel train_mtl(const ImputedDataset& data, const SplitIndices& split, const MtlConfig& config) {
  config.validate();
  data.validate();
  if (config.task_input == TaskEncoderInput::FullConcat && !data.is_complete())
    throw ValidationError("train_mtl: dataset has unimputed blocks");

  std::vector<ResponseKind> kinds;
  for (const TaskDataset& t : data.base.tasks) kinds.push_back(t.response_kind);
  MtlModel model = make_mtl_model(data.base.layout, kinds, config);

  const int T = model.task_count();
  std::vector<TaskArrays> arrays(T);
  std::vector<BatchSampler> samplers;
  int steps_per_epoch = 1;
  for (int t = 1; t <= T; ++t) {
    const TaskDataset& task = data.base.task(t);
    if (split.train[t - 1].size() < 2)
      throw ValidationError("train_mtl: task " + std::to_string(t) + " has fewer than 2 training rows");
    const Matrix xin = task_input_matrix(model, data, t);
    TaskArrays& a = arrays[t - 1];
    a.x0_train = take_rows(task.x_anchor, split.train[t - 1]);
    a.xin_train = take_rows(xin, split.train[t - 1]);
    a.y_train = take_rows(task.y, split.train[t - 1]);
    a.x0_val = take_rows(task.x_anchor, split.val[t - 1]);
    a.xin_val = take_rows(xin, split.val[t - 1]);
    a.y_val = take_rows(task.y, split.val[t - 1]);
    std::vector<int> idx(split.train[t - 1].size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    samplers.emplace_back(std::move(idx), config.batch, mix_seed(config.seed, 0x7c00 + t));
    steps_per_epoch = std::max(steps_per_epoch, samplers.back().batches_per_pass());
  }

  ParamSet params = model.params();
  AdamConfig adam_cfg;
  adam_cfg.lr = config.lr;
  Adam adam(params, adam_cfg);

  auto validation = [&] {
    double total = 0.0;
    for (int t = 1; t <= T; ++t) {
      const TaskArrays& a = arrays[t - 1];
      total += prediction_loss(model.response_kinds[t - 1],
                               predict(model, t, a.x0_val, a.xin_val), a.y_val);
    }
    return total;
  };

  EarlyStopper stopper;
  stopper.patience = config.patience;
  stopper.observe(validation());
  std::vector<Matrix> best = params.snapshot();

  std::vector<MtlBatch> batches(T);
  for (int epoch = 0; epoch < config.max_epochs && !stopper.should_stop(); ++epoch) {
    for (int step = 0; step < steps_per_epoch; ++step) {
      for (int t = 1; t <= T; ++t) {
        const std::vector<int> rows = samplers[t - 1].next();
        const TaskArrays& a = arrays[t - 1];
        batches[t - 1].x_anchor = take_rows(a.x0_train, rows);
        batches[t - 1].x_task_input = take_rows(a.xin_train, rows);
        batches[t - 1].y = take_rows(a.y_train, rows);
      }
      GraphBuilder g;
      Tape::Id loss = loss_on_tape(g, model, batches, config.gamma, config.delta, config.kappa);
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

void export_latents(const MtlModel& model, const ImputedDataset& data, std::ostream& out) {
  const int d_h = model.enc_shared.output_dim();
  const int d_k = model.enc_task.front().output_dim();
  const int width = std::max(d_h, d_k);
  out << "task_id,row_id,kind,dim";
  for (int j = 0; j < width; ++j) out << ",v" << j;
  out << '\n';
  char buf[40];
  auto write_rows = [&](int task, const char* kind, const Matrix& latent) {
    for (Eigen::Index i = 0; i < latent.rows(); ++i) {
      out << task << ',' << i << ',' << kind << ',' << latent.cols();
      for (int j = 0; j < width; ++j) {
        out << ',';
        if (j < latent.cols()) {
          std::snprintf(buf, sizeof buf, "%.17g", latent(i, j));
          out << buf;
        }
      }
      out << '\n';
    }
  };
  for (int t = 1; t <= model.task_count(); ++t) {
    const TaskDataset& task = data.base.task(t);
    MtlForwardResult res =
        mtl_forward(model, t, task.x_anchor, task_input_matrix(model, data, t));
    write_rows(t, "shared", res.shared_latent);
    write_rows(t, "specific", res.task_latent);
  }
}

}  // namespace mtlhmb
