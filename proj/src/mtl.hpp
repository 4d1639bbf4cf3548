#pragma once

#include "common.hpp"
#include "data.hpp"
#include "nn.hpp"

#include <iosfwd>
#include <vector>

namespace mtlhmb {

/// What the per-task encoders consume. FullConcat is the imputation-backed
/// architecture ([x_0|x_1|...|x_T] with imputed blocks in place); OwnSource
/// feeds only [x_t] and is used by the heterogeneous transfer baseline.
enum class TaskEncoderInput { FullConcat, OwnSource };

struct MtlConfig {
  int enc_width = 64;
  int enc_depth = 3;
  int d_shared = -1;  // output dim of the shared encoder; defaults to enc_width
  int d_task = -1;    // output dim of the task encoders; defaults to enc_width
  int path_depth = 3;   // L; layers 2..L carry weights, layer 1 is the encoders
  int path_width = -1;  // defaults to enc_width
  double gamma = 0.1;   // weight of the latent orthogonality penalty
  double delta = 0.1;   // weight of the imputed-column penalty
  double kappa = 0.1;   // weight of the path redundancy penalty
  int batch = 16;
  double lr = 0.001;
  int patience = 30;
  int max_epochs = 400;
  std::uint64_t seed = 0;
  TaskEncoderInput task_input = TaskEncoderInput::FullConcat;

  int shared_dim() const { return d_shared > 0 ? d_shared : enc_width; }
  int task_dim() const { return d_task > 0 ? d_task : enc_width; }
  int width_of_path() const { return path_width > 0 ? path_width : enc_width; }
  void validate() const;
};

/// Dual-path multi-task network: a shared encoder on the anchoring source, a
/// per-task encoder, L-1 pathway layers where the task path consumes the
/// concatenated shared and task branches, and per-task output heads.
struct MtlModel {
  BlockLayout layout;
  TaskEncoderInput task_input = TaskEncoderInput::FullConcat;
  Mlp enc_shared;                                 // phi_c
  std::vector<Mlp> enc_task;                      // phi_p^t per task
  std::vector<DenseLayer> path_shared;            // levels l = 2..L
  std::vector<std::vector<DenseLayer>> path_task; // [task][level]
  std::vector<DenseLayer> heads;                  // g^t, affine (+ sigmoid if binary)
  std::vector<ResponseKind> response_kinds;

  int task_count() const { return static_cast<int>(enc_task.size()); }
  int path_levels() const { return static_cast<int>(path_shared.size()); }
  /// Columns of the task-encoder input matrix for one task.
  int task_input_dim(int task) const;
  ParamSet params();
};

MtlModel make_mtl_model(const BlockLayout& layout, const std::vector<ResponseKind>& kinds,
                        const MtlConfig& config);

struct MtlForwardResult {
  Vector y_hat;
  Matrix shared_latent;  // H, n x d_h
  Matrix task_latent;    // K, n x d_k
};

MtlForwardResult mtl_forward(const MtlModel& model, int task, const Matrix& x_anchor,
                             const Matrix& x_task_input);

/// ||H^T K||_F^2 for one task's batch latents.
double r_orth(const Matrix& shared_latent, const Matrix& task_latent);
/// Sum over tasks and imputed sources of the squared Frobenius norm of the
/// first-layer task-encoder weight rows attached to those sources' columns.
double r_imp(const MtlModel& model);
/// Sum over tasks and path levels of ||Theta_c^T Theta_p[shared rows]||_F^2.
double r_dr(const MtlModel& model);

struct MtlBatch {
  Matrix x_anchor;
  Matrix x_task_input;
  Vector y;
};

/// L_integ + gamma*R_orth + delta*R_imp + kappa*R_dr on one batch per task,
/// with per-sample squared error (continuous) or cross-entropy (binary)
/// summed over rows.
double total_loss(const MtlModel& model, const std::vector<MtlBatch>& batches, double gamma,
                  double delta, double kappa);

/// Joint training over all tasks with one mini-batch per task per step.
/// Early stopping monitors the summed validation prediction loss; the
/// best-validation parameters are returned.
MtlModel train_mtl(const ImputedDataset& data, const SplitIndices& split, const MtlConfig& config);

Vector predict(const MtlModel& model, int task, const Matrix& x_anchor,
               const Matrix& x_task_input);

/// Per-task validation prediction loss, summed over tasks (model-selection
/// criterion).
double mtl_validation_loss(const MtlModel& model, const ImputedDataset& data,
                           const SplitIndices& split);

/// One CSV row per (sample, kind in {shared, specific}) holding the layer-1
/// latent vector. Columns: task_id, row_id, kind, dim, v0..v{max_dim-1};
/// unused trailing cells stay empty when the two latent widths differ.
void export_latents(const MtlModel& model, const ImputedDataset& data, std::ostream& out);

/// Task-encoder input matrix for one task under the model's input mode.
Matrix task_input_matrix(const MtlModel& model, const ImputedDataset& data, int task);

}  // namespace mtlhmb
