#pragma once

#include "common.hpp"
#include "data.hpp"
#include "hbi.hpp"
#include "mtl.hpp"
#include "nn.hpp"

#include <vector>

namespace mtlhmb {

enum class BaselineKind { STL, HTL, HPS_with_HBI, Step1_plus_STL, NaiveImpute_plus_Step2 };

std::string to_string(BaselineKind kind);
BaselineKind baseline_kind_from_string(const std::string& s);

/// Hyperparameters for the plain supervised networks (single-task nets and
/// the hard-parameter-sharing trunk). `depth` counts weight layers.
struct SupervisedNetConfig {
  int width = 64;
  int depth = 3;
  int batch = 16;
  double lr = 0.001;
  int patience = 30;
  int max_epochs = 400;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One regression/classification MLP trained on explicit matrices with
/// early stopping on the validation prediction loss.
Mlp train_regressor(const Matrix& x_train, const Vector& y_train, const Matrix& x_val,
                    const Vector& y_val, ResponseKind kind, const SupervisedNetConfig& config);

/// Per-sample prediction loss summed over rows (squared error or
/// cross-entropy), used for selection and early stopping everywhere.
double supervised_loss(ResponseKind kind, const Vector& y_hat, const Vector& y);

/// Single-task learning: one independent network per task on that task's
/// observed features [x_0 | x_t]. Receives a single TaskDataset by design.
Mlp train_stl(const TaskDataset& task, const std::vector<int>& train_rows,
              const std::vector<int>& val_rows, const SupervisedNetConfig& config);

/// Heterogeneous transfer baseline: the dual-path network with a shared
/// anchor encoder and task encoders on each task's own source only, no
/// imputation, and regularizers R_orth and R_dr (no R_imp).
MtlModel train_htl(const MultiTaskDataset& data, const SplitIndices& split, MtlConfig config);

/// Hard parameter sharing on imputed features: one shared trunk and a
/// per-task affine output layer.
struct HpsModel {
  Mlp trunk;
  std::vector<DenseLayer> heads;
  std::vector<ResponseKind> response_kinds;

  ParamSet params();
};

HpsModel train_hps(const ImputedDataset& data, const SplitIndices& split,
                   const SupervisedNetConfig& config);
Vector predict(const HpsModel& model, int task, const Matrix& x_full);
double hps_validation_loss(const HpsModel& model, const ImputedDataset& data,
                           const SplitIndices& split);

/// Heterogeneity-blind imputation: per source, a single encoder/predictor
/// pair fitted on the source's own task only, applied to every other task.
ImputedDataset naive_impute_all(const MultiTaskDataset& data, const SplitIndices& split,
                                const HbiConfig& config);

}  // namespace mtlhmb
