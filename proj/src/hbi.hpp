#pragma once

#include "common.hpp"
#include "data.hpp"
#include "nn.hpp"

#include <vector>

namespace mtlhmb {

/// Hyperparameters for one heterogeneous block-wise imputation model.
/// `depth` counts weight layers; depth 1 is a single linear map. Latent
/// dimensions default to the width.
struct HbiConfig {
  int width = 32;
  int depth = 2;
  int batch = 16;
  int latent_shared = -1;   // d_f, defaults to width
  int latent_private = -1;  // d_g, defaults to width
  double lr = 0.001;
  int patience = 30;
  int max_epochs = 400;
  std::uint64_t seed = 0;

  int d_shared() const { return latent_shared > 0 ? latent_shared : width; }
  int d_private() const { return latent_private > 0 ? latent_private : width; }
  void validate() const;
};

/// Imputation model for one target source: a common encoder shared by all
/// tasks, one private encoder for the target task, one pooled private encoder
/// for the remaining tasks, a decoder reconstructing the anchoring source,
/// and a predictor mapping shared representations to the target source.
struct HbiModel {
  int target_source = 0;
  Mlp enc_common;    // p_0 -> d_f
  Mlp enc_task;      // p_0 -> d_g, target task
  Mlp enc_rest;      // p_0 -> d_g, pooled other tasks
  Mlp decoder;       // d_f + d_g -> p_0
  Mlp predictor;     // d_f -> p_s

  ParamSet params();
};

struct HbiLosses {
  double pre = 0.0;
  double recon = 0.0;
  double total() const { return pre + recon; }
};

/// Prediction and reconstruction losses on explicit batches. Each per-sample
/// loss is the row mean of squared errors; batch losses are sums over rows.
/// `rest_x0` may be empty (single-task case).
HbiLosses hbi_losses(const HbiModel& model, const Matrix& task_x0, const Matrix& task_xs,
                     const Matrix& rest_x0);

/// Trains one HBI model for `target_source` on the training rows of the
/// standardized dataset, early-stopping on the target task's validation
/// prediction loss. Returns the best-validation parameters.
HbiModel train_hbi(const MultiTaskDataset& data, const SplitIndices& split, int target_source,
                   const HbiConfig& config);

/// Validation prediction loss of a trained model (sum of row MSE over the
/// target task's validation rows).
double hbi_validation_loss(const HbiModel& model, const MultiTaskDataset& data,
                           const SplitIndices& split);

/// x_hat = G(E_c(x0)) for arbitrary anchor rows.
Matrix impute_source(const HbiModel& model, const Matrix& x_anchor);

/// Trains one model per source (selected over `candidates` by validation
/// prediction loss when more than one is given) and fills every missing
/// block. Sources with no missing counterpart are skipped.
ImputedDataset impute_all(const MultiTaskDataset& data, const SplitIndices& split,
                          const std::vector<HbiConfig>& candidates);

}  // namespace mtlhmb
