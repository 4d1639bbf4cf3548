#pragma once

#include "common.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mtlhmb {

enum class ResponseKind { Continuous, Binary };

std::string to_string(ResponseKind kind);
ResponseKind response_kind_from_string(const std::string& s);

/// Which (task, source) feature blocks exist. Source 0 is the anchoring
/// source observed by every task; source t is observed only by task t.
struct BlockLayout {
  int task_count = 0;
  std::vector<int> source_dims;                  // p_0 .. p_T
  std::vector<std::pair<int, int>> observed;     // (task, source), sorted

  bool is_observed(int task, int source) const;
  int total_dim() const;
  int source_offset(int source) const;
  /// Missing blocks, i.e. (task, source) with source >= 1 not in `observed`.
  std::vector<std::pair<int, int>> missing() const;
  void validate() const;

  static BlockLayout anchored(int task_count, std::vector<int> source_dims);
};

struct TaskDataset {
  int task_id = 0;
  Matrix x_anchor;    // n_t x p_0
  Matrix x_specific;  // n_t x p_{task_id}
  Vector y;
  ResponseKind response_kind = ResponseKind::Continuous;

  int rows() const { return static_cast<int>(y.size()); }
};

struct MultiTaskDataset {
  BlockLayout layout;
  std::vector<TaskDataset> tasks;

  const TaskDataset& task(int task_id) const;
  void validate() const;
};

enum class BlockProvenance { Observed, Imputed };

/// A MultiTaskDataset plus one imputed block per missing (task, source).
struct ImputedDataset {
  MultiTaskDataset base;
  std::map<std::pair<int, int>, Matrix> imputed_blocks;

  bool is_complete() const;
  BlockProvenance provenance(int task, int source) const;
  /// Block (task, source) whether observed or imputed.
  const Matrix& block(int task, int source) const;
  /// [x_0 | x_1 | ... | x_T] for one task, imputed blocks in place.
  Matrix full_features(int task) const;
  void validate() const;
};

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::vector<int>> train;  // per task, row indices
  std::vector<std::vector<int>> val;
  std::vector<std::vector<int>> test;
};

/// Per-task disjoint row partition by shuffled indices. Sizes are
/// floor(n * fraction) for val and test with the remainder going to train.
SplitIndices split(const MultiTaskDataset& ds, const SplitSpec& spec);

/// Column statistics fitted on training rows only. Features are pooled per
/// source across the tasks observing that source; responses are per task.
/// Standard deviations below 1e-12 are replaced by 1.
struct StandardizationStats {
  std::vector<Vector> feature_mean;  // per source
  std::vector<Vector> feature_sd;
  std::vector<double> y_mean;        // per task; 0/1 for binary responses
  std::vector<double> y_sd;

  Matrix apply_block(int source, const Matrix& block) const;
  Matrix invert_block(int source, const Matrix& block) const;
  Vector apply_y(int task_index, const Vector& y) const;
  Vector invert_y(int task_index, const Vector& y) const;
};

StandardizationStats standardize_fit(const MultiTaskDataset& ds, const SplitIndices& split);
MultiTaskDataset standardize_apply(const StandardizationStats& stats, const MultiTaskDataset& ds);
ImputedDataset standardize_apply(const StandardizationStats& stats, const ImputedDataset& ds);

// --- CSV / manifest I/O ---------------------------------------------------

/// Parses a numeric CSV. Rejects ragged rows, non-numeric and non-finite
/// cells with the file, row, and column named in the error.
Matrix load_csv_matrix(const std::string& path, bool has_header, int expected_cols = -1);
void save_csv_matrix(const std::string& path, const Matrix& m);

struct LoadedDataset {
  ImputedDataset data;  // imputed_blocks empty for a raw manifest
  std::optional<SplitSpec> split;
  bool has_header = false;
};

LoadedDataset load_manifest(const std::string& manifest_path);
/// Writes <out_dir>/manifest.json plus one CSV per block and response.
void save_manifest(const std::string& out_dir, const ImputedDataset& ds,
                   const std::optional<SplitSpec>& split);

}  // namespace mtlhmb
