#pragma once

#include "common.hpp"
#include "baselines.hpp"
#include "data.hpp"
#include "dgp.hpp"
#include "hbi.hpp"
#include "mtl.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mtlhmb {

double rmse(const Vector& pred, const Vector& y);
double average_rmse(const std::vector<double>& per_task);

enum class GridMode { Full, Reduced, Fixed };
GridMode grid_mode_from_string(const std::string& s);
std::string to_string(GridMode mode);

/// Candidate grids, enumerated in ascending width, then depth, then batch.
/// Ties on validation loss are broken by enumeration order (first wins).
std::vector<SupervisedNetConfig> supervised_grid(GridMode mode);
std::vector<MtlConfig> mtl_grid(GridMode mode);
std::vector<HbiConfig> hbi_grid(GridMode mode);

/// Index of the smallest value; earlier entries win ties.
std::size_t pick_best(const std::vector<double>& losses);

struct ExperimentSpec {
  std::string setting = "CUSTOM";
  DgpConfig dgp;
  std::string sweep_param = "none";
  std::vector<double> sweep_values = {0.0};
  std::vector<std::string> methods;
  int repetitions = 30;
  std::uint64_t base_seed = 1;
  GridMode grid = GridMode::Reduced;
  double frac_train = 0.6, frac_val = 0.2, frac_test = 0.2;
  int max_epochs = 400;
  int patience = 30;

  void validate() const;
};

/// Built-in setting templates: A-F two-task sweeps, MULTI3/MULTI4,
/// ABLATION, LINEAR, or CUSTOM (caller supplies the full DGP config).
ExperimentSpec setting_template(const std::string& id);
/// Reads a JSON experiment config, starting from the named setting template.
ExperimentSpec parse_experiment_config(const std::string& config_json);
DgpConfig apply_sweep(DgpConfig base, const std::string& param, double value);

/// One (repetition, method, task) result. task_id 0 carries the average RMSE
/// across tasks. Wall times are kept out of records.csv so that repeated runs
/// are byte-identical; they are written to a separate timings file.
struct ResultRecord {
  std::string setting;
  std::string sweep_param;
  double sweep_value = 0.0;
  int repetition = 0;
  std::string method;
  int task_id = 0;
  std::string split = "test";
  double rmse = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
  bool failed = false;
  std::string error;
  double wall_time = 0.0;  // seconds; timings file only
};

std::vector<ResultRecord> run_experiment(const ExperimentSpec& spec, int workers,
                                         std::ostream* progress);

void write_records_csv(const std::string& path, const std::vector<ResultRecord>& records);
void write_timings_csv(const std::string& path, const std::vector<ResultRecord>& records);

struct SummaryRow {
  std::string setting;
  std::string sweep_param;
  double sweep_value = 0.0;
  std::string method;
  int n = 0;
  int n_failed = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample sd; 0 when n < 2
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Aggregates the average-RMSE records (task_id 0) per (setting, sweep value,
/// method). Quartiles use inclusive linear interpolation.
std::vector<SummaryRow> aggregate(const std::vector<ResultRecord>& records);
/// Quantile with inclusive linear interpolation on sorted data.
double quantile_sorted(const std::vector<double>& sorted, double q);

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);
/// Summary plus pairwise improvement percentages
/// (baseline mean - method mean) / baseline mean * 100 per sweep point.
void write_summary_json(const std::string& path, const std::vector<SummaryRow>& rows);

/// FNV-1a over a canonical config string; stable across runs.
std::string config_hash(const std::string& canonical);

/// Runs every method of the spec on freshly generated data for one
/// (sweep value, repetition) cell. Exposed for the CLI and tests.
std::vector<ResultRecord> run_repetition(const ExperimentSpec& spec, double sweep_value,
                                         int repetition);

}  // namespace mtlhmb
