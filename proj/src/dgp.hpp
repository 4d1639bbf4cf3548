#pragma once

#include "common.hpp"
#include "data.hpp"

#include <vector>

namespace mtlhmb {

enum class ResponseForm { NonlinearSquare, Linear };

std::string to_string(ResponseForm form);
ResponseForm response_form_from_string(const std::string& s);

/// Full description of one synthetic experiment configuration.
struct DgpConfig {
  int task_count = 2;
  std::vector<int> n;        // samples per task
  std::vector<int> p;        // source dims p_0 .. p_T
  std::vector<double> rho;   // per-task covariance parameter, in (0,1)
  double alpha = 0.3;        // sharing level in [0,1]
  std::vector<double> sigma; // per-task noise sd
  ResponseForm response_form = ResponseForm::NonlinearSquare;
  std::uint64_t seed = 0;

  int total_dim() const;
  void validate() const;
};

/// Sigma_ij = rho^(0.01 * |i - j|); unit diagonal, symmetric.
Matrix gen_covariance(int p, double rho);

/// n i.i.d. rows from N(0, Sigma) via the Cholesky factor. Retries once with
/// jitter 1e-10*I before giving up on a non-PD matrix.
Matrix sample_gaussian(int n, const Matrix& sigma, Rng& rng);

/// Noiseless response for one feature row. NonlinearSquare:
/// alpha * sum_d v_c[d] * x[d]^2 / p + (1 - alpha) * sum_d v_t[d] * x[d] / p;
/// Linear replaces x^2 with x in the shared term.
double gen_response(const Vector& x, const Vector& v_c, const Vector& v_t, double alpha,
                    ResponseForm form);

/// Generated data with the hidden blocks retained for imputation diagnostics.
struct GroundTruthDataset {
  DgpConfig config;
  Vector v_c;
  std::vector<Vector> v_t;       // per task
  std::vector<Matrix> x_full;    // per task, n_t x p
  std::vector<Vector> y;         // per task
  MultiTaskDataset observed;     // anchoring + task-specific blocks only

  /// Ground-truth values of a block hidden from `observed`.
  Matrix hidden_block(int task, int source) const;
};

GroundTruthDataset generate(const DgpConfig& config);

/// Writes the observed dataset as manifest + CSVs and a ground-truth sidecar
/// (full per-task feature matrices, coefficients, config).
void save_ground_truth(const std::string& out_dir, const GroundTruthDataset& gt);

DgpConfig dgp_config_from_json(const std::string& config_json);
std::string dgp_config_to_json(const DgpConfig& config);

}  // namespace mtlhmb
