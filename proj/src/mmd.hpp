#pragma once

#include "common.hpp"

namespace mtlhmb {

struct MmdResult {
  double statistic = 0.0;
  double p_value = 1.0;
  int n_permutations = 0;
  double bandwidth = 0.0;
};

/// Median pairwise Euclidean distance over the pooled rows of X and Y
/// (median heuristic); falls back to 1 when the median degenerates to 0.
double mmd_median_bandwidth(const Matrix& x, const Matrix& y);

/// Biased squared-MMD estimator with RBF kernel exp(-||a-b||^2 / (2 sigma^2)),
/// including self-pairs: mean(Kxx) + mean(Kyy) - 2 mean(Kxy).
double mmd(const Matrix& x, const Matrix& y);
double mmd_with_bandwidth(const Matrix& x, const Matrix& y, double bandwidth);

/// Pools the rows, permutes the group labels, and reports
/// p = (1 + #{perm stat >= observed}) / (n_permutations + 1).
MmdResult mmd_permutation_test(const Matrix& x, const Matrix& y, int n_permutations,
                               std::uint64_t seed);

}  // namespace mtlhmb
