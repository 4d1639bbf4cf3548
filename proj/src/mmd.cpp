#include "mmd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace mtlhmb {

namespace {

void check_inputs(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.cols()) throw ValidationError("mmd: column counts disagree");
  if (x.rows() < 2 || y.rows() < 2) throw ValidationError("mmd: need at least 2 rows per sample");
}

Matrix pool_rows(const Matrix& x, const Matrix& y) {
  Matrix z(x.rows() + y.rows(), x.cols());
  z << x, y;
  return z;
}

/// Squared pairwise distances of the pooled rows.
Matrix squared_distances(const Matrix& z) {
  const Vector sq = z.rowwise().squaredNorm();
  Matrix d = (-2.0 * z * z.transpose()).colwise() + sq;
  d.rowwise() += sq.transpose();
  return d.cwiseMax(0.0);
}

/// Statistic for the partition (first n_a entries of `order` vs the rest)
/// from a precomputed kernel matrix, biased estimator with self-pairs. The
/// kernel must be symmetric: columns are read as rows.
double stat_from_kernel(const Matrix& kernel, const std::vector<int>& order, int n_a) {
  const int n = static_cast<int>(order.size());
  const int n_b = n - n_a;
  double s_aa = 0.0, s_bb = 0.0, s_ab = 0.0;
  for (int i = 0; i < n; ++i) {
    const bool ia = i < n_a;
    const double* row = kernel.data() + static_cast<std::ptrdiff_t>(order[i]) * kernel.rows();
    for (int j = 0; j < n; ++j) {
      const double k = row[order[j]];
      if (ia && j < n_a)
        s_aa += k;
      else if (!ia && j >= n_a)
        s_bb += k;
      else
        s_ab += k;
    }
  }
  return s_aa / (static_cast<double>(n_a) * n_a) + s_bb / (static_cast<double>(n_b) * n_b) -
         s_ab / (static_cast<double>(n_a) * n_b);
}

}  // namespace

double mmd_median_bandwidth(const Matrix& x, const Matrix& y) {
  check_inputs(x, y);
  const Matrix z = pool_rows(x, y);
  const Matrix d2 = squared_distances(z);
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(z.rows()) * (z.rows() - 1) / 2);
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = i + 1; j < z.rows(); ++j) dists.push_back(std::sqrt(d2(i, j)));
  std::sort(dists.begin(), dists.end());
  const std::size_t n = dists.size();
  const double median =
      (n % 2 == 1) ? dists[n / 2] : 0.5 * (dists[n / 2 - 1] + dists[n / 2]);
  return median < 1e-12 ? 1.0 : median;
}

double mmd_with_bandwidth(const Matrix& x, const Matrix& y, double bandwidth) {
  check_inputs(x, y);
  const Matrix z = pool_rows(x, y);
  const Matrix kernel = (-squared_distances(z) / (2.0 * bandwidth * bandwidth)).array().exp();
  std::vector<int> order(static_cast<std::size_t>(z.rows()));
  std::iota(order.begin(), order.end(), 0);
  return stat_from_kernel(kernel, order, static_cast<int>(x.rows()));
}

double mmd(const Matrix& x, const Matrix& y) {
  return mmd_with_bandwidth(x, y, mmd_median_bandwidth(x, y));
}

MmdResult mmd_permutation_test(const Matrix& x, const Matrix& y, int n_permutations,
                               std::uint64_t seed) {
  check_inputs(x, y);
  if (n_permutations < 1) throw ValidationError("mmd_permutation_test: need at least 1 permutation");
  MmdResult res;
  res.n_permutations = n_permutations;
  res.bandwidth = mmd_median_bandwidth(x, y);

  const Matrix z = pool_rows(x, y);
  const Matrix kernel =
      (-squared_distances(z) / (2.0 * res.bandwidth * res.bandwidth)).array().exp();
  const int n_a = static_cast<int>(x.rows());
  std::vector<int> order(static_cast<std::size_t>(z.rows()));
  std::iota(order.begin(), order.end(), 0);
  res.statistic = stat_from_kernel(kernel, order, n_a);

  Rng rng(seed);
  int at_least = 0;
  for (int b = 0; b < n_permutations; ++b) {
    std::shuffle(order.begin(), order.end(), rng);
    if (stat_from_kernel(kernel, order, n_a) >= res.statistic) ++at_least;
  }
  res.p_value = (1.0 + at_least) / (n_permutations + 1.0);
  return res;
}

}  // namespace mtlhmb
