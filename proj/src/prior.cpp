#include "seqtomo/prior.hpp"
#include "seqtomo/io.hpp"
#include "seqtomo/parallel.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace seqtomo {

void PriorSpec::validate() const {
  grid.validate();
  if (!(sigma > 0.0)) throw std::invalid_argument("prior: sigma must be positive");
  if (!(corr_length > 0.0)) throw std::invalid_argument("prior: corr_length must be positive");
}

double covariance_entry(const PriorSpec& spec, long i, long j) {
  const long n = spec.grid.n;
  const double dr = static_cast<double>(i / n - j / n);
  const double dc = static_cast<double>(i % n - j % n);
  return squared_exponential(spec.sigma, spec.corr_length, dr * dr + dc * dc);
}

Eigen::MatrixXd dense_covariance(const PriorSpec& spec) {
  spec.validate();
  const long N = spec.grid.n_pixels();
  Eigen::MatrixXd cov(N, N);
  for (long j = 0; j < N; ++j)
    for (long i = 0; i < N; ++i) cov(i, j) = covariance_entry(spec, i, j);
  return cov;
}

ReducedBasis build_reduced_basis(const PriorSpec& spec, long r, int threads) {
  spec.validate();
  const int n = spec.grid.n;
  const long N = spec.grid.n_pixels();
  if (r < 1 || r > N)
    throw std::invalid_argument("build_reduced_basis: rank " + std::to_string(r) + " outside [1, " +
                                std::to_string(N) + "]");

  // The kernel factors over the two axes: Sigma = sigma^2 (K1 (x) K1).
  Eigen::MatrixXd k1(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) k1(a, b) = squared_exponential(1.0, spec.corr_length, double((a - b) * (a - b)));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k1);
  if (es.info() != Eigen::Success) throw std::runtime_error("build_reduced_basis: 1D eigensolver failed");

  // Descending order, negative round-off clipped, first nonzero entry of each vector positive.
  Eigen::VectorXd lam(n);
  Eigen::MatrixXd u(n, n);
  for (int a = 0; a < n; ++a) {
    lam[a] = std::max(0.0, es.eigenvalues()[n - 1 - a]);
    u.col(a) = es.eigenvectors().col(n - 1 - a);
    const double tol = 1e-12 * u.col(a).cwiseAbs().maxCoeff();
    for (int i = 0; i < n; ++i)
      if (std::abs(u(i, a)) > tol) {
        if (u(i, a) < 0.0) u.col(a) = -u.col(a);
        break;
      }
  }

  struct Pair {
    double s;
    int a, b;
  };
  std::vector<Pair> pairs;
  pairs.reserve(N);
  const double s2 = spec.sigma * spec.sigma;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) pairs.push_back({s2 * (lam[a] * lam[b]), a, b});
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
    if (x.s != y.s) return x.s > y.s;
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });

  ReducedBasis basis;
  basis.singular_values.resize(r);
  basis.P.resize(N, r);
  for (long m = 0; m < r; ++m) basis.singular_values[m] = pairs[m].s;
  // Pixel (row, col) of mode (a, b) is u_a[row] * u_b[col].
  parallel_for(r, threads, [&](long m) {
    const double scale = std::sqrt(pairs[m].s);
    const auto ua = u.col(pairs[m].a);
    const auto ub = u.col(pairs[m].b);
    for (int row = 0; row < n; ++row)
      basis.P.col(m).segment(static_cast<long>(row) * n, n) = (scale * ua[row]) * ub;
  });
  return basis;
}

ReducedBasis truncate(const ReducedBasis& basis, long r) {
  if (r < 1 || r > basis.rank())
    throw std::invalid_argument("truncate: rank " + std::to_string(r) + " outside [1, " +
                                std::to_string(basis.rank()) + "]");
  return {ReducedBasis::Matrix(basis.P.leftCols(r)), basis.singular_values.head(r)};
}

void save_basis(const std::filesystem::path& path, const ReducedBasis& basis) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  io::write_dense(out, Eigen::MatrixXd(basis.P));
  io::write_dense(out, basis.singular_values);
}

ReducedBasis load_basis(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  ReducedBasis b;
  b.P = io::read_dense(in);
  Eigen::MatrixXd sv = io::read_dense(in);
  if (sv.cols() != 1 || sv.rows() != b.P.cols())
    throw std::runtime_error("basis file '" + path.string() + "' has inconsistent blocks");
  b.singular_values = sv.col(0);
  return b;
}

}  // namespace seqtomo
