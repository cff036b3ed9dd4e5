#pragma once

#include "seqtomo/projector.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>

namespace seqtomo {

/// Squared-exponential prior over the pixel grid; distances are in pixel units.
struct PriorSpec {
  double sigma = 0.1;
  double corr_length = 1.5;
  ImageGrid grid;

  void validate() const;
};

template <class Scalar>
Scalar squared_exponential(Scalar sigma, Scalar corr_length, Scalar dist2) {
  return sigma * sigma * std::exp(-dist2 / (Scalar(2) * corr_length * corr_length));
}

double covariance_entry(const PriorSpec& spec, long i, long j);

// Full N x N covariance; only sensible for small grids.
Eigen::MatrixXd dense_covariance(const PriorSpec& spec);

/// P = U_r S_r^{1/2}, so that P P^T is the best rank-r approximation of the covariance.
/// Columns follow the singular values in non-increasing order.
struct ReducedBasis {
  // Row-major so that sparse rows of A_k combine contiguous rows of P.
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Matrix P;
  Eigen::VectorXd singular_values;

  long rank() const { return P.cols(); }
  long n_pixels() const { return P.rows(); }
};

ReducedBasis build_reduced_basis(const PriorSpec& spec, long r, int threads = 1);

// Leading r columns of an existing basis; identical to building with rank r directly.
ReducedBasis truncate(const ReducedBasis& basis, long r);

void save_basis(const std::filesystem::path& path, const ReducedBasis& basis);
ReducedBasis load_basis(const std::filesystem::path& path);

}  // namespace seqtomo
