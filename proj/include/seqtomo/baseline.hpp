#pragma once

#include "seqtomo/phantom.hpp"
#include "seqtomo/projector.hpp"

#include <Eigen/Dense>

#include <vector>

namespace seqtomo {

struct TikhonovResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double residual = 0.0;  // ||(A^T A + alpha I) x - A^T y|| / ||A^T y||
  bool converged = false;
  std::vector<double> history;  // residual after each iteration
};

/// Minimizer of ||A x - y||^2 + alpha ||x||^2, i.e. the solution of
/// (A^T A + alpha I) x = A^T y. Conjugate residuals on the normal equations, which keeps
/// the normal-equation residual non-increasing. Starts from zero; deterministic.
TikhonovResult tikhonov_cgls(const SparseProjection& a, const Eigen::VectorXd& y, double alpha,
                             int max_iter = 500, double tol = 1e-8);

// Same iteration for a plain sparse matrix.
TikhonovResult tikhonov_cgls(const SparseProjection::Matrix& a, const Eigen::VectorXd& y, double alpha,
                             int max_iter = 500, double tol = 1e-8);

// scale times the largest row sum of |A^T A|, an upper bound of ||A^T A||_2.
double default_reference_alpha(const SparseProjection& a, double scale = 1e-3);

struct TikhonovOptions {
  double alpha = 0.0;  // <= 0 selects default_reference_alpha(a, alpha_scale) per matrix
  double alpha_scale = 1e-3;
  int max_iter = 500;
  double tol = 1e-8;
};

// Independent per-slice Tikhonov reconstructions; slices run in parallel.
Volume reference_volume(const std::vector<ScanSlice>& scans, MatrixCache& cache, const TikhonovOptions& opts,
                        int threads = 1);

}  // namespace seqtomo
