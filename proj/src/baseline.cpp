#include "seqtomo/baseline.hpp"
#include "seqtomo/parallel.hpp"

#include <cmath>
#include <stdexcept>

namespace seqtomo {

TikhonovResult tikhonov_cgls(const SparseProjection::Matrix& a, const Eigen::VectorXd& y, double alpha,
                             int max_iter, double tol) {
  if (!(alpha > 0.0)) throw std::invalid_argument("tikhonov: alpha must be positive");
  if (y.size() != a.rows())
    throw std::invalid_argument("tikhonov: sinogram has " + std::to_string(y.size()) + " entries, matrix has " +
                                std::to_string(a.rows()) + " rows");
  auto normal = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    Eigen::VectorXd av = a * v;
    Eigen::VectorXd out = a.transpose() * av;
    out += alpha * v;
    return out;
  };

  TikhonovResult res;
  res.x = Eigen::VectorXd::Zero(a.cols());
  const Eigen::VectorXd b = a.transpose() * y;
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }
  // Conjugate residuals for the SPD system H x = b.
  Eigen::VectorXd r = b;
  Eigen::VectorXd p = r;
  Eigen::VectorXd hr = normal(r);
  Eigen::VectorXd hp = hr;
  double rhr = r.dot(hr);
  res.residual = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    const double hp2 = hp.squaredNorm();
    if (hp2 == 0.0) break;
    const double step = rhr / hp2;
    res.x += step * p;
    r -= step * hp;
    res.iterations = it + 1;
    res.residual = r.norm() / bnorm;
    res.history.push_back(res.residual);
    if (res.residual < tol) {
      res.converged = true;
      break;
    }
    hr = normal(r);
    const double rhr_next = r.dot(hr);
    const double beta = rhr_next / rhr;
    rhr = rhr_next;
    p = r + beta * p;
    hp = hr + beta * hp;
  }
  return res;
}

TikhonovResult tikhonov_cgls(const SparseProjection& a, const Eigen::VectorXd& y, double alpha, int max_iter,
                             double tol) {
  return tikhonov_cgls(a.matrix, y, alpha, max_iter, tol);
}

double default_reference_alpha(const SparseProjection& a, double scale) {
  // Row sums of |A|^T |A| are |A|^T (|A| 1); all entries are non-negative lengths.
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(a.cols());
  const Eigen::VectorXd t = a.matrix.cwiseAbs() * ones;
  const Eigen::VectorXd sums = a.matrix.cwiseAbs().transpose() * t;
  return scale * sums.maxCoeff();
}

Volume reference_volume(const std::vector<ScanSlice>& scans, MatrixCache& cache, const TikhonovOptions& opts,
                        int threads) {
  Volume vol;
  vol.n = cache.grid().n;
  vol.slices = Eigen::MatrixXd::Zero(cache.grid().n_pixels(), static_cast<long>(scans.size()));
  parallel_for(static_cast<long>(scans.size()), threads, [&](long k) {
    const auto a = cache.get(scans[k].angles);
    const double alpha = opts.alpha > 0.0 ? opts.alpha : default_reference_alpha(*a, opts.alpha_scale);
    vol.slices.col(k) = tikhonov_cgls(*a, scans[k].sinogram, alpha, opts.max_iter, opts.tol).x;
  });
  return vol;
}

}  // namespace seqtomo
