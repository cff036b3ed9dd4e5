#pragma once

#include "seqtomo/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace seqtomo {

/// Square reconstruction grid centred on the rotation axis. Pixel p = row * n + col,
/// row 0 at the top (largest y), col 0 at the left (smallest x).
struct ImageGrid {
  int n = 128;
  double pixel_size = 400.0 / 128.0;
  double fov_radius = 195.0;

  long n_pixels() const { return static_cast<long>(n) * n; }
  double half_extent() const { return 0.5 * n * pixel_size; }
  Eigen::Vector2d pixel_center(long p) const {
    const long row = p / n, col = p % n;
    return {(col + 0.5 - 0.5 * n) * pixel_size, (0.5 * n - row - 0.5) * pixel_size};
  }
  void validate() const;
};

/// System matrix of one slice: row i * n_detectors + j is the ray from source i to
/// detector pixel j, entries are exact pixel intersection lengths.
struct SparseProjection {
  using Matrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;
  Matrix matrix;
  SliceAngleSet angles;

  long rows() const { return matrix.rows(); }
  long cols() const { return matrix.cols(); }
  long nnz() const { return matrix.nonZeros(); }
};

struct RaySegment {
  long pixel;
  double length;
};

// Siddon traversal of the segment from -> to; segments come out in travel order.
std::vector<RaySegment> trace_ray(const ImageGrid& grid, const Eigen::Vector2d& from,
                                  const Eigen::Vector2d& to);

SparseProjection build_matrix(const FanBeamGeometry& geom, const ImageGrid& grid,
                              const SliceAngleSet& angles, int threads = 1);

template <class Derived>
Eigen::VectorXd forward(const SparseProjection& a, const Eigen::MatrixBase<Derived>& x) {
  if (x.rows() != a.cols() || x.cols() != 1)
    throw std::invalid_argument("forward: image has " + std::to_string(x.rows()) +
                                " entries, matrix expects " + std::to_string(a.cols()));
  return a.matrix * x;
}

template <class Derived>
Eigen::VectorXd adjoint(const SparseProjection& a, const Eigen::MatrixBase<Derived>& y) {
  if (y.rows() != a.rows() || y.cols() != 1)
    throw std::invalid_argument("adjoint: sinogram has " + std::to_string(y.rows()) +
                                " entries, matrix expects " + std::to_string(a.rows()));
  return a.matrix.transpose() * y;
}

struct NoisySinogram {
  Eigen::VectorXd values;
  double noise_variance = 0.0;  // R = noise_variance * I
};

NoisySinogram add_noise(const Eigen::VectorXd& y, double noise_std, std::uint64_t seed);

/// Thread-safe cache of system matrices for one (geometry, grid) pair, keyed by the
/// quantized angle list. Holds at most `capacity` matrices, evicting the least recently used.
class MatrixCache {
 public:
  MatrixCache(FanBeamGeometry geom, ImageGrid grid, int threads = 1, std::size_t capacity = 96)
      : geom_(std::move(geom)), grid_(std::move(grid)), threads_(threads), capacity_(std::max<std::size_t>(capacity, 1)) {}

  std::shared_ptr<const SparseProjection> get(const SliceAngleSet& angles);

  const FanBeamGeometry& geometry() const { return geom_; }
  const ImageGrid& grid() const { return grid_; }
  std::size_t size() const;

 private:
  FanBeamGeometry geom_;
  ImageGrid grid_;
  int threads_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::uint64_t tick_ = 0;
  struct Entry {
    std::shared_ptr<const SparseProjection> matrix;
    std::uint64_t last_use;
  };
  std::map<std::vector<std::int64_t>, Entry> entries_;
};

}  // namespace seqtomo
