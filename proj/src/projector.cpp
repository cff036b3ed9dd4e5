#include "seqtomo/projector.hpp"
#include "seqtomo/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace seqtomo {

void ImageGrid::validate() const {
  if (n < 1) throw std::invalid_argument("grid: n must be >= 1");
  if (!(pixel_size > 0.0)) throw std::invalid_argument("grid: pixel_size must be positive");
  if (!(fov_radius > 0.0) || fov_radius > half_extent() + 1e-9)
    throw std::invalid_argument("grid: fov_radius must lie in (0, n * pixel_size / 2]");
}

std::vector<RaySegment> trace_ray(const ImageGrid& grid, const Eigen::Vector2d& from,
                                  const Eigen::Vector2d& to) {
  const double h = grid.half_extent();
  const Eigen::Vector2d d = to - from;
  const double len = d.norm();
  std::vector<RaySegment> out;
  if (len == 0.0) return out;

  // Slab clipping against the grid's bounding box.
  double t_lo = 0.0, t_hi = 1.0;
  for (int a = 0; a < 2; ++a) {
    if (std::abs(d[a]) < 1e-15 * len) {
      if (from[a] <= -h || from[a] >= h) return out;
      continue;
    }
    double t1 = (-h - from[a]) / d[a], t2 = (h - from[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    t_lo = std::max(t_lo, t1);
    t_hi = std::min(t_hi, t2);
  }
  if (!(t_hi > t_lo)) return out;

  // Parametric crossings with every grid line inside (t_lo, t_hi); each axis is monotone.
  std::vector<double> ts;
  ts.reserve(2 * grid.n + 4);
  ts.push_back(t_lo);
  for (int a = 0; a < 2; ++a) {
    if (std::abs(d[a]) < 1e-15 * len) continue;
    const std::size_t first = ts.size();
    for (int i = 0; i <= grid.n; ++i) {
      const double t = (-h + i * grid.pixel_size - from[a]) / d[a];
      if (t > t_lo && t < t_hi) ts.push_back(t);
    }
    if (d[a] < 0.0) std::reverse(ts.begin() + first, ts.end());
    std::inplace_merge(ts.begin() + 1, ts.begin() + first, ts.end());
  }
  ts.push_back(t_hi);

  const double min_len = 1e-12 * grid.pixel_size;
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const double seg = (ts[i + 1] - ts[i]) * len;
    if (seg <= min_len) continue;
    const Eigen::Vector2d mid = from + 0.5 * (ts[i] + ts[i + 1]) * d;
    const long col = std::clamp(static_cast<long>(std::floor((mid.x() + h) / grid.pixel_size)), 0L,
                                static_cast<long>(grid.n - 1));
    const long row = std::clamp(static_cast<long>(std::floor((h - mid.y()) / grid.pixel_size)), 0L,
                                static_cast<long>(grid.n - 1));
    const long pixel = row * grid.n + col;
    if (!out.empty() && out.back().pixel == pixel)
      out.back().length += seg;
    else
      out.push_back({pixel, seg});
  }
  return out;
}

SparseProjection build_matrix(const FanBeamGeometry& geom, const ImageGrid& grid,
                              const SliceAngleSet& angles, int threads) {
  geom.validate();
  grid.validate();
  const double h = grid.half_extent();
  if (geom.source_radius + geom.detector_radius <= std::sqrt(2.0) * h)
    throw std::invalid_argument("build_matrix: rays must start and end outside the image domain");

  const long n_src = static_cast<long>(angles.size());
  const long n_det = geom.n_detectors;
  std::vector<RayFan> fans;
  fans.reserve(n_src);
  for (double a : angles.angles_deg) {
    fans.push_back(source_positions(geom, a));
    const Eigen::Vector2d& s = fans.back().source;
    if (std::abs(s.x()) < h && std::abs(s.y()) < h)
      throw std::invalid_argument("build_matrix: source at angle " + std::to_string(a) +
                                  " lies inside the image grid");
  }

  std::vector<std::vector<RaySegment>> rays(n_src * n_det);
  parallel_for(n_src, threads, [&](long i) {
    for (long j = 0; j < n_det; ++j) {
      auto segs = trace_ray(grid, fans[i].source, fans[i].detectors.col(j));
      std::sort(segs.begin(), segs.end(),
                [](const RaySegment& a, const RaySegment& b) { return a.pixel < b.pixel; });
      rays[i * n_det + j] = std::move(segs);
    }
  });

  SparseProjection out;
  out.angles = angles;
  out.matrix.resize(n_src * n_det, grid.n_pixels());
  Eigen::VectorXi sizes(n_src * n_det);
  for (long r = 0; r < n_src * n_det; ++r) sizes[r] = static_cast<int>(rays[r].size());
  out.matrix.reserve(sizes);
  for (long r = 0; r < n_src * n_det; ++r)
    for (const auto& s : rays[r]) out.matrix.insert(r, s.pixel) = s.length;
  out.matrix.makeCompressed();
  return out;
}

NoisySinogram add_noise(const Eigen::VectorXd& y, double noise_std, std::uint64_t seed) {
  if (!(noise_std >= 0.0)) throw std::invalid_argument("add_noise: noise_std must be >= 0");
  NoisySinogram out{y, noise_std * noise_std};
  if (noise_std == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, noise_std);
  for (Eigen::Index i = 0; i < out.values.size(); ++i) out.values[i] += normal(rng);
  return out;
}

std::shared_ptr<const SparseProjection> MatrixCache::get(const SliceAngleSet& angles) {
  const auto key = quantized_key(angles);
  {
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) {
      it->second.last_use = ++tick_;
      return it->second.matrix;
    }
  }
  auto built = std::make_shared<const SparseProjection>(build_matrix(geom_, grid_, angles, threads_));
  std::lock_guard lock(mutex_);
  auto [it, inserted] = entries_.try_emplace(key, Entry{std::move(built), 0});
  it->second.last_use = ++tick_;
  while (entries_.size() > capacity_) {
    auto oldest = std::min_element(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) {
      return a.second.last_use < b.second.last_use;
    });
    entries_.erase(oldest);
  }
  return it->second.matrix;
}

std::size_t MatrixCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

}  // namespace seqtomo
