#include "seqtomo/phantom.hpp"
#include "seqtomo/parallel.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace seqtomo {

namespace {

double knot_half_width(const LogPhantom& ph, const KnotSpec& k, double u) {
  return k.base_radius * (0.35 + 0.65 * u / ph.log_radius);
}

double knot_tip(const KnotSpec& k, int slice) { return k.elevation_rate * (slice - k.start_slice + 1); }

bool inside_knot(const LogPhantom& ph, const KnotSpec& knot, int slice, const Eigen::Vector2d& rel) {
  if (slice < knot.start_slice || slice > knot.end_slice) return false;
  const double az = knot.azimuth * std::numbers::pi / 180.0;
  const Eigen::Vector2d dir(std::cos(az), std::sin(az));
  const double tip = knot_tip(knot, slice);
  const double u = rel.dot(dir);
  const double v = std::abs(rel.x() * dir.y() - rel.y() * dir.x());
  if (u > 0.0 && u <= tip && v <= knot_half_width(ph, knot, u)) return true;
  return (rel - tip * dir).norm() <= knot_half_width(ph, knot, tip);
}

// Continuous attenuation at a point given relative to the pith of slice k.
double attenuation_at(const LogPhantom& ph, int k, const Eigen::Vector2d& rel, bool* in_knot) {
  *in_knot = false;
  const double r = rel.norm();
  if (r > ph.log_radius) return ph.background_level;
  for (const auto& knot : ph.knots)
    if (inside_knot(ph, knot, k, rel)) {
      *in_knot = true;
      return ph.knot_level;
    }
  if (r >= ph.log_radius - ph.sapwood_width) return ph.sapwood_level;
  return ph.wood_level +
         ph.ring_contrast * std::sin(2.0 * std::numbers::pi * r / ph.ring_spacing + ph.ring_phase_rate * k);
}

}  // namespace

void LogPhantom::validate() const {
  grid.validate();
  if (n_slices < 1) throw std::invalid_argument("phantom: n_slices must be >= 1");
  if (!(background_level == 0.0 && wood_level > background_level && knot_level > wood_level))
    throw std::invalid_argument("phantom: levels must satisfy 0 = background < wood < knot");
  if (sapwood_level < 0.9 * knot_level || sapwood_level > 1.1 * knot_level)
    throw std::invalid_argument("phantom: sapwood level must be within 10% of the knot level");
  if (ring_contrast < 0.0 || wood_level - ring_contrast < 0.0 ||
      wood_level + ring_contrast > knot_level)
    throw std::invalid_argument("phantom: ring modulation leaves [0, knot_level]");
  if (!(log_radius > sapwood_width) || sapwood_width < 0.0)
    throw std::invalid_argument("phantom: sapwood must be thinner than the log radius");
  if (supersample < 1) throw std::invalid_argument("phantom: supersample must be >= 1");
  const double drift_total = std::abs(pith_drift) * grid.pixel_size * (n_slices - 1);
  if (log_radius + drift_total > grid.fov_radius)
    throw std::invalid_argument("phantom: log (with pith drift) leaves the field of view");
  for (const auto& k : knots) {
    if (k.start_slice >= k.end_slice)
      throw std::invalid_argument("phantom: knot start_slice must be < end_slice");
    if (k.elevation_rate <= 0.0 || k.base_radius <= 0.0)
      throw std::invalid_argument("phantom: knot elevation_rate and base_radius must be positive");
    const double tip = knot_tip(k, k.end_slice);
    if (tip + knot_half_width(*this, k, tip) > log_radius)
      throw std::invalid_argument("phantom: knot at azimuth " + std::to_string(k.azimuth) +
                                  " extends beyond the log radius");
  }
}

std::vector<KnotSpec> default_knots() {
  return {
      {0, 80, 25.0, 1.6, 20.0},
      {20, 84, 145.0, 2.0, 20.0},
      {10, 110, 260.0, 1.3, 20.0},
      {40, 94, 330.0, 2.4, 20.0},
  };
}

Eigen::Vector2d pith_position(const LogPhantom& ph, int k) {
  std::mt19937_64 rng(ph.rng_seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const double phi = angle(rng);
  return ph.pith_drift * ph.grid.pixel_size * k * Eigen::Vector2d(std::cos(phi), std::sin(phi));
}

PhantomVolumes generate(const LogPhantom& ph) {
  ph.validate();
  const ImageGrid& g = ph.grid;
  PhantomVolumes out;
  out.attenuation.n = g.n;
  out.attenuation.slices.resize(g.n_pixels(), ph.n_slices);
  out.knots.n = g.n;
  out.knots.labels.resize(g.n_pixels(), ph.n_slices);

  const int ss = ph.supersample;
  const double sub = g.pixel_size / ss;
  for (int k = 0; k < ph.n_slices; ++k) {
    const Eigen::Vector2d pith = pith_position(ph, k);
    for (long p = 0; p < g.n_pixels(); ++p) {
      const Eigen::Vector2d c = g.pixel_center(p) - pith;
      double acc = 0.0;
      for (int a = 0; a < ss; ++a)
        for (int b = 0; b < ss; ++b) {
          const Eigen::Vector2d off((a + 0.5) * sub - 0.5 * g.pixel_size, (b + 0.5) * sub - 0.5 * g.pixel_size);
          bool knot = false;
          acc += attenuation_at(ph, k, c + off, &knot);
        }
      bool centre_knot = false;
      attenuation_at(ph, k, c, &centre_knot);
      out.attenuation.slices(p, k) = acc / (ss * ss);
      out.knots.labels(p, k) = centre_knot ? 1 : 0;
    }
  }
  return out;
}

std::uint64_t slice_seed(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<ScanSlice> simulate_scan(const Volume& volume, MatrixCache& cache,
                                     const std::vector<SliceAngleSet>& angle_sets,
                                     double noise_std, std::uint64_t seed, int threads) {
  if (volume.slices.rows() != cache.grid().n_pixels())
    throw std::invalid_argument("simulate_scan: volume does not match the image grid");
  if (static_cast<int>(angle_sets.size()) != volume.n_slices())
    throw std::invalid_argument("simulate_scan: need one angle set per slice");
  std::vector<ScanSlice> out(volume.n_slices());
  parallel_for(volume.n_slices(), threads, [&](long k) {
    const auto a = cache.get(angle_sets[k]);
    auto noisy = add_noise(forward(*a, volume.slice(static_cast<int>(k))), noise_std, slice_seed(seed, k));
    out[k].angles = angle_sets[k];
    out[k].angles.slice_index = static_cast<int>(k);
    out[k].sinogram = std::move(noisy.values);
    out[k].noise_variance = noisy.noise_variance;
  });
  return out;
}

std::vector<ScanSlice> simulate_scan(const Volume& volume, MatrixCache& cache,
                                     const RotationSchedule& sched, double noise_std,
                                     std::uint64_t seed, int threads) {
  return simulate_scan(volume, cache, materialize(sched, volume.n_slices()), noise_std, seed, threads);
}

}  // namespace seqtomo
