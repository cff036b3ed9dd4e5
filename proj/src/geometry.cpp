#include "seqtomo/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

namespace seqtomo {

namespace {

Eigen::Matrix2d rotation(double angle_deg) {
  const double a = angle_deg * std::numbers::pi / 180.0;
  Eigen::Matrix2d r;
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return r;
}

}  // namespace

void FanBeamGeometry::validate() const {
  if (!(source_radius > 0.0) || !(detector_radius > 0.0))
    throw std::invalid_argument("geometry: source and detector radii must be positive");
  if (n_detectors < 1) throw std::invalid_argument("geometry: n_detectors must be >= 1");
  if (!(detector_width > 0.0)) throw std::invalid_argument("geometry: detector_width must be positive");
}

RayFan source_positions(const FanBeamGeometry& geom, double angle_deg) {
  geom.validate();
  // Local frame: source above the centre, detector below, both shifted along x;
  // the detector plate is tilted about its own centre. The whole frame is then rotated.
  const Eigen::Vector2d source_local(geom.source_shift, geom.source_radius);
  const Eigen::Vector2d det_centre(geom.detector_shift, -geom.detector_radius);
  const double tilt = geom.detector_tilt * std::numbers::pi / 180.0;
  const Eigen::Vector2d along(std::cos(tilt), std::sin(tilt));
  const double pitch = geom.detector_width / geom.n_detectors;

  const Eigen::Matrix2d rot = rotation(angle_deg);
  RayFan fan;
  fan.source = rot * source_local;
  fan.detectors.resize(2, geom.n_detectors);
  for (int j = 0; j < geom.n_detectors; ++j) {
    const double t = (j + 0.5 - 0.5 * geom.n_detectors) * pitch;
    fan.detectors.col(j) = rot * (det_centre + t * along);
  }
  return fan;
}

std::vector<std::int64_t> quantized_key(const SliceAngleSet& set) {
  std::vector<std::int64_t> key;
  key.reserve(set.size());
  for (double a : set.angles_deg) {
    std::int64_t q = std::llround(wrap_degrees(a) * 1e6);
    if (q >= 360000000) q -= 360000000;
    key.push_back(q);
  }
  return key;
}

double wrap_degrees(double angle) {
  double w = std::fmod(angle, 360.0);
  if (w < 0.0) w += 360.0;
  if (w >= 360.0) w -= 360.0;
  return w;
}

SliceAngleSet rotated(const SliceAngleSet& set, double offset_deg) {
  SliceAngleSet out = set;
  for (double& a : out.angles_deg) a = wrap_degrees(a + offset_deg);
  return out;
}

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::Fixed: return "fixed";
    case Scheme::OneDegree: return "one-degree";
    case Scheme::QuarterDelta: return "quarter-delta";
    case Scheme::RandomUniform: return "random";
  }
  return "unknown";
}

Scheme parse_scheme(const std::string& name) {
  for (Scheme s : {Scheme::Fixed, Scheme::OneDegree, Scheme::QuarterDelta, Scheme::RandomUniform})
    if (to_string(s) == name) return s;
  throw std::invalid_argument("unknown rotation scheme '" + name +
                              "' (expected fixed, one-degree, quarter-delta or random)");
}

int quarter_delta_increment(int n_sources) {
  if (n_sources < 1) throw std::invalid_argument("schedule: n_sources must be >= 1");
  if (360 % n_sources != 0)
    throw std::invalid_argument("schedule: quarter-delta needs an integer source spacing; " +
                                std::to_string(n_sources) + " sources do not divide 360");
  const int delta = 360 / n_sources;
  const double quarter = delta / 4.0;
  int best = 0;
  double best_dist = 1e300;
  // Walk candidates in increasing order so a distance tie keeps the lower one.
  for (int c = 1; c < delta; ++c) {
    if (delta % c == 0) continue;
    const double d = std::abs(c - quarter);
    if (d < best_dist - 1e-12) {
      best = c;
      best_dist = d;
    }
  }
  if (best == 0)
    throw std::invalid_argument("schedule: no non-divisor increment exists for spacing " +
                                std::to_string(delta));
  return best;
}

namespace {

std::vector<double> random_uniform_offsets(const RotationSchedule& sched, int n_slices) {
  const SliceAngleSet base = base_angle_set(sched);
  std::mt19937_64 rng(sched.rng_seed);
  std::uniform_int_distribution<int> draw(1, 359);

  std::set<std::vector<std::int64_t>> visited;
  std::array<bool, 360> covered{};
  int n_covered = 0;
  auto visit = [&](double offset) {
    SliceAngleSet s = rotated(base, offset);
    auto key = quantized_key(s);
    std::sort(key.begin(), key.end());
    visited.insert(key);
    for (double a : s.angles_deg) {
      const int bin = std::min(359, static_cast<int>(std::floor(a)));
      if (!covered[bin]) {
        covered[bin] = true;
        ++n_covered;
      }
    }
  };

  std::vector<double> offsets;
  offsets.reserve(n_slices);
  long offset = 0;
  for (int k = 0; k < n_slices; ++k) {
    if (n_covered == 360) {
      // Full circle covered: the next cycle may revisit earlier sets.
      visited.clear();
      covered.fill(false);
      n_covered = 0;
    }
    if (k > 0) {
      // Reject increments that revisit an angle set before the circle is covered.
      int attempts = 0;
      for (;;) {
        const int inc = draw(rng);
        const long candidate = (offset + inc) % 360;
        SliceAngleSet s = rotated(base, static_cast<double>(candidate));
        auto key = quantized_key(s);
        std::sort(key.begin(), key.end());
        if (!visited.contains(key)) {
          offset = candidate;
          break;
        }
        if (++attempts > 100000)
          throw std::runtime_error("schedule: random increments failed to find an unvisited angle set");
      }
    }
    visit(static_cast<double>(offset));
    offsets.push_back(static_cast<double>(offset));
  }
  return offsets;
}

}  // namespace

std::vector<double> rotation_offsets(const RotationSchedule& sched, int n_slices) {
  if (sched.n_sources < 1) throw std::invalid_argument("schedule: n_sources must be >= 1");
  if (n_slices < 0) throw std::invalid_argument("schedule: negative slice count");
  std::vector<double> offsets(n_slices, 0.0);
  switch (sched.scheme) {
    case Scheme::Fixed:
      break;
    case Scheme::OneDegree:
      for (int k = 0; k < n_slices; ++k) offsets[k] = k;
      break;
    case Scheme::QuarterDelta: {
      const int inc = sched.quarter_delta_override ? *sched.quarter_delta_override
                                                   : quarter_delta_increment(sched.n_sources);
      for (int k = 0; k < n_slices; ++k) offsets[k] = static_cast<double>(k) * inc;
      break;
    }
    case Scheme::RandomUniform:
      offsets = random_uniform_offsets(sched, n_slices);
      break;
  }
  return offsets;
}

SliceAngleSet base_angle_set(const RotationSchedule& sched) {
  if (sched.n_sources < 1) throw std::invalid_argument("schedule: n_sources must be >= 1");
  SliceAngleSet s;
  s.angles_deg.resize(sched.n_sources);
  for (int i = 0; i < sched.n_sources; ++i)
    s.angles_deg[i] = wrap_degrees(sched.start_angle + i * sched.delta());
  return s;
}

SliceAngleSet angles_for_slice(const RotationSchedule& sched, int k) {
  if (k < 0) throw std::invalid_argument("schedule: slice index must be >= 0");
  const std::vector<double> offsets = rotation_offsets(sched, k + 1);
  SliceAngleSet s = rotated(base_angle_set(sched), offsets[k]);
  s.slice_index = k;
  return s;
}

std::vector<SliceAngleSet> materialize(const RotationSchedule& sched, int n_slices) {
  const std::vector<double> offsets = rotation_offsets(sched, n_slices);
  const SliceAngleSet base = base_angle_set(sched);
  std::vector<SliceAngleSet> out;
  out.reserve(n_slices);
  for (int k = 0; k < n_slices; ++k) {
    out.push_back(rotated(base, offsets[k]));
    out.back().slice_index = k;
  }
  return out;
}

}  // namespace seqtomo
