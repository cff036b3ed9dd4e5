#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace seqtomo {

/// Flat-detector fan-beam scanner. Lengths are in scanner units, angles in degrees.
/// Defaults are the calibrated values of the industrial log scanner.
struct FanBeamGeometry {
  double source_radius = 859.46;
  double detector_radius = 705.37;
  double detector_width = 1154.2;
  double source_shift = 232.86;
  double detector_shift = -24.65;
  double detector_tilt = 0.16;
  int n_detectors = 768;

  // Throws std::invalid_argument when the description is not physical.
  void validate() const;
};

/// One source position and the centres of its detector pixels, in image coordinates
/// (origin at the centre of rotation).
struct RayFan {
  Eigen::Vector2d source;
  Eigen::Matrix2Xd detectors;
};

RayFan source_positions(const FanBeamGeometry& geom, double angle_deg);

struct SliceAngleSet {
  int slice_index = 0;
  std::vector<double> angles_deg;

  std::size_t size() const { return angles_deg.size(); }
};

// Integer key, in micro-degrees, used to cache per-angle-set matrices.
std::vector<std::int64_t> quantized_key(const SliceAngleSet& set);

double wrap_degrees(double angle);
SliceAngleSet rotated(const SliceAngleSet& set, double offset_deg);

enum class Scheme { Fixed, OneDegree, QuarterDelta, RandomUniform };

std::string to_string(Scheme scheme);
Scheme parse_scheme(const std::string& name);

struct RotationSchedule {
  Scheme scheme = Scheme::QuarterDelta;
  int n_sources = 3;
  std::uint64_t rng_seed = 0;
  std::optional<int> quarter_delta_override;
  double start_angle = 0.0;

  double delta() const { return 360.0 / n_sources; }
};

// Closest integer to delta/4 that does not divide delta, ties broken downward.
// Requires 360 / n_sources to be an integer.
int quarter_delta_increment(int n_sources);

// Rotation offset (degrees, unwrapped) of every slice 0..n_slices-1.
std::vector<double> rotation_offsets(const RotationSchedule& sched, int n_slices);

SliceAngleSet base_angle_set(const RotationSchedule& sched);
SliceAngleSet angles_for_slice(const RotationSchedule& sched, int k);

// All slices at once; RandomUniform replays its increments, so this is the cheap way.
std::vector<SliceAngleSet> materialize(const RotationSchedule& sched, int n_slices);

}  // namespace seqtomo
