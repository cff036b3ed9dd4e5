#pragma once

#include "seqtomo/geometry.hpp"
#include "seqtomo/projector.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace seqtomo {

/// Stack of n x n slices; column k holds slice k in the grid's pixel order.
struct Volume {
  int n = 0;
  Eigen::MatrixXd slices;

  int n_slices() const { return static_cast<int>(slices.cols()); }
  auto slice(int k) { return slices.col(k); }
  auto slice(int k) const { return slices.col(k); }
};

using LabelMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct LabelVolume {
  int n = 0;
  LabelMatrix labels;  // 1 on knot voxels

  int n_slices() const { return static_cast<int>(labels.cols()); }
};

/// Branch knot: a cone growing outward from the pith at a fixed azimuth. In slice s its
/// tip sits elevation_rate * (s - start_slice + 1) from the pith.
struct KnotSpec {
  int start_slice = 0;
  int end_slice = 1;
  double azimuth = 0.0;         // degrees
  double elevation_rate = 1.5;  // length per slice
  double base_radius = 20.0;    // half-width at the bark end of the cone
};

struct LogPhantom {
  int n_slices = 61;
  ImageGrid grid;
  double slice_spacing = 2.0;
  double log_radius = 170.0;
  double background_level = 0.0;
  double wood_level = 0.20;
  double ring_contrast = 0.005;
  double ring_spacing = 9.0;
  double ring_phase_rate = 0.05;  // radians per slice
  double sapwood_width = 18.0;
  double sapwood_level = 0.40;
  double knot_level = 0.40;
  double pith_drift = 0.1;  // pixels per slice
  std::vector<KnotSpec> knots;
  std::uint64_t rng_seed = 7;
  int supersample = 3;

  void validate() const;
};

// Default knot layout used by the experiments: four knots at different stages.
std::vector<KnotSpec> default_knots();

struct PhantomVolumes {
  Volume attenuation;
  LabelVolume knots;
};

PhantomVolumes generate(const LogPhantom& phantom);

// Pith (log axis) position in slice k; it drifts linearly in a seed-chosen direction.
Eigen::Vector2d pith_position(const LogPhantom& phantom, int k);

struct ScanSlice {
  SliceAngleSet angles;
  Eigen::VectorXd sinogram;
  double noise_variance = 0.0;
};

/// y_k = A_k x_k + eta_k for every slice of the volume.
std::vector<ScanSlice> simulate_scan(const Volume& volume, MatrixCache& cache,
                                     const RotationSchedule& sched, double noise_std,
                                     std::uint64_t seed, int threads = 1);

// Same measurement model with one explicit angle set per slice.
std::vector<ScanSlice> simulate_scan(const Volume& volume, MatrixCache& cache,
                                     const std::vector<SliceAngleSet>& angle_sets,
                                     double noise_std, std::uint64_t seed, int threads = 1);

// Deterministic per-slice seed derivation (splitmix64 of seed and slice index).
std::uint64_t slice_seed(std::uint64_t seed, std::uint64_t k);

}  // namespace seqtomo
