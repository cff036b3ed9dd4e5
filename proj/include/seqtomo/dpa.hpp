#pragma once

#include "seqtomo/metrics.hpp"
#include "seqtomo/phantom.hpp"

#include <Eigen/Dense>

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace seqtomo {

/// n x n x depth block of voxels. Voxel v = z * n * n + p with p the in-slice pixel index.
struct BlockShape {
  int n = 0;
  int depth = 0;

  long size() const { return static_cast<long>(n) * n * depth; }
  long plane() const { return static_cast<long>(n) * n; }
};

struct DpaParams {
  double noise_mean = 0.033;  // density floor
  double noise_std = 0.003;
  int k_hat = 200;
  double z = 3.4;
  bool constant_zeta = false;  // zeta = noise_std / noise_mean everywhere
  bool halo = true;
  bool mask_background = true;
  int background_radius = 3;
  double background_factor = 2.0;

  void validate() const;
};

// 3.4 below seven sources, 2.4 otherwise.
double default_z(int n_sources);

struct GridOffset {
  int dz, dy, dx;
  long d2;
  long linear;
};

// Every offset reachable inside the block, sorted by (squared distance, linear offset).
std::shared_ptr<const std::vector<GridOffset>> sorted_offsets(const BlockShape& shape);

/// Densities and k-nearest neighbourhoods of the active (non-background) voxels. Arrays
/// named per-voxel cover the whole block; compact arrays run over `voxels`.
struct DensityField {
  BlockShape shape;
  int k_hat = 0;
  Eigen::VectorXd rho, log_density, zeta, g;  // per voxel
  std::vector<long> voxels;                   // active voxels, ascending
  std::vector<int> compact;                   // per voxel: position in `voxels` or -1
  int kk = 0;                                 // neighbours stored per active voxel
  std::vector<int> neighbours;                // compact ids, kk per voxel, nearest first
  std::shared_ptr<const std::vector<GridOffset>> offsets;

  long n_active() const { return static_cast<long>(voxels.size()); }
  const int* neighbours_of(long c) const { return neighbours.data() + c * kk; }
  // Strict order on g with ties to the lower voxel index.
  bool higher(long ci, long cj) const {
    const double gi = g[voxels[ci]], gj = g[voxels[cj]];
    return gi > gj || (gi == gj && voxels[ci] < voxels[cj]);
  }
};

// Background voxels: mean intensity over the ball of the given radius below threshold.
std::vector<std::uint8_t> background_mask(const Eigen::VectorXd& values, const BlockShape& shape, int radius,
                                          double threshold, int threads = 1);

DensityField make_density_field(const Eigen::VectorXd& values, const BlockShape& shape, const DpaParams& params,
                                int threads = 1);

/// Heuristic-1 centres and the chained assignment of every other active voxel to the
/// cluster of its nearest higher-g voxel.
struct Preliminary {
  std::vector<int> centers;  // compact ids, descending g
  std::vector<int> labels;   // per compact voxel, index into centers
  bool degenerate = false;   // no active voxel, or a flat field
};

Preliminary find_centers(const DensityField& field);

struct Saddle {
  int voxel = -1;  // compact id
  double log_density = 0.0;
  double zeta = 0.0;
  double g = 0.0;
};

// Keyed by (a, b) with a < b; lookups through saddle_between are symmetric.
using SaddleTable = std::map<std::pair<int, int>, Saddle>;

const Saddle* saddle_between(const SaddleTable& table, int a, int b);

SaddleTable find_saddles(const DensityField& field, const Preliminary& pre);

struct MergeDecision {
  long kept = -1;     // voxel of the surviving centre
  long absorbed = -1; // voxel of the absorbed centre
  double saddle_log_density = 0.0;
};

/// Final clusters. labels are per voxel: -1 for halo and background, 0..C-1 otherwise.
struct SegmentationMap {
  BlockShape shape;
  std::vector<int> labels;
  std::vector<long> centers;  // voxel of each cluster centre
  SaddleTable saddles;        // between final clusters
  std::vector<MergeDecision> merges;
  bool degenerate = false;

  int n_clusters() const { return static_cast<int>(centers.size()); }
};

/// Heuristic 3. Repeatedly merges the first pair, in decreasing saddle log-density, for
/// which either peak satisfies log rho_c - log rho_cc' < Z (zeta_c + zeta_cc').
SegmentationMap merge_clusters(const DensityField& field, const Preliminary& pre, const SaddleTable& saddles,
                               double z);

// Demotes voxels whose g lies below the highest saddle g of their cluster.
SegmentationMap assign_halo(const DensityField& field, const SegmentationMap& map);

// 1 on every voxel of a cluster, 0 on halo and background.
Mask finalize(const SegmentationMap& map);

struct SegmentationResult {
  Mask mask;
  SegmentationMap map;
  std::string report;
};

SegmentationResult segment_block(const Eigen::VectorXd& values, const BlockShape& shape, const DpaParams& params,
                                 int threads = 1);

// Slices [first, first + depth) of a volume, slice-major.
Eigen::VectorXd extract_block(const Volume& volume, int first, int depth);

struct OtsuResult {
  std::vector<int> thresholds;  // bin index where each class above the first starts
  double lo = 0.0, hi = 0.0;
  double objective = 0.0;  // sum over classes of (bin-sum)^2 / count
  Mask mask;               // top class
};

std::vector<long> histogram(const Eigen::VectorXd& values, int bins, double lo, double hi);

// Exact maximizer of the between-class variance over all threshold tuples (dynamic programming).
OtsuResult multi_otsu(const Eigen::VectorXd& values, int n_classes = 3, int bins = 256);

std::string format_report(const DensityField& field, const SegmentationMap& map);

}  // namespace seqtomo
