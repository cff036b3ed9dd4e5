#pragma once

#include "seqtomo/config.hpp"
#include "seqtomo/dpa.hpp"
#include "seqtomo/drkf.hpp"
#include "seqtomo/metrics.hpp"

#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace seqtomo {

struct SliceMetrics {
  int slice = 0;
  double psnr_db = 0.0;
  double dice = 0.0;
  double dice_sq = 0.0;
};

struct CellResult {
  Scheme scheme = Scheme::QuarterDelta;
  int n_sources = 0;
  long rank = 0;
  std::vector<SliceMetrics> rows;  // evaluation window only
  double mean_psnr = 0.0;
  double block_dice_sq = 0.0;       // DPA, whole block
  double otsu_block_dice_sq = 0.0;  // multi-Otsu, whole block
  double mean_seconds = 0.0;        // per filter step, not written to tables
};

/// Shared state of one configuration: phantom, matrices, noise level, prior basis and the
/// dense-angle reference. Everything is built lazily and kept.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  MatrixCache& cache() { return *cache_; }

  const PhantomVolumes& phantom();
  // noise_rel times the peak of the noiseless dense-angle sinograms over all slices.
  double noise_std();
  const ReducedBasis& basis(long rank);

  std::vector<ScanSlice> scan(const RotationSchedule& sched);
  SliceAngleSet dense_angles() const;
  const Eigen::VectorXd& reference_slice(int k);
  Volume reference(int first, int last);

  NoiseModel noise_model(const std::vector<ScanSlice>& scans);
  double alpha_tik(const NoiseModel& noise) const;
  Volume reconstruct(const std::vector<ScanSlice>& scans, long rank, const SliceCallback& on_slice = {});
  Volume tikhonov_per_slice(const std::vector<ScanSlice>& scans, double alpha = 0.0);

  double z_for(int n_sources) const;
  SegmentationResult segment(const Volume& volume, int first, int n_sources);
  // Segmentation of the reference over the evaluation block.
  const SegmentationResult& reference_segmentation();
  const OtsuResult& reference_otsu();

  CellResult evaluate(const Volume& recon, Scheme scheme, int n_sources, long rank);
  CellResult run_cell(Scheme scheme, int n_sources, std::optional<long> rank = std::nullopt,
                      std::ostream* telemetry = nullptr);

 private:
  ExperimentConfig cfg_;
  std::unique_ptr<MatrixCache> cache_;
  std::optional<PhantomVolumes> phantom_;
  std::optional<double> noise_std_;
  std::optional<ReducedBasis> full_basis_;
  std::map<long, ReducedBasis> truncated_;
  std::map<int, Eigen::VectorXd> reference_;
  std::optional<SegmentationResult> ref_seg_;
  std::optional<OtsuResult> ref_otsu_;
};

// Valid (scheme, sources) cells of a sweep; quarter-delta needs 360 % n == 0.
std::vector<std::pair<Scheme, int>> sweep_cells(const SweepSettings& sweep, std::vector<std::string>* skipped = nullptr);

std::string metrics_csv(const std::vector<CellResult>& cells);
std::string summary_csv(const std::vector<CellResult>& cells);

}  // namespace seqtomo
