#include "seqtomo/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace seqtomo {

namespace {

constexpr std::uint64_t kReferenceSeedSalt = 0x5EED0F5E7ull;

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Mask restricted to one slice plane of a block.
Mask plane_of(const Mask& m, long plane, int z) { return m.segment(z * plane, plane); }

}  // namespace

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.resolve();
  cache_ = std::make_unique<MatrixCache>(cfg_.geometry, cfg_.grid, cfg_.threads);
}

const PhantomVolumes& Experiment::phantom() {
  if (!phantom_) phantom_ = generate(cfg_.phantom);
  return *phantom_;
}

SliceAngleSet Experiment::dense_angles() const {
  RotationSchedule dense;
  dense.scheme = Scheme::Fixed;
  dense.n_sources = cfg_.scan.reference_angles;
  dense.start_angle = 0.0;
  return base_angle_set(dense);
}

double Experiment::noise_std() {
  if (!noise_std_) {
    const auto a = cache_->get(dense_angles());
    const Volume& vol = phantom().attenuation;
    double peak = 0.0;
    for (int k = 0; k < vol.n_slices(); ++k) peak = std::max(peak, forward(*a, vol.slice(k)).cwiseAbs().maxCoeff());
    noise_std_ = cfg_.scan.noise_rel * peak;
  }
  return *noise_std_;
}

const ReducedBasis& Experiment::basis(long rank) {
  if (!full_basis_ || full_basis_->rank() < rank) {
    full_basis_ = build_reduced_basis(cfg_.prior, std::max(rank, cfg_.filter.reduced_rank), cfg_.threads);
    truncated_.clear();
  }
  if (rank == full_basis_->rank()) return *full_basis_;
  auto it = truncated_.find(rank);
  if (it == truncated_.end()) it = truncated_.emplace(rank, truncate(*full_basis_, rank)).first;
  return it->second;
}

std::vector<ScanSlice> Experiment::scan(const RotationSchedule& sched) {
  return simulate_scan(phantom().attenuation, *cache_, sched, noise_std(), cfg_.scan.seed, cfg_.threads);
}

const Eigen::VectorXd& Experiment::reference_slice(int k) {
  auto it = reference_.find(k);
  if (it != reference_.end()) return it->second;
  const Volume& vol = phantom().attenuation;
  if (k < 0 || k >= vol.n_slices()) throw std::out_of_range("reference: slice " + std::to_string(k) + " out of range");
  SliceAngleSet angles = dense_angles();
  angles.slice_index = k;
  const auto a = cache_->get(angles);
  const auto y = add_noise(forward(*a, vol.slice(k)), noise_std(), slice_seed(cfg_.scan.seed ^ kReferenceSeedSalt, k));
  const double alpha = cfg_.reference.alpha > 0.0 ? cfg_.reference.alpha : default_reference_alpha(*a, cfg_.reference.alpha_scale);
  auto res = tikhonov_cgls(*a, y.values, alpha, cfg_.reference.max_iter, cfg_.reference.tol);
  return reference_.emplace(k, std::move(res.x)).first->second;
}

Volume Experiment::reference(int first, int last) {
  Volume v;
  v.n = cfg_.grid.n;
  v.slices.resize(cfg_.grid.n_pixels(), last - first + 1);
  for (int k = first; k <= last; ++k) v.slices.col(k - first) = reference_slice(k);
  return v;
}

NoiseModel Experiment::noise_model(const std::vector<ScanSlice>& scans) {
  NoiseModel nm = cfg_.filter.noise;
  if (cfg_.filter.r_from_noise) {
    const double var = scans.empty() ? 0.0 : scans.front().noise_variance;
    nm.r_scalar = std::max(var, 1e-6);
  }
  return nm;
}

double Experiment::alpha_tik(const NoiseModel& noise) const {
  return cfg_.filter.alpha_from_r ? noise.r_scalar : cfg_.filter.pipeline.alpha_tik;
}

Volume Experiment::reconstruct(const std::vector<ScanSlice>& scans, long rank, const SliceCallback& on_slice) {
  const NoiseModel nm = noise_model(scans);
  PipelineOptions opts = cfg_.filter.pipeline;
  opts.alpha_tik = alpha_tik(nm);
  const auto recons = run_pipeline(scans, *cache_, basis(rank), nm, cfg_.filter.reg, opts, on_slice);
  Volume v;
  v.n = cfg_.grid.n;
  v.slices.resize(cfg_.grid.n_pixels(), static_cast<long>(recons.size()));
  for (std::size_t k = 0; k < recons.size(); ++k) v.slices.col(static_cast<long>(k)) = recons[k];
  return v;
}

Volume Experiment::tikhonov_per_slice(const std::vector<ScanSlice>& scans, double alpha) {
  TikhonovOptions opts = cfg_.reference;
  opts.alpha = alpha;
  return reference_volume(scans, *cache_, opts, cfg_.threads);
}

double Experiment::z_for(int n_sources) const {
  return cfg_.segment.z_auto ? default_z(n_sources) : cfg_.segment.dpa.z;
}

SegmentationResult Experiment::segment(const Volume& volume, int first, int n_sources) {
  DpaParams p = cfg_.segment.dpa;
  p.z = z_for(n_sources);
  const BlockShape shape{volume.n, cfg_.segment.block_depth};
  return segment_block(extract_block(volume, first, shape.depth), shape, p, cfg_.threads);
}

const SegmentationResult& Experiment::reference_segmentation() {
  if (!ref_seg_) {
    const int first = cfg_.eval_first();
    const Volume ref = reference(first, first + cfg_.segment.block_depth - 1);
    ref_seg_ = segment(ref, 0, cfg_.scan.reference_angles);
  }
  return *ref_seg_;
}

const OtsuResult& Experiment::reference_otsu() {
  if (!ref_otsu_) {
    const int first = cfg_.eval_first();
    const Volume ref = reference(first, first + cfg_.segment.block_depth - 1);
    ref_otsu_ = multi_otsu(extract_block(ref, 0, cfg_.segment.block_depth), cfg_.segment.otsu_classes);
  }
  return *ref_otsu_;
}

CellResult Experiment::evaluate(const Volume& recon, Scheme scheme, int n_sources, long rank) {
  const int first = cfg_.eval_first(), last = cfg_.eval_last();
  if (last >= recon.n_slices())
    throw std::out_of_range("evaluate: window ends at slice " + std::to_string(last) + " but the volume has " +
                            std::to_string(recon.n_slices()) + " slices");
  CellResult cell;
  cell.scheme = scheme;
  cell.n_sources = n_sources;
  cell.rank = rank;

  const bool with_dice = cfg_.eval.report_dice;
  SegmentationResult seg;
  if (with_dice) {
    seg = segment(recon, first, n_sources);
    const auto& ref = reference_segmentation();
    cell.block_dice_sq = dice_squared(seg.mask, ref.mask);
    const auto otsu = multi_otsu(extract_block(recon, first, cfg_.segment.block_depth), cfg_.segment.otsu_classes);
    cell.otsu_block_dice_sq = dice_squared(otsu.mask, reference_otsu().mask);
  }
  const long plane = cfg_.grid.n_pixels();
  std::vector<double> psnrs;
  for (int k = first; k <= last; ++k) {
    SliceMetrics m;
    m.slice = k;
    m.psnr_db = psnr(recon.slice(k), reference_slice(k));
    const int z = k - first;
    if (with_dice && z < cfg_.segment.block_depth) {
      const Mask a = plane_of(seg.mask, plane, z), b = plane_of(reference_segmentation().mask, plane, z);
      m.dice = dice(a, b);
      m.dice_sq = m.dice * m.dice;
    }
    psnrs.push_back(m.psnr_db);
    cell.rows.push_back(m);
  }
  cell.mean_psnr = block_average(psnrs, cfg_.eval.half_width, cfg_.eval.half_width);
  return cell;
}

CellResult Experiment::run_cell(Scheme scheme, int n_sources, std::optional<long> rank, std::ostream* telemetry) {
  RotationSchedule sched = cfg_.schedule;
  sched.scheme = scheme;
  sched.n_sources = n_sources;
  const long r = rank.value_or(cfg_.filter.reduced_rank);
  const auto scans = scan(sched);
  double total = 0.0;
  int steps = 0;
  const Volume recon = reconstruct(scans, r, [&](int k, const Eigen::VectorXd&, const SliceTelemetry& t) {
    if (k > 0) {
      total += t.seconds;
      ++steps;
    }
    if (telemetry)
      *telemetry << to_string(scheme) << " " << n_sources << " slice " << k << " seconds " << t.seconds
                 << " residual " << t.residual_norm << " ridge " << t.ridge << "\n";
  });
  CellResult cell = evaluate(recon, scheme, n_sources, r);
  cell.mean_seconds = steps ? total / steps : 0.0;
  return cell;
}

std::vector<std::pair<Scheme, int>> sweep_cells(const SweepSettings& sweep, std::vector<std::string>* skipped) {
  std::vector<std::pair<Scheme, int>> cells;
  for (Scheme s : sweep.schemes)
    for (int n : sweep.sources) {
      if (n < 1) throw std::invalid_argument("sweep: source counts must be >= 1");
      if (s == Scheme::QuarterDelta && 360 % n != 0) {
        if (skipped) skipped->push_back(to_string(s) + " with " + std::to_string(n) + " sources");
        continue;
      }
      cells.emplace_back(s, n);
    }
  return cells;
}

std::string metrics_csv(const std::vector<CellResult>& cells) {
  std::ostringstream out;
  out << "slice,scheme,n_sources,psnr_db,dice,dice_sq\n";
  for (const auto& c : cells)
    for (const auto& r : c.rows)
      out << r.slice << "," << to_string(c.scheme) << "," << c.n_sources << "," << fmt(r.psnr_db) << ","
          << fmt(r.dice) << "," << fmt(r.dice_sq) << "\n";
  return out.str();
}

std::string summary_csv(const std::vector<CellResult>& cells) {
  std::ostringstream out;
  out << "scheme,n_sources,rank,mean_psnr_db,block_dice_sq,otsu_block_dice_sq\n";
  for (const auto& c : cells)
    out << to_string(c.scheme) << "," << c.n_sources << "," << c.rank << "," << fmt(c.mean_psnr) << ","
        << fmt(c.block_dice_sq) << "," << fmt(c.otsu_block_dice_sq) << "\n";
  return out.str();
}

}  // namespace seqtomo
