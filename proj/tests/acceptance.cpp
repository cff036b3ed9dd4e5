// Acceptance run: one PASS/FAIL line per criterion. Optional arguments select criteria by number.

#include "seqtomo/baseline.hpp"
#include "seqtomo/config.hpp"
#include "seqtomo/drkf.hpp"
#include "seqtomo/experiment.hpp"
#include "seqtomo/prior.hpp"
#include "seqtomo/projector.hpp"

#include "oracles.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace seqtomo;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Verdict& v, double seconds) {
  std::cout << "criterion " << id << " " << (v.pass ? "PASS" : "FAIL") << "  " << name << ": " << v.detail << " ["
            << fmt("%.1f", seconds) << " s]" << std::endl;
  if (!v.pass) ++failures;
}

Eigen::VectorXd randn(long n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  Eigen::VectorXd v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

RotationSchedule schedule_of(const ExperimentConfig& cfg, Scheme s, int n) {
  RotationSchedule sched = cfg.schedule;
  sched.scheme = s;
  sched.n_sources = n;
  return sched;
}

Verdict adjoint_identity() {
  const ExperimentConfig cfg = default_config();
  MatrixCache cache(cfg.geometry, cfg.grid);
  std::vector<SliceAngleSet> sets;
  for (auto [s, n] : {std::pair{Scheme::QuarterDelta, 3}, {Scheme::QuarterDelta, 5}, {Scheme::RandomUniform, 3},
                      {Scheme::OneDegree, 9}})
    for (int k : {0, 1}) sets.push_back(angles_for_slice(schedule_of(cfg, s, n), k));

  std::mt19937_64 rng(101);
  double worst = 0.0;
  int pairs = 0;
  for (const auto& set : sets) {
    const auto a = cache.get(set);
    for (int t = 0; t < 100; ++t) {
      const Eigen::VectorXd x = randn(a->cols(), rng), y = randn(a->rows(), rng);
      const Eigen::VectorXd ax = forward(*a, x);
      const double err = std::abs(ax.dot(y) - x.dot(adjoint(*a, y))) / (ax.norm() * y.norm());
      worst = std::max(worst, err);
      ++pairs;
    }
  }
  return {worst < 1e-10, "worst relative gap " + fmt("%.3g", worst) + " over " + std::to_string(pairs) + " pairs on " +
                             std::to_string(sets.size()) + " matrices"};
}

Verdict kronecker_svd() {
  PriorSpec spec = default_config().prior;
  spec.grid.n = 16;
  spec.grid.pixel_size = 25.0;
  spec.grid.fov_radius = 195.0;
  const Eigen::MatrixXd cov = dense_covariance(spec);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(cov, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();

  double worst_sv = 0.0, worst_pp = 0.0;
  std::string ranks;
  // Full rank, and truncations that fall in a gap of the spectrum.
  for (long r : {256L, 100L, 30L}) {
    long cut = r;
    while (cut < 256 && sv[cut - 1] - sv[cut] <= 1e-9 * sv[0]) ++cut;
    const ReducedBasis b = build_reduced_basis(spec, cut);
    worst_sv = std::max(worst_sv, (b.singular_values - sv.head(cut)).norm() / sv.head(cut).norm());
    const Eigen::MatrixXd ref = svd.matrixU().leftCols(cut) * sv.head(cut).asDiagonal() *
                                svd.matrixU().leftCols(cut).transpose();
    worst_pp = std::max(worst_pp, (Eigen::MatrixXd(b.P * b.P.transpose()) - ref).norm() / ref.norm());
    ranks += (ranks.empty() ? "" : ",") + std::to_string(cut);
  }
  return {worst_sv < 1e-8 && worst_pp < 1e-8, "ranks " + ranks + ": singular values " + fmt("%.3g", worst_sv) +
                                                  ", P P^T " + fmt("%.3g", worst_pp) + " (Frobenius relative)"};
}

Verdict rank_ratio() {
  const ExperimentConfig cfg = default_config();
  const double ratio = static_cast<double>(cfg.filter.reduced_rank) / static_cast<double>(cfg.grid.n_pixels());
  return {ratio >= 0.180 && ratio <= 0.186, "r / n_pixels = " + std::to_string(cfg.filter.reduced_rank) + " / " +
                                                std::to_string(cfg.grid.n_pixels()) + " = " + fmt("%.4f", ratio)};
}

Verdict drkf_oracle() {
  ImageGrid grid;
  grid.n = 16;
  grid.pixel_size = 25.0;
  grid.fov_radius = 195.0;
  PriorSpec spec = default_config().prior;
  spec.grid = grid;
  const ReducedBasis basis = build_reduced_basis(spec, 256);
  SliceAngleSet dense;
  for (int d = 0; d < 360; ++d) dense.angles_deg.push_back(d);
  const auto a = build_matrix(FanBeamGeometry{}, grid, dense);
  const Eigen::MatrixXd ad(a.matrix);

  std::mt19937_64 rng(404);
  const Eigen::VectorXd x0 = basis.P * randn(256, rng);
  const Eigen::VectorXd x1 = x0 + 0.2 * (basis.P * randn(256, rng));
  const double sd = 0.01 * (ad * x0).cwiseAbs().maxCoeff();
  const Eigen::VectorXd y0 = add_noise(ad * x0, sd, 1).values, y1 = add_noise(ad * x1, sd, 2).values;

  NoiseModel nm;
  nm.q_scalar = 1e6;
  nm.r_scalar = sd * sd;
  RegularizerSchedule reg;
  reg.slope = 0.0;
  const FilterState s0 = init_first_slice(a, y0, basis, nm.r_scalar, nm);
  const Prediction pred = predict_reduced(s0, basis, nm);
  const FilterState s1 = update(s0, pred, a, y1, basis, nm, reg);
  const Eigen::VectorXd x_filter = s1.reconstruction(basis);

  // Closed-form Tikhonov solve in the alpha -> 0 limit: the least-squares image.
  const Eigen::MatrixXd ata = ad.transpose() * ad;
  const Eigen::VectorXd x_ls = ata.ldlt().solve(ad.transpose() * y1);
  const double err = (x_filter - x_ls).norm() / x_ls.norm();
  return {err < 1e-4, "relative difference to the dense closed form " + fmt("%.3g", err)};
}

Verdict dpa_equivalence() {
  std::mt19937_64 rng(808);
  const BlockShape shape{16, 3};
  int center_mismatch = 0, merge_mismatch = 0, merges = 0, centers = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd v = oracle::random_field(16, 3, rng);
    DpaParams p;
    p.k_hat = 20;
    p.z = 1.0;
    p.noise_mean = 0.02;
    p.noise_std = 0.01;
    p.mask_background = false;
    const DensityField f = make_density_field(v, shape, p);
    const Preliminary pre = find_centers(f);
    const SegmentationMap map = merge_clusters(f, pre, find_saddles(f, pre), p.z);
    const oracle::BruteDpa ref = oracle::brute_dpa(v, 16, 3, p);

    std::vector<long> got;
    for (int c : pre.centers) got.push_back(f.voxels[c]);
    center_mismatch += got != ref.centers;
    std::vector<std::pair<long, long>> decided;
    for (const auto& m : map.merges) decided.emplace_back(m.kept, m.absorbed);
    merge_mismatch += decided != ref.merges;
    centers += static_cast<int>(ref.centers.size());
    merges += static_cast<int>(ref.merges.size());
  }
  return {center_mismatch == 0 && merge_mismatch == 0 && merges > 0,
          std::to_string(center_mismatch) + " centre-set and " + std::to_string(merge_mismatch) +
              " merge-sequence mismatches on 20 fields (" + std::to_string(centers) + " centres, " +
              std::to_string(merges) + " merges)"};
}

struct Sweep {
  std::map<std::pair<Scheme, int>, CellResult> r3000;
  std::optional<CellResult> r1000;
  double c5_seconds = 0.0;
  double max_slice_seconds = 0.0;
  double dpa_block_seconds = 0.0;
  std::string error;
};

Sweep run_default_sweep(const std::set<int>& wanted) {
  Sweep out;
  Experiment ex(default_config());
  auto cell = [&](Scheme s, int n, long rank) {
    std::ostringstream tel;
    const CellResult c = ex.run_cell(s, n, rank, &tel);
    std::istringstream in(tel.str());
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream f(line);
      std::string scheme, word;
      int src, k;
      double secs;
      f >> scheme >> src >> word >> k >> word >> secs;
      if (k > 0 && rank == 3000) out.max_slice_seconds = std::max(out.max_slice_seconds, secs);
    }
    std::cout << "  cell " << to_string(s) << " " << n << " sources r=" << rank << ": PSNR " << fmt("%.3f", c.mean_psnr)
              << " dB, DPA Dice^2 " << fmt("%.4f", c.block_dice_sq) << ", Otsu Dice^2 "
              << fmt("%.4f", c.otsu_block_dice_sq) << ", " << fmt("%.2f", c.mean_seconds) << " s/slice" << std::endl;
    return c;
  };

  const auto t0 = Clock::now();
  for (auto [s, n] : {std::pair{Scheme::QuarterDelta, 3}, {Scheme::OneDegree, 3}, {Scheme::Fixed, 3},
                      {Scheme::RandomUniform, 3}})
    out.r3000[{s, n}] = cell(s, n, 3000);
  out.c5_seconds = since(t0);
  if (wanted.count(6) || wanted.count(9))
    for (int n : {1, 5, 9}) out.r3000[{Scheme::QuarterDelta, n}] = cell(Scheme::QuarterDelta, n, 3000);
  if (wanted.count(7)) out.r1000 = cell(Scheme::QuarterDelta, 3, 1000);

  const ExperimentConfig& cfg = ex.config();
  const Volume ref = ex.reference(cfg.eval_first(), cfg.eval_first() + 9);
  DpaParams p = cfg.segment.dpa;
  p.z = default_z(5);
  const auto t1 = Clock::now();
  const auto seg = segment_block(extract_block(ref, 0, 10), BlockShape{ref.n, 10}, p, cfg.threads);
  out.dpa_block_seconds = since(t1);
  std::cout << "  DPA on a 10-slice block: " << seg.map.n_clusters() << " clusters, "
            << fmt("%.2f", out.dpa_block_seconds) << " s" << std::endl;
  return out;
}

Verdict schedule_ordering(const Sweep& s) {
  const double qd = s.r3000.at({Scheme::QuarterDelta, 3}).mean_psnr;
  const double od = s.r3000.at({Scheme::OneDegree, 3}).mean_psnr;
  const double fx = s.r3000.at({Scheme::Fixed, 3}).mean_psnr;
  const double rn = s.r3000.at({Scheme::RandomUniform, 3}).mean_psnr;
  const bool ok = qd - od >= 1.0 && od - fx >= 1.0 && std::abs(rn - qd) <= 1.0 && s.c5_seconds < 15 * 60;
  return {ok, "quarter-delta " + fmt("%.2f", qd) + ", one-degree " + fmt("%.2f", od) + ", fixed " + fmt("%.2f", fx) +
                  ", random " + fmt("%.2f", rn) + " dB; four cells in " + fmt("%.0f", s.c5_seconds) + " s"};
}

Verdict diminishing_returns(const Sweep& s) {
  const double p1 = s.r3000.at({Scheme::QuarterDelta, 1}).mean_psnr;
  const double p5 = s.r3000.at({Scheme::QuarterDelta, 5}).mean_psnr;
  const double p9 = s.r3000.at({Scheme::QuarterDelta, 9}).mean_psnr;
  const double g15 = p5 - p1, g59 = p9 - p5;
  return {g15 > 0.0 && g59 < 0.5 * g15, "gain 1->5 " + fmt("%.2f", g15) + " dB, 5->9 " + fmt("%.2f", g59) + " dB"};
}

Verdict rank_tradeoff(const Sweep& s) {
  const double hi = s.r3000.at({Scheme::QuarterDelta, 3}).mean_psnr, lo = s.r1000->mean_psnr;
  return {hi - lo >= 2.0, "r=3000 " + fmt("%.2f", hi) + " dB vs r=1000 " + fmt("%.2f", lo) + " dB"};
}

Verdict segmentation_utility(const Sweep& s) {
  const CellResult& c5 = s.r3000.at({Scheme::QuarterDelta, 5});
  const CellResult& c1 = s.r3000.at({Scheme::QuarterDelta, 1});
  const bool ok = c5.block_dice_sq - c1.block_dice_sq >= 0.1 && c5.block_dice_sq >= c5.otsu_block_dice_sq - 0.05;
  return {ok, "DPA Dice^2 5 sources " + fmt("%.4f", c5.block_dice_sq) + ", 1 source " +
                  fmt("%.4f", c1.block_dice_sq) + ", Otsu at 5 sources " + fmt("%.4f", c5.otsu_block_dice_sq)};
}

Verdict performance(const Sweep& s) {
  return {s.max_slice_seconds < 60.0 && s.dpa_block_seconds < 5.0,
          "slowest DrKF step " + fmt("%.2f", s.max_slice_seconds) + " s, DPA block " +
              fmt("%.2f", s.dpa_block_seconds) + " s"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict determinism() {
  const fs::path root = fs::current_path() / "acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  // Same physical field of view on a 64 x 64 grid, rank near 18% of the pixel count.
  const fs::path cfg = root / "small.json";
  {
    std::ofstream out(cfg);
    out << R"({"grid": {"n": 64, "pixel_size": 6.25}, "phantom": {"pith_drift": 0.05},
               "filter": {"reduced_rank": 750}})";
  }
  std::vector<std::string> tables;
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string("\"") + SEQTOMO_CLI + "\" --config \"" + cfg.string() + "\" --seed 5 --out \"" +
                            (root / run).string() + "\" sweep > \"" + (root / run).string() + ".log\" 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, std::string("sweep run ") + run + " failed, see its log"};
    tables.push_back(slurp(root / run / "metrics.csv"));
    tables.push_back(slurp(root / run / "summary.csv"));
  }
  const bool same = tables[0] == tables[2] && tables[1] == tables[3] && !tables[0].empty();
  const long lines = std::count(tables[0].begin(), tables[0].end(), '\n');
  return {same, std::string(same ? "identical" : "different") + " metrics.csv (" + std::to_string(lines) +
                    " lines) and summary.csv over two 64x64 sweeps"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  if (wanted.empty())
    for (int i = 1; i <= 11; ++i) wanted.insert(i);

  // limit > 0 adds the stated runtime bound to the verdict.
  auto run = [&](int id, const std::string& name, const std::function<Verdict()>& f, double limit = 0.0) {
    if (!wanted.count(id)) return;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = since(t0);
    if (limit > 0.0 && secs >= limit) {
      v.pass = false;
      v.detail += "; exceeded the " + fmt("%.0f", limit) + " s limit";
    }
    report(id, name, v, secs);
  };

  run(1, "adjoint identity", adjoint_identity, 10.0);
  run(2, "Kronecker SVD correctness", kronecker_svd, 5.0);
  run(3, "reduced-rank ratio", rank_ratio);
  run(4, "DrKF oracle equivalence", drkf_oracle, 10.0);

  const std::set<int> sweep_ids{5, 6, 7, 9, 11};
  bool need_sweep = false;
  for (int id : sweep_ids) need_sweep |= wanted.count(id) > 0;
  if (need_sweep) {
    const auto t0 = Clock::now();
    std::optional<Sweep> sweep;
    std::string error;
    try {
      sweep = run_default_sweep(wanted);
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double secs = since(t0);
    auto judged = [&](int id, const std::string& name, Verdict (*f)(const Sweep&)) {
      run(id, name, [&]() -> Verdict {
        if (!sweep) return {false, "default sweep failed: " + error};
        return f(*sweep);
      });
    };
    std::cout << "  default-phantom runs took " << fmt("%.0f", secs) << " s" << std::endl;
    judged(5, "schedule ordering", schedule_ordering);
    judged(6, "diminishing returns in sources", diminishing_returns);
    judged(7, "rank trade-off", rank_tradeoff);
    judged(9, "segmentation utility", segmentation_utility);
    judged(11, "performance envelope", performance);
  }
  run(8, "DPA brute-force equivalence", dpa_equivalence, 30.0);
  run(10, "determinism", determinism);

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
