#include "seqtomo/baseline.hpp"
#include "seqtomo/config.hpp"
#include "seqtomo/dpa.hpp"
#include "seqtomo/experiment.hpp"
#include "seqtomo/io.hpp"
#include "seqtomo/metrics.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace seqtomo;

namespace {

struct Globals {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<long> rank;
  std::optional<std::string> scheme;
  std::optional<int> sources;
};

class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what) : std::runtime_error(stage + ": " + what) {}
};

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? default_config() : load_config(g.config);
  if (g.seed) {
    cfg.scan.seed = *g.seed;
    cfg.schedule.rng_seed = *g.seed;
  }
  if (g.threads) cfg.threads = *g.threads;
  if (g.rank) cfg.filter.reduced_rank = *g.rank;
  if (g.scheme) cfg.schedule.scheme = parse_scheme(*g.scheme);
  if (g.sources) cfg.schedule.n_sources = *g.sources;
  cfg.resolve();
  return cfg;
}

io::Metadata base_meta(const ExperimentConfig& cfg, const std::string& kind) {
  return {{"kind", kind}, {"config", dump_config(cfg, -1)}};
}

void write_volume(const fs::path& path, const Volume& v, io::Metadata meta) {
  io::write_raw_f32(path, v.slices);
  meta["dtype"] = "float32";
  meta["n"] = std::to_string(v.n);
  meta["n_slices"] = std::to_string(v.n_slices());
  io::write_sidecar(path, meta);
}

Volume read_volume(const fs::path& path) {
  const auto meta = io::read_sidecar(path);
  auto get = [&](const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw std::runtime_error("sidecar of '" + path.string() + "' lacks '" + key + "'");
    return std::stol(it->second);
  };
  Volume v;
  v.n = static_cast<int>(get("n"));
  v.slices = io::read_raw_f32(path, static_cast<long>(v.n) * v.n, get("n_slices"));
  return v;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

void export_slices(const fs::path& dir, const std::string& stem, const Volume& v, const std::vector<int>& ks,
                   double lo, double hi) {
  for (int k : ks)
    if (k >= 0 && k < v.n_slices())
      io::write_pgm(dir / (stem + "_" + std::to_string(k) + ".pgm"), v.slice(k), v.n, lo, hi);
}

// Sinograms of one scan: one column per slice, angles kept in a text file.
void write_scan(const fs::path& dir, const std::vector<ScanSlice>& scans, const ExperimentConfig& cfg) {
  const long rows = scans.empty() ? 0 : scans.front().sinogram.size();
  Eigen::MatrixXd m(rows, static_cast<long>(scans.size()));
  std::ostringstream angles;
  angles.precision(17);
  for (std::size_t k = 0; k < scans.size(); ++k) {
    m.col(static_cast<long>(k)) = scans[k].sinogram;
    angles << k;
    for (double a : scans[k].angles.angles_deg) angles << " " << a;
    angles << "\n";
  }
  const fs::path path = dir / "sinogram.f64";
  io::write_raw_f64(path, m);
  auto meta = base_meta(cfg, "sinogram");
  meta["dtype"] = "float64";
  meta["rows"] = std::to_string(rows);
  meta["n_slices"] = std::to_string(scans.size());
  meta["noise_variance"] = [&] {
    std::ostringstream s;
    s.precision(17);
    s << (scans.empty() ? 0.0 : scans.front().noise_variance);
    return s.str();
  }();
  io::write_sidecar(path, meta);
  write_text(dir / "angles.txt", angles.str());
}

std::vector<ScanSlice> read_scan(const fs::path& dir) {
  const fs::path path = dir / "sinogram.f64";
  const auto meta = io::read_sidecar(path);
  const long rows = std::stol(meta.at("rows"));
  const long n_slices = std::stol(meta.at("n_slices"));
  const double var = std::stod(meta.at("noise_variance"));
  const Eigen::MatrixXd m = io::read_raw_f64(path, rows, n_slices);
  std::ifstream in(dir / "angles.txt");
  if (!in) throw std::runtime_error("missing '" + (dir / "angles.txt").string() + "'");
  std::vector<ScanSlice> scans(static_cast<std::size_t>(n_slices));
  std::string line;
  for (long k = 0; k < n_slices; ++k) {
    if (!std::getline(in, line)) throw std::runtime_error("angles.txt has fewer lines than slices");
    std::istringstream ls(line);
    long idx;
    ls >> idx;
    double a;
    while (ls >> a) scans[k].angles.angles_deg.push_back(a);
    scans[k].angles.slice_index = static_cast<int>(k);
    scans[k].sinogram = m.col(k);
    scans[k].noise_variance = var;
  }
  return scans;
}

int cmd_phantom(const Globals& g) {
  const auto cfg = resolve_config(g);
  fs::create_directories(g.out);
  const auto vols = generate(cfg.phantom);
  write_volume(fs::path(g.out) / "phantom.f32", vols.attenuation, base_meta(cfg, "phantom"));
  const fs::path knots = fs::path(g.out) / "knots.u8";
  io::write_raw_u8(knots, vols.knots.labels);
  auto meta = base_meta(cfg, "knot_labels");
  meta["dtype"] = "uint8";
  meta["n"] = std::to_string(vols.knots.n);
  meta["n_slices"] = std::to_string(vols.knots.n_slices());
  io::write_sidecar(knots, meta);
  export_slices(g.out, "phantom", vols.attenuation, {0, cfg.eval_first(), cfg.phantom.n_slices - 1}, 0.0,
                cfg.phantom.knot_level);
  std::cout << "phantom: " << vols.attenuation.n_slices() << " slices of " << cfg.grid.n << "x" << cfg.grid.n
            << " written to " << g.out << "\n";
  return 0;
}

int cmd_scan(const Globals& g) {
  const auto cfg = resolve_config(g);
  fs::create_directories(g.out);
  Experiment ex(cfg);
  const auto scans = ex.scan(cfg.schedule);
  write_scan(g.out, scans, cfg);
  std::cout << "scan: " << scans.size() << " slices, " << cfg.schedule.n_sources << " sources, scheme "
            << to_string(cfg.schedule.scheme) << ", noise std " << ex.noise_std() << "\n";
  return 0;
}

int cmd_reconstruct(const Globals& g, const std::string& method, const std::string& input) {
  const auto cfg = resolve_config(g);
  fs::create_directories(g.out);
  Experiment ex(cfg);
  auto meta = base_meta(cfg, "reconstruction");
  meta["method"] = method;
  Volume v;
  if (method == "reference") {
    v = ex.reference(0, cfg.phantom.n_slices - 1);
  } else {
    const auto scans = input.empty() ? ex.scan(cfg.schedule) : read_scan(input);
    if (method == "drkf") {
      std::ofstream log(fs::path(g.out) / "telemetry.log");
      v = ex.reconstruct(scans, cfg.filter.reduced_rank, [&](int k, const Eigen::VectorXd&, const SliceTelemetry& t) {
        log << "slice " << k << " seconds " << t.seconds << " residual " << t.residual_norm << " ridge " << t.ridge
            << "\n";
      });
    } else if (method == "tikhonov") {
      v = ex.tikhonov_per_slice(scans);
    } else {
      throw StageError("reconstruct", "unknown method '" + method + "' (drkf, tikhonov, reference)");
    }
  }
  write_volume(fs::path(g.out) / ("recon_" + method + ".f32"), v, meta);
  export_slices(g.out, "recon_" + method, v, {0, cfg.eval_first(), v.n_slices() - 1}, 0.0, cfg.phantom.knot_level);
  std::cout << "reconstruct: " << method << ", " << v.n_slices() << " slices written to " << g.out << "\n";
  return 0;
}

int cmd_segment(const Globals& g, const std::string& input, const std::string& method, std::optional<int> first) {
  const auto cfg = resolve_config(g);
  fs::create_directories(g.out);
  const Volume v = read_volume(input);
  const int depth = cfg.segment.block_depth;
  const int start = first.value_or(cfg.eval_first());
  if (start < 0 || start + depth > v.n_slices())
    throw StageError("segment", "block [" + std::to_string(start) + ", " + std::to_string(start + depth) +
                                    ") outside " + std::to_string(v.n_slices()) + " slices");
  const Eigen::VectorXd block = extract_block(v, start, depth);
  Mask mask;
  std::string report;
  if (method == "dpa") {
    DpaParams p = cfg.segment.dpa;
    p.z = cfg.segment.z_auto ? default_z(cfg.schedule.n_sources) : p.z;
    auto res = segment_block(block, {v.n, depth}, p, cfg.threads);
    mask = std::move(res.mask);
    report = std::move(res.report);
  } else if (method == "otsu") {
    auto res = multi_otsu(block, cfg.segment.otsu_classes);
    mask = std::move(res.mask);
    std::ostringstream r;
    r << "otsu lo " << res.lo << " hi " << res.hi << " thresholds";
    for (int t : res.thresholds) r << " " << t;
    r << "\n";
    report = r.str();
  } else {
    throw StageError("segment", "unknown method '" + method + "' (dpa, otsu)");
  }
  const fs::path path = fs::path(g.out) / ("mask_" + method + ".u8");
  io::write_raw_u8(path, Eigen::Map<const LabelMatrix>(mask.data(), static_cast<long>(v.n) * v.n, depth));
  auto meta = base_meta(cfg, "mask");
  meta["method"] = method;
  meta["dtype"] = "uint8";
  meta["n"] = std::to_string(v.n);
  meta["n_slices"] = std::to_string(depth);
  meta["first_slice"] = std::to_string(start);
  meta["source"] = input;
  io::write_sidecar(path, meta);
  write_text(fs::path(g.out) / ("report_" + method + ".txt"), report);
  std::cout << "segment: " << method << " mask of slices " << start << ".." << start + depth - 1 << " has "
            << mask.cast<long>().sum() << " voxels\n";
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& input) {
  const auto cfg = resolve_config(g);
  fs::create_directories(g.out);
  Experiment ex(cfg);
  const Volume v = read_volume(input);
  const auto cell = ex.evaluate(v, cfg.schedule.scheme, cfg.schedule.n_sources, cfg.filter.reduced_rank);
  write_text(fs::path(g.out) / "metrics.csv", metrics_csv({cell}));
  write_text(fs::path(g.out) / "summary.csv", summary_csv({cell}));
  std::cout << "evaluate: mean PSNR " << cell.mean_psnr << " dB over slices " << cfg.eval_first() << ".."
            << cfg.eval_last() << ", block Dice^2 " << cell.block_dice_sq << "\n";
  return 0;
}

int cmd_sweep(const Globals& g) {
  const auto cfg = resolve_config(g);
  fs::create_directories(g.out);
  Experiment ex(cfg);
  std::vector<std::string> skipped;
  const auto cells = sweep_cells(cfg.sweep, &skipped);
  for (const auto& s : skipped) std::cerr << "sweep: skipping " << s << " (spacing 360/n is not an integer)\n";
  std::ofstream log(fs::path(g.out) / "telemetry.log");
  std::vector<CellResult> results;
  for (const auto& [scheme, n] : cells) {
    results.push_back(ex.run_cell(scheme, n, std::nullopt, &log));
    const auto& c = results.back();
    std::cout << "sweep: " << to_string(scheme) << " " << n << " sources: PSNR " << c.mean_psnr << " dB, Dice^2 "
              << c.block_dice_sq << "\n";
  }
  write_text(fs::path(g.out) / "metrics.csv", metrics_csv(results));
  write_text(fs::path(g.out) / "summary.csv", summary_csv(results));
  write_text(fs::path(g.out) / "config.resolved.json", dump_config(cfg) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential sparse-angle tomography: simulate, reconstruct, segment, evaluate"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--seed", g.seed, "Seed for noise and random schedules");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--reduced-rank", g.rank, "Rank of the prior basis")->check(CLI::PositiveNumber);
  app.add_option("--scheme", g.scheme, "fixed, one-degree, quarter-delta or random");
  app.add_option("--sources", g.sources, "Sources per slice")->check(CLI::PositiveNumber);

  auto* phantom = app.add_subcommand("phantom", "Generate the log phantom and knot labels");
  auto* scan = app.add_subcommand("scan", "Simulate the sequential sparse-angle scan");

  auto* recon = app.add_subcommand("reconstruct", "Reconstruct a volume");
  std::string method = "drkf", input;
  recon->add_option("--method", method, "drkf, tikhonov or reference");
  recon->add_option("--input", input, "Scan directory written by 'scan' (default: simulate)");

  auto* segment = app.add_subcommand("segment", "Segment one block of a reconstructed volume");
  std::string seg_input, seg_method = "dpa";
  std::optional<int> first;
  segment->add_option("--input", seg_input, "Volume file (.f32 with sidecar)")->required();
  segment->add_option("--method", seg_method, "dpa or otsu");
  segment->add_option("--first", first, "First slice of the block (default: burn-in)");

  auto* evaluate = app.add_subcommand("evaluate", "PSNR and Dice against the dense-angle reference");
  std::string eval_input;
  evaluate->add_option("--input", eval_input, "Reconstructed volume")->required();

  auto* sweep = app.add_subcommand("sweep", "Schemes x source counts comparison tables");

  CLI11_PARSE(app, argc, argv);

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (phantom->parsed()) return cmd_phantom(g);
    if (scan->parsed()) return cmd_scan(g);
    if (recon->parsed()) return cmd_reconstruct(g, method, input);
    if (segment->parsed()) return cmd_segment(g, seg_input, seg_method, first);
    if (evaluate->parsed()) return cmd_evaluate(g, eval_input);
    if (sweep->parsed()) return cmd_sweep(g);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << stage << ": " << e.what() << "\n";
    return 1;
  }
  return 1;
}
