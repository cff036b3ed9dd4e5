#pragma once

#include "seqtomo/baseline.hpp"
#include "seqtomo/dpa.hpp"
#include "seqtomo/drkf.hpp"
#include "seqtomo/geometry.hpp"
#include "seqtomo/phantom.hpp"
#include "seqtomo/prior.hpp"
#include "seqtomo/projector.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace seqtomo {

struct ScanSettings {
  double noise_rel = 0.01;  // noise std relative to the peak of the clean dense sinogram
  std::uint64_t seed = 11;
  int reference_angles = 360;
};

struct FilterSettings {
  long reduced_rank = 3000;
  NoiseModel noise;
  bool r_from_noise = true;  // r_scalar := simulated noise variance
  RegularizerSchedule reg;
  PipelineOptions pipeline;
  bool alpha_from_r = true;  // alpha_tik := r_scalar
};

struct SegmentSettings {
  DpaParams dpa;
  bool z_auto = true;  // Z from the source count
  int block_depth = 11;
  int otsu_classes = 3;
};

struct EvalSettings {
  int burn_in = 50;
  int half_width = 5;
  bool report_dice = true;
};

struct SweepSettings {
  std::vector<Scheme> schemes{Scheme::Fixed, Scheme::OneDegree, Scheme::QuarterDelta, Scheme::RandomUniform};
  std::vector<int> sources{1, 3, 5, 7, 9, 11, 13, 15};
};

/// Everything a run needs. The phantom's grid always mirrors `grid`, as does the prior's.
struct ExperimentConfig {
  FanBeamGeometry geometry;
  ImageGrid grid;
  RotationSchedule schedule;
  LogPhantom phantom;
  PriorSpec prior;
  ScanSettings scan;
  FilterSettings filter;
  TikhonovOptions reference;
  SegmentSettings segment;
  EvalSettings eval;
  SweepSettings sweep;
  int threads = 1;

  // Copies grid into the phantom and prior and checks every section.
  void resolve();
  int eval_first() const { return eval.burn_in; }
  int eval_last() const { return eval.burn_in + 2 * eval.half_width; }
};

ExperimentConfig default_config();

// JSON text with one object per section; missing keys keep their defaults, unknown keys
// are rejected.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string dump_config(const ExperimentConfig& cfg, int indent = 2);

}  // namespace seqtomo
