#include "seqtomo/config.hpp"

#include "json.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace seqtomo {

using nlohmann::json;

namespace {

class Section {
 public:
  Section(const json& root, const std::string& name) : name_(name) {
    if (!root.contains(name)) return;
    if (!root.at(name).is_object()) throw std::invalid_argument("config: section '" + name + "' must be an object");
    obj_ = &root.at(name);
  }
  ~Section() noexcept(false) {
    if (!obj_ || std::uncaught_exceptions()) return;
    for (const auto& [key, _] : obj_->items())
      if (!used_.count(key)) throw std::invalid_argument("config: unknown key '" + name_ + "." + key + "'");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    used_.insert(key);
    if (!obj_ || !obj_->contains(key)) return;
    try {
      out = obj_->at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: bad value for '" + name_ + "." + key + "': " + e.what());
    }
  }

  bool has(const std::string& key) const { return obj_ && obj_->contains(key); }
  const json& at(const std::string& key) {
    used_.insert(key);
    return obj_->at(key);
  }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> used_;
};

std::vector<KnotSpec> knots_from(const json& arr) {
  if (!arr.is_array()) throw std::invalid_argument("config: phantom.knots must be an array");
  std::vector<KnotSpec> out;
  for (const auto& k : arr) {
    KnotSpec s;
    s.start_slice = k.value("start_slice", s.start_slice);
    s.end_slice = k.value("end_slice", s.end_slice);
    s.azimuth = k.value("azimuth", s.azimuth);
    s.elevation_rate = k.value("elevation_rate", s.elevation_rate);
    s.base_radius = k.value("base_radius", s.base_radius);
    out.push_back(s);
  }
  return out;
}

json knots_to(const std::vector<KnotSpec>& knots) {
  json arr = json::array();
  for (const auto& k : knots)
    arr.push_back({{"start_slice", k.start_slice},
                   {"end_slice", k.end_slice},
                   {"azimuth", k.azimuth},
                   {"elevation_rate", k.elevation_rate},
                   {"base_radius", k.base_radius}});
  return arr;
}

PredictRoute parse_route(const std::string& s) {
  if (s == "reduced") return PredictRoute::Reduced;
  if (s == "woodbury") return PredictRoute::Woodbury;
  throw std::invalid_argument("config: filter.route must be 'reduced' or 'woodbury', got '" + s + "'");
}

}  // namespace

void ExperimentConfig::resolve() {
  geometry.validate();
  grid.validate();
  phantom.grid = grid;
  prior.grid = grid;
  phantom.validate();
  prior.validate();
  if (schedule.n_sources < 1) throw std::invalid_argument("config: schedule.n_sources must be >= 1");
  if (scan.noise_rel < 0.0) throw std::invalid_argument("config: scan.noise_rel must be >= 0");
  if (scan.reference_angles < 1) throw std::invalid_argument("config: scan.reference_angles must be >= 1");
  if (filter.reduced_rank < 1 || filter.reduced_rank > grid.n_pixels())
    throw std::invalid_argument("config: filter.reduced_rank must lie in [1, " + std::to_string(grid.n_pixels()) +
                                "]");
  filter.noise.validate();
  if (filter.reg.slope < 0.0) throw std::invalid_argument("config: filter.xi_slope must be >= 0");
  segment.dpa.validate();
  if (segment.block_depth < 1) throw std::invalid_argument("config: dpa.block_depth must be >= 1");
  if (eval.burn_in < 0 || eval.half_width < 0) throw std::invalid_argument("config: metrics window is negative");
  if (threads < 1) threads = 1;
}

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.phantom.knots = default_knots();
  cfg.resolve();
  return cfg;
}

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: parse error: ") + e.what());
  }
  if (!root.is_object()) throw std::invalid_argument("config: top level must be an object");
  static const std::set<std::string> sections{"geometry", "grid",   "schedule", "phantom", "prior", "scan",
                                              "filter",   "reference", "dpa",   "metrics", "sweep", "run"};
  for (const auto& [key, _] : root.items())
    if (!sections.count(key)) throw std::invalid_argument("config: unknown section '" + key + "'");

  ExperimentConfig cfg = default_config();
  {
    Section s(root, "geometry");
    auto& g = cfg.geometry;
    s.get("source_radius", g.source_radius);
    s.get("detector_radius", g.detector_radius);
    s.get("detector_width", g.detector_width);
    s.get("source_shift", g.source_shift);
    s.get("detector_shift", g.detector_shift);
    s.get("detector_tilt", g.detector_tilt);
    s.get("n_detectors", g.n_detectors);
  }
  {
    Section s(root, "grid");
    s.get("n", cfg.grid.n);
    s.get("pixel_size", cfg.grid.pixel_size);
    s.get("fov_radius", cfg.grid.fov_radius);
  }
  {
    Section s(root, "schedule");
    std::string scheme = to_string(cfg.schedule.scheme);
    s.get("scheme", scheme);
    cfg.schedule.scheme = parse_scheme(scheme);
    s.get("n_sources", cfg.schedule.n_sources);
    s.get("rng_seed", cfg.schedule.rng_seed);
    s.get("start_angle", cfg.schedule.start_angle);
    if (s.has("quarter_delta_override")) {
      const json& v = s.at("quarter_delta_override");
      if (v.is_null())
        cfg.schedule.quarter_delta_override.reset();
      else
        cfg.schedule.quarter_delta_override = v.get<int>();
    }
  }
  {
    Section s(root, "phantom");
    auto& p = cfg.phantom;
    s.get("n_slices", p.n_slices);
    s.get("slice_spacing", p.slice_spacing);
    s.get("log_radius", p.log_radius);
    s.get("background_level", p.background_level);
    s.get("wood_level", p.wood_level);
    s.get("ring_contrast", p.ring_contrast);
    s.get("ring_spacing", p.ring_spacing);
    s.get("ring_phase_rate", p.ring_phase_rate);
    s.get("sapwood_width", p.sapwood_width);
    s.get("sapwood_level", p.sapwood_level);
    s.get("knot_level", p.knot_level);
    s.get("pith_drift", p.pith_drift);
    s.get("rng_seed", p.rng_seed);
    s.get("supersample", p.supersample);
    if (s.has("knots")) p.knots = knots_from(s.at("knots"));
  }
  {
    Section s(root, "prior");
    s.get("sigma", cfg.prior.sigma);
    s.get("corr_length", cfg.prior.corr_length);
  }
  {
    Section s(root, "scan");
    s.get("noise_rel", cfg.scan.noise_rel);
    s.get("seed", cfg.scan.seed);
    s.get("reference_angles", cfg.scan.reference_angles);
  }
  {
    Section s(root, "filter");
    auto& f = cfg.filter;
    s.get("reduced_rank", f.reduced_rank);
    s.get("q_scalar", f.noise.q_scalar);
    s.get("r_scalar", f.noise.r_scalar);
    s.get("r_from_noise", f.r_from_noise);
    s.get("xi_slope", f.reg.slope);
    s.get("alpha_tik", f.pipeline.alpha_tik);
    s.get("alpha_from_r", f.alpha_from_r);
    std::string route = f.pipeline.route == PredictRoute::Reduced ? "reduced" : "woodbury";
    s.get("route", route);
    f.pipeline.route = parse_route(route);
    s.get("operator_cache", f.pipeline.operator_cache);
  }
  {
    Section s(root, "reference");
    s.get("alpha", cfg.reference.alpha);
    s.get("alpha_scale", cfg.reference.alpha_scale);
    s.get("max_iter", cfg.reference.max_iter);
    s.get("tol", cfg.reference.tol);
  }
  {
    Section s(root, "dpa");
    auto& d = cfg.segment.dpa;
    s.get("noise_mean", d.noise_mean);
    s.get("noise_std", d.noise_std);
    s.get("k_hat", d.k_hat);
    s.get("z", d.z);
    s.get("z_auto", cfg.segment.z_auto);
    s.get("constant_zeta", d.constant_zeta);
    s.get("halo", d.halo);
    s.get("mask_background", d.mask_background);
    s.get("background_radius", d.background_radius);
    s.get("background_factor", d.background_factor);
    s.get("block_depth", cfg.segment.block_depth);
    s.get("otsu_classes", cfg.segment.otsu_classes);
  }
  {
    Section s(root, "metrics");
    s.get("burn_in", cfg.eval.burn_in);
    s.get("half_width", cfg.eval.half_width);
    s.get("report_dice", cfg.eval.report_dice);
  }
  {
    Section s(root, "sweep");
    if (s.has("schemes")) {
      cfg.sweep.schemes.clear();
      for (const auto& v : s.at("schemes")) cfg.sweep.schemes.push_back(parse_scheme(v.get<std::string>()));
    }
    s.get("sources", cfg.sweep.sources);
  }
  {
    Section s(root, "run");
    s.get("threads", cfg.threads);
  }
  cfg.resolve();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string dump_config(const ExperimentConfig& c, int indent) {
  json schemes = json::array();
  for (Scheme s : c.sweep.schemes) schemes.push_back(to_string(s));
  json root = {
      {"geometry",
       {{"source_radius", c.geometry.source_radius},
        {"detector_radius", c.geometry.detector_radius},
        {"detector_width", c.geometry.detector_width},
        {"source_shift", c.geometry.source_shift},
        {"detector_shift", c.geometry.detector_shift},
        {"detector_tilt", c.geometry.detector_tilt},
        {"n_detectors", c.geometry.n_detectors}}},
      {"grid", {{"n", c.grid.n}, {"pixel_size", c.grid.pixel_size}, {"fov_radius", c.grid.fov_radius}}},
      {"schedule",
       {{"scheme", to_string(c.schedule.scheme)},
        {"n_sources", c.schedule.n_sources},
        {"rng_seed", c.schedule.rng_seed},
        {"start_angle", c.schedule.start_angle},
        {"quarter_delta_override",
         c.schedule.quarter_delta_override ? json(*c.schedule.quarter_delta_override) : json(nullptr)}}},
      {"phantom",
       {{"n_slices", c.phantom.n_slices},
        {"slice_spacing", c.phantom.slice_spacing},
        {"log_radius", c.phantom.log_radius},
        {"background_level", c.phantom.background_level},
        {"wood_level", c.phantom.wood_level},
        {"ring_contrast", c.phantom.ring_contrast},
        {"ring_spacing", c.phantom.ring_spacing},
        {"ring_phase_rate", c.phantom.ring_phase_rate},
        {"sapwood_width", c.phantom.sapwood_width},
        {"sapwood_level", c.phantom.sapwood_level},
        {"knot_level", c.phantom.knot_level},
        {"pith_drift", c.phantom.pith_drift},
        {"rng_seed", c.phantom.rng_seed},
        {"supersample", c.phantom.supersample},
        {"knots", knots_to(c.phantom.knots)}}},
      {"prior", {{"sigma", c.prior.sigma}, {"corr_length", c.prior.corr_length}}},
      {"scan",
       {{"noise_rel", c.scan.noise_rel}, {"seed", c.scan.seed}, {"reference_angles", c.scan.reference_angles}}},
      {"filter",
       {{"reduced_rank", c.filter.reduced_rank},
        {"q_scalar", c.filter.noise.q_scalar},
        {"r_scalar", c.filter.noise.r_scalar},
        {"r_from_noise", c.filter.r_from_noise},
        {"xi_slope", c.filter.reg.slope},
        {"alpha_tik", c.filter.pipeline.alpha_tik},
        {"alpha_from_r", c.filter.alpha_from_r},
        {"route", c.filter.pipeline.route == PredictRoute::Reduced ? "reduced" : "woodbury"},
        {"operator_cache", c.filter.pipeline.operator_cache}}},
      {"reference",
       {{"alpha", c.reference.alpha},
        {"alpha_scale", c.reference.alpha_scale},
        {"max_iter", c.reference.max_iter},
        {"tol", c.reference.tol}}},
      {"dpa",
       {{"noise_mean", c.segment.dpa.noise_mean},
        {"noise_std", c.segment.dpa.noise_std},
        {"k_hat", c.segment.dpa.k_hat},
        {"z", c.segment.dpa.z},
        {"z_auto", c.segment.z_auto},
        {"constant_zeta", c.segment.dpa.constant_zeta},
        {"halo", c.segment.dpa.halo},
        {"mask_background", c.segment.dpa.mask_background},
        {"background_radius", c.segment.dpa.background_radius},
        {"background_factor", c.segment.dpa.background_factor},
        {"block_depth", c.segment.block_depth},
        {"otsu_classes", c.segment.otsu_classes}}},
      {"metrics",
       {{"burn_in", c.eval.burn_in}, {"half_width", c.eval.half_width}, {"report_dice", c.eval.report_dice}}},
      {"sweep", {{"schemes", schemes}, {"sources", c.sweep.sources}}},
      {"run", {{"threads", c.threads}}},
  };
  return root.dump(indent);
}

}  // namespace seqtomo
