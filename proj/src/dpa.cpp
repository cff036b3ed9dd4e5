#include "seqtomo/dpa.hpp"
#include "seqtomo/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace seqtomo {

void DpaParams::validate() const {
  if (!(noise_mean > 0.0)) throw std::invalid_argument("dpa: noise_mean must be positive");
  if (!(noise_std > 0.0)) throw std::invalid_argument("dpa: noise_std must be positive");
  if (k_hat < 1) throw std::invalid_argument("dpa: k_hat must be >= 1");
  if (z < 0.0) throw std::invalid_argument("dpa: Z must be >= 0");
  if (background_radius < 0) throw std::invalid_argument("dpa: background_radius must be >= 0");
}

double default_z(int n_sources) { return n_sources < 7 ? 3.4 : 2.4; }

std::shared_ptr<const std::vector<GridOffset>> sorted_offsets(const BlockShape& shape) {
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::shared_ptr<const std::vector<GridOffset>>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{shape.n, shape.depth}];
  if (slot) return slot;
  auto out = std::make_shared<std::vector<GridOffset>>();
  const int n = shape.n, d = shape.depth;
  out->reserve(static_cast<std::size_t>(2 * n - 1) * (2 * n - 1) * (2 * d - 1));
  for (int dz = -(d - 1); dz <= d - 1; ++dz)
    for (int dy = -(n - 1); dy <= n - 1; ++dy)
      for (int dx = -(n - 1); dx <= n - 1; ++dx)
        out->push_back({dz, dy, dx, long(dz) * dz + long(dy) * dy + long(dx) * dx,
                        long(dz) * shape.plane() + long(dy) * n + dx});
  std::sort(out->begin(), out->end(), [](const GridOffset& a, const GridOffset& b) {
    return a.d2 != b.d2 ? a.d2 < b.d2 : a.linear < b.linear;
  });
  slot = out;
  return slot;
}

namespace {

struct Coord {
  int z, y, x;
};

Coord coord_of(const BlockShape& s, long v) {
  const long p = v % s.plane();
  return {static_cast<int>(v / s.plane()), static_cast<int>(p / s.n), static_cast<int>(p % s.n)};
}

bool inside(const BlockShape& s, const Coord& c, const GridOffset& o) {
  const int z = c.z + o.dz, y = c.y + o.dy, x = c.x + o.dx;
  return z >= 0 && z < s.depth && y >= 0 && y < s.n && x >= 0 && x < s.n;
}

long dist2(const BlockShape& s, long a, long b) {
  const Coord ca = coord_of(s, a), cb = coord_of(s, b);
  const long dz = ca.z - cb.z, dy = ca.y - cb.y, dx = ca.x - cb.x;
  return dz * dz + dy * dy + dx * dx;
}

// First active voxel in (distance, index) order from `from` satisfying pred, within max_d2.
template <class Pred>
int nearest_matching(const DensityField& f, long from_compact, Pred pred, long max_d2) {
  const long v = f.voxels[from_compact];
  const Coord c = coord_of(f.shape, v);
  const auto& offs = *f.offsets;
  for (std::size_t k = 1; k < offs.size(); ++k) {
    const GridOffset& o = offs[k];
    if (o.d2 > max_d2) break;
    if (!inside(f.shape, c, o)) continue;
    const int cj = f.compact[v + o.linear];
    if (cj >= 0 && pred(cj)) return cj;
  }
  return -1;
}

}  // namespace

std::vector<std::uint8_t> background_mask(const Eigen::VectorXd& values, const BlockShape& shape, int radius,
                                          double threshold, int threads) {
  if (values.size() != shape.size()) throw std::invalid_argument("background_mask: block size mismatch");
  std::vector<GridOffset> ball;
  for (int dz = -radius; dz <= radius; ++dz)
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        const long d2 = long(dz) * dz + long(dy) * dy + long(dx) * dx;
        if (d2 <= long(radius) * radius) ball.push_back({dz, dy, dx, d2, long(dz) * shape.plane() + long(dy) * shape.n + dx});
      }
  std::vector<std::uint8_t> bg(static_cast<std::size_t>(shape.size()), 0);
  parallel_for(shape.depth, threads, [&](long z) {
    for (long p = 0; p < shape.plane(); ++p) {
      const long v = z * shape.plane() + p;
      const Coord c = coord_of(shape, v);
      double sum = 0.0;
      long count = 0;
      for (const auto& o : ball)
        if (inside(shape, c, o)) {
          sum += values[v + o.linear];
          ++count;
        }
      bg[v] = sum < threshold * static_cast<double>(count);
    }
  });
  return bg;
}

DensityField make_density_field(const Eigen::VectorXd& values, const BlockShape& shape, const DpaParams& params,
                                int threads) {
  params.validate();
  if (shape.n < 1 || shape.depth < 1) throw std::invalid_argument("make_density_field: empty block");
  if (values.size() != shape.size())
    throw std::invalid_argument("make_density_field: block has " + std::to_string(values.size()) +
                                " values, shape needs " + std::to_string(shape.size()));
  DensityField f;
  f.shape = shape;
  f.k_hat = params.k_hat;
  f.rho = values.cwiseMax(params.noise_mean);
  f.log_density = f.rho.array().log();
  if (params.constant_zeta)
    f.zeta = Eigen::VectorXd::Constant(values.size(), params.noise_std / params.noise_mean);
  else
    f.zeta = params.noise_std * f.rho.cwiseInverse();
  f.g = f.log_density - f.zeta;

  std::vector<std::uint8_t> bg;
  if (params.mask_background)
    bg = background_mask(values, shape, params.background_radius, params.background_factor * params.noise_mean,
                         threads);
  f.compact.assign(static_cast<std::size_t>(shape.size()), -1);
  for (long v = 0; v < shape.size(); ++v)
    if (bg.empty() || !bg[v]) {
      f.compact[v] = static_cast<int>(f.voxels.size());
      f.voxels.push_back(v);
    }

  f.offsets = sorted_offsets(shape);
  f.kk = static_cast<int>(std::min<long>(params.k_hat, std::max<long>(f.n_active() - 1, 0)));
  f.neighbours.assign(static_cast<std::size_t>(f.n_active()) * f.kk, -1);
  parallel_for(f.n_active(), threads, [&](long ci) {
    const long v = f.voxels[ci];
    const Coord c = coord_of(shape, v);
    int* out = f.neighbours.data() + ci * f.kk;
    int found = 0;
    const auto& offs = *f.offsets;
    for (std::size_t k = 1; k < offs.size() && found < f.kk; ++k) {
      if (!inside(shape, c, offs[k])) continue;
      const int cj = f.compact[v + offs[k].linear];
      if (cj >= 0) out[found++] = cj;
    }
  });
  return f;
}

Preliminary find_centers(const DensityField& f) {
  const long m = f.n_active();
  Preliminary pre;
  pre.labels.assign(static_cast<std::size_t>(m), -1);
  if (m == 0) {
    pre.degenerate = true;
    return pre;
  }
  std::vector<std::uint8_t> candidate(static_cast<std::size_t>(m), 1);
  for (long i = 0; i < m; ++i) {
    const int* nb = f.neighbours_of(i);
    for (int k = 0; k < f.kk; ++k)
      if (!f.higher(i, nb[k])) {
        candidate[i] = 0;
        break;
      }
  }
  // Drop candidates lying in the neighbourhood of a higher voxel.
  std::vector<std::uint8_t> center = candidate;
  for (long j = 0; j < m; ++j) {
    const int* nb = f.neighbours_of(j);
    for (int k = 0; k < f.kk; ++k)
      if (candidate[nb[k]] && f.higher(j, nb[k])) center[nb[k]] = 0;
  }

  std::vector<long> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0L);
  std::sort(order.begin(), order.end(), [&](long a, long b) { return f.higher(a, b); });
  for (long i : order)
    if (center[i]) {
      pre.labels[i] = static_cast<int>(pre.centers.size());
      pre.centers.push_back(static_cast<int>(i));
    }
  for (long i : order) {
    if (center[i]) continue;
    int up = -1;
    const int* nb = f.neighbours_of(i);
    for (int k = 0; k < f.kk; ++k)
      if (f.higher(nb[k], i)) {
        up = nb[k];
        break;
      }
    if (up < 0) up = nearest_matching(f, i, [&](int cj) { return f.higher(cj, i); }, std::numeric_limits<long>::max());
    if (up < 0 || pre.labels[up] < 0) throw std::logic_error("find_centers: unassigned higher voxel");
    pre.labels[i] = pre.labels[up];
  }
  // A flat field has no real peak; the tie-break still yields one cluster, flagged.
  double g_min = f.g[f.voxels[0]], g_max = g_min;
  for (long v : f.voxels) {
    g_min = std::min(g_min, f.g[v]);
    g_max = std::max(g_max, f.g[v]);
  }
  pre.degenerate = pre.centers.empty() || g_min == g_max;
  return pre;
}

const Saddle* saddle_between(const SaddleTable& table, int a, int b) {
  auto it = table.find({std::min(a, b), std::max(a, b)});
  return it == table.end() ? nullptr : &it->second;
}

namespace {

bool saddle_higher(const DensityField& f, const Saddle& a, const Saddle& b) {
  return a.g > b.g || (a.g == b.g && f.voxels[a.voxel] < f.voxels[b.voxel]);
}

Saddle saddle_at(const DensityField& f, int ci) {
  const long v = f.voxels[ci];
  return {ci, f.log_density[v], f.zeta[v], f.g[v]};
}

}  // namespace

SaddleTable find_saddles(const DensityField& f, const Preliminary& pre) {
  SaddleTable table;
  const long m = f.n_active();
  std::vector<int> seen;
  for (long i = 0; i < m; ++i) {
    const int c = pre.labels[i];
    const int* nb = f.neighbours_of(i);
    seen.clear();
    for (int k = 0; k < f.kk; ++k) {
      const int j = nb[k];
      const int cj = pre.labels[j];
      if (cj == c || std::find(seen.begin(), seen.end(), cj) != seen.end()) continue;
      seen.push_back(cj);
      // j is the nearest voxel of cluster cj to i; i must be the nearest voxel of c to j.
      int closest = -1;
      const int* nbj = f.neighbours_of(j);
      for (int t = 0; t < f.kk; ++t)
        if (pre.labels[nbj[t]] == c) {
          closest = nbj[t];
          break;
        }
      if (closest < 0)
        closest = nearest_matching(f, j, [&](int q) { return pre.labels[q] == c; },
                                   dist2(f.shape, f.voxels[i], f.voxels[j]));
      if (closest != static_cast<int>(i)) continue;
      const Saddle s = saddle_at(f, static_cast<int>(i));
      auto [it, inserted] = table.try_emplace({std::min(c, cj), std::max(c, cj)}, s);
      if (!inserted && saddle_higher(f, s, it->second)) it->second = s;
    }
  }
  return table;
}

SegmentationMap merge_clusters(const DensityField& f, const Preliminary& pre, const SaddleTable& saddles, double z) {
  const int c0 = static_cast<int>(pre.centers.size());
  std::vector<int> owner(static_cast<std::size_t>(c0));  // preliminary cluster -> current cluster id
  std::iota(owner.begin(), owner.end(), 0);
  std::vector<int> peak(pre.centers.begin(), pre.centers.end());
  std::vector<std::uint8_t> alive(static_cast<std::size_t>(c0), 1);
  SaddleTable table = saddles;

  SegmentationMap map;
  map.shape = f.shape;
  map.degenerate = pre.degenerate;

  auto insignificant = [&](int c, const Saddle& s) {
    const long v = f.voxels[peak[c]];
    return f.log_density[v] - s.log_density < z * (f.zeta[v] + s.zeta);
  };

  for (;;) {
    std::vector<std::pair<std::pair<int, int>, Saddle>> pairs(table.begin(), table.end());
    std::stable_sort(pairs.begin(), pairs.end(), [&](const auto& a, const auto& b) {
      if (a.second.log_density != b.second.log_density) return a.second.log_density > b.second.log_density;
      return f.voxels[a.second.voxel] < f.voxels[b.second.voxel];
    });
    bool merged = false;
    for (const auto& [key, s] : pairs) {
      auto [a, b] = key;
      if (!insignificant(a, s) && !insignificant(b, s)) continue;
      if (f.higher(peak[b], peak[a])) std::swap(a, b);
      map.merges.push_back({f.voxels[peak[a]], f.voxels[peak[b]], s.log_density});
      // Borders of the union: the higher of the two saddles towards every third cluster.
      SaddleTable next;
      for (const auto& [k2, s2] : table) {
        int x = k2.first == b ? a : k2.first;
        int y = k2.second == b ? a : k2.second;
        if (x == y) continue;
        auto [it, inserted] = next.try_emplace({std::min(x, y), std::max(x, y)}, s2);
        if (!inserted && saddle_higher(f, s2, it->second)) it->second = s2;
      }
      table = std::move(next);
      alive[b] = 0;
      for (auto& o : owner)
        if (o == b) o = a;
      merged = true;
      break;
    }
    if (!merged) break;
  }

  // Final ids in descending peak order.
  std::vector<int> survivors;
  for (int c = 0; c < c0; ++c)
    if (alive[c]) survivors.push_back(c);
  std::sort(survivors.begin(), survivors.end(), [&](int a, int b) { return f.higher(peak[a], peak[b]); });
  std::vector<int> final_id(static_cast<std::size_t>(c0), -1);
  for (std::size_t r = 0; r < survivors.size(); ++r) {
    final_id[survivors[r]] = static_cast<int>(r);
    map.centers.push_back(f.voxels[peak[survivors[r]]]);
  }
  for (const auto& [key, s] : table) {
    const int a = final_id[key.first], b = final_id[key.second];
    map.saddles[{std::min(a, b), std::max(a, b)}] = s;
  }
  map.labels.assign(static_cast<std::size_t>(f.shape.size()), -1);
  for (long i = 0; i < f.n_active(); ++i) map.labels[f.voxels[i]] = final_id[owner[pre.labels[i]]];
  return map;
}

SegmentationMap assign_halo(const DensityField& f, const SegmentationMap& map) {
  SegmentationMap out = map;
  std::vector<double> border(static_cast<std::size_t>(map.n_clusters()), -std::numeric_limits<double>::infinity());
  for (const auto& [key, s] : map.saddles) {
    border[key.first] = std::max(border[key.first], s.g);
    border[key.second] = std::max(border[key.second], s.g);
  }
  for (long v = 0; v < f.shape.size(); ++v) {
    const int c = out.labels[v];
    if (c >= 0 && f.g[v] < border[c]) out.labels[v] = -1;
  }
  return out;
}

Mask finalize(const SegmentationMap& map) {
  Mask mask(static_cast<long>(map.labels.size()));
  for (std::size_t v = 0; v < map.labels.size(); ++v) mask[static_cast<long>(v)] = map.labels[v] >= 0;
  return mask;
}

SegmentationResult segment_block(const Eigen::VectorXd& values, const BlockShape& shape, const DpaParams& params,
                                 int threads) {
  const DensityField field = make_density_field(values, shape, params, threads);
  const Preliminary pre = find_centers(field);
  const SaddleTable saddles = find_saddles(field, pre);
  SegmentationResult res;
  res.map = merge_clusters(field, pre, saddles, params.z);
  if (params.halo) res.map = assign_halo(field, res.map);
  res.mask = finalize(res.map);
  res.report = format_report(field, res.map);
  return res;
}

Eigen::VectorXd extract_block(const Volume& volume, int first, int depth) {
  if (first < 0 || depth < 1 || first + depth > volume.n_slices())
    throw std::out_of_range("extract_block: slices [" + std::to_string(first) + ", " +
                            std::to_string(first + depth) + ") outside volume of " +
                            std::to_string(volume.n_slices()));
  const long plane = volume.slices.rows();
  Eigen::VectorXd block(plane * depth);
  for (int k = 0; k < depth; ++k) block.segment(k * plane, plane) = volume.slice(first + k);
  return block;
}

std::vector<long> histogram(const Eigen::VectorXd& values, int bins, double lo, double hi) {
  std::vector<long> h(static_cast<std::size_t>(bins), 0);
  const double scale = hi > lo ? bins / (hi - lo) : 0.0;
  for (long i = 0; i < values.size(); ++i) {
    const int b = std::clamp(static_cast<int>((values[i] - lo) * scale), 0, bins - 1);
    ++h[b];
  }
  return h;
}

OtsuResult multi_otsu(const Eigen::VectorXd& values, int n_classes, int bins) {
  if (n_classes < 2) throw std::invalid_argument("multi_otsu: need at least two classes");
  if (bins < n_classes) throw std::invalid_argument("multi_otsu: fewer bins than classes");
  OtsuResult res;
  res.mask = Mask::Zero(values.size());
  if (values.size() == 0) return res;
  res.lo = values.minCoeff();
  res.hi = values.maxCoeff();
  if (!(res.hi > res.lo)) return res;

  const auto h = histogram(values, bins, res.lo, res.hi);
  std::vector<double> w(bins + 1, 0.0), s(bins + 1, 0.0);
  for (int b = 0; b < bins; ++b) {
    w[b + 1] = w[b] + static_cast<double>(h[b]);
    s[b + 1] = s[b] + static_cast<double>(h[b]) * (b + 0.5);
  }
  auto cost = [&](int i, int j) {  // bins [i, j)
    const double ww = w[j] - w[i];
    if (ww <= 0.0) return 0.0;
    const double ss = s[j] - s[i];
    return ss * ss / ww;
  };
  const double neg = -std::numeric_limits<double>::infinity();
  // best[k][j]: first j bins split into k + 1 classes.
  std::vector<std::vector<double>> best(n_classes, std::vector<double>(bins + 1, neg));
  std::vector<std::vector<int>> arg(n_classes, std::vector<int>(bins + 1, -1));
  for (int j = 1; j <= bins; ++j) best[0][j] = cost(0, j);
  for (int k = 1; k < n_classes; ++k)
    for (int j = k + 1; j <= bins; ++j)
      for (int i = k; i < j; ++i) {
        const double v = best[k - 1][i] + cost(i, j);
        if (v > best[k][j]) {
          best[k][j] = v;
          arg[k][j] = i;
        }
      }
  res.objective = best[n_classes - 1][bins];
  res.thresholds.assign(static_cast<std::size_t>(n_classes - 1), 0);
  int j = bins;
  for (int k = n_classes - 1; k >= 1; --k) {
    j = arg[k][j];
    res.thresholds[k - 1] = j;
  }
  const double scale = bins / (res.hi - res.lo);
  const int top = res.thresholds.back();
  for (long i = 0; i < values.size(); ++i)
    res.mask[i] = std::clamp(static_cast<int>((values[i] - res.lo) * scale), 0, bins - 1) >= top;
  return res;
}

std::string format_report(const DensityField& f, const SegmentationMap& map) {
  std::ostringstream out;
  out << std::setprecision(6);
  out << "block " << f.shape.n << "x" << f.shape.n << "x" << f.shape.depth << " active " << f.n_active()
      << " k_hat " << f.k_hat << (map.degenerate ? " degenerate" : "") << "\n";
  for (int c = 0; c < map.n_clusters(); ++c) {
    const long v = map.centers[c];
    const Coord p = coord_of(f.shape, v);
    out << "center " << c << " z " << p.z << " row " << p.y << " col " << p.x << " log_rho " << f.log_density[v]
        << " zeta " << f.zeta[v] << "\n";
  }
  for (const auto& [key, s] : map.saddles)
    out << "saddle " << key.first << " " << key.second << " voxel " << f.voxels[s.voxel] << " log_rho "
        << s.log_density << " zeta " << s.zeta << "\n";
  for (const auto& m : map.merges)
    out << "merge kept " << m.kept << " absorbed " << m.absorbed << " saddle_log_rho " << m.saddle_log_density
        << "\n";
  return out.str();
}

}  // namespace seqtomo
