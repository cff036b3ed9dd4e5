#include "seqtomo/dpa.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <cmath>
#include <random>
#include <set>

using namespace seqtomo;

namespace {

DpaParams plain_params(int k_hat, double z) {
  DpaParams p;
  p.k_hat = k_hat;
  p.z = z;
  p.mask_background = false;
  return p;
}

Eigen::VectorXd two_bumps(int n, int depth, double amp_a, double amp_b, double floor, double width = 2.0) {
  Eigen::VectorXd v(static_cast<long>(n) * n * depth);
  for (int z = 0; z < depth; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double ra = (x - 3) * (x - 3) + (y - 3) * (y - 3) + (z - depth / 2) * (z - depth / 2);
        const double rb = (x - 12) * (x - 12) + (y - 12) * (y - 12) + (z - depth / 2) * (z - depth / 2);
        v[(static_cast<long>(z) * n + y) * n + x] =
            floor + amp_a * std::exp(-ra / (2 * width * width)) + amp_b * std::exp(-rb / (2 * width * width));
      }
  return v;
}

struct Pipeline {
  DensityField field;
  Preliminary pre;
  SaddleTable saddles;
};

Pipeline run_stages(const Eigen::VectorXd& v, const BlockShape& shape, const DpaParams& p) {
  Pipeline out;
  out.field = make_density_field(v, shape, p);
  out.pre = find_centers(out.field);
  out.saddles = find_saddles(out.field, out.pre);
  return out;
}

// Three voxels: two peaks and the saddle between them.
DensityField handmade_pair(double peak_a, double peak_b, double saddle, double zeta_peak, double zeta_saddle) {
  DensityField f;
  f.shape = {3, 1};
  f.log_density = Eigen::VectorXd(9);
  f.log_density << peak_a, saddle, peak_b, 0, 0, 0, 0, 0, 0;
  f.zeta = Eigen::VectorXd::Zero(9);
  f.zeta[0] = zeta_peak;
  f.zeta[2] = zeta_peak;
  f.zeta[1] = zeta_saddle;
  f.rho = f.log_density.array().exp();
  f.g = f.log_density - f.zeta;
  f.voxels = {0, 1, 2};
  f.compact = {0, 1, 2, -1, -1, -1, -1, -1, -1};
  return f;
}

}  // namespace

TEST_SUITE("dpa") {
  TEST_CASE("heuristics match an exhaustive oracle on random blocks") {
    std::mt19937_64 rng(2024);
    const BlockShape shape{16, 3};
    int merges_seen = 0, multi = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::VectorXd v = oracle::random_field(16, 3, rng);
      for (double z : {0.0, 1.0, 3.4}) {
        DpaParams p = plain_params(20, z);
        p.noise_mean = 0.02;
        p.noise_std = 0.01;
        const Pipeline st = run_stages(v, shape, p);
        const oracle::BruteDpa ref = oracle::brute_dpa(v, 16, 3, p);

        std::vector<long> centers;
        for (int c : st.pre.centers) centers.push_back(st.field.voxels[c]);
        REQUIRE(centers == ref.centers);
        CHECK(st.pre.labels == ref.labels);
        REQUIRE(st.saddles.size() == ref.saddles.size());
        for (const auto& [key, s] : st.saddles) CHECK(st.field.voxels[s.voxel] == ref.saddles.at(key));

        const SegmentationMap map = merge_clusters(st.field, st.pre, st.saddles, z);
        REQUIRE(map.merges.size() == ref.merges.size());
        for (std::size_t m = 0; m < ref.merges.size(); ++m) {
          CHECK(map.merges[m].kept == ref.merges[m].first);
          CHECK(map.merges[m].absorbed == ref.merges[m].second);
        }
        CHECK(map.labels == ref.final_labels);
        merges_seen += static_cast<int>(ref.merges.size());
        multi += ref.centers.size() > 1;
      }
    }
    // The corpus must exercise both multi-peak centre sets and merges.
    CHECK(multi > 10);
    CHECK(merges_seen > 10);
  }

  TEST_CASE("uniform block is flat and degenerate") {
    const BlockShape shape{6, 2};
    const Eigen::VectorXd v = Eigen::VectorXd::Constant(shape.size(), 0.3);
    const Pipeline st = run_stages(v, shape, plain_params(10, 3.4));
    CHECK(st.field.g.maxCoeff() == st.field.g.minCoeff());
    CHECK(st.pre.degenerate);
    REQUIRE(st.pre.centers.size() == 1);
    CHECK(st.field.voxels[st.pre.centers[0]] == 0);
    CHECK(st.saddles.empty());
    const auto res = segment_block(v, shape, plain_params(10, 3.4));
    CHECK(res.map.degenerate);
    CHECK(res.map.n_clusters() == 1);
  }

  TEST_CASE("monotone ramp has a single centre at the maximum") {
    const BlockShape shape{8, 2};
    Eigen::VectorXd v(shape.size());
    for (long i = 0; i < v.size(); ++i) v[i] = 0.1 + 0.001 * static_cast<double>(i);
    const Pipeline st = run_stages(v, shape, plain_params(12, 3.4));
    REQUIRE(st.pre.centers.size() == 1);
    CHECK(st.field.voxels[st.pre.centers[0]] == shape.size() - 1);
    CHECK_FALSE(st.pre.degenerate);
  }

  TEST_CASE("plateau maximum picks the lowest voxel index") {
    const BlockShape shape{8, 1};
    Eigen::VectorXd v = Eigen::VectorXd::Constant(64, 0.1);
    for (long p : {27L, 28L, 35L, 36L}) v[p] = 0.5;
    const Pipeline st = run_stages(v, shape, plain_params(8, 3.4));
    REQUIRE_FALSE(st.pre.centers.empty());
    CHECK(st.field.voxels[st.pre.centers[0]] == 27);
  }

  TEST_CASE("two separated bumps give two centres at their maxima and a saddle") {
    const BlockShape shape{16, 3};
    const Eigen::VectorXd v = two_bumps(16, 3, 1.0, 0.8, 0.1);
    DpaParams p = plain_params(20, 3.4);
    const Pipeline st = run_stages(v, shape, p);
    REQUIRE(st.pre.centers.size() == 2);
    CHECK(st.field.voxels[st.pre.centers[0]] == (1L * 16 + 3) * 16 + 3);
    CHECK(st.field.voxels[st.pre.centers[1]] == (1L * 16 + 12) * 16 + 12);
    REQUIRE(st.saddles.size() == 1);
    const Saddle* s = saddle_between(st.saddles, 1, 0);
    REQUIRE(s != nullptr);
    CHECK(s == saddle_between(st.saddles, 0, 1));
    // The saddle lies on the path between the bumps, below both peaks.
    CHECK(s->log_density < st.field.log_density[st.field.voxels[st.pre.centers[1]]]);
    const long sv = st.field.voxels[s->voxel];
    const long x = sv % 16, y = (sv % 256) / 16;
    CHECK(x > 3);
    CHECK(x < 12);
    CHECK(y > 3);
    CHECK(y < 12);
  }

  TEST_CASE("zero threshold never merges") {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 5; ++t) {
      const Eigen::VectorXd v = oracle::random_field(12, 2, rng);
      const BlockShape shape{12, 2};
      const Pipeline st = run_stages(v, shape, plain_params(15, 0.0));
      const SegmentationMap map = merge_clusters(st.field, st.pre, st.saddles, 0.0);
      CHECK(map.merges.empty());
      CHECK(map.n_clusters() == static_cast<int>(st.pre.centers.size()));
    }
  }

  TEST_CASE("gap 0.5 with zeta sum 0.3 merges exactly above Z = 5/3") {
    // Peak a is far above the saddle; peak b sits 0.5 above it with zeta 0.1 + 0.2.
    const DensityField f = handmade_pair(1.5, 0.5, 0.0, 0.1, 0.2);
    Preliminary pre;
    pre.centers = {0, 2};
    pre.labels = {0, 0, 1};
    SaddleTable saddles;
    saddles[{0, 1}] = Saddle{1, 0.0, 0.2, -0.2};
    const double z0 = 5.0 / 3.0;
    for (double z : {z0 * (1 - 1e-9), z0 * 0.5, 0.0}) {
      const SegmentationMap m = merge_clusters(f, pre, saddles, z);
      CHECK(m.n_clusters() == 2);
      CHECK(m.merges.empty());
    }
    for (double z : {z0 * (1 + 1e-9), 2.0, 10.0}) {
      const SegmentationMap m = merge_clusters(f, pre, saddles, z);
      REQUIRE(m.n_clusters() == 1);
      REQUIRE(m.merges.size() == 1);
      CHECK(m.merges[0].kept == 0);
      CHECK(m.merges[0].absorbed == 2);
      CHECK(m.labels[0] == 0);
      CHECK(m.labels[2] == 0);
    }
  }

  TEST_CASE("cluster count is non-increasing in Z") {
    std::mt19937_64 rng(31);
    for (int t = 0; t < 6; ++t) {
      const Eigen::VectorXd v = oracle::random_field(14, 2, rng);
      const BlockShape shape{14, 2};
      DpaParams p = plain_params(15, 0.0);
      p.noise_std = 0.01;
      const Pipeline st = run_stages(v, shape, p);
      int prev = std::numeric_limits<int>::max();
      for (double z : {0.0, 0.5, 1.0, 2.0, 3.4, 6.0, 20.0}) {
        const int c = merge_clusters(st.field, st.pre, st.saddles, z).n_clusters();
        CHECK(c <= prev);
        prev = c;
      }
    }
  }

  TEST_CASE("labels partition the active voxels and centres own their clusters") {
    std::mt19937_64 rng(5);
    const BlockShape shape{16, 3};
    const Eigen::VectorXd v = oracle::random_field(16, 3, rng);
    DpaParams p = plain_params(20, 1.0);
    p.noise_std = 0.01;
    const Pipeline st = run_stages(v, shape, p);
    const SegmentationMap map = merge_clusters(st.field, st.pre, st.saddles, 1.0);
    for (long i = 0; i < shape.size(); ++i) {
      CHECK(map.labels[i] >= 0);
      CHECK(map.labels[i] < map.n_clusters());
    }
    for (int c = 0; c < map.n_clusters(); ++c) CHECK(map.labels[map.centers[c]] == c);
    for (const auto& [key, s] : map.saddles) CHECK(key.first < key.second);

    const SegmentationMap halo = assign_halo(st.field, map);
    for (long i = 0; i < shape.size(); ++i) {
      if (halo.labels[i] == map.labels[i]) continue;
      CHECK(halo.labels[i] == -1);
      double border = -1e300;
      for (const auto& [key, s] : map.saddles)
        if (key.first == map.labels[i] || key.second == map.labels[i]) border = std::max(border, s.g);
      CHECK(st.field.g[i] < border);
    }
    // Centres are never halo.
    for (int c = 0; c < map.n_clusters(); ++c) CHECK(halo.labels[map.centers[c]] == c);
    const Mask m1 = finalize(halo);
    CHECK(finalize(halo) == m1);
  }

  TEST_CASE("background voxels are excluded from the field") {
    const BlockShape shape{16, 2};
    Eigen::VectorXd v = Eigen::VectorXd::Zero(shape.size());
    for (int z = 0; z < 2; ++z)
      for (int y = 4; y < 12; ++y)
        for (int x = 4; x < 12; ++x) v[(z * 16 + y) * 16 + x] = 0.3 + 0.01 * x;
    DpaParams p = plain_params(20, 3.4);
    p.mask_background = true;
    const auto bg = background_mask(v, shape, 1, 2.0 * p.noise_mean);
    CHECK(bg[0] == 1);
    CHECK(bg[(16 + 8) * 16 + 8] == 0);
    const auto res = segment_block(v, shape, p);
    CHECK(res.mask[0] == 0);
    CHECK(res.map.labels[0] == -1);
    CHECK(res.mask.cast<int>().sum() > 0);
    CHECK(res.report.find("block 16x16x2") == 0);
  }

  TEST_CASE("mask is invariant to scaling the density with constant zeta") {
    std::mt19937_64 rng(8);
    const BlockShape shape{16, 2};
    const Eigen::VectorXd v = oracle::random_field(16, 2, rng).array() + 0.1;
    DpaParams p = plain_params(20, 1.0);
    p.constant_zeta = true;
    p.noise_mean = 0.01;
    p.noise_std = 0.004;
    const auto a = segment_block(v, shape, p);
    const auto b = segment_block(4.0 * v, shape, p);
    CHECK(a.mask == b.mask);
    CHECK(a.map.centers == b.map.centers);
  }

  TEST_CASE("thread count does not change the segmentation") {
    std::mt19937_64 rng(9);
    const BlockShape shape{16, 3};
    const Eigen::VectorXd v = oracle::random_field(16, 3, rng);
    DpaParams p = plain_params(30, 2.0);
    p.mask_background = true;
    p.noise_mean = 0.02;
    const auto a = segment_block(v, shape, p, 1);
    const auto b = segment_block(v, shape, p, 4);
    CHECK(a.map.labels == b.map.labels);
    CHECK(a.report == b.report);
  }

  TEST_CASE("parameter validation and default Z") {
    DpaParams p;
    p.k_hat = 0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = DpaParams{};
    p.z = -1.0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    CHECK(default_z(1) == 3.4);
    CHECK(default_z(5) == 3.4);
    CHECK(default_z(7) == 2.4);
    CHECK(default_z(15) == 2.4);
    CHECK_THROWS_AS(make_density_field(Eigen::VectorXd::Ones(10), BlockShape{4, 1}, DpaParams{}),
                    std::invalid_argument);
  }

  TEST_CASE("block extraction is slice-major") {
    Volume vol;
    vol.n = 2;
    vol.slices = Eigen::MatrixXd(4, 5);
    for (long i = 0; i < vol.slices.size(); ++i) vol.slices.data()[i] = static_cast<double>(i);
    const Eigen::VectorXd b = extract_block(vol, 1, 3);
    CHECK(b.size() == 12);
    CHECK(b[0] == 4.0);
    CHECK(b[11] == 15.0);
    CHECK_THROWS_AS(extract_block(vol, 3, 3), std::out_of_range);
  }
}

TEST_SUITE("otsu") {
  TEST_CASE("two-valued image splits between the values") {
    Eigen::VectorXd v(10);
    v << 0, 1, 1, 0, 0, 1, 0, 0, 0, 1;
    const OtsuResult r = multi_otsu(v, 2);
    REQUIRE(r.thresholds.size() == 1);
    for (long i = 0; i < 10; ++i) CHECK(r.mask[i] == static_cast<std::uint8_t>(v[i]));
  }

  TEST_CASE("three-class thresholds match the exhaustive maximizer") {
    std::mt19937_64 rng(12);
    for (int t = 0; t < 5; ++t) {
      std::normal_distribution<double> a(0.1, 0.02), b(0.2, 0.03), c(0.4, 0.03);
      std::uniform_int_distribution<int> pick(0, 9);
      Eigen::VectorXd v(5000);
      for (auto& x : v) {
        const int k = pick(rng);
        x = k < 5 ? a(rng) : k < 8 ? b(rng) : c(rng);
      }
      const OtsuResult r = multi_otsu(v, 3, 256);
      const auto h = histogram(v, 256, r.lo, r.hi);
      const oracle::Otsu3 ref = oracle::brute_otsu3(h);
      REQUIRE(r.thresholds.size() == 2);
      CHECK(std::abs(r.thresholds[0] - ref.t1) <= 1);
      CHECK(std::abs(r.thresholds[1] - ref.t2) <= 1);
      CHECK(r.objective == doctest::Approx(ref.objective).epsilon(1e-12));
      long top = 0;
      for (long i = 0; i < v.size(); ++i) top += v[i] > 0.32;
      CHECK(std::abs(r.mask.cast<long>().sum() - top) < 100);
    }
  }

  TEST_CASE("constant and empty inputs give an empty mask") {
    const OtsuResult r = multi_otsu(Eigen::VectorXd::Constant(50, 0.7), 3);
    CHECK(r.mask.size() == 50);
    CHECK(r.mask.cast<int>().sum() == 0);
    CHECK(multi_otsu(Eigen::VectorXd(0), 3).mask.size() == 0);
    CHECK_THROWS_AS(multi_otsu(Eigen::VectorXd::Ones(5), 1), std::invalid_argument);
  }

  TEST_CASE("histogram clamps to the range") {
    Eigen::VectorXd v(4);
    v << -1.0, 0.0, 0.5, 2.0;
    const auto h = histogram(v, 4, 0.0, 1.0);
    CHECK(h == std::vector<long>{2, 0, 1, 1});
  }
}
