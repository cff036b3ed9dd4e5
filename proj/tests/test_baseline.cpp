#include "seqtomo/baseline.hpp"

#include "doctest.h"

#include <limits>
#include <random>

using namespace seqtomo;

namespace {

SparseProjection::Matrix sparse_of(const Eigen::MatrixXd& d) { return d.sparseView(); }

Eigen::VectorXd randn(long n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  Eigen::VectorXd v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

ImageGrid grid_of(int n) {
  ImageGrid g;
  g.n = n;
  g.pixel_size = 400.0 / n;
  g.fov_radius = 200.0;
  return g;
}

}  // namespace

TEST_SUITE("baseline") {
  TEST_CASE("identity operator halves the data at alpha = 1") {
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(10, 10);
    Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(10, -2.0, 3.0);
    const auto res = tikhonov_cgls(sparse_of(eye), y, 1.0);
    CHECK(res.converged);
    CHECK((res.x - 0.5 * y).norm() < 1e-12);
  }

  TEST_CASE("matches the dense normal equations on a projection matrix") {
    std::mt19937_64 rng(3);
    SliceAngleSet set;
    set.angles_deg = {0.0, 72.0, 144.0, 216.0, 288.0};
    const auto a = build_matrix(FanBeamGeometry{}, grid_of(16), set);
    const Eigen::MatrixXd d(a.matrix);
    const Eigen::VectorXd y = d * randn(256, rng) + 0.1 * randn(a.rows(), rng);
    for (double alpha : {1e-1, 10.0, 1e3}) {
      const auto res = tikhonov_cgls(a, y, alpha, 2000, 1e-12);
      Eigen::MatrixXd h = d.transpose() * d;
      h.diagonal().array() += alpha;
      const Eigen::VectorXd ref = h.ldlt().solve(d.transpose() * y);
      CHECK(res.converged);
      CHECK((res.x - ref).norm() / ref.norm() < 1e-8);
    }
  }

  TEST_CASE("larger alpha shrinks the solution") {
    std::mt19937_64 rng(4);
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(40, 20);
    for (long i = 0; i < d.size(); ++i) d.data()[i] = std::abs(randn(1, rng)[0]);
    const Eigen::VectorXd y = randn(40, rng);
    double prev = std::numeric_limits<double>::infinity();
    for (double alpha : {1e-2, 1e-1, 1.0, 10.0, 100.0}) {
      const double nrm = tikhonov_cgls(sparse_of(d), y, alpha, 1000, 1e-12).x.norm();
      CHECK(nrm < prev);
      prev = nrm;
    }
  }

  TEST_CASE("normal-equation residual never increases") {
    std::mt19937_64 rng(5);
    SliceAngleSet set;
    set.angles_deg = {10.0, 130.0, 250.0};
    const auto a = build_matrix(FanBeamGeometry{}, grid_of(32), set);
    const Eigen::VectorXd y = forward(a, randn(1024, rng));
    const auto res = tikhonov_cgls(a, y, 1e-2, 60, 0.0);
    REQUIRE(res.history.size() == 60);
    for (std::size_t i = 1; i < res.history.size(); ++i) CHECK(res.history[i] <= res.history[i - 1] * (1 + 1e-12));
    CHECK_FALSE(res.converged);
    CHECK(res.iterations == 60);
  }

  TEST_CASE("zero data gives the zero image") {
    const Eigen::MatrixXd d = Eigen::MatrixXd::Ones(5, 3);
    const auto res = tikhonov_cgls(sparse_of(d), Eigen::VectorXd::Zero(5), 0.5);
    CHECK(res.x.isZero());
    CHECK(res.converged);
    CHECK(res.iterations == 0);
  }

  TEST_CASE("invalid inputs are rejected") {
    const Eigen::MatrixXd d = Eigen::MatrixXd::Ones(5, 3);
    CHECK_THROWS_AS(tikhonov_cgls(sparse_of(d), Eigen::VectorXd::Ones(5), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(tikhonov_cgls(sparse_of(d), Eigen::VectorXd::Ones(4), 1.0), std::invalid_argument);
  }

  TEST_CASE("default alpha scales an upper bound of the normal matrix norm") {
    SliceAngleSet set;
    set.angles_deg = {0.0, 90.0};
    const auto a = build_matrix(FanBeamGeometry{}, grid_of(16), set);
    const Eigen::MatrixXd d(a.matrix);
    const Eigen::MatrixXd h = d.transpose() * d;
    const double bound = h.cwiseAbs().rowwise().sum().maxCoeff();
    CHECK(default_reference_alpha(a, 1.0) == doctest::Approx(bound).epsilon(1e-12));
    CHECK(default_reference_alpha(a, 1e-3) == doctest::Approx(1e-3 * bound).epsilon(1e-12));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    CHECK(es.eigenvalues().maxCoeff() <= bound * (1 + 1e-12));
  }

  TEST_CASE("reference volume solves each slice independently") {
    std::mt19937_64 rng(6);
    MatrixCache cache(FanBeamGeometry{}, grid_of(16));
    std::vector<ScanSlice> scans(3);
    for (int k = 0; k < 3; ++k) {
      scans[k].angles.angles_deg = {5.0 * k, 5.0 * k + 180.0};
      scans[k].sinogram = forward(*cache.get(scans[k].angles), randn(256, rng));
    }
    TikhonovOptions opts;
    opts.alpha = 2.0;
    const Volume v1 = reference_volume(scans, cache, opts, 1);
    const Volume v2 = reference_volume(scans, cache, opts, 3);
    CHECK(v1.slices == v2.slices);
    const auto one = tikhonov_cgls(*cache.get(scans[1].angles), scans[1].sinogram, 2.0);
    CHECK((v1.slices.col(1) - one.x).norm() == 0.0);
  }
}
