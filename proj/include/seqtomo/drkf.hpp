#pragma once

#include "seqtomo/phantom.hpp"
#include "seqtomo/prior.hpp"
#include "seqtomo/projector.hpp"

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqtomo {

/// Q_k = q_scalar * I (model error), R_k = r_scalar * I (observation error).
struct NoiseModel {
  double q_scalar = 1e-5;
  double r_scalar = 1e-6;

  void validate() const;
};

/// Ridge added before inverting the reduced information matrix: slope * number of angles.
struct RegularizerSchedule {
  double slope = 0.1;

  double ridge(std::size_t n_angles) const { return slope * static_cast<double>(n_angles); }
};

/// Running filter state. The reconstruction of slice k is x_pred + P * alpha.
/// The reduced covariance phi is kept in information form, information = phi^{-1};
/// covariance_factor() recovers V with V V^T = phi.
struct FilterState {
  int k = 0;
  Eigen::VectorXd x_pred;
  Eigen::VectorXd alpha;
  Eigen::MatrixXd information;

  Eigen::VectorXd reconstruction(const ReducedBasis& basis) const { return x_pred + basis.P * alpha; }
};

class NumericalBreakdown : public std::runtime_error {
 public:
  NumericalBreakdown(int slice, const std::string& what)
      : std::runtime_error("slice " + std::to_string(slice) + ": " + what), slice_(slice) {}
  int slice() const { return slice_; }

 private:
  int slice_;
};

class IllPosedConfiguration : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A_k P restricted to the rows of A_k that touch the grid, plus (A_k P)^T (A_k P).
struct ReducedOperator {
  std::vector<long> rows;  // rows of A_k with at least one entry
  Eigen::MatrixXd AP;      // rows.size() x r
  Eigen::MatrixXd gram;    // full symmetric r x r
};

ReducedOperator reduce_operator(const SparseProjection& a, const ReducedBasis& basis);

// Solves ((A_0 P)^T (A_0 P) + alpha I) c = (A_0 P)^T y_0 and starts the filter at x_0 = P c.
// The initial information is the matching posterior precision ((A_0 P)^T (A_0 P) + alpha I) / r.
FilterState init_first_slice(const SparseProjection& a0, const Eigen::VectorXd& y0,
                             const ReducedBasis& basis, double alpha_tik, const NoiseModel& noise);
FilterState init_first_slice(const ReducedOperator& op, const SparseProjection& a0,
                             const Eigen::VectorXd& y0, const ReducedBasis& basis, double alpha_tik,
                             const NoiseModel& noise);

// Symmetric factor of phi = information^{-1} from its eigen-decomposition. Negative
// eigenvalues are clipped and directions below rel_tol * max are dropped.
Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& information, double rel_tol = 1e-12);

struct Prediction {
  Eigen::VectorXd x_pred;
  Eigen::MatrixXd prior_information;  // P^T (C_k^p)^{-1} P
  Eigen::MatrixXd B;                  // M P V, full route only
  Eigen::MatrixXd C_inv_P;            // (C_k^p)^{-1} P, full route only
};

/// Identity forecast and the Woodbury evaluation of (C_k^p)^{-1} P in pixel space:
///   Q^{-1} P - Q^{-1} B (B^T Q^{-1} B + I)^{-1} B^T Q^{-1} P,  B = P V.
Prediction predict(const FilterState& state, const ReducedBasis& basis, const NoiseModel& noise);

/// Same prior information evaluated entirely in r-space. Because P^T P = S,
///   P^T (C_k^p)^{-1} P = S/q - S (phi^{-1} + S/q)^{-1} S / q^2,
/// which needs one Cholesky factorization and no eigen-decomposition of phi.
Prediction predict_reduced(const FilterState& state, const ReducedBasis& basis, const NoiseModel& noise);

FilterState update(const FilterState& state, const Prediction& pred, const SparseProjection& a,
                   const ReducedOperator& op, const Eigen::VectorXd& y, const NoiseModel& noise,
                   const RegularizerSchedule& reg);
FilterState update(const FilterState& state, const Prediction& pred, const SparseProjection& a,
                   const Eigen::VectorXd& y, const ReducedBasis& basis, const NoiseModel& noise,
                   const RegularizerSchedule& reg);

enum class PredictRoute { Reduced, Woodbury };

struct PipelineOptions {
  double alpha_tik = 1e-6;
  PredictRoute route = PredictRoute::Reduced;
  std::size_t operator_cache = 4;
};

struct SliceTelemetry {
  int slice = 0;
  double seconds = 0.0;
  double residual_norm = 0.0;
  double ridge = 0.0;
};

using SliceCallback = std::function<void(int, const Eigen::VectorXd&, const SliceTelemetry&)>;

// Initialises on slice 0, then predicts and updates slice by slice.
std::vector<Eigen::VectorXd> run_pipeline(const std::vector<ScanSlice>& scans, MatrixCache& cache,
                                          const ReducedBasis& basis, const NoiseModel& noise,
                                          const RegularizerSchedule& reg, const PipelineOptions& opts,
                                          const SliceCallback& on_slice = {});

}  // namespace seqtomo
