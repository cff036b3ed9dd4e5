#include "seqtomo/drkf.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <iostream>
#include <map>
#include <memory>

namespace seqtomo {

namespace {

using Clock = std::chrono::steady_clock;

// Copy of the lower triangle into the upper one.
void symmetrize_from_lower(Eigen::MatrixXd& m) { m = m.selfadjointView<Eigen::Lower>(); }

// Fallback for a failed Cholesky: eigenvalue-clipped pseudo-inverse applied to rhs.
Eigen::VectorXd clipped_solve(const Eigen::MatrixXd& m, const Eigen::VectorXd& rhs) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double cut = 1e-12 * std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::VectorXd inv = lam.unaryExpr([cut](double l) { return l > cut ? 1.0 / l : 0.0; });
  return es.eigenvectors() * inv.asDiagonal() * (es.eigenvectors().transpose() * rhs);
}

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

}  // namespace

void NoiseModel::validate() const {
  if (!(q_scalar > 0.0)) throw std::invalid_argument("noise model: q_scalar must be positive");
  if (!(r_scalar > 0.0)) throw std::invalid_argument("noise model: r_scalar must be positive");
}

ReducedOperator reduce_operator(const SparseProjection& a, const ReducedBasis& basis) {
  if (a.cols() != basis.n_pixels())
    throw std::invalid_argument("reduce_operator: matrix has " + std::to_string(a.cols()) +
                                " columns, basis has " + std::to_string(basis.n_pixels()) + " pixels");
  const auto& m = a.matrix;
  ReducedOperator op;
  for (long r = 0; r < m.rows(); ++r)
    if (m.outerIndexPtr()[r + 1] > m.outerIndexPtr()[r]) op.rows.push_back(r);

  const long r = basis.rank();
  ReducedBasis::Matrix ap(static_cast<long>(op.rows.size()), r);
  ap.setZero();
  for (std::size_t i = 0; i < op.rows.size(); ++i) {
    auto row = ap.row(static_cast<long>(i));
    for (SparseProjection::Matrix::InnerIterator it(m, op.rows[i]); it; ++it)
      row.noalias() += it.value() * basis.P.row(it.col());
  }
  op.AP = ap;
  op.gram = Eigen::MatrixXd::Zero(r, r);
  op.gram.selfadjointView<Eigen::Lower>().rankUpdate(op.AP.transpose());
  symmetrize_from_lower(op.gram);
  return op;
}

namespace {

Eigen::VectorXd restrict_rows(const Eigen::VectorXd& v, const std::vector<long>& rows) {
  Eigen::VectorXd out(static_cast<long>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<long>(i)] = v[rows[i]];
  return out;
}

}  // namespace

FilterState init_first_slice(const ReducedOperator& op, const SparseProjection& a0,
                             const Eigen::VectorXd& y0, const ReducedBasis& basis, double alpha_tik,
                             const NoiseModel& noise) {
  noise.validate();
  if (y0.size() != a0.rows())
    throw std::invalid_argument("init_first_slice: sinogram has " + std::to_string(y0.size()) +
                                " entries, matrix has " + std::to_string(a0.rows()) + " rows");
  if (alpha_tik < 0.0) throw std::invalid_argument("init_first_slice: alpha must be >= 0");
  const long r = basis.rank();
  Eigen::MatrixXd h = op.gram;
  h.diagonal().array() += alpha_tik;
  Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (llt.info() != Eigen::Success)
    throw IllPosedConfiguration("init_first_slice: reduced normal matrix is singular (alpha = " +
                                std::to_string(alpha_tik) + ")");
  const Eigen::VectorXd c = llt.solve(op.AP.transpose() * restrict_rows(y0, op.rows));

  FilterState s;
  s.k = 0;
  s.x_pred = basis.P * c;
  s.alpha = Eigen::VectorXd::Zero(r);
  s.information = h / noise.r_scalar;
  return s;
}

FilterState init_first_slice(const SparseProjection& a0, const Eigen::VectorXd& y0,
                             const ReducedBasis& basis, double alpha_tik, const NoiseModel& noise) {
  return init_first_slice(reduce_operator(a0, basis), a0, y0, basis, alpha_tik, noise);
}

Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& information, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(information);
  if (es.info() != Eigen::Success) throw std::runtime_error("covariance_factor: eigensolver failed");
  const Eigen::VectorXd& lam = es.eigenvalues();
  // phi = information^{-1}; directions with non-positive information carry no variance.
  Eigen::VectorXd mu = lam.unaryExpr([](double l) { return l > 0.0 ? 1.0 / l : 0.0; });
  const double cut = rel_tol * mu.maxCoeff();
  std::vector<long> keep;
  for (long i = 0; i < mu.size(); ++i)
    if (mu[i] > cut && mu[i] > 0.0) keep.push_back(i);
  Eigen::MatrixXd v(information.rows(), static_cast<long>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j)
    v.col(static_cast<long>(j)) = es.eigenvectors().col(keep[j]) * std::sqrt(mu[keep[j]]);
  return v;
}

Prediction predict(const FilterState& state, const ReducedBasis& basis, const NoiseModel& noise) {
  noise.validate();
  const double q = noise.q_scalar;
  Prediction p;
  p.x_pred = state.reconstruction(basis);

  const Eigen::MatrixXd v = covariance_factor(state.information);
  p.B = basis.P * v;
  Eigen::MatrixXd inner = p.B.transpose() * p.B / q;
  inner.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(inner);
  if (llt.info() != Eigen::Success)
    throw NumericalBreakdown(state.k + 1, "predict: B^T Q^-1 B + I is not positive definite");
  const Eigen::MatrixXd btp = p.B.transpose() * basis.P;
  p.C_inv_P = basis.P / q - p.B * llt.solve(btp) / (q * q);
  p.prior_information = basis.P.transpose() * p.C_inv_P;
  p.prior_information = 0.5 * (p.prior_information + p.prior_information.transpose()).eval();
  if (!all_finite(p.prior_information)) throw NumericalBreakdown(state.k + 1, "predict: non-finite covariance");
  return p;
}

Prediction predict_reduced(const FilterState& state, const ReducedBasis& basis, const NoiseModel& noise) {
  noise.validate();
  const double q = noise.q_scalar;
  const Eigen::VectorXd& s = basis.singular_values;
  const long r = basis.rank();
  if (state.information.rows() != r)
    throw std::invalid_argument("predict_reduced: state rank does not match the basis");
  Prediction p;
  p.x_pred = state.reconstruction(basis);

  Eigen::MatrixXd m = state.information;
  m.diagonal() += s / q;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw NumericalBreakdown(state.k + 1, "predict: phi^-1 + S/q is not positive definite");
  // X = L^{-1} S, so that S M^{-1} S = X^T X. X is lower triangular because S is diagonal,
  // so both the solve and the product run over column (row) blocks and skip the zero part.
  constexpr long kBlock = 256;
  const Eigen::MatrixXd& lfac = llt.matrixLLT();
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(r, r);
  for (long j0 = 0; j0 < r; j0 += kBlock) {
    const long w = std::min(kBlock, r - j0), h = r - j0;
    auto panel = x.block(j0, j0, h, w);
    panel.topRows(w).diagonal() = s.segment(j0, w);
    lfac.block(j0, j0, h, h).triangularView<Eigen::Lower>().solveInPlace(panel);
  }
  p.prior_information = Eigen::MatrixXd::Zero(r, r);
  for (long k0 = 0; k0 < r; k0 += kBlock) {
    const long w = std::min(kBlock, r - k0), c = k0 + w;
    p.prior_information.topLeftCorner(c, c).selfadjointView<Eigen::Lower>().rankUpdate(
        x.block(k0, 0, w, c).transpose(), -1.0 / (q * q));
  }
  p.prior_information.diagonal() += s / q;
  symmetrize_from_lower(p.prior_information);
  if (!all_finite(p.prior_information)) throw NumericalBreakdown(state.k + 1, "predict: non-finite covariance");
  return p;
}

FilterState update(const FilterState& state, const Prediction& pred, const SparseProjection& a,
                   const ReducedOperator& op, const Eigen::VectorXd& y, const NoiseModel& noise,
                   const RegularizerSchedule& reg) {
  noise.validate();
  const int k = state.k + 1;
  if (y.size() != a.rows())
    throw std::invalid_argument("update: sinogram has " + std::to_string(y.size()) + " entries, matrix has " +
                                std::to_string(a.rows()) + " rows");
  const long r = pred.prior_information.rows();
  if (op.gram.rows() != r) throw std::invalid_argument("update: operator rank does not match prediction");

  const Eigen::VectorXd innovation = y - forward(a, pred.x_pred);
  const Eigen::VectorXd rhs = op.AP.transpose() * restrict_rows(innovation, op.rows) / noise.r_scalar;

  FilterState next;
  next.k = k;
  next.x_pred = pred.x_pred;
  next.information = op.gram / noise.r_scalar + pred.prior_information;
  next.information.diagonal().array() += reg.ridge(a.angles.size());
  if (!all_finite(next.information)) throw NumericalBreakdown(k, "update: non-finite information matrix");

  Eigen::LLT<Eigen::MatrixXd> llt(next.information);
  if (llt.info() == Eigen::Success) {
    next.alpha = llt.solve(rhs);
  } else {
    std::cerr << "warning: slice " << k << ": Cholesky of the reduced information failed, "
              << "using a clipped pseudo-inverse\n";
    next.alpha = clipped_solve(next.information, rhs);
  }
  if (!next.alpha.allFinite()) throw NumericalBreakdown(k, "update: non-finite coefficients");
  return next;
}

FilterState update(const FilterState& state, const Prediction& pred, const SparseProjection& a,
                   const Eigen::VectorXd& y, const ReducedBasis& basis, const NoiseModel& noise,
                   const RegularizerSchedule& reg) {
  return update(state, pred, a, reduce_operator(a, basis), y, noise, reg);
}

std::vector<Eigen::VectorXd> run_pipeline(const std::vector<ScanSlice>& scans, MatrixCache& cache,
                                          const ReducedBasis& basis, const NoiseModel& noise,
                                          const RegularizerSchedule& reg, const PipelineOptions& opts,
                                          const SliceCallback& on_slice) {
  noise.validate();
  std::vector<Eigen::VectorXd> out;
  if (scans.empty()) return out;
  out.reserve(scans.size());

  // Small LRU of reduced operators; schedules such as Fixed revisit the same angle set.
  std::deque<std::pair<std::vector<std::int64_t>, std::shared_ptr<const ReducedOperator>>> ops;
  auto operator_for = [&](const SparseProjection& a) {
    const auto key = quantized_key(a.angles);
    for (auto it = ops.begin(); it != ops.end(); ++it)
      if (it->first == key) {
        auto hit = *it;
        ops.erase(it);
        ops.push_front(hit);
        return hit.second;
      }
    auto op = std::make_shared<const ReducedOperator>(reduce_operator(a, basis));
    if (opts.operator_cache > 0) {
      ops.emplace_front(key, op);
      while (ops.size() > opts.operator_cache) ops.pop_back();
    }
    return op;
  };

  FilterState state;
  for (std::size_t idx = 0; idx < scans.size(); ++idx) {
    const int k = static_cast<int>(idx);
    const auto t0 = Clock::now();
    const ScanSlice& scan = scans[idx];
    try {
      const auto a = cache.get(scan.angles);
      const auto op = operator_for(*a);
      Eigen::VectorXd recon;
      SliceTelemetry tel;
      tel.slice = k;
      if (k == 0) {
        state = init_first_slice(*op, *a, scan.sinogram, basis, opts.alpha_tik, noise);
        recon = state.x_pred;
      } else {
        const Prediction pred = opts.route == PredictRoute::Reduced ? predict_reduced(state, basis, noise)
                                                                    : predict(state, basis, noise);
        state = update(state, pred, *a, *op, scan.sinogram, noise, reg);
        recon = state.reconstruction(basis);
        tel.ridge = reg.ridge(scan.angles.size());
      }
      if (!recon.allFinite()) throw NumericalBreakdown(k, "non-finite reconstruction");
      tel.residual_norm = (scan.sinogram - forward(*a, recon)).norm();
      tel.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
      if (on_slice) on_slice(k, recon, tel);
      out.push_back(std::move(recon));
    } catch (const NumericalBreakdown&) {
      throw;
    } catch (const std::exception& e) {
      throw NumericalBreakdown(k, e.what());
    }
  }
  return out;
}

}  // namespace seqtomo
