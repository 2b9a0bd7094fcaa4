#pragma once

#include <vector>

#include "cmdf/matrix_ops.hpp"
#include "cmdf/types.hpp"

namespace cmdf {

/// Linear system x_{k+1} = F x_k + w_k observed by N sensors
/// y_{i,k} = H_i x_k + v_{i,k}.
template <typename Scalar>
struct SystemModel {
  Matrix<Scalar> F;
  std::vector<Matrix<Scalar>> H;

  int state_dim() const { return static_cast<int>(F.rows()); }
  int n_sensors() const { return static_cast<int>(H.size()); }
  int sensor_dim(int i) const { return static_cast<int>(H[i].rows()); }

  void validate() const {
    if (F.rows() != F.cols() || F.rows() < 1) {
      throw std::invalid_argument("SystemModel: F must be square and nonempty");
    }
    if (H.empty()) throw std::invalid_argument("SystemModel: need at least one sensor");
    for (const auto& h : H) {
      if (h.cols() != F.rows() || h.rows() < 1) {
        throw std::invalid_argument("SystemModel: H_i must have state_dim columns");
      }
    }
  }
};

/// Actual and nominal noise covariances. The filter only ever sees the
/// nominal pair; the actual pair drives simulation and the error covariance.
/// All four families must be symmetric positive definite.
template <typename Scalar>
struct NoiseSpec {
  Matrix<Scalar> Q;                  // actual process covariance
  Matrix<Scalar> Q_nominal;          // covariance the filter assumes
  std::vector<Matrix<Scalar>> R;          // actual measurement covariances
  std::vector<Matrix<Scalar>> R_nominal;  // assumed measurement covariances

  Matrix<Scalar> delta_q() const { return Q_nominal - Q; }
  Matrix<Scalar> delta_r(int i) const { return R_nominal[i] - R[i]; }

  bool matched(Scalar tol = Scalar(0)) const {
    if (frobenius<Scalar>(delta_q()) > tol) return false;
    for (size_t i = 0; i < R.size(); ++i) {
      if (frobenius<Scalar>(R_nominal[i] - R[i]) > tol) return false;
    }
    return true;
  }

  void validate(const SystemModel<Scalar>& model) const {
    auto require_spd = [](const Matrix<Scalar>& m, const char* what) {
      if (m.rows() != m.cols()) {
        throw std::invalid_argument(std::string(what) + " must be square");
      }
      if (frobenius<Scalar>(m - m.transpose()) > Scalar(1e-12) * (Scalar(1) + frobenius(m))) {
        throw std::invalid_argument(std::string(what) + " must be symmetric");
      }
      if (!is_positive_definite(symmetrized(m))) {
        throw std::invalid_argument(std::string(what) + " must be positive definite");
      }
    };
    require_spd(Q, "NoiseSpec: Q");
    require_spd(Q_nominal, "NoiseSpec: Q_nominal");
    if (Q.rows() != model.state_dim() || Q_nominal.rows() != model.state_dim()) {
      throw std::invalid_argument("NoiseSpec: process covariance dimension mismatch");
    }
    if (static_cast<int>(R.size()) != model.n_sensors() ||
        static_cast<int>(R_nominal.size()) != model.n_sensors()) {
      throw std::invalid_argument("NoiseSpec: need one R and one R_nominal per sensor");
    }
    for (int i = 0; i < model.n_sensors(); ++i) {
      require_spd(R[i], "NoiseSpec: R_i");
      require_spd(R_nominal[i], "NoiseSpec: R_nominal_i");
      if (R[i].rows() != model.sensor_dim(i) || R_nominal[i].rows() != model.sensor_dim(i)) {
        throw std::invalid_argument("NoiseSpec: measurement covariance dimension mismatch");
      }
    }
  }
};

/// Fusion-row entries below this threshold count as structural zeros. Exact
/// zeros only arise from topology structure (no path yet at this power).
template <typename Scalar>
constexpr Scalar kActiveWeightThreshold = Scalar(1e-14);

/// Per-sensor stacked operators built from one row of the L-th consensus
/// power: the stacked measurement matrix over active peers, the weighted and
/// unweighted block-diagonal measurement covariances, their nominal
/// counterparts, and the per-peer weights h_j = 1 / (N l_j).
template <typename Scalar>
struct StackedOperators {
  Matrix<Scalar> H_stacked;    // rows: active sensors' H_j stacked in index order
  Matrix<Scalar> R_weighted;   // diag(h_j R_j) over active j
  Matrix<Scalar> R_plain;      // diag(R_j) over active j
  Matrix<Scalar> R_weighted_nominal;  // diag(h_j R_nominal_j)
  Matrix<Scalar> dR_plain;     // diag(R_nominal_j - R_j)
  std::vector<int> active;     // sensors j with row_j > 0
  Vector<Scalar> h_weights;    // full-length; zero for inactive sensors
  Vector<Scalar> row;          // the fusion row itself

  int stacked_dim() const { return static_cast<int>(H_stacked.rows()); }
};

/// Builds the stacked operators for one sensor from its fusion row. The row
/// must be a probability vector (entries of a doubly stochastic power).
template <typename Scalar>
StackedOperators<Scalar> build_stacked(const SystemModel<Scalar>& model,
                                       const NoiseSpec<Scalar>& noise,
                                       const Vector<Scalar>& row) {
  const int n_sensors = model.n_sensors();
  if (static_cast<int>(row.size()) != n_sensors) {
    throw std::invalid_argument("build_stacked: row length must equal sensor count");
  }
  if ((row.array() < -kActiveWeightThreshold<Scalar>).any()) {
    throw std::invalid_argument("build_stacked: negative fusion weight");
  }
  if (std::abs(row.sum() - Scalar(1)) > Scalar(1e-10)) {
    throw std::invalid_argument("build_stacked: fusion row must sum to one");
  }

  StackedOperators<Scalar> ops;
  ops.row = row;
  ops.h_weights = Vector<Scalar>::Zero(n_sensors);
  int total = 0;
  for (int j = 0; j < n_sensors; ++j) {
    if (row(j) > kActiveWeightThreshold<Scalar>) {
      ops.active.push_back(j);
      ops.h_weights(j) = Scalar(1) / (Scalar(n_sensors) * row(j));
      total += model.sensor_dim(j);
    }
  }
  if (ops.active.empty()) {
    throw std::invalid_argument("build_stacked: no active sensors in fusion row");
  }

  const int n = model.state_dim();
  ops.H_stacked = Matrix<Scalar>::Zero(total, n);
  ops.R_weighted = Matrix<Scalar>::Zero(total, total);
  ops.R_plain = Matrix<Scalar>::Zero(total, total);
  ops.R_weighted_nominal = Matrix<Scalar>::Zero(total, total);
  ops.dR_plain = Matrix<Scalar>::Zero(total, total);
  int offset = 0;
  for (int j : ops.active) {
    const int mj = model.sensor_dim(j);
    ops.H_stacked.block(offset, 0, mj, n) = model.H[j];
    ops.R_weighted.block(offset, offset, mj, mj) = ops.h_weights(j) * noise.R[j];
    ops.R_plain.block(offset, offset, mj, mj) = noise.R[j];
    ops.R_weighted_nominal.block(offset, offset, mj, mj) =
        ops.h_weights(j) * noise.R_nominal[j];
    ops.dR_plain.block(offset, offset, mj, mj) = noise.R_nominal[j] - noise.R[j];
    offset += mj;
  }
  return ops;
}

/// Fused information matrix sum_j N l_j H_j^T R_j^-1 H_j for one fusion row.
/// Equals H_stacked^T R_weighted^-1 H_stacked of the stacked form.
template <typename Scalar>
Matrix<Scalar> information_sum(const SystemModel<Scalar>& model,
                               const std::vector<Matrix<Scalar>>& R_list,
                               const Vector<Scalar>& row) {
  const int n_sensors = model.n_sensors();
  if (static_cast<int>(row.size()) != n_sensors ||
      static_cast<int>(R_list.size()) != n_sensors) {
    throw std::invalid_argument("information_sum: length mismatch");
  }
  const int n = model.state_dim();
  Matrix<Scalar> sum = Matrix<Scalar>::Zero(n, n);
  for (int j = 0; j < n_sensors; ++j) {
    if (row(j) <= kActiveWeightThreshold<Scalar>) continue;
    const Matrix<Scalar> RinvH =
        detail::spd_solve<Scalar>(R_list[j], model.H[j], "information_sum");
    sum += Scalar(n_sensors) * row(j) * model.H[j].transpose() * RinvH;
  }
  return symmetrized(sum);
}

}  // namespace cmdf
