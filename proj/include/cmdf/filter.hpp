#pragma once

#include <cstdint>
#include <vector>

#include "cmdf/matrix_ops.hpp"
#include "cmdf/model.hpp"
#include "cmdf/network.hpp"
#include "cmdf/rng.hpp"
#include "cmdf/types.hpp"

namespace cmdf {

/// Cross-form consistency residuals recorded by the index recursions, all
/// relative to the magnitude of the quantity they check.
template <typename Scalar>
struct StepResiduals {
  Scalar covariance_form = 0;     // standard index: information vs covariance update
  Scalar joseph_form = 0;         // nominal index: information vs Joseph update
  Scalar gain_identity = 0;       // the two gain expressions
  Scalar projection_identity = 0; // I - K H vs post * prior^-1
  Scalar sandwich_form = 0;       // error covariance: gain form vs projected form
};

/// One sensor's slice of the three performance-evaluation recursions at one
/// time step: the standard index (actual covariances), the nominal index
/// (what the filter itself computes), and the estimation error covariance of
/// the nominal filter under the actual statistics.
template <typename Scalar>
struct SensorStep {
  Matrix<Scalar> standard_prior, standard_post;
  Matrix<Scalar> nominal_prior, nominal_post;
  Matrix<Scalar> error_prior, error_post;
  Matrix<Scalar> gain;
  StepResiduals<Scalar> residuals;
};

template <typename Scalar>
struct IndexTriple {
  std::vector<SensorStep<Scalar>> sensors;
  int k = 0;
  // True when the three posteriors coincided at the previous step; the
  // one-step relation results are stated under exactly that hypothesis.
  bool from_equal_start = true;
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> information_form_update(const Matrix<Scalar>& prior,
                                       const Matrix<Scalar>& H_stacked,
                                       const Matrix<Scalar>& R_stacked) {
  const Matrix<Scalar> prior_inv = spd_inverse(prior, "index update (prior)");
  const Matrix<Scalar> info =
      H_stacked.transpose() * spd_solve(R_stacked, H_stacked, "index update (R)");
  return spd_inverse<Scalar>(symmetrized<Scalar>(prior_inv + info), "index update (posterior)");
}

template <typename Scalar>
Matrix<Scalar> covariance_form_update(const Matrix<Scalar>& prior,
                                      const Matrix<Scalar>& H_stacked,
                                      const Matrix<Scalar>& R_stacked) {
  const Matrix<Scalar> S =
      symmetrized<Scalar>(R_stacked + H_stacked * prior * H_stacked.transpose());
  const Matrix<Scalar> HP = H_stacked * prior;
  return symmetrized<Scalar>(prior -
                             HP.transpose() * spd_solve(S, HP, "covariance update"));
}

template <typename Scalar>
Scalar relative_gap(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  return frobenius<Scalar>(a - b) / (Scalar(1) + frobenius(a));
}

}  // namespace detail

/// Standard index: prediction with the actual Q, correction with the actual
/// measurement covariances. Returns prior and posterior plus the residual
/// between the information-form and covariance-form updates.
template <typename Scalar>
struct StandardStepResult {
  Matrix<Scalar> prior, post;
  Scalar covariance_form_residual = 0;
};

template <typename Scalar>
StandardStepResult<Scalar> standard_index_step(const Matrix<Scalar>& prev_post,
                                               const Matrix<Scalar>& F,
                                               const Matrix<Scalar>& Q,
                                               const StackedOperators<Scalar>& ops) {
  StandardStepResult<Scalar> out;
  out.prior = symmetrized<Scalar>(F * prev_post * F.transpose() + Q);
  out.post = detail::information_form_update(out.prior, ops.H_stacked, ops.R_weighted);
  const Matrix<Scalar> alt =
      detail::covariance_form_update(out.prior, ops.H_stacked, ops.R_weighted);
  out.covariance_form_residual = detail::relative_gap(out.post, alt);
  return out;
}

/// Nominal index: the recursion the filter actually runs, using the nominal
/// covariances throughout. Also produces the gain and its identity residuals.
template <typename Scalar>
struct NominalStepResult {
  Matrix<Scalar> prior, post, gain;
  Scalar joseph_residual = 0;
  Scalar gain_identity_residual = 0;
  Scalar projection_identity_residual = 0;
};

template <typename Scalar>
NominalStepResult<Scalar> nominal_index_step(const Matrix<Scalar>& prev_post,
                                             const Matrix<Scalar>& F,
                                             const Matrix<Scalar>& Q_nominal,
                                             const StackedOperators<Scalar>& ops) {
  NominalStepResult<Scalar> out;
  out.prior = symmetrized<Scalar>(F * prev_post * F.transpose() + Q_nominal);
  out.post = detail::information_form_update(out.prior, ops.H_stacked, ops.R_weighted_nominal);

  // Gain, both ways: post H^T Ru^-1 and prior H^T (Ru + H prior H^T)^-1.
  const Matrix<Scalar> HtRinv =
      detail::spd_solve(ops.R_weighted_nominal, ops.H_stacked, "nominal gain").transpose();
  out.gain = out.post * HtRinv;
  const Matrix<Scalar> S = symmetrized<Scalar>(
      ops.R_weighted_nominal + ops.H_stacked * out.prior * ops.H_stacked.transpose());
  const Matrix<Scalar> gain_alt =
      detail::spd_solve(S, Matrix<Scalar>(ops.H_stacked * out.prior), "nominal gain alt")
          .transpose();
  out.gain_identity_residual = detail::relative_gap(out.gain, gain_alt);

  const Eigen::Index n = F.rows();
  const Matrix<Scalar> IKH =
      Matrix<Scalar>::Identity(n, n) - out.gain * ops.H_stacked;
  const Matrix<Scalar> joseph =
      symmetrized<Scalar>(IKH * out.prior * IKH.transpose() +
                          out.gain * ops.R_weighted_nominal * out.gain.transpose());
  out.joseph_residual = detail::relative_gap(out.post, joseph);

  const Matrix<Scalar> projected =
      out.post * detail::spd_inverse(out.prior, "nominal projection");
  out.projection_identity_residual =
      frobenius<Scalar>(IKH - projected) / (Scalar(1) + frobenius(IKH));
  return out;
}

/// Estimation error covariance of the nominal filter: prediction with the
/// actual Q, correction driven by the nominal gain but weighted by the actual
/// measurement covariances.
template <typename Scalar>
struct ErrorCovStepResult {
  Matrix<Scalar> prior, post;
  Scalar sandwich_form_residual = 0;
};

template <typename Scalar>
ErrorCovStepResult<Scalar> true_covariance_step(const Matrix<Scalar>& prev_post,
                                                const Matrix<Scalar>& F,
                                                const Matrix<Scalar>& Q,
                                                const Matrix<Scalar>& gain,
                                                const Matrix<Scalar>& nominal_prior,
                                                const Matrix<Scalar>& nominal_post,
                                                const StackedOperators<Scalar>& ops) {
  ErrorCovStepResult<Scalar> out;
  out.prior = symmetrized<Scalar>(F * prev_post * F.transpose() + Q);
  const Eigen::Index n = F.rows();
  const Matrix<Scalar> IKH = Matrix<Scalar>::Identity(n, n) - gain * ops.H_stacked;
  out.post = symmetrized<Scalar>(IKH * out.prior * IKH.transpose() +
                                 gain * ops.R_plain * gain.transpose());

  // Equivalent projected form through the nominal posterior and prior.
  const Matrix<Scalar> A =
      nominal_post * detail::spd_inverse(nominal_prior, "error covariance projection");
  const Matrix<Scalar> RuInvH =
      detail::spd_solve(ops.R_weighted_nominal, ops.H_stacked, "error covariance");
  const Matrix<Scalar> phi_true =
      symmetrized<Scalar>(RuInvH.transpose() * ops.R_plain * RuInvH);
  const Matrix<Scalar> alt = symmetrized<Scalar>(
      A * out.prior * A.transpose() + nominal_post * phi_true * nominal_post);
  out.sandwich_form_residual = detail::relative_gap(out.post, alt);
  return out;
}

/// Equal triple at time zero: all three indices start from the same
/// posterior, which is the hypothesis of the one-step relation results.
template <typename Scalar>
IndexTriple<Scalar> make_equal_start_triple(const SystemModel<Scalar>& model,
                                            const Matrix<Scalar>& Sigma0) {
  IndexTriple<Scalar> triple;
  triple.k = 0;
  triple.from_equal_start = true;
  triple.sensors.resize(model.n_sensors());
  for (auto& s : triple.sensors) {
    s.standard_post = s.nominal_post = s.error_post = symmetrized(Sigma0);
    s.standard_prior = s.nominal_prior = s.error_prior = symmetrized(Sigma0);
  }
  return triple;
}

/// Advances all three recursions one step for every sensor, given the rows of
/// the L-th consensus power.
template <typename Scalar>
IndexTriple<Scalar> advance_index_triple(const IndexTriple<Scalar>& prev,
                                         const SystemModel<Scalar>& model,
                                         const NoiseSpec<Scalar>& noise,
                                         const Matrix<Scalar>& fusion_rows) {
  if (fusion_rows.rows() != model.n_sensors() ||
      fusion_rows.cols() != model.n_sensors()) {
    throw std::invalid_argument("advance_index_triple: fusion matrix shape mismatch");
  }
  IndexTriple<Scalar> next;
  next.k = prev.k + 1;
  next.sensors.resize(model.n_sensors());
  bool equal = true;
  for (int i = 0; i < model.n_sensors(); ++i) {
    const auto& p = prev.sensors[i];
    const Scalar scale = Scalar(1) + frobenius(p.standard_post);
    if (frobenius<Scalar>(p.standard_post - p.nominal_post) > Scalar(1e-11) * scale ||
        frobenius<Scalar>(p.standard_post - p.error_post) > Scalar(1e-11) * scale) {
      equal = false;
    }
    const Vector<Scalar> row = fusion_rows.row(i).transpose();
    const StackedOperators<Scalar> ops = build_stacked(model, noise, row);
    auto& s = next.sensors[i];

    const auto std_step = standard_index_step(p.standard_post, model.F, noise.Q, ops);
    s.standard_prior = std_step.prior;
    s.standard_post = std_step.post;
    s.residuals.covariance_form = std_step.covariance_form_residual;

    const auto nom_step = nominal_index_step(p.nominal_post, model.F, noise.Q_nominal, ops);
    s.nominal_prior = nom_step.prior;
    s.nominal_post = nom_step.post;
    s.gain = nom_step.gain;
    s.residuals.joseph_form = nom_step.joseph_residual;
    s.residuals.gain_identity = nom_step.gain_identity_residual;
    s.residuals.projection_identity = nom_step.projection_identity_residual;

    const auto err_step = true_covariance_step(p.error_post, model.F, noise.Q, s.gain,
                                               s.nominal_prior, s.nominal_post, ops);
    s.error_prior = err_step.prior;
    s.error_post = err_step.post;
    s.residuals.sandwich_form = err_step.sandwich_form_residual;
  }
  next.from_equal_start = equal;
  return next;
}

/// Runtime state of the distributed filter itself. The covariance here is the
/// filter's own (nominal) covariance, produced by the consensus sweeps.
template <typename Scalar>
struct FilterState {
  std::vector<Vector<Scalar>> xhat_prior, xhat_post;
  std::vector<Matrix<Scalar>> cov_prior, cov_post;
  int k = 0;
};

template <typename Scalar>
FilterState<Scalar> make_filter_state(const SystemModel<Scalar>& model,
                                      const Vector<Scalar>& xhat0,
                                      const Matrix<Scalar>& Sigma0) {
  if (xhat0.size() != model.state_dim() || Sigma0.rows() != model.state_dim() ||
      Sigma0.cols() != model.state_dim()) {
    throw std::invalid_argument("make_filter_state: dimension mismatch");
  }
  FilterState<Scalar> st;
  st.k = 0;
  st.xhat_prior.assign(model.n_sensors(), xhat0);
  st.xhat_post.assign(model.n_sensors(), xhat0);
  st.cov_prior.assign(model.n_sensors(), symmetrized(Sigma0));
  st.cov_post.assign(model.n_sensors(), symmetrized(Sigma0));
  return st;
}

/// One step of the distributed filter: predict, run `fusion_steps` consensus
/// sweeps on the information pairs (U, V), correct. Consensus is realized
/// only through per-edge weighted sums; powers of the weight matrix never
/// enter here.
template <typename Scalar>
FilterState<Scalar> cmdf_step(const FilterState<Scalar>& state,
                              const SystemModel<Scalar>& model,
                              const NoiseSpec<Scalar>& noise,
                              const ConsensusMatrix<Scalar>& L, int fusion_steps,
                              const std::vector<Vector<Scalar>>& measurements) {
  if (fusion_steps < 1) {
    throw std::invalid_argument("cmdf_step: fusion_steps must be >= 1");
  }
  const int N = model.n_sensors();
  if (L.size() != N || static_cast<int>(measurements.size()) != N) {
    throw std::invalid_argument("cmdf_step: sensor count mismatch");
  }
  const int n = model.state_dim();
  const Scalar scale_n = Scalar(N);

  FilterState<Scalar> next;
  next.k = state.k + 1;
  next.xhat_prior.resize(N);
  next.xhat_post.resize(N);
  next.cov_prior.resize(N);
  next.cov_post.resize(N);

  std::vector<Matrix<Scalar>> U(N);
  std::vector<Vector<Scalar>> V(N);
  for (int i = 0; i < N; ++i) {
    next.xhat_prior[i] = model.F * state.xhat_post[i];
    next.cov_prior[i] = symmetrized<Scalar>(
        model.F * state.cov_post[i] * model.F.transpose() + noise.Q_nominal);
    if (measurements[i].size() != model.sensor_dim(i)) {
      throw std::invalid_argument("cmdf_step: measurement dimension mismatch");
    }
    const Matrix<Scalar> HtRinv =
        detail::spd_solve(noise.R_nominal[i], model.H[i], "cmdf_step (R)").transpose();
    U[i] = scale_n * HtRinv * model.H[i];
    V[i] = scale_n * HtRinv * measurements[i];
  }

  std::vector<Matrix<Scalar>> U_next(N);
  std::vector<Vector<Scalar>> V_next(N);
  for (int sweep = 0; sweep < fusion_steps; ++sweep) {
    for (int i = 0; i < N; ++i) {
      Matrix<Scalar> u = Matrix<Scalar>::Zero(n, n);
      Vector<Scalar> v = Vector<Scalar>::Zero(n);
      for (int j = 0; j < N; ++j) {
        const Scalar w = L(i, j);
        if (w > Scalar(0)) {
          u += w * U[j];
          v += w * V[j];
        }
      }
      U_next[i] = std::move(u);
      V_next[i] = std::move(v);
    }
    std::swap(U, U_next);
    std::swap(V, V_next);
  }

  for (int i = 0; i < N; ++i) {
    Eigen::LDLT<Matrix<Scalar>> prior_ldlt(next.cov_prior[i]);
    if (prior_ldlt.info() != Eigen::Success || !prior_ldlt.isPositive()) {
      throw NumericalError("cmdf_step: predicted covariance is not positive definite");
    }
    const Matrix<Scalar> info =
        symmetrized<Scalar>(Matrix<Scalar>(prior_ldlt.solve(Matrix<Scalar>::Identity(n, n))) + U[i]);
    Eigen::LDLT<Matrix<Scalar>> info_ldlt(info);
    if (info_ldlt.info() != Eigen::Success || !info_ldlt.isPositive()) {
      throw NumericalError("cmdf_step: fused information matrix is singular");
    }
    next.cov_post[i] = symmetrized<Scalar>(info_ldlt.solve(Matrix<Scalar>::Identity(n, n)));
    next.xhat_post[i] =
        next.cov_post[i] * (prior_ldlt.solve(next.xhat_prior[i]) + V[i]);
  }
  return next;
}

/// Ground-truth simulation with the actual covariances. All draws come from a
/// deterministic counter-based stream, so a seed pins the whole trajectory.
template <typename Scalar>
struct TrajectoryRecord {
  std::vector<Vector<Scalar>> states;                        // x_0 .. x_T
  std::vector<std::vector<Vector<Scalar>>> measurements;     // [k-1][sensor], k = 1..T
  std::vector<std::vector<Vector<Scalar>>> measurement_noise;
  std::vector<Vector<Scalar>> process_noise;                 // w_0 .. w_{T-1}
  std::uint64_t seed = 0;
};

template <typename Scalar>
TrajectoryRecord<Scalar> simulate_truth(const SystemModel<Scalar>& model,
                                        const NoiseSpec<Scalar>& noise,
                                        const Vector<Scalar>& x0_mean,
                                        const Matrix<Scalar>& x0_cov, int horizon,
                                        std::uint64_t seed) {
  if (horizon < 1) throw std::invalid_argument("simulate_truth: horizon must be >= 1");
  const int N = model.n_sensors();
  const Matrix<Scalar> chol_x0 = cholesky_factor<Scalar>(symmetrized(x0_cov));
  const Matrix<Scalar> chol_q = cholesky_factor<Scalar>(symmetrized(noise.Q));
  std::vector<Matrix<Scalar>> chol_r;
  chol_r.reserve(N);
  for (int i = 0; i < N; ++i) {
    chol_r.push_back(cholesky_factor<Scalar>(symmetrized(noise.R[i])));
  }

  Rng rng(seed);
  TrajectoryRecord<Scalar> traj;
  traj.seed = seed;
  traj.states.push_back(sample_gaussian(rng, x0_mean, chol_x0));
  for (int k = 0; k < horizon; ++k) {
    const Vector<Scalar> w =
        chol_q * rng.normal_vector<Scalar>(model.state_dim());
    traj.process_noise.push_back(w);
    traj.states.push_back(model.F * traj.states.back() + w);
    std::vector<Vector<Scalar>> ys(N), nus(N);
    for (int i = 0; i < N; ++i) {
      nus[i] = chol_r[i] * rng.normal_vector<Scalar>(model.sensor_dim(i));
      ys[i] = model.H[i] * traj.states.back() + nus[i];
    }
    traj.measurements.push_back(std::move(ys));
    traj.measurement_noise.push_back(std::move(nus));
  }
  return traj;
}

}  // namespace cmdf
