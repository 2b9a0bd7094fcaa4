#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cmdf/filter.hpp"
#include "cmdf/matrix_ops.hpp"
#include "cmdf/model.hpp"
#include "cmdf/network.hpp"
#include "cmdf/types.hpp"

namespace cmdf {

/// The per-sensor information-like matrices whose orderings decide how the
/// three indices relate:
///   phi_nominal  = sum_j N l_j H_j^T Ru_j^-1 H_j
///   phi_standard = sum_j N l_j H_j^T R_j^-1 H_j
///   phi_true     = sum_j (N l_j)^2 H_j^T Ru_j^-1 R_j Ru_j^-1 H_j
///   phi_excess   = sum_j ((N l_j)^2 - N l_j) H_j^T Ru_j^-1 R_j Ru_j^-1 H_j
///   phi_mismatch = sum_j N l_j H_j^T Ru_j^-1 dR_j Ru_j^-1 H_j
/// They satisfy phi_excess - (phi_true - phi_nominal) = phi_mismatch.
template <typename Scalar>
struct PhiSet {
  Matrix<Scalar> phi_nominal;
  Matrix<Scalar> phi_standard;
  Matrix<Scalar> phi_true;
  Matrix<Scalar> phi_excess;
  Matrix<Scalar> phi_mismatch;
  Scalar identity_residual = 0;  // relative residual of the identity above
};

template <typename Scalar>
PhiSet<Scalar> compute_phi_set(const SystemModel<Scalar>& model,
                               const NoiseSpec<Scalar>& noise,
                               const Vector<Scalar>& row) {
  const int N = model.n_sensors();
  if (static_cast<int>(row.size()) != N) {
    throw std::invalid_argument("compute_phi_set: row length mismatch");
  }
  const int n = model.state_dim();
  PhiSet<Scalar> phi;
  phi.phi_nominal = Matrix<Scalar>::Zero(n, n);
  phi.phi_standard = Matrix<Scalar>::Zero(n, n);
  phi.phi_true = Matrix<Scalar>::Zero(n, n);
  phi.phi_excess = Matrix<Scalar>::Zero(n, n);
  phi.phi_mismatch = Matrix<Scalar>::Zero(n, n);
  for (int j = 0; j < N; ++j) {
    const Scalar nl = Scalar(N) * row(j);
    const Matrix<Scalar> RuInvH =
        detail::spd_solve(noise.R_nominal[j], model.H[j], "compute_phi_set (Ru)");
    const Matrix<Scalar> RinvH =
        detail::spd_solve(noise.R[j], model.H[j], "compute_phi_set (R)");
    const Matrix<Scalar> kernel =
        symmetrized<Scalar>(RuInvH.transpose() * noise.R[j] * RuInvH);
    phi.phi_nominal += nl * symmetrized<Scalar>(model.H[j].transpose() * RuInvH);
    phi.phi_standard += nl * symmetrized<Scalar>(model.H[j].transpose() * RinvH);
    phi.phi_true += nl * nl * kernel;
    phi.phi_excess += (nl * nl - nl) * kernel;
    phi.phi_mismatch +=
        nl * symmetrized<Scalar>(RuInvH.transpose() * noise.delta_r(j) * RuInvH);
  }
  const Matrix<Scalar> gap =
      phi.phi_excess - (phi.phi_true - phi.phi_nominal) - phi.phi_mismatch;
  phi.identity_residual =
      frobenius(gap) / (Scalar(1) + frobenius(phi.phi_true));
  return phi;
}

namespace detail {

template <typename Scalar>
void require_equal_start(const IndexTriple<Scalar>& triple, bool diagnostic,
                         const char* what) {
  if (!triple.from_equal_start && !diagnostic) {
    throw std::invalid_argument(std::string(what) +
                                ": indices did not start equal; pass diagnostic=true "
                                "to decompose anyway");
  }
}

}  // namespace detail

/// Decomposition of (error - standard): a matched-noise part that is always
/// PSD above the standard index, plus a consensus-excess remainder driven by
/// phi_excess. The remainder is also evaluated in its raw gain form.
template <typename Scalar>
struct TsDecomposition {
  Matrix<Scalar> error_matched;  // error recursion with the actual weighted covariance
  Matrix<Scalar> remainder;      // prior * C * phi_excess * C^T * prior
  Matrix<Scalar> remainder_raw;  // gain (R_plain - R_weighted) gain^T
  Matrix<Scalar> contraction;    // C = I - phi_nominal * nominal_post
  Scalar reconstruction_residual = 0;
  Scalar raw_form_residual = 0;
  Scalar matched_minus_standard_min_eig = 0;
};

template <typename Scalar>
TsDecomposition<Scalar> decompose_ts(const IndexTriple<Scalar>& triple, int sensor,
                                     const StackedOperators<Scalar>& ops,
                                     const PhiSet<Scalar>& phi,
                                     bool diagnostic = false) {
  detail::require_equal_start(triple, diagnostic, "decompose_ts");
  const SensorStep<Scalar>& s = triple.sensors[sensor];
  const Eigen::Index n = s.nominal_post.rows();
  const Matrix<Scalar> IKH =
      Matrix<Scalar>::Identity(n, n) - s.gain * ops.H_stacked;

  TsDecomposition<Scalar> out;
  out.error_matched =
      symmetrized<Scalar>(IKH * s.error_prior * IKH.transpose() +
                          s.gain * ops.R_weighted * s.gain.transpose());
  out.contraction = Matrix<Scalar>::Identity(n, n) - phi.phi_nominal * s.nominal_post;
  out.remainder = symmetrized<Scalar>(s.nominal_prior * out.contraction *
                                      phi.phi_excess * out.contraction.transpose() *
                                      s.nominal_prior);
  out.remainder_raw = symmetrized<Scalar>(
      s.gain * (ops.R_plain - ops.R_weighted) * s.gain.transpose());

  const Matrix<Scalar> direct = s.error_post - s.standard_post;
  const Matrix<Scalar> rebuilt = out.error_matched - s.standard_post + out.remainder;
  const Scalar scale = Scalar(1) + frobenius(s.error_post) + frobenius(s.standard_post);
  out.reconstruction_residual = frobenius<Scalar>(direct - rebuilt) / scale;
  out.raw_form_residual =
      frobenius<Scalar>(out.remainder - out.remainder_raw) / scale;
  out.matched_minus_standard_min_eig =
      min_eigenvalue<Scalar>(out.error_matched - s.standard_post);
  return out;
}

/// Decomposition of (error - nominal) into the phi_true/phi_nominal gap
/// conjugated by the nominal posterior plus a process-mismatch term.
template <typename Scalar>
struct TfDecomposition {
  Matrix<Scalar> process_term;  // -(I-KH) dQ (I-KH)^T
  Matrix<Scalar> phi_gap;       // phi_true - phi_nominal in expanded form
  Scalar reconstruction_residual = 0;
  Scalar phi_gap_residual = 0;
};

template <typename Scalar>
TfDecomposition<Scalar> decompose_tf(const IndexTriple<Scalar>& triple, int sensor,
                                     const SystemModel<Scalar>& model,
                                     const NoiseSpec<Scalar>& noise,
                                     const StackedOperators<Scalar>& ops,
                                     const PhiSet<Scalar>& phi,
                                     bool diagnostic = false) {
  detail::require_equal_start(triple, diagnostic, "decompose_tf");
  const SensorStep<Scalar>& s = triple.sensors[sensor];
  const Eigen::Index n = s.nominal_post.rows();
  const Matrix<Scalar> IKH =
      Matrix<Scalar>::Identity(n, n) - s.gain * ops.H_stacked;

  TfDecomposition<Scalar> out;
  out.process_term =
      symmetrized<Scalar>(-(IKH * noise.delta_q() * IKH.transpose()));

  // Expanded gap: sum_j N l_j H^T Ru^-1 ((N l_j - 1) I - N l_j dR Ru^-1) H.
  const int N = model.n_sensors();
  out.phi_gap = Matrix<Scalar>::Zero(n, n);
  for (int j = 0; j < N; ++j) {
    const Scalar nl = Scalar(N) * ops.row(j);
    const int mj = model.sensor_dim(j);
    const Matrix<Scalar> RuInvdR =
        detail::spd_solve(noise.R_nominal[j], Matrix<Scalar>(noise.delta_r(j)),
                          "decompose_tf (dR)");
    const Matrix<Scalar> inner =
        (nl - Scalar(1)) * Matrix<Scalar>::Identity(mj, mj) -
        nl * RuInvdR.transpose();
    const Matrix<Scalar> RuInvInner =
        detail::spd_solve(noise.R_nominal[j], inner, "decompose_tf (Ru)");
    out.phi_gap += nl * model.H[j].transpose() * RuInvInner * model.H[j];
  }
  out.phi_gap = symmetrized(out.phi_gap);
  out.phi_gap_residual =
      frobenius<Scalar>(out.phi_gap - (phi.phi_true - phi.phi_nominal)) /
      (Scalar(1) + frobenius(phi.phi_true));

  const Matrix<Scalar> direct = s.error_post - s.nominal_post;
  const Matrix<Scalar> rebuilt = symmetrized<Scalar>(
      s.nominal_post * (phi.phi_true - phi.phi_nominal) * s.nominal_post +
      out.process_term);
  out.reconstruction_residual =
      frobenius<Scalar>(direct - rebuilt) /
      (Scalar(1) + frobenius(s.error_post) + frobenius(s.nominal_post));
  return out;
}

/// Decomposition of (nominal^-1 - standard^-1) in information space.
template <typename Scalar>
struct FsDecomposition {
  Matrix<Scalar> prior_info_gap;  // nominal_prior^-1 - standard_prior^-1
  Matrix<Scalar> phi_gap;         // phi_nominal - phi_standard, expanded form
  Scalar reconstruction_residual = 0;
  Scalar phi_gap_residual = 0;
};

template <typename Scalar>
FsDecomposition<Scalar> decompose_fs(const IndexTriple<Scalar>& triple, int sensor,
                                     const SystemModel<Scalar>& model,
                                     const NoiseSpec<Scalar>& noise,
                                     const StackedOperators<Scalar>& ops,
                                     const PhiSet<Scalar>& phi,
                                     bool diagnostic = false) {
  detail::require_equal_start(triple, diagnostic, "decompose_fs");
  const SensorStep<Scalar>& s = triple.sensors[sensor];
  FsDecomposition<Scalar> out;
  out.prior_info_gap =
      symmetrized<Scalar>(detail::spd_inverse(s.nominal_prior, "decompose_fs") -
                          detail::spd_inverse(s.standard_prior, "decompose_fs"));

  // Expanded gap: sum_j N l_j H^T (-R^-1 dR Ru^-1) H.
  const int N = model.n_sensors();
  const int n = model.state_dim();
  out.phi_gap = Matrix<Scalar>::Zero(n, n);
  for (int j = 0; j < N; ++j) {
    const Scalar nl = Scalar(N) * ops.row(j);
    const Matrix<Scalar> RinvdR =
        detail::spd_solve(noise.R[j], Matrix<Scalar>(noise.delta_r(j)), "decompose_fs (R)");
    const Matrix<Scalar> RuInvH =
        detail::spd_solve(noise.R_nominal[j], model.H[j], "decompose_fs (Ru)");
    out.phi_gap += nl * model.H[j].transpose() * (-RinvdR * RuInvH);
  }
  out.phi_gap = symmetrized(out.phi_gap);
  out.phi_gap_residual =
      frobenius<Scalar>(out.phi_gap - (phi.phi_nominal - phi.phi_standard)) /
      (Scalar(1) + frobenius(phi.phi_nominal));

  const Matrix<Scalar> direct =
      symmetrized<Scalar>(detail::spd_inverse(s.nominal_post, "decompose_fs") -
                          detail::spd_inverse(s.standard_post, "decompose_fs"));
  const Matrix<Scalar> rebuilt =
      (phi.phi_nominal - phi.phi_standard) + out.prior_info_gap;
  out.reconstruction_residual =
      frobenius<Scalar>(direct - rebuilt) / (Scalar(1) + frobenius(direct));
  return out;
}

/// One theorem applied to one sensor step: which preconditions were checked,
/// whether the predicted ordering chain is asserted, and with what margin it
/// was verified. A failed precondition yields "not asserted", never a failure.
template <typename Scalar>
struct RelationReport {
  std::string theorem;
  std::vector<std::pair<std::string, bool>> preconditions;
  bool preconditions_pass = false;
  std::string predicted_chain;
  std::vector<LoewnerVerdict<Scalar>> verified;
  Scalar min_margin = 0;  // min over chain links of min eig(larger - smaller)
  bool holds = false;
};

template <typename Scalar>
struct RelationSummary {
  std::vector<RelationReport<Scalar>> reports;
  Scalar epsilon = 0;  // min(0, min eig(error - standard)); vanishes as L grows
  bool all_asserted_hold = true;
};

namespace detail {

/// Verifies A(0) <= A(1) <= ... in the PSD order; margin is the worst
/// min-eigenvalue of consecutive differences.
template <typename Scalar>
void verify_chain(RelationReport<Scalar>& report,
                  const std::vector<const Matrix<Scalar>*>& chain, Scalar tol) {
  report.min_margin = std::numeric_limits<Scalar>::max();
  for (size_t i = 0; i + 1 < chain.size(); ++i) {
    auto v = loewner_compare<Scalar>(*chain[i + 1], *chain[i], tol);
    report.min_margin = std::min(report.min_margin, v.min_eig_of_difference);
    report.verified.push_back(std::move(v));
  }
  report.holds = report.min_margin >= -tol;
}

}  // namespace detail

/// Evaluates every one-step relation statement against one sensor step.
/// `at_fusion_limit` marks steps computed at the fusion surrogate (where the
/// consensus powers have numerically reached uniform averaging), which is
/// when the limit statements apply. `zero_tol` decides when a deviation
/// counts as exactly zero; `strict_tol` decides strict definiteness.
template <typename Scalar>
RelationSummary<Scalar> classify_relation(const PhiSet<Scalar>& phi,
                                          const NoiseSpec<Scalar>& noise,
                                          const IndexTriple<Scalar>& triple,
                                          int sensor, Scalar tol,
                                          bool at_fusion_limit = false,
                                          bool diagnostic = false) {
  detail::require_equal_start(triple, diagnostic, "classify_relation");
  const SensorStep<Scalar>& s = triple.sensors[sensor];
  const Matrix<Scalar> dQ = noise.delta_q();
  const Scalar dq_min = min_eigenvalue(dQ);
  const Scalar dq_max = symmetric_eigenvalues(dQ).maxCoeff();
  const Scalar strict_tol = tol;

  const bool dq_zero = frobenius(dQ) <= tol;
  const bool dq_pos = dq_min > strict_tol;
  const bool dq_neg = dq_max < -strict_tol;

  bool dr_all_zero = true, dr_all_geq = true, dr_all_leq = true;
  bool dr_one_pos = false, dr_one_neg = false;
  for (size_t j = 0; j < noise.R.size(); ++j) {
    const Matrix<Scalar> dR = noise.delta_r(static_cast<int>(j));
    const Scalar lo = min_eigenvalue(dR);
    const Scalar hi = symmetric_eigenvalues(dR).maxCoeff();
    if (frobenius(dR) > tol) dr_all_zero = false;
    if (lo < -tol) dr_all_geq = false;
    if (hi > tol) dr_all_leq = false;
    if (lo > strict_tol) dr_one_pos = true;
    if (hi < -strict_tol) dr_one_neg = true;
  }

  const auto cmp = [&](const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
    return loewner_compare<Scalar>(a, b, tol);
  };
  const bool phi_s_leq_f = cmp(phi.phi_nominal, phi.phi_standard).geq();
  const bool phi_f_leq_s = cmp(phi.phi_standard, phi.phi_nominal).geq();
  const bool phi_f_leq_t = cmp(phi.phi_true, phi.phi_nominal).geq();
  const bool phi_t_leq_f = cmp(phi.phi_nominal, phi.phi_true).geq();
  const bool excess_psd =
      min_eigenvalue(phi.phi_excess) >= -tol;

  RelationSummary<Scalar> summary;
  summary.epsilon =
      std::min(Scalar(0), min_eigenvalue<Scalar>(s.error_post - s.standard_post));

  auto add = [&](std::string name,
                 std::vector<std::pair<std::string, bool>> pre,
                 std::string predicted,
                 const std::vector<const Matrix<Scalar>*>& chain) {
    RelationReport<Scalar> report;
    report.theorem = std::move(name);
    report.preconditions = std::move(pre);
    report.preconditions_pass = true;
    for (const auto& [pname, ok] : report.preconditions) {
      (void)pname;
      if (!ok) report.preconditions_pass = false;
    }
    report.predicted_chain = std::move(predicted);
    if (report.preconditions_pass) {
      detail::verify_chain(report, chain, tol);
      if (!report.holds) summary.all_asserted_hold = false;
    }
    summary.reports.push_back(std::move(report));
  };

  const Matrix<Scalar>& std_post = s.standard_post;
  const Matrix<Scalar>& nom_post = s.nominal_post;
  const Matrix<Scalar>& err_post = s.error_post;

  // Error vs standard, driven by the sign of the consensus-excess matrix.
  add("excess-psd", {{"phi_excess >= 0", excess_psd}}, "standard <= error",
      {&std_post, &err_post});

  // Matched process noise, three phi-ordering patterns.
  add("matched-q-chain-nse",
      {{"dQ = 0", dq_zero},
       {"phi_standard <= phi_nominal", phi_s_leq_f},
       {"phi_nominal <= phi_true", phi_f_leq_t},
       {"phi_excess >= 0", excess_psd}},
      "nominal <= standard <= error", {&nom_post, &std_post, &err_post});
  add("matched-q-chain-sne",
      {{"dQ = 0", dq_zero},
       {"phi_nominal <= phi_standard", phi_f_leq_s},
       {"phi_nominal <= phi_true", phi_f_leq_t},
       {"phi_excess >= 0", excess_psd}},
      "standard <= nominal <= error", {&std_post, &nom_post, &err_post});
  add("matched-q-chain-sen",
      {{"dQ = 0", dq_zero},
       {"phi_true <= phi_nominal", phi_t_leq_f},
       {"phi_nominal <= phi_standard", phi_f_leq_s},
       {"phi_excess >= 0", excess_psd}},
      "standard <= error <= nominal", {&std_post, &err_post, &nom_post});

  // Measurement-only mismatch, in the fusion limit.
  add("inflated-r-limit",
      {{"dQ = 0", dq_zero},
       {"all dR >= 0", dr_all_geq},
       {"some dR > 0", dr_one_pos},
       {"at fusion limit", at_fusion_limit}},
      "standard <= error <= nominal", {&std_post, &err_post, &nom_post});
  add("deflated-r-limit",
      {{"dQ = 0", dq_zero},
       {"all dR <= 0", dr_all_leq},
       {"some dR < 0", dr_one_neg},
       {"at fusion limit", at_fusion_limit}},
      "nominal <= standard <= error", {&nom_post, &std_post, &err_post});
  add("matched-r-collapse", {{"dQ = 0", dq_zero}, {"all dR = 0", dr_all_zero}},
      "nominal = standard", {&nom_post, &std_post, &nom_post});
  add("matched-r-collapse-limit",
      {{"dQ = 0", dq_zero},
       {"all dR = 0", dr_all_zero},
       {"at fusion limit", at_fusion_limit}},
      "error = nominal", {&nom_post, &err_post, &nom_post});

  // Process-only mismatch.
  add("inflated-q", {{"all dR = 0", dr_all_zero}, {"dQ > 0", dq_pos}},
      "standard <= nominal", {&std_post, &nom_post});
  add("inflated-q-limit",
      {{"all dR = 0", dr_all_zero},
       {"dQ > 0", dq_pos},
       {"at fusion limit", at_fusion_limit}},
      "standard <= error <= nominal", {&std_post, &err_post, &nom_post});
  add("deflated-q", {{"all dR = 0", dr_all_zero}, {"dQ < 0", dq_neg}},
      "nominal <= standard", {&nom_post, &std_post});
  add("deflated-q-limit",
      {{"all dR = 0", dr_all_zero},
       {"dQ < 0", dq_neg},
       {"at fusion limit", at_fusion_limit}},
      "nominal <= standard <= error", {&nom_post, &std_post, &err_post});

  // Mixed mismatch bundles.
  add("mixed-chain-nse",
      {{"phi_standard <= phi_nominal", phi_s_leq_f},
       {"phi_nominal <= phi_true", phi_f_leq_t},
       {"phi_excess >= 0", excess_psd},
       {"dQ < 0", dq_neg}},
      "nominal <= standard <= error", {&nom_post, &std_post, &err_post});
  add("mixed-chain-sen",
      {{"phi_true <= phi_nominal", phi_t_leq_f},
       {"phi_nominal <= phi_standard", phi_f_leq_s},
       {"phi_excess >= 0", excess_psd},
       {"dQ > 0", dq_pos}},
      "standard <= error <= nominal", {&std_post, &err_post, &nom_post});

  return summary;
}

/// Per-step record of the recursive relation check. The chain is asserted at
/// step k only while its precondition bundle has held at every step up to k.
template <typename Scalar>
struct RecursiveStepRelation {
  int k = 0;
  int sensor = 0;
  bool bundle_nse_pre = false;  // phi_standard <= phi_nominal <= phi_true, excess PSD, dQ < 0
  bool bundle_sen_pre = false;  // phi_true <= phi_nominal <= phi_standard, excess PSD, dQ > 0
  bool nse_asserted = false;
  bool sen_asserted = false;
  Scalar nse_margin = 0;
  Scalar sen_margin = 0;
  bool asserted_ok = true;
};

template <typename Scalar>
struct RecursiveRelationReport {
  std::vector<RecursiveStepRelation<Scalar>> steps;
  bool all_asserted_hold = true;
};

template <typename Scalar>
RecursiveRelationReport<Scalar> recursive_relation_check(
    const SystemModel<Scalar>& model, const NoiseSpec<Scalar>& noise,
    const Matrix<Scalar>& fusion_rows, const Matrix<Scalar>& Sigma0, int horizon,
    Scalar tol) {
  RecursiveRelationReport<Scalar> report;
  IndexTriple<Scalar> triple = make_equal_start_triple(model, Sigma0);
  const int N = model.n_sensors();

  const Matrix<Scalar> dQ = noise.delta_q();
  const bool dq_neg = symmetric_eigenvalues(dQ).maxCoeff() < -tol;
  const bool dq_pos = min_eigenvalue(dQ) > tol;

  std::vector<bool> nse_pre_so_far(N, true), sen_pre_so_far(N, true);
  for (int k = 1; k <= horizon; ++k) {
    triple = advance_index_triple(triple, model, noise, fusion_rows);
    for (int i = 0; i < N; ++i) {
      const PhiSet<Scalar> phi =
          compute_phi_set(model, noise, Vector<Scalar>(fusion_rows.row(i).transpose()));
      const bool excess_psd = min_eigenvalue(phi.phi_excess) >= -tol;
      const bool s_leq_f = loewner_compare<Scalar>(phi.phi_nominal, phi.phi_standard, tol).geq();
      const bool f_leq_t = loewner_compare<Scalar>(phi.phi_true, phi.phi_nominal, tol).geq();
      const bool t_leq_f = loewner_compare<Scalar>(phi.phi_nominal, phi.phi_true, tol).geq();
      const bool f_leq_s = loewner_compare<Scalar>(phi.phi_standard, phi.phi_nominal, tol).geq();

      RecursiveStepRelation<Scalar> step;
      step.k = k;
      step.sensor = i;
      step.bundle_nse_pre = s_leq_f && f_leq_t && excess_psd && dq_neg;
      step.bundle_sen_pre = t_leq_f && f_leq_s && excess_psd && dq_pos;
      nse_pre_so_far[i] = nse_pre_so_far[i] && step.bundle_nse_pre;
      sen_pre_so_far[i] = sen_pre_so_far[i] && step.bundle_sen_pre;

      const auto& s = triple.sensors[i];
      if (nse_pre_so_far[i]) {
        step.nse_asserted = true;
        step.nse_margin = std::min(
            min_eigenvalue<Scalar>(s.standard_post - s.nominal_post),
            min_eigenvalue<Scalar>(s.error_post - s.standard_post));
        if (step.nse_margin < -tol) step.asserted_ok = false;
      }
      if (sen_pre_so_far[i]) {
        step.sen_asserted = true;
        step.sen_margin = std::min(
            min_eigenvalue<Scalar>(s.error_post - s.standard_post),
            min_eigenvalue<Scalar>(s.nominal_post - s.error_post));
        if (step.sen_margin < -tol) step.asserted_ok = false;
      }
      if (!step.asserted_ok) report.all_asserted_hold = false;
      report.steps.push_back(std::move(step));
    }
  }
  return report;
}

/// Least-squares line fit; used to estimate geometric decay rates from log
/// norms.
template <typename Scalar>
struct LineFit {
  Scalar slope = 0;
  Scalar intercept = 0;
  Scalar r_squared = 1;
};

template <typename Scalar>
LineFit<Scalar> line_fit(const std::vector<Scalar>& xs, const std::vector<Scalar>& ys) {
  const size_t m = xs.size();
  if (m != ys.size() || m < 2) {
    throw std::invalid_argument("line_fit: need at least two points");
  }
  Scalar sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (size_t i = 0; i < m; ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
    syy += ys[i] * ys[i];
  }
  const Scalar denom = Scalar(m) * sxx - sx * sx;
  LineFit<Scalar> fit;
  fit.slope = (Scalar(m) * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / Scalar(m);
  Scalar ss_res = 0, ss_tot = 0;
  const Scalar mean_y = sy / Scalar(m);
  for (size_t i = 0; i < m; ++i) {
    const Scalar pred = fit.slope * xs[i] + fit.intercept;
    ss_res += (ys[i] - pred) * (ys[i] - pred);
    ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
  }
  fit.r_squared = ss_tot > Scalar(0) ? Scalar(1) - ss_res / ss_tot : Scalar(1);
  return fit;
}

/// Norm decay of the consensus-excess quantities along an increasing list of
/// fusion steps, with a fitted geometric ratio over the usable tail.
template <typename Scalar>
struct PhiDecayEntry {
  int fusion_steps = 0;
  Scalar phi_excess_norm = 0;   // max over sensors
  Scalar remainder_norm = 0;    // max over sensors of the ts-remainder norm
  Scalar error_nominal_gap = 0; // max over sensors of |error - nominal|_F
};

template <typename Scalar>
struct PhiDecayReport {
  std::vector<PhiDecayEntry<Scalar>> entries;
  Scalar fitted_ratio = 0;  // exp(slope) of log(max norm) against L
  Scalar fit_r_squared = 0;
};

template <typename Scalar>
PhiDecayReport<Scalar> check_phi_vanishing(const SystemModel<Scalar>& model,
                                           const NoiseSpec<Scalar>& noise,
                                           const ConsensusMatrix<Scalar>& L,
                                           const std::vector<int>& fusion_list,
                                           const Matrix<Scalar>& Sigma0) {
  PhiDecayReport<Scalar> report;
  const int N = model.n_sensors();
  for (int steps : fusion_list) {
    if (steps < 1) throw std::invalid_argument("check_phi_vanishing: fusion step < 1");
    const Matrix<Scalar> rows = consensus_power(L, steps);
    IndexTriple<Scalar> triple = make_equal_start_triple(model, Sigma0);
    triple = advance_index_triple(triple, model, noise, rows);
    PhiDecayEntry<Scalar> entry;
    entry.fusion_steps = steps;
    for (int i = 0; i < N; ++i) {
      const Vector<Scalar> row = rows.row(i).transpose();
      const PhiSet<Scalar> phi = compute_phi_set(model, noise, row);
      const StackedOperators<Scalar> ops = build_stacked(model, noise, row);
      const auto ts = decompose_ts(triple, i, ops, phi);
      entry.phi_excess_norm = std::max(entry.phi_excess_norm, frobenius(phi.phi_excess));
      entry.remainder_norm = std::max(entry.remainder_norm, frobenius(ts.remainder));
      entry.error_nominal_gap = std::max(
          entry.error_nominal_gap,
          frobenius<Scalar>(triple.sensors[i].error_post - triple.sensors[i].nominal_post));
    }
    report.entries.push_back(entry);
  }

  // Fit the geometric rate on entries that sit clearly above rounding noise.
  std::vector<Scalar> xs, ys;
  for (const auto& e : report.entries) {
    if (e.phi_excess_norm > Scalar(1e-13)) {
      xs.push_back(Scalar(e.fusion_steps));
      ys.push_back(std::log(e.phi_excess_norm));
    }
  }
  if (xs.size() >= 2) {
    const auto fit = line_fit(xs, ys);
    report.fitted_ratio = std::exp(fit.slope);
    report.fit_r_squared = fit.r_squared;
  }
  return report;
}

/// Identical-sensor monotonicity: when every sensor contributes the same
/// kernel H^T Ru^-1 R Ru^-1 H, the consensus-excess matrix is PSD and
/// monotonically dominated by lower fusion powers, and error >= standard.
template <typename Scalar>
struct IdenticalSensorReport {
  Scalar excess_min_eig_m = 0;       // min eig of phi_excess at power m
  Scalar monotonicity_margin = 0;    // min eig of (phi_excess(d) - phi_excess(m))
  Scalar error_minus_standard = 0;   // min eig at power m
  bool pass = true;
};

template <typename Scalar>
IdenticalSensorReport<Scalar> check_corollary_identical_sensors(
    const SystemModel<Scalar>& model, const NoiseSpec<Scalar>& noise,
    const ConsensusMatrix<Scalar>& L, int d, int m, const Matrix<Scalar>& Sigma0,
    Scalar tol) {
  if (d < 1 || m < d) {
    throw std::invalid_argument("check_corollary_identical_sensors: need m >= d >= 1");
  }
  const int N = model.n_sensors();
  Matrix<Scalar> kernel0;
  for (int j = 0; j < N; ++j) {
    const Matrix<Scalar> RuInvH =
        detail::spd_solve(noise.R_nominal[j], model.H[j], "identical kernels");
    const Matrix<Scalar> kernel =
        symmetrized<Scalar>(RuInvH.transpose() * noise.R[j] * RuInvH);
    if (j == 0) {
      kernel0 = kernel;
    } else if (frobenius<Scalar>(kernel - kernel0) >
               Scalar(1e-10) * (Scalar(1) + frobenius(kernel0))) {
      throw std::invalid_argument(
          "check_corollary_identical_sensors: sensor kernels are not identical");
    }
  }

  const Matrix<Scalar> rows_m = consensus_power(L, m);
  const Matrix<Scalar> rows_d = consensus_power(L, d);
  IndexTriple<Scalar> triple = make_equal_start_triple(model, Sigma0);
  triple = advance_index_triple(triple, model, noise, rows_m);

  IdenticalSensorReport<Scalar> report;
  report.excess_min_eig_m = std::numeric_limits<Scalar>::max();
  report.monotonicity_margin = std::numeric_limits<Scalar>::max();
  report.error_minus_standard = std::numeric_limits<Scalar>::max();
  for (int i = 0; i < N; ++i) {
    const PhiSet<Scalar> phi_m =
        compute_phi_set(model, noise, Vector<Scalar>(rows_m.row(i).transpose()));
    const PhiSet<Scalar> phi_d =
        compute_phi_set(model, noise, Vector<Scalar>(rows_d.row(i).transpose()));
    report.excess_min_eig_m =
        std::min(report.excess_min_eig_m, min_eigenvalue(phi_m.phi_excess));
    report.monotonicity_margin =
        std::min(report.monotonicity_margin,
                 min_eigenvalue<Scalar>(phi_d.phi_excess - phi_m.phi_excess));
    report.error_minus_standard =
        std::min(report.error_minus_standard,
                 min_eigenvalue<Scalar>(triple.sensors[i].error_post -
                                        triple.sensors[i].standard_post));
  }
  report.pass = report.excess_min_eig_m >= -tol &&
                report.monotonicity_margin >= -tol &&
                report.error_minus_standard >= -tol;
  return report;
}

}  // namespace cmdf
