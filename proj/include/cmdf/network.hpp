#pragma once

#include <queue>
#include <utility>
#include <vector>

#include "cmdf/matrix_ops.hpp"
#include "cmdf/types.hpp"

namespace cmdf {

/// Undirected communication graph over sensors 0..n-1. Every node implicitly
/// communicates with itself; edges are distinct node pairs. Connectivity is
/// required at construction.
class Topology {
 public:
  Topology(int n_sensors, std::vector<std::pair<int, int>> edges)
      : n_(n_sensors), edges_(std::move(edges)) {
    if (n_ < 1) throw std::invalid_argument("Topology: need at least one sensor");
    adjacency_.assign(n_, {});
    for (auto& [a, b] : edges_) {
      if (a < 0 || a >= n_ || b < 0 || b >= n_) {
        throw std::invalid_argument("Topology: edge index out of range");
      }
      if (a == b) {
        throw std::invalid_argument("Topology: explicit self-loops are not allowed");
      }
      adjacency_[a].push_back(b);
      adjacency_[b].push_back(a);
    }
    if (!connected()) {
      throw std::invalid_argument("Topology: graph is not connected");
    }
  }

  int n_sensors() const { return n_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  const std::vector<int>& neighbors(int i) const { return adjacency_[i]; }
  int degree(int i) const { return static_cast<int>(adjacency_[i].size()); }

 private:
  bool connected() const {
    std::vector<char> seen(n_, 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    int count = 1;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int v : adjacency_[u]) {
        if (!seen[v]) {
          seen[v] = 1;
          ++count;
          q.push(v);
        }
      }
    }
    return count == n_;
  }

  int n_;
  std::vector<std::pair<int, int>> edges_;
  std::vector<std::vector<int>> adjacency_;
};

/// Neighbor-cardinality convention for Metropolis weights. The self-inclusive
/// count (degree + 1) is the standard choice and keeps diagonals positive;
/// the exclusive count exists so scenario matching can try both.
enum class NeighborCount { kIncludeSelf, kExcludeSelf };

/// Doubly stochastic nonnegative fusion-weight matrix over the network.
template <typename Scalar>
class ConsensusMatrix {
 public:
  explicit ConsensusMatrix(Matrix<Scalar> weights, bool require_positive_diagonal = true)
      : weights_(std::move(weights)) {
    const Eigen::Index n = weights_.rows();
    if (weights_.cols() != n || n < 1) {
      throw std::invalid_argument("ConsensusMatrix: matrix must be square");
    }
    constexpr Scalar tol = Scalar(1e-12);
    if ((weights_.array() < -tol).any()) {
      throw std::invalid_argument("ConsensusMatrix: negative weight");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(weights_.row(i).sum() - Scalar(1)) > tol ||
          std::abs(weights_.col(i).sum() - Scalar(1)) > tol) {
        throw std::invalid_argument("ConsensusMatrix: matrix is not doubly stochastic");
      }
    }
    positive_diagonal_ = (weights_.diagonal().array() > Scalar(0)).all();
    if (require_positive_diagonal && !positive_diagonal_) {
      throw std::invalid_argument("ConsensusMatrix: diagonal entry is not positive");
    }
  }

  const Matrix<Scalar>& weights() const { return weights_; }
  int size() const { return static_cast<int>(weights_.rows()); }
  bool has_positive_diagonal() const { return positive_diagonal_; }
  Scalar operator()(int i, int j) const { return weights_(i, j); }

 private:
  Matrix<Scalar> weights_;
  bool positive_diagonal_ = false;
};

/// Metropolis weights: w_ij = 1 / max(|N_i|, |N_j|) on edges, diagonal fills
/// the row to one. Symmetric and doubly stochastic on any undirected graph.
template <typename Scalar>
ConsensusMatrix<Scalar> metropolis_weights(
    const Topology& topo, NeighborCount convention = NeighborCount::kIncludeSelf,
    bool require_positive_diagonal = true) {
  const int n = topo.n_sensors();
  const int self = convention == NeighborCount::kIncludeSelf ? 1 : 0;
  Matrix<Scalar> w = Matrix<Scalar>::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j : topo.neighbors(i)) {
      w(i, j) = Scalar(1) / Scalar(std::max(topo.degree(i) + self, topo.degree(j) + self));
    }
  }
  for (int i = 0; i < n; ++i) {
    w(i, i) = Scalar(1) - w.row(i).sum();
  }
  return ConsensusMatrix<Scalar>(std::move(w), require_positive_diagonal);
}

/// m-th power of the weight matrix by repeated multiplication (m = 0 gives I).
/// No eigendecomposition shortcut, so entries are bit-reproducible.
template <typename Scalar>
Matrix<Scalar> consensus_power(const ConsensusMatrix<Scalar>& L, int m) {
  if (m < 0) throw std::invalid_argument("consensus_power: m must be >= 0");
  const int n = L.size();
  Matrix<Scalar> out = Matrix<Scalar>::Identity(n, n);
  for (int s = 0; s < m; ++s) out = (out * L.weights()).eval();
  return out;
}

/// Entrywise deviation matrix with entries (N l)^2 - gamma N l taken from the
/// m-th consensus power. gamma = 1 vanishes as m grows; gamma = 0 tends to 1.
template <typename Scalar>
struct ConsensusDeviation {
  Matrix<Scalar> entries;
  int gamma = 1;
  int m = 1;
};

template <typename Scalar>
ConsensusDeviation<Scalar> consensus_deviation(const ConsensusMatrix<Scalar>& L, int m,
                                               int gamma) {
  if (m < 1) throw std::invalid_argument("consensus_deviation: m must be >= 1");
  if (gamma != 0 && gamma != 1) {
    throw std::invalid_argument("consensus_deviation: gamma must be 0 or 1");
  }
  const Scalar n = Scalar(L.size());
  const Matrix<Scalar> scaled = n * consensus_power(L, m);
  ConsensusDeviation<Scalar> dev;
  dev.entries = scaled.array().square().matrix() - Scalar(gamma) * scaled;
  dev.gamma = gamma;
  dev.m = m;
  return dev;
}

template <typename Scalar>
struct RowSumCheck {
  Scalar lower_bound = 0;        // (1 - gamma) N
  std::vector<Scalar> sums_m;    // per-row deviation sums at power m
  std::vector<Scalar> sums_d;    // per-row deviation sums at power d
  bool pass = true;
};

/// Verifies per row: (1-gamma) N <= sum_j dev_m(i,j) <= sum_j dev_d(i,j)
/// for m >= d (the majorization monotonicity of the deviation row sums).
template <typename Scalar>
RowSumCheck<Scalar> check_majorization_sums(const ConsensusMatrix<Scalar>& L, int d,
                                            int m, int gamma,
                                            Scalar tol = Scalar(1e-10)) {
  if (d < 1 || m < d) {
    throw std::invalid_argument("check_majorization_sums: need m >= d >= 1");
  }
  const auto dev_m = consensus_deviation(L, m, gamma);
  const auto dev_d = consensus_deviation(L, d, gamma);
  RowSumCheck<Scalar> report;
  report.lower_bound = Scalar((1 - gamma) * L.size());
  for (int i = 0; i < L.size(); ++i) {
    const Scalar sm = dev_m.entries.row(i).sum();
    const Scalar sd = dev_d.entries.row(i).sum();
    report.sums_m.push_back(sm);
    report.sums_d.push_back(sd);
    if (sm < report.lower_bound - tol || sm > sd + tol) report.pass = false;
  }
  return report;
}

template <typename Scalar>
struct EntryBoundsCheck {
  Scalar l_min = 0;  // smallest entry of the d-th power
  Scalar l_max = 0;  // largest entry of the d-th power
  bool entries_within = true;
  bool range_valid = true;  // 1/N <= l_max <= 1 and 0 <= l_min <= 1/N
  bool pass = true;
};

/// Every entry of L^m must lie inside [min, max] of the entries of L^d, and
/// those extremes bracket 1/N from below and above.
template <typename Scalar>
EntryBoundsCheck<Scalar> check_entry_bounds(const ConsensusMatrix<Scalar>& L, int d,
                                            int m, Scalar tol = Scalar(1e-12)) {
  if (d < 1 || m < d) {
    throw std::invalid_argument("check_entry_bounds: need m >= d >= 1");
  }
  const Matrix<Scalar> pd = consensus_power(L, d);
  const Matrix<Scalar> pm = consensus_power(L, m);
  EntryBoundsCheck<Scalar> report;
  report.l_min = pd.minCoeff();
  report.l_max = pd.maxCoeff();
  report.entries_within = (pm.array() >= report.l_min - tol).all() &&
                          (pm.array() <= report.l_max + tol).all();
  const Scalar inv_n = Scalar(1) / Scalar(L.size());
  report.range_valid = report.l_max >= inv_n - tol && report.l_max <= Scalar(1) + tol &&
                       report.l_min >= -tol && report.l_min <= inv_n + tol;
  report.pass = report.entries_within && report.range_valid;
  return report;
}

template <typename Scalar>
struct DeviationBoundsCheck {
  Scalar lower = 0;  // min(-gamma/4, (N l_min)^2 - gamma N l_min)
  Scalar upper = 0;  // (N l_max)^2 - gamma N l_max
  bool pass = true;
};

/// Entry bounds for the deviation matrix at power m, with the quadratic bound
/// constants taken from the extreme entries of L^d.
template <typename Scalar>
DeviationBoundsCheck<Scalar> check_lbar_bounds(const ConsensusMatrix<Scalar>& L, int d,
                                               int m, int gamma,
                                               Scalar tol = Scalar(1e-12)) {
  if (d < 1 || m < d) {
    throw std::invalid_argument("check_lbar_bounds: need m >= d >= 1");
  }
  const Matrix<Scalar> pd = consensus_power(L, d);
  const Scalar n = Scalar(L.size());
  const Scalar g = Scalar(gamma);
  const Scalar l_min = pd.minCoeff();
  const Scalar l_max = pd.maxCoeff();
  auto f = [&](Scalar x) { return (n * x) * (n * x) - g * n * x; };
  DeviationBoundsCheck<Scalar> report;
  report.lower = std::min(-g / Scalar(4), f(l_min));
  report.upper = f(l_max);
  const auto dev = consensus_deviation(L, m, gamma);
  report.pass = (dev.entries.array() >= report.lower - tol).all() &&
                (dev.entries.array() <= report.upper + tol).all();
  return report;
}

template <typename Scalar>
struct HadamardSingularCheck {
  Scalar sigma_hadamard = 0;
  Scalar sigma_product = 0;
  bool holds = true;
};

/// sigma(A o B) <= sigma(A) sigma(B) for the Hadamard product.
template <typename Scalar>
HadamardSingularCheck<Scalar> check_hadamard_singular(const Matrix<Scalar>& A,
                                                      const Matrix<Scalar>& B,
                                                      Scalar slack = Scalar(1e-12)) {
  if (A.rows() != B.rows() || A.cols() != B.cols()) {
    throw std::invalid_argument("check_hadamard_singular: shape mismatch");
  }
  HadamardSingularCheck<Scalar> report;
  report.sigma_hadamard = max_singular_value<Scalar>(A.cwiseProduct(B));
  report.sigma_product = max_singular_value(A) * max_singular_value(B);
  report.holds = report.sigma_hadamard <= report.sigma_product + slack;
  return report;
}

/// Second largest eigenvalue modulus of the weight matrix; the geometric rate
/// at which consensus powers approach the averaging matrix.
template <typename Scalar>
Scalar consensus_contraction_rate(const ConsensusMatrix<Scalar>& L) {
  const int n = L.size();
  const Matrix<Scalar> avg = Matrix<Scalar>::Constant(n, n, Scalar(1) / Scalar(n));
  return spectral_radius<Scalar>(L.weights() - avg);
}

/// Smallest power at which the consensus matrix has numerically reached
/// uniform averaging: |L^m - (1/N) 1 1^T|_F < eps. Stands in for the fusion
/// limit in every "as the fusion step grows" statement.
template <typename Scalar>
int surrogate_fusion_step(const ConsensusMatrix<Scalar>& L,
                          Scalar eps = Scalar(1e-10), int max_steps = 1000000) {
  const int n = L.size();
  const Matrix<Scalar> avg = Matrix<Scalar>::Constant(n, n, Scalar(1) / Scalar(n));
  Matrix<Scalar> power = L.weights();
  for (int m = 1; m <= max_steps; ++m) {
    if ((power - avg).norm() < eps) return m;
    power = (power * L.weights()).eval();
  }
  throw NumericalError("surrogate_fusion_step: consensus powers did not reach "
                       "uniform averaging; is the topology connected?");
}

}  // namespace cmdf
