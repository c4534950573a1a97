#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "phonodist/blocks.hpp"
#include "phonodist/features.hpp"
#include "phonodist/matrix.hpp"

namespace phonodist::transport {

struct TransportProblem {
  std::vector<double> p;  // source marginal, sums to 1 within 1e-9
  std::vector<double> q;  // target marginal
  Matrix cost;            // |p| x |q|, non-negative

  void validate() const;
};

struct TransportPlan {
  Matrix gamma;
  double objective = 0.0;

  double max_marginal_violation(const std::vector<double>& p, const std::vector<double>& q) const;
};

struct ExactResult {
  double value = 0.0;
  TransportPlan plan;
  double duality_gap = 0.0;
  std::size_t pivots = 0;
  std::vector<double> u, v;  // optimal duals
};

// Exact optimal transport via the transportation simplex on the tree basis.
// Throws if n*m exceeds `cap` (use Sinkhorn instead) or marginals are
// infeasible. The returned plan is feasible and optimal; the duality gap is
// reported for verification.
ExactResult wasserstein_exact(const TransportProblem& problem, std::size_t cap = 10000);

struct SinkhornDiagnostics {
  int iterations = 0;
  double marginal_violation = 0.0;
  bool converged = false;
  bool log_domain = false;
  double epsilon = 0.0;
};

struct SinkhornResult {
  double value = 0.0;  // objective of the rounded-feasible plan
  TransportPlan plan;
  SinkhornDiagnostics diag;
};

// Entropic-regularized OT by alternating scaling. Starts in the standard
// domain and switches to log-domain updates on numeric underflow. With
// epsilon_scaling the regularization is annealed down to `epsilon`, warm-
// starting the potentials. The returned plan is rounded onto the transport
// polytope, so the value is a true feasible-coupling cost. Non-convergence is
// flagged in the diagnostics, not thrown.
SinkhornResult wasserstein_sinkhorn(const TransportProblem& problem, double epsilon,
                                    int max_iter = 20000, double tol = 1e-9,
                                    bool epsilon_scaling = true);

struct SinkhornParams {
  double epsilon_factor = 0.01;        // epsilon = factor * mean(ground cost)
  std::optional<double> epsilon_abs;   // overrides the factor when set
  int max_iter = 20000;
  double tol = 1e-9;
  bool epsilon_scaling = true;
};

struct TruncationPolicy {
  double mass_coverage = 0.999;  // keep the smallest top-frequency set covering this mass
  std::size_t max_support = 0;   // 0 = unlimited
};

// A distribution over an explicit triphone support (renormalized).
struct SupportDistribution {
  std::vector<features::Triphone> support;
  std::vector<double> probs;

  void validate() const;  // non-negative, sums to 1 within 1e-9
};

using AverageDistribution = SupportDistribution;

// Keeps the highest-frequency blocks covering `mass_coverage` of the mass
// (ties broken deterministically), renormalizes. Requires r == 3.
SupportDistribution truncate_distribution(const blocks::BlockDistribution& dist,
                                          const TruncationPolicy& policy);
SupportDistribution truncate_support(const SupportDistribution& dist,
                                     const TruncationPolicy& policy);

struct PairDiagnostics {
  std::size_t support_a = 0;
  std::size_t support_b = 0;
  SinkhornDiagnostics sinkhorn;
};

// Sinkhorn Wasserstein distance between two support distributions under the
// articulatory ground metric.
double wasserstein_between(const SupportDistribution& a, const SupportDistribution& b,
                           const features::FeatureTable& table,
                           const features::GroundMetricSpec& metric, const SinkhornParams& params,
                           PairDiagnostics* diag = nullptr);

// Truncates both 3-phone distributions and computes the Sinkhorn distance.
double language_distance(const blocks::BlockDistribution& a, const blocks::BlockDistribution& b,
                         const features::FeatureTable& table,
                         const features::GroundMetricSpec& metric, const SinkhornParams& params,
                         const TruncationPolicy& truncation, PairDiagnostics* diag = nullptr);

struct DistanceMatrix {
  std::vector<std::string> labels;
  Matrix values;  // symmetric, zero diagonal
  std::string variant;
  double epsilon_factor = 0.0;
  double mass_coverage = 0.0;

  void validate() const;
};

// All unordered pairs, computed once and mirrored; deterministic under any
// thread count.
DistanceMatrix distance_matrix(const std::vector<std::string>& labels,
                               const std::vector<const blocks::BlockDistribution*>& dists,
                               const features::FeatureTable& table,
                               const features::GroundMetricSpec& metric,
                               const SinkhornParams& params, const TruncationPolicy& truncation,
                               unsigned threads = 0,
                               std::vector<PairDiagnostics>* pair_diags = nullptr);

// Uniform (1/k)-weighted mean of the members' probability vectors over the
// union of their supports.
AverageDistribution average_distribution(const std::vector<const blocks::BlockDistribution*>& members);

}  // namespace phonodist::transport
