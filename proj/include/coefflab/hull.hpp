#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "coefflab/attention.hpp"
#include "coefflab/coeff.hpp"

namespace coefflab {

/// Points stored as rows of an N x d matrix.
struct PointSet {
  Matrix points;

  std::size_t count() const { return points.rows(); }
  std::size_t dim() const { return points.cols(); }
};

inline constexpr double kMembershipTol = 1e-8;

/// Outcome of a (Minkowski-sum of) convex-hull membership query.
///
/// A member carries convex weights per set (weights[s][i] for point i of set
/// s). A non-member carries a unit direction g with
///   g . q  >  sum_s max_i g . x_i^s
/// and slack equal to that gap. For members, slack is the reconstruction error.
struct HullQueryResult {
  bool member = false;
  std::vector<std::vector<double>> weights;
  std::vector<double> direction;
  double slack = 0.0;
};

/// Result of a linear feasibility problem A lambda = b, lambda >= 0.
struct FeasibilityResult {
  bool feasible = false;
  double infeasibility = 0.0;  // phase-one optimum: L1 norm of the residual
  std::vector<double> solution;
  // Farkas multipliers: y^T A <= 0 and y^T b = infeasibility for the returned basis.
  std::vector<double> farkas;
};

/// Two-phase simplex, phase one only, with Bland's rule. Dense; intended for
/// the few-dozen-variable problems of this library.
FeasibilityResult solve_feasibility(const Matrix& a, std::span<const double> b, double tol);

HullQueryResult hull_membership(std::span<const double> q, const PointSet& s,
                                double tol = kMembershipTol);

/// q in S^1 + ... + S^H, decided as one joint feasibility problem.
HullQueryResult minkowski_membership(std::span<const double> q, std::span<const PointSet> sets,
                                     double tol = kMembershipTol);

/// Recomputes the certificate from scratch: weights reconstruct q and sum to
/// one per set, or the direction separates q with positive slack.
bool certificate_holds(std::span<const double> q, std::span<const PointSet> sets,
                       const HullQueryResult& r, double tol = kMembershipTol);

/// Projected node sets {X W^h} of a layer, one per head.
std::vector<PointSet> projected_node_sets(const Matrix& x, const AttentionParams& p);

struct InstanceSpec {
  std::size_t tokens = 8;   // N
  std::size_t in_dim = 2;   // Ci
  std::size_t out_dim = 2;  // d = Co
  std::size_t heads = 2;    // H
  double weight_std = 1.0;
};

struct Instance {
  Matrix x;
  AttentionParams params;
};

Instance random_instance(const InstanceSpec& spec, Rng& rng);

struct TrialVerdict {
  std::size_t trial = 0;
  bool pass = false;
  bool inconclusive = false;
  double slack = 0.0;
};

struct BoundedReport {
  std::size_t trials = 0;
  std::size_t passes = 0;
  std::size_t inconclusive = 0;
  // Largest reconstruction error among member rows.
  double max_slack = 0.0;
  std::vector<TrialVerdict> rows;
};

/// Every row of multi_head_sum lies in the Minkowski sum of hull(X W^h).
/// Trials run under OpenMP with per-trial seeds derived from seed.
BoundedReport verify_baseline_bounded(std::size_t trials, const InstanceSpec& spec,
                                      std::uint64_t seed);

/// alpha' = I through the coefficient path stays inside the baseline set.
BoundedReport verify_identity_containment(std::size_t trials, const InstanceSpec& spec,
                                          std::uint64_t seed);

struct ExpansionWitness {
  bool found = false;
  bool containment_holds = false;  // alpha' = I rows are all members
  std::size_t candidates_tried = 0;
  Matrix alpha_prime;
  std::size_t row = 0;
  std::vector<double> output_row;
  HullQueryResult verdict;
};

/// Searches alpha' in {cI}, then signed single-entry perturbations of I, then
/// random signed draws, for an output row certified outside the baseline set.
ExpansionWitness find_expansion_witness(const Matrix& x, const AttentionParams& p, Rng& rng,
                                        std::size_t random_budget = 64,
                                        double tol = kMembershipTol);

/// Runs the witness search over random instances; a trial passes only when a
/// certified non-member row is found. Witnesses, when requested, are stored per trial.
BoundedReport verify_expansion(std::size_t trials, const InstanceSpec& spec, std::uint64_t seed,
                               std::vector<ExpansionWitness>* witnesses = nullptr);

}  // namespace coefflab
