#include "coefflab/hull.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

namespace coefflab {

namespace {

constexpr double kPivotEps = 1e-12;
constexpr double kWeightFloor = -1e-9;
constexpr double kWeightSumTol = 1e-9;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_dims(std::span<const double> q, std::span<const PointSet> sets) {
  if (sets.empty()) throw ArityError("membership query needs at least one point set");
  for (const PointSet& s : sets) {
    if (s.count() == 0) throw DimensionError("membership query: empty point set");
    if (s.dim() != q.size()) {
      throw DimensionError("membership query: point of dimension " + std::to_string(q.size()) +
                           " against set of dimension " + std::to_string(s.dim()));
    }
  }
}

/// Support function of the Minkowski sum along g.
double support(std::span<const double> g, std::span<const PointSet> sets) {
  double total = 0.0;
  for (const PointSet& s : sets) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < s.count(); ++i) best = std::max(best, dot(g, s.points.row(i)));
    total += best;
  }
  return total;
}

double reconstruction_error(std::span<const double> q, std::span<const PointSet> sets,
                            const std::vector<std::vector<double>>& weights) {
  std::vector<double> sum(q.size(), 0.0);
  double worst = 0.0;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    double total = 0.0;
    for (std::size_t i = 0; i < sets[s].count(); ++i) {
      const double w = weights[s][i];
      total += w;
      auto x = sets[s].points.row(i);
      for (std::size_t k = 0; k < q.size(); ++k) sum[k] += w * x[k];
    }
    worst = std::max(worst, std::abs(total - 1.0));
  }
  for (std::size_t k = 0; k < q.size(); ++k) worst = std::max(worst, std::abs(sum[k] - q[k]));
  return worst;
}

}  // namespace

FeasibilityResult solve_feasibility(const Matrix& a, std::span<const double> b, double tol) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (b.size() != m) {
    throw DimensionError("solve_feasibility: " + a.shape() + " system with rhs of length " +
                         std::to_string(b.size()));
  }
  const std::size_t width = n + m + 1;  // originals, artificials, rhs
  const std::size_t rhs = n + m;
  Matrix t(m + 1, width);
  std::vector<double> sign(m, 1.0);
  std::vector<std::size_t> basis(m);

  for (std::size_t i = 0; i < m; ++i) {
    sign[i] = b[i] < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < n; ++j) t(i, j) = sign[i] * a(i, j);
    t(i, n + i) = 1.0;
    t(i, rhs) = sign[i] * b[i];
    basis[i] = n + i;
  }
  // Objective row holds reduced costs of sum(artificials) and -w in the rhs.
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) t(m, j) -= t(i, j);
    t(m, rhs) -= t(i, rhs);
  }

  const std::size_t max_iterations = 50 * (n + m) + 100;
  std::size_t iter = 0;
  for (;; ++iter) {
    if (iter > max_iterations) throw NumericError("solve_feasibility: simplex did not terminate");
    std::size_t enter = width;
    for (std::size_t j = 0; j < n + m; ++j) {
      if (t(m, j) < -kPivotEps) {
        enter = j;
        break;
      }
    }
    if (enter == width) break;

    std::size_t leave = m;
    double best_ratio = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      if (t(i, enter) <= kPivotEps) continue;
      const double ratio = t(i, rhs) / t(i, enter);
      if (ratio < best_ratio - 1e-15 ||
          (std::abs(ratio - best_ratio) <= 1e-15 && leave < m && basis[i] < basis[leave])) {
        best_ratio = ratio;
        leave = i;
      }
    }
    if (leave == m) break;  // unbounded direction cannot occur in phase one; stop defensively

    const double pivot = t(leave, enter);
    for (std::size_t j = 0; j < width; ++j) t(leave, j) /= pivot;
    for (std::size_t i = 0; i <= m; ++i) {
      if (i == leave) continue;
      const double factor = t(i, enter);
      if (factor == 0.0) continue;
      for (std::size_t j = 0; j < width; ++j) t(i, j) -= factor * t(leave, j);
    }
    basis[leave] = enter;
  }

  FeasibilityResult out;
  out.infeasibility = std::max(0.0, -t(m, rhs));
  out.feasible = out.infeasibility <= tol;
  out.solution.assign(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (basis[i] < n) out.solution[basis[i]] = std::max(0.0, t(i, rhs));
  }
  out.farkas.resize(m);
  for (std::size_t i = 0; i < m; ++i) out.farkas[i] = sign[i] * (1.0 - t(m, n + i));
  return out;
}

HullQueryResult hull_membership(std::span<const double> q, const PointSet& s, double tol) {
  return minkowski_membership(q, std::span<const PointSet>(&s, 1), tol);
}

HullQueryResult minkowski_membership(std::span<const double> q, std::span<const PointSet> sets,
                                     double tol) {
  check_dims(q, sets);
  const std::size_t d = q.size();
  const std::size_t h = sets.size();
  std::size_t vars = 0;
  for (const PointSet& s : sets) vars += s.count();

  // Rows: d coordinate equations, then one sum-to-one row per set.
  Matrix a(d + h, vars);
  std::vector<double> b(d + h, 1.0);
  std::copy(q.begin(), q.end(), b.begin());
  std::size_t col = 0;
  for (std::size_t si = 0; si < h; ++si) {
    for (std::size_t i = 0; i < sets[si].count(); ++i, ++col) {
      auto x = sets[si].points.row(i);
      for (std::size_t k = 0; k < d; ++k) a(k, col) = x[k];
      a(d + si, col) = 1.0;
    }
  }

  const FeasibilityResult lp = solve_feasibility(a, b, tol);
  HullQueryResult r;
  r.member = lp.feasible;
  if (r.member) {
    col = 0;
    r.weights.resize(h);
    for (std::size_t si = 0; si < h; ++si) {
      r.weights[si].assign(lp.solution.begin() + static_cast<std::ptrdiff_t>(col),
                           lp.solution.begin() + static_cast<std::ptrdiff_t>(col + sets[si].count()));
      col += sets[si].count();
    }
    r.slack = reconstruction_error(q, sets, r.weights);
    return r;
  }

  std::vector<double> g(lp.farkas.begin(), lp.farkas.begin() + static_cast<std::ptrdiff_t>(d));
  double norm = std::sqrt(dot(g, g));
  if (norm > 0.0) {
    for (double& v : g) v /= norm;
  }
  r.direction = g;
  r.slack = dot(g, q) - support(g, sets);
  return r;
}

bool certificate_holds(std::span<const double> q, std::span<const PointSet> sets,
                       const HullQueryResult& r, double tol) {
  check_dims(q, sets);
  if (!r.member) {
    if (r.direction.size() != q.size()) return false;
    return dot(r.direction, q) - support(r.direction, sets) > 0.0;
  }
  if (r.weights.size() != sets.size()) return false;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (r.weights[s].size() != sets[s].count()) return false;
    double total = 0.0;
    for (double w : r.weights[s]) {
      if (w < kWeightFloor) return false;
      total += w;
    }
    if (std::abs(total - 1.0) > kWeightSumTol) return false;
  }
  return reconstruction_error(q, sets, r.weights) <= tol;
}

std::vector<PointSet> projected_node_sets(const Matrix& x, const AttentionParams& p) {
  std::vector<PointSet> sets;
  for (const Matrix& w : head_weights(p)) sets.push_back(PointSet{matmul(x, w)});
  return sets;
}

Instance random_instance(const InstanceSpec& spec, Rng& rng) {
  Instance inst;
  inst.x = gaussian(spec.tokens, spec.in_dim, 1.0, rng);
  inst.params = random_attention_params({spec.in_dim, spec.out_dim, spec.heads}, rng,
                                        spec.weight_std);
  return inst;
}

namespace {

constexpr std::uint64_t kBoundedStream = 1;
constexpr std::uint64_t kContainmentStream = 2;
constexpr std::uint64_t kExpansionStream = 3;

/// Checks every row of out against the baseline sets; fills the verdict.
TrialVerdict check_rows_member(std::size_t trial, const Matrix& out,
                               const std::vector<PointSet>& sets) {
  TrialVerdict v{trial, true, false, 0.0};
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const HullQueryResult q = minkowski_membership(out.row(r), sets);
    if (!q.member || !certificate_holds(out.row(r), sets, q)) {
      v.pass = false;
      v.slack = std::max(v.slack, std::abs(q.slack));
      continue;
    }
    if (v.pass) v.slack = std::max(v.slack, q.slack);
  }
  return v;
}

template <class TrialFn>
BoundedReport run_trials(std::size_t trials, TrialFn&& fn) {
  if (trials == 0) throw UsageError("trial count must be >= 1");
  BoundedReport report;
  report.trials = trials;
  report.rows.resize(trials);
  const auto n = static_cast<std::int64_t>(trials);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t t = 0; t < n; ++t) {
    const auto idx = static_cast<std::size_t>(t);
    try {
      report.rows[idx] = fn(idx);
    } catch (const std::exception&) {
      // A solver failure is recorded against its trial, never as a pass.
      report.rows[idx] = TrialVerdict{idx, false, true, 0.0};
    }
  }
  for (const TrialVerdict& v : report.rows) {
    if (v.pass) {
      ++report.passes;
      report.max_slack = std::max(report.max_slack, v.slack);
    }
    if (v.inconclusive) ++report.inconclusive;
  }
  return report;
}

}  // namespace

BoundedReport verify_baseline_bounded(std::size_t trials, const InstanceSpec& spec,
                                      std::uint64_t seed) {
  return run_trials(trials, [&](std::size_t t) {
    Rng rng(derive_seed(seed, kBoundedStream, t));
    const Instance inst = random_instance(spec, rng);
    return check_rows_member(t, multi_head_sum(inst.x, inst.params),
                             projected_node_sets(inst.x, inst.params));
  });
}

BoundedReport verify_identity_containment(std::size_t trials, const InstanceSpec& spec,
                                          std::uint64_t seed) {
  return run_trials(trials, [&](std::size_t t) {
    Rng rng(derive_seed(seed, kContainmentStream, t));
    const Instance inst = random_instance(spec, rng);
    const Matrix out = coeff_attention_forward(inst.x, inst.params, Matrix::identity(spec.heads));
    return check_rows_member(t, out, projected_node_sets(inst.x, inst.params));
  });
}

ExpansionWitness find_expansion_witness(const Matrix& x, const AttentionParams& p, Rng& rng,
                                        std::size_t random_budget, double tol) {
  validate(p);
  const std::size_t heads = p.heads;
  const std::vector<PointSet> sets = projected_node_sets(x, p);
  const FilterSubspace fs = filter_subspace(x, p);
  const std::vector<Matrix> weights = head_weights(p);

  ExpansionWitness w;
  const Matrix base = graph_conv_forward(x, combine_filters(fs, Matrix::identity(heads)), weights);
  w.containment_holds = check_rows_member(0, base, sets).pass;

  std::vector<Matrix> candidates;
  for (double c : {1.5, 2.0, 3.0, 5.0}) candidates.push_back(scale(Matrix::identity(heads), c));
  for (double v : {-2.0, 2.0, -5.0, 5.0}) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < heads; ++i) {
        Matrix a = Matrix::identity(heads);
        a(h, i) = v;
        candidates.push_back(std::move(a));
      }
    }
  }
  for (std::size_t k = 0; k < random_budget; ++k) candidates.push_back(gaussian(heads, heads, 3.0, rng));

  for (const Matrix& alpha_prime : candidates) {
    ++w.candidates_tried;
    const Matrix out = graph_conv_forward(x, combine_filters(fs, alpha_prime), weights);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      HullQueryResult q = minkowski_membership(out.row(r), sets, tol);
      if (q.member || !certificate_holds(out.row(r), sets, q, tol)) continue;
      w.found = true;
      w.alpha_prime = alpha_prime;
      w.row = r;
      w.output_row.assign(out.row(r).begin(), out.row(r).end());
      w.verdict = std::move(q);
      return w;
    }
  }
  return w;
}

BoundedReport verify_expansion(std::size_t trials, const InstanceSpec& spec, std::uint64_t seed,
                               std::vector<ExpansionWitness>* witnesses) {
  if (witnesses) witnesses->assign(trials, ExpansionWitness{});
  return run_trials(trials, [&](std::size_t t) {
    Rng rng(derive_seed(seed, kExpansionStream, t));
    const Instance inst = random_instance(spec, rng);
    ExpansionWitness w = find_expansion_witness(inst.x, inst.params, rng);
    if (witnesses) (*witnesses)[t] = w;
    TrialVerdict v{t, w.found && w.containment_holds, !w.found, 0.0};
    if (w.found) v.slack = w.verdict.slack;
    return v;
  });
}

}  // namespace coefflab
