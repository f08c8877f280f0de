#include <gtest/gtest.h>

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "coefflab/checks.hpp"
#include "coefflab/hull.hpp"

using namespace coefflab;

namespace {

struct P2 {
  double x, y;
};

double cross(P2 o, P2 a, P2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Andrew's monotone chain, counter-clockwise, collinear points dropped.
std::vector<P2> convex_hull(std::vector<P2> pts) {
  std::sort(pts.begin(), pts.end(), [](P2 a, P2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (pts.size() < 3) return pts;
  std::vector<P2> h(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

// Signed distance-like margin: positive inside, negative outside.
double inside_margin(const std::vector<P2>& poly, P2 q) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < poly.size(); ++i) {
    P2 a = poly[i], b = poly[(i + 1) % poly.size()];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    m = std::min(m, cross(a, b, q) / len);
  }
  return m;
}

double distance_to_polygon(const std::vector<P2>& poly, P2 q) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < poly.size(); ++i) {
    P2 a = poly[i], b = poly[(i + 1) % poly.size()];
    const double dx = b.x - a.x, dy = b.y - a.y;
    double t = ((q.x - a.x) * dx + (q.y - a.y) * dy) / (dx * dx + dy * dy);
    t = std::clamp(t, 0.0, 1.0);
    best = std::min(best, std::hypot(q.x - a.x - t * dx, q.y - a.y - t * dy));
  }
  return best;
}

std::vector<P2> minkowski_oracle(const std::vector<PointSet>& sets) {
  std::vector<P2> sums{{0.0, 0.0}};
  for (const auto& s : sets) {
    std::vector<P2> next;
    for (P2 base : sums) {
      for (std::size_t i = 0; i < s.count(); ++i) {
        next.push_back({base.x + s.points(i, 0), base.y + s.points(i, 1)});
      }
    }
    sums = convex_hull(next);
  }
  return sums;
}

PointSet random_set(std::size_t n, Rng& rng) { return {gaussian(n, 2, 1.0, rng)}; }

}  // namespace

TEST(Feasibility, SimpleSystems) {
  Matrix a{{1, 1}};
  std::vector<double> b{1.0};
  auto r = solve_feasibility(a, b, 1e-9);
  EXPECT_TRUE(r.feasible);
  EXPECT_NEAR(r.solution[0] + r.solution[1], 1.0, 1e-12);

  std::vector<double> neg{-1.0};
  auto bad = solve_feasibility(a, neg, 1e-9);
  EXPECT_FALSE(bad.feasible);
  EXPECT_NEAR(bad.infeasibility, 1.0, 1e-12);
  // Farkas: y^T A <= 0 and y^T b > 0.
  EXPECT_LE(bad.farkas[0] * 1.0, 1e-12);
  EXPECT_GT(bad.farkas[0] * -1.0, 0.0);
}

TEST(HullMembership, InsideTriangle) {
  PointSet tri{Matrix{{0, 0}, {1, 0}, {0, 1}}};
  std::vector<double> q{0.2, 0.3};
  auto r = hull_membership(q, tri);
  ASSERT_TRUE(r.member);
  EXPECT_NEAR(r.weights[0][0], 0.5, 1e-12);
  EXPECT_NEAR(r.weights[0][1], 0.2, 1e-12);
  EXPECT_NEAR(r.weights[0][2], 0.3, 1e-12);
  std::vector<PointSet> sets{tri};
  EXPECT_TRUE(certificate_holds(q, sets, r));
}

TEST(HullMembership, OutsideTriangleHasSeparatingDirection) {
  PointSet tri{Matrix{{0, 0}, {1, 0}, {0, 1}}};
  std::vector<double> q{1.0, 1.0};
  auto r = hull_membership(q, tri);
  ASSERT_FALSE(r.member);
  ASSERT_EQ(r.direction.size(), 2u);
  EXPECT_NEAR(std::hypot(r.direction[0], r.direction[1]), 1.0, 1e-12);
  EXPECT_GT(r.slack, 0.0);
  std::vector<PointSet> sets{tri};
  EXPECT_TRUE(certificate_holds(q, sets, r));
}

TEST(HullMembership, VerticesAndDegenerateSets) {
  PointSet tri{Matrix{{0, 0}, {1, 0}, {0, 1}}};
  for (std::size_t v = 0; v < 3; ++v) {
    std::vector<double> q{tri.points(v, 0), tri.points(v, 1)};
    EXPECT_TRUE(hull_membership(q, tri).member);
  }
  PointSet segment{Matrix{{0, 0}, {1, 1}, {2, 2}}};
  std::vector<double> on{1.5, 1.5}, off{1.0, 1.1};
  EXPECT_TRUE(hull_membership(on, segment).member);
  EXPECT_FALSE(hull_membership(off, segment).member);
  PointSet single{Matrix{{3, -1}}};
  std::vector<double> same{3, -1}, other{3, -0.9};
  EXPECT_TRUE(hull_membership(same, single).member);
  EXPECT_FALSE(hull_membership(other, single).member);
}

TEST(HullMembership, DimensionErrors) {
  PointSet tri{Matrix{{0, 0}, {1, 0}, {0, 1}}};
  std::vector<double> q3{0, 0, 0};
  EXPECT_THROW(hull_membership(q3, tri), DimensionError);
  std::vector<PointSet> none;
  std::vector<double> q{0, 0};
  EXPECT_THROW(minkowski_membership(q, none), ArityError);
}

TEST(MinkowskiMembership, SquarePlusSquare) {
  PointSet sq{Matrix{{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}};
  std::vector<PointSet> sets{sq, sq};
  std::vector<double> in{1.9, -1.9}, out{2.1, 0.0};
  auto r_in = minkowski_membership(in, sets);
  auto r_out = minkowski_membership(out, sets);
  EXPECT_TRUE(r_in.member);
  EXPECT_FALSE(r_out.member);
  EXPECT_NEAR(r_out.slack, 0.1, 1e-9);
  EXPECT_TRUE(certificate_holds(in, sets, r_in));
  EXPECT_TRUE(certificate_holds(out, sets, r_out));
}

TEST(MinkowskiMembership, AgreesWithGeometricOracleOnLattice) {
  Rng rng(3);
  std::size_t checked = 0;
  for (int trial = 0; trial < 6; ++trial) {
    std::vector<PointSet> sets{random_set(5, rng), random_set(6, rng)};
    if (trial % 2) sets.push_back(random_set(4, rng));
    const std::vector<P2> poly = minkowski_oracle(sets);
    for (double x = -6.0; x <= 6.0; x += 0.37) {
      for (double y = -6.0; y <= 6.0; y += 0.37) {
        const double margin = inside_margin(poly, {x, y});
        if (std::abs(margin) < 1e-6) continue;
        std::vector<double> q{x, y};
        auto r = minkowski_membership(q, sets);
        ASSERT_EQ(r.member, margin > 0) << "q=(" << x << "," << y << ") margin " << margin;
        ASSERT_TRUE(certificate_holds(q, sets, r));
        if (!r.member) {
          EXPECT_LE(r.slack, distance_to_polygon(poly, {x, y}) + 1e-9);
        }
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 5000u);
}

TEST(Certificates, TamperedCertificatesAreRejected) {
  PointSet tri{Matrix{{0, 0}, {1, 0}, {0, 1}}};
  std::vector<PointSet> sets{tri};
  std::vector<double> q{0.2, 0.3};
  auto r = hull_membership(q, tri);
  auto bad = r;
  bad.weights[0][0] += 0.1;
  EXPECT_FALSE(certificate_holds(q, sets, bad));
  bad = r;
  bad.weights[0] = {1.2, -0.1, -0.1};
  EXPECT_FALSE(certificate_holds(q, sets, bad));

  std::vector<double> far{2.0, 2.0};
  auto sep = hull_membership(far, tri);
  auto flipped = sep;
  for (double& g : flipped.direction) g = -g;
  EXPECT_FALSE(certificate_holds(far, sets, flipped));
}

TEST(ProjectedNodeSets, AreRowsOfXTimesHeadWeights) {
  Rng rng(4);
  Instance inst = random_instance({}, rng);
  auto sets = projected_node_sets(inst.x, inst.params);
  ASSERT_EQ(sets.size(), 2u);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_EQ(sets[h].points, matmul(inst.x, head_weight(inst.params, h)));
  }
}

TEST(BaselineBounded, SmallRunPassesAndIsDeterministic) {
  auto a = verify_baseline_bounded(50, {}, 7);
  EXPECT_EQ(a.trials, 50u);
  EXPECT_EQ(a.passes, 50u);
  EXPECT_EQ(a.inconclusive, 0u);
  EXPECT_LT(a.max_slack, 1e-8);
  auto b = verify_baseline_bounded(50, {}, 7);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].slack, b.rows[i].slack);
}

TEST(BaselineBounded, ThreadCountDoesNotChangeResults) {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  auto one = verify_baseline_bounded(20, {}, 11);
  omp_set_num_threads(3);
  auto three = verify_baseline_bounded(20, {}, 11);
  omp_set_num_threads(saved);
  for (std::size_t i = 0; i < one.rows.size(); ++i) {
    EXPECT_EQ(one.rows[i].slack, three.rows[i].slack);
    EXPECT_EQ(one.rows[i].pass, three.rows[i].pass);
  }
}

TEST(BaselineBounded, OutputRowsInsideOracleMinkowskiSum) {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    Instance inst = random_instance({}, rng);
    const std::vector<P2> poly = minkowski_oracle(projected_node_sets(inst.x, inst.params));
    Matrix out = multi_head_sum(inst.x, inst.params);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      EXPECT_GT(inside_margin(poly, {out(r, 0), out(r, 1)}), -1e-9);
    }
  }
}

TEST(IdentityContainment, SmallRunPasses) {
  auto rep = verify_identity_containment(50, {}, 8);
  EXPECT_EQ(rep.passes, 50u);
}

TEST(Expansion, WitnessIsOutsideOracleMinkowskiSum) {
  Rng rng(13);
  int found = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Instance inst = random_instance({}, rng);
    auto w = find_expansion_witness(inst.x, inst.params, rng);
    EXPECT_TRUE(w.containment_holds);
    if (!w.found) continue;
    ++found;
    const std::vector<P2> poly = minkowski_oracle(projected_node_sets(inst.x, inst.params));
    EXPECT_LT(inside_margin(poly, {w.output_row[0], w.output_row[1]}), 0.0);
    Matrix out = coeff_attention_forward(inst.x, inst.params, w.alpha_prime);
    EXPECT_EQ(out(w.row, 0), w.output_row[0]);
    EXPECT_EQ(out(w.row, 1), w.output_row[1]);
  }
  EXPECT_GE(found, 19);
}

TEST(Expansion, SmallRunMeetsRate) {
  auto rep = verify_expansion(40, {}, 9);
  EXPECT_GE(rep.passes, 38u);
  for (const auto& row : rep.rows) {
    if (row.inconclusive) EXPECT_FALSE(row.pass);
  }
}

TEST(Trials, ZeroTrialsIsUsageError) {
  EXPECT_THROW(verify_baseline_bounded(0, {}, 0), UsageError);
  EXPECT_THROW(verify_expansion(0, {}, 0), UsageError);
}

TEST(Checks, EquivalenceAndGradientSuitesPass) {
  auto eq = verify_three_form_equivalence(60, 1);
  EXPECT_EQ(eq.passes, 60u);
  EXPECT_LT(eq.max_slack, kEquivalenceTol);
  auto gr = verify_gradients(15, 1);
  EXPECT_EQ(gr.passes, 15u);
  EXPECT_LT(gr.max_slack, kGradientTol);
}

TEST(Checks, RelativeGradientError) {
  Matrix a{{1, 0}, {0, 1}}, b{{1, 0}, {0, 1.001}};
  EXPECT_NEAR(relative_gradient_error(a, b), 0.001 / std::hypot(1.0, 1.001), 1e-12);
  EXPECT_DOUBLE_EQ(relative_gradient_error(Matrix(2, 2), Matrix(2, 2, 1e-10)), 2e-10);
  EXPECT_THROW(relative_gradient_error(Matrix(2, 2), Matrix(2, 3)), DimensionError);
}
