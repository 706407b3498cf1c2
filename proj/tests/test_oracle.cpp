#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "mnlp/oracle.hpp"

using namespace mnlp;
using namespace mnlp::testing;

namespace {

// Exact CVRP optimum: every customer order, each cut into routes by an
// optimal split.
double cvrp_exhaustive(const Instance& inst) {
  const int n = static_cast<int>(inst.size());
  std::vector<int> perm(n - 1);
  std::iota(perm.begin(), perm.end(), 1);
  double best = std::numeric_limits<double>::infinity();
  do {
    const int m = n - 1;
    std::vector<double> f(m + 1, std::numeric_limits<double>::infinity());
    f[0] = 0;
    for (int i = 0; i < m; ++i) {
      long load = 0;
      double inner = 0;
      for (int j = i; j < m; ++j) {
        load += inst.demands[perm[j]];
        if (load > inst.capacity) break;
        if (j > i) inner += inst.cost(perm[j - 1], perm[j]);
        const double route = inst.cost(0, perm[i]) + inner + inst.cost(perm[j], 0);
        f[j + 1] = std::min(f[j + 1], f[i] + route);
      }
    }
    best = std::min(best, f[m]);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

bool is_rotation_or_reflection(std::vector<int> a, std::vector<int> b) {
  if (a.size() != b.size()) return false;
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t r = 0; r < a.size(); ++r) {
      std::rotate(b.begin(), b.begin() + 1, b.end());
      if (a == b) return true;
    }
    std::reverse(b.begin(), b.end());
  }
  return false;
}

}  // namespace

TEST(BruteForce, UnitSquare) {
  const auto l = brute_force(unit_square());
  EXPECT_DOUBLE_EQ(l.cost, 4.0);
  EXPECT_EQ(l.provenance, Provenance::exact);
}

TEST(BruteForce, Collinear) { EXPECT_DOUBLE_EQ(brute_force(tsp({{0, 0}, {0.5, 0}, {1, 0}})).cost, 2.0); }

TEST(BruteForce, RefusesLarge) {
  EXPECT_THROW(brute_force(random_instance(ProblemKind::tsp, 10, 1)), OracleRefused);
}

TEST(HeldKarp, UnitSquare) { EXPECT_DOUBLE_EQ(held_karp(unit_square()).cost, 4.0); }

TEST(HeldKarp, MatchesBruteForce) {
  for (int n = 2; n <= 8; ++n)
    for (std::uint64_t i = 0; i < 20; ++i) {
      const auto inst = random_instance(ProblemKind::tsp, n, 31, i);
      const auto a = held_karp(inst), b = brute_force(inst);
      EXPECT_NEAR(a.cost, b.cost, 1e-9);
      EXPECT_TRUE(validate(inst, a.solution).ok());
      EXPECT_NEAR(tour_cost(inst, a.solution), a.cost, 1e-12);
      if (n >= 3 && std::abs(a.cost - b.cost) < 1e-12) {
        EXPECT_TRUE(is_rotation_or_reflection(a.solution.sequence, b.solution.sequence));
      }
    }
}

TEST(HeldKarp, DominatesTwoOptAtSixteen) {
  for (std::uint64_t i = 0; i < 3; ++i) {
    const auto inst = random_instance(ProblemKind::tsp, 16, 5, i);
    EXPECT_LE(held_karp(inst).cost, two_opt(inst, nearest_neighbor(inst)).cost + 1e-12);
  }
}

TEST(HeldKarp, RefusesLargeAndCvrp) {
  EXPECT_THROW(held_karp(random_instance(ProblemKind::tsp, 17, 1)), OracleRefused);
  EXPECT_THROW(held_karp(random_instance(ProblemKind::cvrp, 6, 1)), OracleRefused);
}

TEST(TwoOpt, UncrossesSquare) {
  const auto l = two_opt(unit_square(), {{0, 2, 1, 3}});
  EXPECT_DOUBLE_EQ(l.cost, 4.0);
  EXPECT_EQ(l.solution.sequence.front(), 0);
}

TEST(TwoOpt, OptimalIsFixedPoint) {
  const Solution opt{{0, 1, 2, 3}};
  EXPECT_EQ(two_opt(unit_square(), opt).solution, opt);
}

TEST(TwoOpt, BoundedByExactAndNoImprovingMoveRemains) {
  for (std::uint64_t i = 0; i < 30; ++i) {
    const int n = 5 + static_cast<int>(i % 8);
    const auto inst = random_instance(ProblemKind::tsp, n, 77, i);
    const auto init = nearest_neighbor(inst);
    const auto l = two_opt(inst, init);
    EXPECT_TRUE(validate(inst, l.solution).ok());
    EXPECT_LE(l.cost, sequence_cost(inst, init.sequence) + 1e-12);
    EXPECT_GE(l.cost, held_karp(inst).cost - 1e-9);
    const auto& s = l.solution.sequence;
    for (int a = 0; a < n; ++a)
      for (int b = a + 2; b < n; ++b) {
        if ((b + 1) % n == a) continue;
        const double delta = inst.cost(s[a], s[b]) + inst.cost(s[a + 1], s[(b + 1) % n]) - inst.cost(s[a], s[a + 1]) -
                             inst.cost(s[b], s[(b + 1) % n]);
        EXPECT_GE(delta, -1e-9);
      }
  }
}

TEST(CvrpHeuristic, FullDemandsOneRouteEach) {
  auto inst = cvrp({{0.5, 0.5}, {0, 0}, {1, 0}, {1, 1}, {0, 1}}, {0, 5, 5, 5, 5}, 5);
  const auto l = cvrp_heuristic(inst);
  EXPECT_EQ(split_routes(l.solution).size(), 4u);
  EXPECT_TRUE(validate(inst, l.solution).ok());
}

TEST(CvrpHeuristic, TwoCustomersMerge) {
  auto inst = cvrp({{0, 0}, {1, 0}, {1, 0.1}}, {0, 1, 1}, 5);
  const auto l = cvrp_heuristic(inst);
  EXPECT_EQ(split_routes(l.solution).size(), 1u);
}

TEST(CvrpHeuristic, RejectsOversizedDemand) {
  auto inst = cvrp({{0, 0}, {1, 0}}, {0, 6}, 5);
  EXPECT_THROW(cvrp_heuristic(inst), std::invalid_argument);
}

TEST(CvrpHeuristic, ValidAndAboveExhaustiveOptimum) {
  for (std::uint64_t i = 0; i < 12; ++i) {
    const int n = 4 + static_cast<int>(i % 5);  // up to 8 nodes
    const auto inst = random_instance(ProblemKind::cvrp, n, 13, i);
    const auto l = cvrp_heuristic(inst);
    ASSERT_TRUE(validate(inst, l.solution).ok());
    EXPECT_NEAR(l.cost, tour_cost(inst, l.solution), 1e-12);
    EXPECT_GE(l.cost, cvrp_exhaustive(inst) - 1e-9);
  }
}

TEST(LabelInstance, Tiering) {
  EXPECT_EQ(label_instance(random_instance(ProblemKind::tsp, 12, 1)).provenance, Provenance::exact);
  EXPECT_EQ(label_instance(random_instance(ProblemKind::tsp, 20, 1)).provenance, Provenance::two_opt);
  EXPECT_EQ(label_instance(random_instance(ProblemKind::cvrp, 12, 1)).provenance, Provenance::savings_two_opt);
  EXPECT_THROW(parse_oracle("concorde"), std::invalid_argument);
}

TEST(SamplePartial, WholeCycleAtFour) {
  const auto inst = unit_square();
  const Solution sol{{0, 1, 2, 3}};
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    SampleOrigin o;
    const auto s = sample_partial(inst, sol, rng, &o);
    ASSERT_EQ(s.size(), 4);
    std::vector<int> seq = sol.sequence;
    if (o.reversed) std::reverse(seq.begin(), seq.end());
    for (int k = 0; k < 4; ++k) EXPECT_EQ(s.nodes[k], seq[(o.offset + k) % 4]);
  }
}

TEST(SamplePartial, RefusesShort) {
  Rng rng(1);
  EXPECT_THROW(sample_partial(tsp({{0, 0}, {1, 1}, {0, 1}}), {{0, 1, 2}}, rng), std::invalid_argument);
}

TEST(SamplePartial, LengthAndDirectionLaws) {
  const auto inst = random_instance(ProblemKind::tsp, 20, 2);
  Solution sol;
  sol.sequence.resize(20);
  std::iota(sol.sequence.begin(), sol.sequence.end(), 0);
  Rng rng(123);
  const int N = 100000;
  std::vector<int> len(21, 0);
  int rev = 0;
  for (int i = 0; i < N; ++i) {
    SampleOrigin o;
    const auto s = sample_partial(inst, sol, rng, &o);
    ++len[s.size()];
    rev += o.reversed;
  }
  const double p = 1.0 / 17, sl = std::sqrt(N * p * (1 - p));
  for (int k = 4; k <= 20; ++k) EXPECT_LT(std::abs(len[k] - N * p), 3 * sl) << "length " << k;
  EXPECT_LT(std::abs(rev - N * 0.5), 3 * std::sqrt(N * 0.25));
}

TEST(SamplePartial, ContiguousSubRun) {
  for (auto kind : {ProblemKind::tsp, ProblemKind::cvrp}) {
    const auto inst = random_instance(kind, 14, 3);
    const auto lab = label_instance(inst);
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
      SampleOrigin o;
      const auto s = sample_partial(inst, lab.solution, rng, &o);
      if (kind == ProblemKind::tsp) {
        auto seq = lab.solution.sequence;
        if (o.reversed) std::reverse(seq.begin(), seq.end());
        for (int k = 0; k < s.size(); ++k) EXPECT_EQ(s.nodes[k], seq[(o.offset + k) % seq.size()]);
      } else {
        // Replaying the sample from its start capacity never overloads.
        int c = s.remaining_capacity_at_start;
        EXPECT_GE(c, 0);
        for (int k = 0; k < s.size(); ++k) {
          if (s.via_depot[k]) c = inst.capacity;
          c -= inst.demands[s.nodes[k]];
          EXPECT_GE(c, 0);
        }
      }
    }
  }
}

TEST(SamplePartial, CvrpStartCapacityFromReplay) {
  // Two routes: [1 2] and [3 4], demands 3 each, capacity 10.
  auto inst = cvrp({{0, 0}, {1, 0}, {2, 0}, {0, 1}, {0, 2}}, {0, 3, 3, 3, 3}, 10);
  const Solution sol{{0, 1, 2, 0, 3, 4}};
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    SampleOrigin o;
    const auto s = sample_partial(inst, sol, rng, &o);
    if (o.reversed) continue;
    const int expected[] = {10, 7, 4, 7};  // before customer steps 0..3
    EXPECT_EQ(s.remaining_capacity_at_start, expected[o.offset]);
  }
}
