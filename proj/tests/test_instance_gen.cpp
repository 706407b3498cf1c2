#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "mnlp/instance_gen.hpp"

using namespace mnlp;
using namespace mnlp::testing;

namespace {
bool in_unit_square(const Instance& inst) {
  for (const auto& p : inst.coords)
    if (!(p.x >= 0 && p.x <= 1 && p.y >= 0 && p.y <= 1)) return false;
  return true;
}
}  // namespace

TEST(GenUniform, RangeAndSize) {
  GenSpec s;
  s.n = 100;
  s.seed = 17;
  const auto inst = gen_uniform(s);
  EXPECT_EQ(inst.size(), 100u);
  EXPECT_TRUE(in_unit_square(inst));
}

TEST(GenUniform, Deterministic) {
  GenSpec s;
  s.n = 30;
  s.seed = 5;
  EXPECT_EQ(gen_uniform(s), gen_uniform(s));
  EXPECT_EQ(generate(s, 3), generate(s, 3));
  EXPECT_NE(generate(s, 3), generate(s, 4));
  auto t = s;
  t.seed = 6;
  EXPECT_NE(gen_uniform(s), gen_uniform(t));
}

TEST(GenUniform, CvrpDemands) {
  GenSpec s;
  s.kind = ProblemKind::cvrp;
  s.n = 100;
  s.capacity = 50;
  s.seed = 2;
  const auto inst = gen_uniform(s);
  EXPECT_EQ(inst.capacity, 50);
  EXPECT_EQ(inst.demands[0], 0);
  for (int i = 1; i < 100; ++i) {
    EXPECT_GE(inst.demands[i], 1);
    EXPECT_LE(inst.demands[i], 9);
  }
  EXPECT_NO_THROW(check_instance(inst));
}

TEST(GenSpec, DefaultCapacities) {
  EXPECT_EQ(default_capacity(100), 50);
  EXPECT_EQ(default_capacity(200), 80);
  EXPECT_EQ(default_capacity(500), 100);
  EXPECT_EQ(default_capacity(1000), 250);
}

TEST(GenSpec, RejectsBadRanges) {
  GenSpec s;
  s.n = 1;
  EXPECT_THROW(s.check(), std::invalid_argument);
  s.n = 10;
  s.kind = ProblemKind::cvrp;
  s.capacity = 5;
  EXPECT_THROW(s.check(), std::invalid_argument);  // demand_hi 9 > 5
  s.demand_hi = 5;
  EXPECT_NO_THROW(s.check());
  s.demand_lo = 0;
  EXPECT_THROW(s.check(), std::invalid_argument);
}

TEST(Rotation, QuarterTurn) {
  const auto p = rotate({1, 0}, std::numbers::pi / 2);
  EXPECT_NEAR(p.x, 0.0, 1e-15);
  EXPECT_NEAR(p.y, 1.0, 1e-15);
}

TEST(Rotation, PreservesSubsetDistances) {
  const auto base = random_instance(ProblemKind::tsp, 200, 8);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = rotation_mutation(base, seed);
    std::vector<int> idx;
    for (std::size_t i = 0; i < base.size(); ++i)
      if (m.rotated[i]) idx.push_back(static_cast<int>(i));
    ASSERT_GT(idx.size(), 10u);
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = a + 1; b < idx.size(); ++b)
        EXPECT_NEAR(distance(m.raw[idx[a]], m.raw[idx[b]]), distance(base.coords[idx[a]], base.coords[idx[b]]), 1e-9);
  }
}

TEST(Rotation, SubsetFrequencyAboutHalf) {
  const auto base = random_instance(ProblemKind::tsp, 1000, 8);
  const auto m = rotation_mutation(base, 3);
  int c = 0;
  for (char r : m.rotated) c += r;
  EXPECT_NEAR(c, 500, 4 * std::sqrt(250.0));
}

TEST(Rotation, RenormalizedAndPure) {
  GenSpec s;
  s.n = 50;
  s.seed = 4;
  s.distribution = Distribution::rotation;
  const auto a = generate(s, 0);
  EXPECT_TRUE(in_unit_square(a));
  EXPECT_EQ(a, generate(s, 0));
}

TEST(Explosion, HandExample) {
  const auto p = explode_point({0.5, 0.5}, {0.5, 0.6}, 0.3, 0.05);
  EXPECT_NEAR(p.x, 0.5, 1e-15);
  EXPECT_NEAR(p.y, 0.85, 1e-15);
}

TEST(Explosion, OutsideRadiusUnchangedInsideEjected) {
  const auto base = random_instance(ProblemKind::tsp, 300, 12);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = explosion_mutation(base, seed);
    for (std::size_t i = 0; i < base.size(); ++i) {
      const double d0 = distance(base.coords[i], m.center);
      if (d0 >= 0.3) {
        EXPECT_FALSE(m.moved[i]);
        EXPECT_EQ(m.raw[i], base.coords[i]);
      } else {
        EXPECT_TRUE(m.moved[i]);
        EXPECT_GE(distance(m.raw[i], m.center), 0.3 - 1e-12);
      }
    }
  }
}

TEST(Explosion, NodeAtDistancePointFourUnchanged) {
  // Find a seed whose center lets us place a node at distance 0.4.
  auto inst = tsp({{0.1, 0.1}, {0.9, 0.9}});
  const auto m0 = explosion_mutation(inst, 1);
  inst.coords[0] = {m0.center.x + 0.4, m0.center.y};
  const auto m = explosion_mutation(inst, 1);
  EXPECT_EQ(m.center, m0.center);
  EXPECT_FALSE(m.moved[0]);
  EXPECT_EQ(m.raw[0], inst.coords[0]);
}

TEST(Explosion, CenterCoincidentNodeGetsDirection) {
  auto inst = tsp({{0.1, 0.1}, {0.9, 0.9}});
  const auto m0 = explosion_mutation(inst, 2);
  inst.coords[0] = m0.center;
  const auto m = explosion_mutation(inst, 2);
  EXPECT_TRUE(m.moved[0]);
  EXPECT_TRUE(std::isfinite(m.raw[0].x) && std::isfinite(m.raw[0].y));
  EXPECT_GE(distance(m.raw[0], m.center), 0.3 - 1e-12);
  EXPECT_THROW(explode_point({0, 0}, {0, 0}, 0.3, 0.1), std::invalid_argument);
}

TEST(Explosion, RenormalizedAndPure) {
  GenSpec s;
  s.n = 50;
  s.seed = 4;
  s.distribution = Distribution::explosion;
  const auto a = generate(s, 1);
  EXPECT_TRUE(in_unit_square(a));
  EXPECT_EQ(a, generate(s, 1));
}

TEST(Normalize, PerAxis) {
  const auto pts = minmax_normalize({{2, 5}, {4, 5}, {3, 9}});
  EXPECT_EQ(pts[0], (Point{0, 0}));
  EXPECT_EQ(pts[1], (Point{1, 0}));
  EXPECT_EQ(pts[2], (Point{0.5, 1}));
}
