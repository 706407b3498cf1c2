#pragma once

// Random instance generation: uniform base instances plus the rotation and
// explosion mutations used for out-of-distribution evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnlp/rng.hpp"
#include "mnlp/vrp.hpp"

namespace mnlp {

enum class Distribution : std::uint32_t { uniform = 0, rotation = 1, explosion = 2 };

inline const char* to_string(Distribution d) {
  switch (d) {
    case Distribution::uniform: return "uniform";
    case Distribution::rotation: return "rotation";
    case Distribution::explosion: return "explosion";
  }
  return "unknown";
}

inline Distribution parse_distribution(const std::string& s) {
  if (s == "uniform") return Distribution::uniform;
  if (s == "rotation") return Distribution::rotation;
  if (s == "explosion") return Distribution::explosion;
  throw std::invalid_argument("unknown distribution '" + s + "'");
}

/// Default CVRP vehicle capacity for a given instance size.
inline int default_capacity(int n) {
  if (n <= 10) return 20;
  if (n <= 20) return 30;
  if (n <= 50) return 40;
  if (n <= 100) return 50;
  if (n <= 200) return 80;
  if (n <= 500) return 100;
  return 250;
}

struct GenSpec {
  ProblemKind kind = ProblemKind::tsp;
  int n = 20;
  Distribution distribution = Distribution::uniform;
  std::uint64_t seed = 0;
  int demand_lo = 1;
  int demand_hi = 9;
  int capacity = 0;  // 0 selects default_capacity(n)

  // Mutation parameters.
  double rotation_probability = 0.5;
  double explosion_radius = 0.3;
  double explosion_mean = 0.1;

  int effective_capacity() const { return capacity > 0 ? capacity : default_capacity(n); }

  void check() const {
    if (n < 2) throw std::invalid_argument("GenSpec: n must be at least 2");
    if (kind == ProblemKind::cvrp) {
      const int cap = effective_capacity();
      if (demand_lo < 1 || demand_hi < demand_lo || demand_hi > cap)
        throw std::invalid_argument("GenSpec: demand range must lie within [1, capacity]");
    }
  }
};

/// Rescales each axis independently onto [0, 1]. A degenerate axis maps to 0.
inline std::vector<Point> minmax_normalize(std::vector<Point> pts) {
  if (pts.empty()) return pts;
  double lx = std::numeric_limits<double>::infinity(), hx = -lx, ly = lx, hy = -lx;
  for (const auto& p : pts) {
    lx = std::min(lx, p.x), hx = std::max(hx, p.x);
    ly = std::min(ly, p.y), hy = std::max(hy, p.y);
  }
  const double sx = hx - lx, sy = hy - ly;
  for (auto& p : pts) {
    p.x = sx > 0 ? std::clamp((p.x - lx) / sx, 0.0, 1.0) : 0.0;
    p.y = sy > 0 ? std::clamp((p.y - ly) / sy, 0.0, 1.0) : 0.0;
  }
  return pts;
}

/// Same as gen_uniform but drawing from an existing stream.
inline Instance gen_uniform(const GenSpec& spec, Rng& rng) {
  spec.check();
  Instance inst;
  inst.kind = spec.kind;
  inst.coords.resize(spec.n);
  for (auto& p : inst.coords) {
    p.x = rng.uniform();
    p.y = rng.uniform();
  }
  if (spec.kind == ProblemKind::cvrp) {
    inst.capacity = spec.effective_capacity();
    inst.demands.assign(spec.n, 0);
    for (int i = 1; i < spec.n; ++i)
      inst.demands[i] = static_cast<int>(rng.uniform_int(spec.demand_lo, spec.demand_hi));
  }
  return inst;
}

inline Instance gen_uniform(const GenSpec& spec) {
  Rng rng(derive_seed(spec.seed, "uniform"));
  return gen_uniform(spec, rng);
}

/// Pre-normalization view of a rotation mutation.
struct RotationMutation {
  double angle = 0.0;
  std::vector<char> rotated;  // per node
  std::vector<Point> raw;     // coordinates after rotation, before renormalization
};

inline Point rotate(const Point& p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x - s * p.y, s * p.x + c * p.y};
}

inline RotationMutation rotation_mutation(const Instance& inst, std::uint64_t seed,
                                          double probability = 0.5) {
  Rng rng(derive_seed(seed, "rotation"));
  RotationMutation m;
  m.angle = rng.angle();
  m.rotated.resize(inst.size());
  m.raw = inst.coords;
  for (std::size_t i = 0; i < inst.size(); ++i) {
    m.rotated[i] = rng.bernoulli(probability);
    if (m.rotated[i]) m.raw[i] = rotate(inst.coords[i], m.angle);
  }
  return m;
}

/// Rotates a random node subset about the origin, then renormalizes.
inline Instance mutate_rotation(const Instance& inst, std::uint64_t seed, double probability = 0.5) {
  Instance out = inst;
  out.coords = minmax_normalize(rotation_mutation(inst, seed, probability).raw);
  return out;
}

/// Moves p to distance radius + s from center along the ray center -> p.
/// Requires p != center.
inline Point explode_point(const Point& center, const Point& p, double radius, double s) {
  const double dx = p.x - center.x, dy = p.y - center.y;
  const double len = std::hypot(dx, dy);
  if (len == 0.0) throw std::invalid_argument("explode_point: point coincides with the center");
  return {center.x + (radius + s) * dx / len, center.y + (radius + s) * dy / len};
}

/// Pre-normalization view of an explosion mutation.
struct ExplosionMutation {
  Point center;
  double radius = 0.3;
  std::vector<char> moved;  // per node
  std::vector<Point> raw;
};

inline ExplosionMutation explosion_mutation(const Instance& inst, std::uint64_t seed,
                                            double radius = 0.3, double mean = 0.1) {
  Rng rng(derive_seed(seed, "explosion"));
  ExplosionMutation m;
  m.center = {rng.uniform(), rng.uniform()};
  m.radius = radius;
  m.moved.assign(inst.size(), 0);
  m.raw = inst.coords;
  for (std::size_t i = 0; i < inst.size(); ++i) {
    Point p = inst.coords[i];
    const double len = distance(p, m.center);
    if (len >= radius) continue;
    if (len == 0.0) {
      // No direction to push along; pick a random one.
      const double a = rng.angle();
      p = {m.center.x + std::cos(a), m.center.y + std::sin(a)};
    }
    const double s = rng.exponential(1.0 / mean);
    m.raw[i] = explode_point(m.center, p, radius, s);
    m.moved[i] = 1;
  }
  return m;
}

/// Pushes every node inside the explosion radius out along its ray from a
/// random center, then renormalizes.
inline Instance mutate_explosion(const Instance& inst, std::uint64_t seed, double radius = 0.3,
                                 double mean = 0.1) {
  Instance out = inst;
  out.coords = minmax_normalize(explosion_mutation(inst, seed, radius, mean).raw);
  return out;
}

/// The index-th instance of a dataset described by spec. Pure in (spec, index).
inline Instance generate(const GenSpec& spec, std::uint64_t index) {
  Rng rng(derive_seed(spec.seed, "instance", index));
  Instance base = gen_uniform(spec, rng);
  const std::uint64_t mseed = derive_seed(spec.seed, "mutation", index);
  switch (spec.distribution) {
    case Distribution::uniform: return base;
    case Distribution::rotation: return mutate_rotation(base, mseed, spec.rotation_probability);
    case Distribution::explosion:
      return mutate_explosion(base, mseed, spec.explosion_radius, spec.explosion_mean);
  }
  return base;
}

inline std::vector<Instance> generate_many(const GenSpec& spec, std::size_t count) {
  std::vector<Instance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate(spec, i));
  return out;
}

}  // namespace mnlp
