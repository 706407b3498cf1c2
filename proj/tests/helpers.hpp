#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mnlp/instance_gen.hpp"
#include "mnlp/model.hpp"
#include "mnlp/oracle.hpp"
#include "mnlp/vrp.hpp"

namespace mnlp::testing {

inline Instance tsp(std::vector<Point> pts) {
  Instance inst;
  inst.kind = ProblemKind::tsp;
  inst.coords = std::move(pts);
  return inst;
}

inline Instance unit_square() { return tsp({{0, 0}, {1, 0}, {1, 1}, {0, 1}}); }

inline Instance cvrp(std::vector<Point> pts, std::vector<int> demands, int capacity) {
  Instance inst;
  inst.kind = ProblemKind::cvrp;
  inst.coords = std::move(pts);
  inst.demands = std::move(demands);
  inst.capacity = capacity;
  return inst;
}

inline Instance random_instance(ProblemKind kind, int n, std::uint64_t seed, std::uint64_t index = 0) {
  GenSpec s;
  s.kind = kind;
  s.n = n;
  s.seed = seed;
  return generate(s, index);
}

inline ModelConfig tiny_config(ProblemKind kind, int K = 2, Variant variant = Variant::mnlp_e) {
  ModelConfig c;
  c.kind = kind;
  c.embed_dim = 16;
  c.heads = 2;
  c.ffn_dim = 16;
  c.decoder_blocks = 2;
  c.mnlp_depths = K;
  c.variant = variant;
  return c;
}

// A partial sample of exactly `np` steps drawn from the label of inst.
inline PartialSample sample_of_length(const Instance& inst, const Solution& sol, int np, std::uint64_t seed) {
  for (std::uint64_t i = 0;; ++i) {
    Rng rng(derive_seed(seed, "len", i));
    auto s = sample_partial(inst, sol, rng);
    if (s.size() == np) return s;
  }
}

inline std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "mnlp_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace mnlp::testing
