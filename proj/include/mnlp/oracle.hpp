#pragma once

// Label oracles: exact TSP solvers for small n, 2-opt and savings-based
// heuristics beyond that, and the partial-solution sampler used to build
// teacher-forcing targets.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnlp/rng.hpp"
#include "mnlp/vrp.hpp"

namespace mnlp {

enum class Provenance : std::uint32_t { exact = 0, two_opt = 1, savings_two_opt = 2 };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::exact: return "exact";
    case Provenance::two_opt: return "two_opt";
    case Provenance::savings_two_opt: return "savings_two_opt";
  }
  return "unknown";
}

struct OracleLabel {
  Solution solution;
  double cost = 0.0;
  Provenance provenance = Provenance::exact;
  friend bool operator==(const OracleLabel&, const OracleLabel&) = default;
};

class OracleRefused : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kBruteForceMaxN = 9;
inline constexpr int kHeldKarpMaxN = 16;

inline void require_tsp(const Instance& inst, const char* who) {
  if (inst.is_cvrp()) throw OracleRefused(std::string(who) + ": TSP instances only");
}

/// Exhaustive search over tours with node 0 fixed first.
inline OracleLabel brute_force(const Instance& inst) {
  require_tsp(inst, "brute_force");
  const int n = static_cast<int>(inst.size());
  if (n > kBruteForceMaxN)
    throw OracleRefused("brute_force: n=" + std::to_string(n) + " exceeds " +
                        std::to_string(kBruteForceMaxN));
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_cost = sequence_cost(inst, perm);
  while (std::next_permutation(perm.begin() + 1, perm.end())) {
    const double c = sequence_cost(inst, perm);
    if (c < best_cost) best_cost = c, best = perm;
  }
  return {Solution{best}, best_cost, Provenance::exact};
}

/// Bitmask dynamic program over subsets of nodes 1..n-1 (node 0 is the start).
inline OracleLabel held_karp(const Instance& inst) {
  require_tsp(inst, "held_karp");
  const int n = static_cast<int>(inst.size());
  if (n > kHeldKarpMaxN)
    throw OracleRefused("held_karp: n=" + std::to_string(n) + " exceeds " +
                        std::to_string(kHeldKarpMaxN));
  if (n <= 3) {
    std::vector<int> seq(n);
    std::iota(seq.begin(), seq.end(), 0);
    return {Solution{seq}, sequence_cost(inst, seq), Provenance::exact};
  }
  const int m = n - 1;  // node i+1 is bit i
  const std::size_t full = (std::size_t{1} << m);
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dp(full * m, inf);
  std::vector<std::int8_t> parent(full * m, -1);
  for (int j = 0; j < m; ++j) dp[(std::size_t{1} << j) * m + j] = inst.cost(0, j + 1);
  for (std::size_t mask = 1; mask < full; ++mask) {
    for (int j = 0; j < m; ++j) {
      if (!(mask & (std::size_t{1} << j))) continue;
      const double base = dp[mask * m + j];
      if (base == inf) continue;
      for (int k = 0; k < m; ++k) {
        if (mask & (std::size_t{1} << k)) continue;
        const std::size_t next = mask | (std::size_t{1} << k);
        const double c = base + inst.cost(j + 1, k + 1);
        if (c < dp[next * m + k]) {
          dp[next * m + k] = c;
          parent[next * m + k] = static_cast<std::int8_t>(j);
        }
      }
    }
  }
  const std::size_t all = full - 1;
  int last = 0;
  double best = inf;
  for (int j = 0; j < m; ++j) {
    const double c = dp[all * m + j] + inst.cost(j + 1, 0);
    if (c < best) best = c, last = j;
  }
  std::vector<int> rev;
  std::size_t mask = all;
  for (int j = last; j >= 0;) {
    rev.push_back(j + 1);
    const int p = parent[mask * m + j];
    mask &= ~(std::size_t{1} << j);
    j = p;
  }
  std::vector<int> seq{0};
  seq.insert(seq.end(), rev.rbegin(), rev.rend());
  return {Solution{seq}, sequence_cost(inst, seq), Provenance::exact};
}

inline Solution nearest_neighbor(const Instance& inst, int start = 0) {
  require_tsp(inst, "nearest_neighbor");
  const int n = static_cast<int>(inst.size());
  std::vector<char> used(n, 0);
  Solution sol;
  sol.sequence.reserve(n);
  int cur = start;
  used[cur] = 1;
  sol.sequence.push_back(cur);
  for (int step = 1; step < n; ++step) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (used[j]) continue;
      const double d = inst.cost(cur, j);
      if (d < best_d) best_d = d, best = j;
    }
    used[best] = 1;
    sol.sequence.push_back(best);
    cur = best;
  }
  return sol;
}

namespace detail {

inline constexpr double kImproveEps = 1e-12;

// First-improvement 2-exchange on a closed sequence. Position 0 stays fixed.
// Returns true if anything changed.
template <class CostFn>
bool two_opt_closed(std::vector<int>& seq, CostFn&& cost) {
  const int n = static_cast<int>(seq.size());
  if (n < 4) return false;
  bool changed = false;
  bool improved = true;
  while (improved) {
    improved = false;
    for (int i = 0; i < n - 2 && !improved; ++i) {
      const int a = seq[i], b = seq[i + 1];
      for (int j = i + 2; j < n; ++j) {
        const int c = seq[j], d = seq[(j + 1) % n];
        if (d == a) continue;
        const double delta = cost(a, c) + cost(b, d) - cost(a, b) - cost(c, d);
        if (delta < -kImproveEps) {
          std::reverse(seq.begin() + i + 1, seq.begin() + j + 1);
          improved = changed = true;
          break;
        }
      }
    }
  }
  return changed;
}

}  // namespace detail

/// 2-opt descent to a local optimum. The first node of init stays first.
inline OracleLabel two_opt(const Instance& inst, const Solution& init) {
  require_tsp(inst, "two_opt");
  auto rep = validate(inst, init);
  if (!rep.ok()) throw ValidationError(std::move(rep));
  std::vector<int> seq = init.sequence;
  detail::two_opt_closed(seq, [&](int i, int j) { return inst.cost(i, j); });
  return {Solution{seq}, sequence_cost(inst, seq), Provenance::two_opt};
}

/// Clarke-Wright savings followed by intra-route 2-opt and inter-route
/// relocation until neither improves.
inline OracleLabel cvrp_heuristic(const Instance& inst) {
  if (!inst.is_cvrp()) throw OracleRefused("cvrp_heuristic: CVRP instances only");
  const int n = static_cast<int>(inst.size());
  for (int i = 1; i < n; ++i)
    if (inst.demands[i] > inst.capacity)
      throw std::invalid_argument("cvrp_heuristic: demand of customer " + std::to_string(i) +
                                  " exceeds capacity");

  // Savings construction.
  std::vector<std::vector<int>> routes(n);
  std::vector<int> route_of(n, -1);
  std::vector<long> load(n, 0);
  for (int i = 1; i < n; ++i) {
    routes[i] = {i};
    route_of[i] = i;
    load[i] = inst.demands[i];
  }
  struct Saving {
    double value;
    int i, j;
  };
  std::vector<Saving> savings;
  for (int i = 1; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      savings.push_back({inst.cost(0, i) + inst.cost(0, j) - inst.cost(i, j), i, j});
  std::stable_sort(savings.begin(), savings.end(),
                   [](const Saving& a, const Saving& b) { return a.value > b.value; });
  for (const auto& s : savings) {
    if (s.value <= 0) break;
    int ri = route_of[s.i], rj = route_of[s.j];
    if (ri == rj || load[ri] + load[rj] > inst.capacity) continue;
    auto& a = routes[ri];
    auto& b = routes[rj];
    // Orient so that i ends a and j starts b.
    if (a.back() != s.i) {
      if (a.front() != s.i) continue;
      std::reverse(a.begin(), a.end());
    }
    if (b.front() != s.j) {
      if (b.back() != s.j) continue;
      std::reverse(b.begin(), b.end());
    }
    a.insert(a.end(), b.begin(), b.end());
    load[ri] += load[rj];
    for (int v : b) route_of[v] = ri;
    b.clear();
    load[rj] = 0;
  }
  std::vector<std::vector<int>> live;
  for (auto& r : routes)
    if (!r.empty()) live.push_back(std::move(r));

  auto route_load = [&](const std::vector<int>& r) {
    long l = 0;
    for (int v : r) l += inst.demands[v];
    return l;
  };
  auto intra = [&](std::vector<int>& r) {
    std::vector<int> closed{0};
    closed.insert(closed.end(), r.begin(), r.end());
    const bool ch = detail::two_opt_closed(closed, [&](int i, int j) { return inst.cost(i, j); });
    r.assign(closed.begin() + 1, closed.end());
    return ch;
  };

  bool improved = true;
  while (improved) {
    improved = false;
    for (auto& r : live) improved |= intra(r);
    // Relocate one customer into another route (or another position).
    for (std::size_t a = 0; a < live.size() && !improved; ++a) {
      for (std::size_t pos = 0; pos < live[a].size() && !improved; ++pos) {
        const int v = live[a][pos];
        const int prev = pos == 0 ? 0 : live[a][pos - 1];
        const int next = pos + 1 == live[a].size() ? 0 : live[a][pos + 1];
        const double removal = inst.cost(prev, v) + inst.cost(v, next) - inst.cost(prev, next);
        for (std::size_t b = 0; b < live.size() && !improved; ++b) {
          if (b == a) continue;
          if (route_load(live[b]) + inst.demands[v] > inst.capacity) continue;
          for (std::size_t ins = 0; ins <= live[b].size(); ++ins) {
            const int p = ins == 0 ? 0 : live[b][ins - 1];
            const int q = ins == live[b].size() ? 0 : live[b][ins];
            const double add = inst.cost(p, v) + inst.cost(v, q) - inst.cost(p, q);
            if (add - removal < -detail::kImproveEps) {
              live[b].insert(live[b].begin() + ins, v);
              live[a].erase(live[a].begin() + pos);
              improved = true;
              break;
            }
          }
        }
      }
    }
    live.erase(std::remove_if(live.begin(), live.end(), [](const auto& r) { return r.empty(); }),
               live.end());
  }

  Solution sol;
  for (const auto& r : live) {
    sol.sequence.push_back(0);
    sol.sequence.insert(sol.sequence.end(), r.begin(), r.end());
  }
  return {sol, sequence_cost(inst, sol.sequence), Provenance::savings_two_opt};
}

enum class OracleKind { automatic, brute_force, held_karp, two_opt, savings };

inline OracleKind parse_oracle(const std::string& s) {
  if (s == "auto") return OracleKind::automatic;
  if (s == "brute_force") return OracleKind::brute_force;
  if (s == "held_karp") return OracleKind::held_karp;
  if (s == "two_opt") return OracleKind::two_opt;
  if (s == "savings") return OracleKind::savings;
  throw std::invalid_argument("unknown oracle '" + s + "'");
}

/// Labels one instance. The automatic tier uses Held-Karp up to its size
/// limit, nearest neighbor + 2-opt for larger TSPs and savings for CVRP.
inline OracleLabel label_instance(const Instance& inst, OracleKind kind = OracleKind::automatic) {
  switch (kind) {
    case OracleKind::brute_force: return brute_force(inst);
    case OracleKind::held_karp: return held_karp(inst);
    case OracleKind::two_opt: return two_opt(inst, nearest_neighbor(inst, 0));
    case OracleKind::savings: return cvrp_heuristic(inst);
    case OracleKind::automatic:
      if (inst.is_cvrp()) return cvrp_heuristic(inst);
      if (static_cast<int>(inst.size()) <= kHeldKarpMaxN) return held_karp(inst);
      return two_opt(inst, nearest_neighbor(inst, 0));
  }
  throw std::logic_error("label_instance: unreachable");
}

/// Where a sampled segment came from in its source solution.
struct SampleOrigin {
  int offset = 0;
  bool reversed = false;
};

inline constexpr int kMinPartialLength = 4;

/// Draws a contiguous segment of the cyclic solution: length uniform on
/// [4, k], offset uniform, direction uniform. For CVRP, k counts customers
/// and the capacity at the segment start comes from replaying the
/// (possibly reversed) solution up to the offset.
inline PartialSample sample_partial(const Instance& inst, const Solution& sol, Rng& rng,
                                    SampleOrigin* origin = nullptr) {
  if (!inst.is_cvrp()) {
    const int k = static_cast<int>(sol.size());
    if (k < kMinPartialLength) throw std::invalid_argument("sample_partial: solution shorter than 4");
    const int np = static_cast<int>(rng.uniform_int(kMinPartialLength, k));
    const int offset = static_cast<int>(rng.uniform_int(0, k - 1));
    const bool reversed = rng.bernoulli(0.5);
    std::vector<int> seq = sol.sequence;
    if (reversed) std::reverse(seq.begin(), seq.end());
    PartialSample s;
    s.nodes.resize(np);
    for (int i = 0; i < np; ++i) s.nodes[i] = seq[(offset + i) % k];
    if (origin) *origin = {offset, reversed};
    return s;
  }

  const int k = static_cast<int>(to_customer_steps(sol).size());
  if (k < kMinPartialLength) throw std::invalid_argument("sample_partial: fewer than 4 customers");
  const int np = static_cast<int>(rng.uniform_int(kMinPartialLength, k));
  const int offset = static_cast<int>(rng.uniform_int(0, k - 1));
  const bool reversed = rng.bernoulli(0.5);
  Solution oriented = sol;
  if (reversed) {
    std::vector<int> flat(sol.sequence.rbegin(), sol.sequence.rend());
    auto it = std::find(flat.begin(), flat.end(), Instance::depot);
    std::rotate(flat.begin(), it, flat.end());
    oriented.sequence = std::move(flat);
  }
  const auto steps = to_customer_steps(oriented);
  int remaining = inst.capacity;
  for (int j = 0; j < offset; ++j) {
    if (steps[j].via_depot) remaining = inst.capacity;
    remaining -= inst.demands[steps[j].node];
  }
  PartialSample s;
  s.remaining_capacity_at_start = remaining;
  s.nodes.resize(np);
  s.via_depot.resize(np);
  for (int i = 0; i < np; ++i) {
    const auto& st = steps[(offset + i) % k];
    s.nodes[i] = st.node;
    s.via_depot[i] = st.via_depot;
  }
  if (origin) *origin = {offset, reversed};
  return s;
}

}  // namespace mnlp
