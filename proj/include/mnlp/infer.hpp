#pragma once

// Greedy construction, Random Re-Construct refinement and dataset evaluation.
// Only the main decoder path is used.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnlp/autodiff.hpp"
#include "mnlp/dataset.hpp"
#include "mnlp/model.hpp"
#include "mnlp/rng.hpp"
#include "mnlp/train.hpp"
#include "mnlp/vrp.hpp"

namespace mnlp {

namespace detail {

/// Encoder output for a fixed node list, computed once and replayed into
/// per-step graphs as a constant.
struct Encoded {
  ad::Shape shape;
  std::vector<double> values;
};

inline Encoded encode_once(const Model& model, const Instance& inst, const std::vector<int>& nodes) {
  ad::Graph g(false);
  Bound P(g, model.params);
  const auto H = encode(P, model.config, inst, nodes);
  return {H.shape(), std::vector<double>(H.data().begin(), H.data().end())};
}

/// Probabilities over the flattened (available x actions) grid.
inline std::vector<double> step_probs(const Model& model, const Encoded& enc, const DecoderInput& in,
                                      const std::vector<char>& mask) {
  ad::Graph g(false);
  Bound P(g, model.params);
  const auto H = g.constant(enc.shape, enc.values);
  const auto p = decode_step(P, model.config, H, in, mask);
  return {p.data().begin(), p.data().end()};
}

inline std::size_t argmax_masked(const std::vector<double>& p, const std::vector<char>& mask) {
  std::size_t best = p.size();
  for (std::size_t i = 0; i < p.size(); ++i)
    if (mask[i] && (best == p.size() || p[i] > p[best])) best = i;
  return best;
}

inline std::size_t sample_masked(const std::vector<double>& p, const std::vector<char>& mask, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = p.size();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!mask[i] || p[i] <= 0.0) continue;
    acc += p[i];
    last = i;
    if (u < acc) return i;
  }
  return last;  // rounding left u above the final partial sum
}

inline std::vector<char> cvrp_mask(const Instance& inst, const std::vector<int>& nodes, const DecoderInput& in,
                                   int remaining) {
  std::vector<char> mask(2 * in.available.size());
  for (std::size_t i = 0; i < in.available.size(); ++i) {
    mask[2 * i] = inst.demands[nodes[in.available[i]]] <= remaining;
    mask[2 * i + 1] = in.prev != Instance::depot;
  }
  return mask;
}

}  // namespace detail

/// Builds a full solution from node 0 (TSP) or the depot (CVRP), taking the
/// most probable feasible action at every step; ties go to the lowest index.
inline Solution greedy_decode(const Model& model, const Instance& inst) {
  if (inst.kind != model.config.kind) throw std::invalid_argument("greedy_decode: model and instance kinds differ");
  check_instance(inst);
  const int n = static_cast<int>(inst.size());
  std::vector<int> nodes(n);
  for (int i = 0; i < n; ++i) nodes[i] = i;
  const auto enc = detail::encode_once(model, inst, nodes);

  Solution sol;
  auto state = step_env(inst, initial_state(inst), 0);
  sol.sequence.push_back(0);
  const int customers = inst.is_cvrp() ? n - 1 : n;
  auto served = [&] { return inst.is_cvrp() ? state.visited_count() - 1 : state.visited_count(); };
  while (served() < customers) {
    DecoderInput in;
    in.first = state.first_node;
    in.prev = state.prev_node;
    for (int i = inst.is_cvrp() ? 1 : 0; i < n; ++i)
      if (!state.visited[i]) in.available.push_back(i);
    if (!inst.is_cvrp()) {
      int pick = in.available.front();
      if (in.available.size() > 1) {
        const std::vector<char> mask(in.available.size(), 1);
        pick = in.available[detail::argmax_masked(detail::step_probs(model, enc, in, mask), mask)];
      }
      state = step_env(inst, state, pick);
      sol.sequence.push_back(pick);
      continue;
    }
    in.capacity = static_cast<double>(state.remaining_capacity) / inst.capacity;
    const auto mask = detail::cvrp_mask(inst, nodes, in, state.remaining_capacity);
    const std::size_t a = detail::argmax_masked(detail::step_probs(model, enc, in, mask), mask);
    const int node = in.available[a / 2];
    if (a % 2 == 1) {
      state = step_env(inst, state, Instance::depot);
      sol.sequence.push_back(Instance::depot);
    }
    state = step_env(inst, state, node);
    sol.sequence.push_back(node);
  }
  return sol;
}

struct RrcResult {
  Solution solution;
  std::vector<double> trajectory;  // cost after each iteration, starting with the input cost
  int accepted = 0;
};

namespace detail {

// Re-decodes the interior of TSP path p_1..p_m with p_m as the tour anchor
// x_1 and p_1 as x_2, sampling from the policy.
inline std::vector<int> redecode_tsp(const Model& model, const Instance& inst, const std::vector<int>& seg, Rng& rng) {
  const std::size_t m = seg.size();
  std::vector<int> nodes = seg;
  std::sort(nodes.begin(), nodes.end());
  auto local = [&](int g) { return static_cast<int>(std::lower_bound(nodes.begin(), nodes.end(), g) - nodes.begin()); };
  const auto enc = encode_once(model, inst, nodes);
  std::vector<char> used(m, 0);
  used[local(seg.back())] = used[local(seg.front())] = 1;
  std::vector<int> path{seg.front()};
  DecoderInput in;
  in.first = local(seg.back());
  in.prev = local(seg.front());
  for (std::size_t step = 0; step + 2 < m; ++step) {
    in.available.clear();
    for (std::size_t i = 0; i < m; ++i)
      if (!used[i]) in.available.push_back(static_cast<int>(i));
    int pick = in.available.front();
    if (in.available.size() > 1) {
      const std::vector<char> mask(in.available.size(), 1);
      pick = in.available[sample_masked(step_probs(model, enc, in, mask), mask, rng)];
    }
    used[pick] = 1;
    path.push_back(nodes[pick]);
    in.prev = pick;
  }
  path.push_back(seg.back());
  return path;
}

inline double path_cost(const Instance& inst, const std::vector<int>& p) {
  double c = 0.0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) c += inst.cost(p[i], p[i + 1]);
  return c;
}

inline Solution rrc_tsp_iteration(const Model& model, const Instance& inst, const Solution& sol, Rng& rng,
                                  bool& accepted) {
  const int n = static_cast<int>(sol.size());
  const int m = static_cast<int>(rng.uniform_int(kMinPartialLength, n));
  const int offset = static_cast<int>(rng.uniform_int(0, n - 1));
  std::vector<int> seq = sol.sequence;
  if (rng.bernoulli(0.5)) std::reverse(seq.begin(), seq.end());
  std::rotate(seq.begin(), seq.begin() + offset, seq.end());
  const std::vector<int> seg(seq.begin(), seq.begin() + m);
  const auto path = redecode_tsp(model, inst, seg, rng);
  if (!(path_cost(inst, path) < path_cost(inst, seg))) return sol;
  std::copy(path.begin(), path.end(), seq.begin());
  std::rotate(seq.begin(), std::find(seq.begin(), seq.end(), sol.sequence.front()), seq.end());
  // Decide on the full tour sum so the recorded objective can never rise.
  accepted = sequence_cost(inst, seq) < sequence_cost(inst, sol.sequence);
  return accepted ? Solution{seq} : sol;
}

// CVRP: re-decodes customer steps p_2..p_m of a segment, keeping p_1 and its
// depot flag; accepted only if the rebuilt solution is feasible and cheaper.
inline Solution rrc_cvrp_iteration(const Model& model, const Instance& inst, const Solution& sol, Rng& rng,
                                   bool& accepted) {
  accepted = false;
  Solution oriented = sol;
  const bool reversed = rng.bernoulli(0.5);
  if (reversed) {
    std::vector<int> flat(sol.sequence.rbegin(), sol.sequence.rend());
    std::rotate(flat.begin(), std::find(flat.begin(), flat.end(), Instance::depot), flat.end());
    oriented.sequence = std::move(flat);
  }
  auto steps = to_customer_steps(oriented);
  const int k = static_cast<int>(steps.size());
  if (k < kMinPartialLength) return sol;
  const int m = static_cast<int>(rng.uniform_int(kMinPartialLength, k));
  const int offset = static_cast<int>(rng.uniform_int(0, k - m));
  int remaining = inst.capacity;
  for (int j = 0; j <= offset; ++j) {
    if (steps[j].via_depot) remaining = inst.capacity;
    remaining -= inst.demands[steps[j].node];
  }

  std::vector<int> nodes{Instance::depot};
  for (int i = 0; i < m; ++i) nodes.push_back(steps[offset + i].node);
  std::sort(nodes.begin() + 1, nodes.end());
  auto local = [&](int g) { return static_cast<int>(std::lower_bound(nodes.begin() + 1, nodes.end(), g) - nodes.begin()); };
  const auto enc = encode_once(model, inst, nodes);
  std::vector<char> used(nodes.size(), 0);
  used[local(steps[offset].node)] = 1;
  DecoderInput in;
  in.first = in.prev = local(steps[offset].node);
  std::vector<CustomerStep> fresh{steps[offset]};
  for (int s = 1; s < m; ++s) {
    in.available.clear();
    for (std::size_t i = 1; i < nodes.size(); ++i)
      if (!used[i]) in.available.push_back(static_cast<int>(i));
    in.capacity = static_cast<double>(remaining) / inst.capacity;
    const auto mask = cvrp_mask(inst, nodes, in, remaining);
    const std::size_t a = sample_masked(step_probs(model, enc, in, mask), mask, rng);
    const int pick = in.available[a / 2];
    const bool via = a % 2 == 1;
    if (via) remaining = inst.capacity;
    remaining -= inst.demands[nodes[pick]];
    used[pick] = 1;
    fresh.push_back({nodes[pick], via});
    in.prev = pick;
  }
  std::vector<CustomerStep> rebuilt(steps.begin(), steps.begin() + offset);
  rebuilt.insert(rebuilt.end(), fresh.begin(), fresh.end());
  rebuilt.insert(rebuilt.end(), steps.begin() + offset + m, steps.end());
  Solution cand = from_customer_steps(rebuilt);
  if (!validate(inst, cand).ok()) return sol;
  const double before = sequence_cost(inst, sol.sequence), after = sequence_cost(inst, cand.sequence);
  accepted = after < before;
  return accepted ? cand : sol;
}

}  // namespace detail

/// Random Re-Construct: repeatedly re-decodes a random segment and keeps the
/// result only when it is strictly cheaper.
inline RrcResult rrc(const Model& model, const Instance& inst, const Solution& tour, int iterations, Rng& rng) {
  tour_cost(inst, tour);  // validates
  RrcResult r;
  r.solution = tour;
  r.trajectory.push_back(sequence_cost(inst, tour.sequence));
  const int n = static_cast<int>(inst.size());
  for (int it = 0; it < iterations; ++it) {
    bool accepted = false;
    if (!inst.is_cvrp() && n >= kMinPartialLength)
      r.solution = detail::rrc_tsp_iteration(model, inst, r.solution, rng, accepted);
    else if (inst.is_cvrp())
      r.solution = detail::rrc_cvrp_iteration(model, inst, r.solution, rng, accepted);
    r.accepted += accepted;
    r.trajectory.push_back(accepted ? sequence_cost(inst, r.solution.sequence) : r.trajectory.back());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

struct InstanceResult {
  std::size_t id = 0;
  double cost = 0.0;
  double oracle_cost = 0.0;
  double gap = 0.0;  // (cost - oracle) / oracle
  double decode_ms = 0.0;
  Solution solution;
};

struct EvalResult {
  std::vector<InstanceResult> rows;
  double mean_gap = 0.0;
  double mean_cost = 0.0;
  double total_seconds = 0.0;

  std::string csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "instance_id,cost,oracle_cost,gap,decode_ms,tour\n";
    for (const auto& r : rows) {
      os << r.id << ',' << r.cost << ',' << r.oracle_cost << ',' << r.gap << ',' << r.decode_ms << ',';
      for (std::size_t k = 0; k < r.solution.sequence.size(); ++k) os << (k ? " " : "") << r.solution.sequence[k];
      os << '\n';
    }
    return os.str();
  }
};

inline double gap_of(double cost, double oracle) { return (cost - oracle) / oracle; }

struct EvalOptions {
  int rrc_iterations = 0;
  std::uint64_t seed = 1;  // RRC stream root
  int threads = 1;
};

inline EvalResult evaluate(const Model& model, const Dataset& ds, const EvalOptions& opt = {}) {
  if (!ds.labeled() || ds.labels.size() != ds.instances.size())
    throw std::invalid_argument("evaluate: need one oracle label per instance (" + std::to_string(ds.labels.size()) +
                                " labels, " + std::to_string(ds.instances.size()) + " instances)");
  const auto t0 = std::chrono::steady_clock::now();
  EvalResult res;
  res.rows.resize(ds.size());
  parallel_for(ds.size(), opt.threads, [&](std::size_t i) {
    const auto s0 = std::chrono::steady_clock::now();
    auto& row = res.rows[i];
    row.id = i;
    row.solution = greedy_decode(model, ds.instances[i]);
    if (opt.rrc_iterations > 0) {
      Rng rng(derive_seed(opt.seed, "rrc", i));
      row.solution = rrc(model, ds.instances[i], row.solution, opt.rrc_iterations, rng).solution;
    }
    row.cost = tour_cost(ds.instances[i], row.solution);
    row.oracle_cost = ds.labels[i].cost;
    row.gap = gap_of(row.cost, row.oracle_cost);
    row.decode_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - s0).count();
  });
  double g = 0.0, c = 0.0;
  for (const auto& r : res.rows) g += r.gap, c += r.cost;
  if (!res.rows.empty()) {
    res.mean_gap = g / static_cast<double>(res.rows.size());
    res.mean_cost = c / static_cast<double>(res.rows.size());
  }
  res.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace mnlp
