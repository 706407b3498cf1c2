#pragma once

// Problem definitions shared by generation, labeling, training and inference:
// instances, solutions, validity checking, tour cost, the teacher-forcing
// feasible sets and the decoding environment.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mnlp {

enum class ProblemKind { tsp, cvrp };

inline const char* to_string(ProblemKind k) { return k == ProblemKind::tsp ? "tsp" : "cvrp"; }

inline ProblemKind parse_kind(const std::string& s) {
  if (s == "tsp" || s == "TSP") return ProblemKind::tsp;
  if (s == "cvrp" || s == "CVRP") return ProblemKind::cvrp;
  throw std::invalid_argument("unknown problem kind '" + s + "'");
}

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// A routing instance. Edge costs are Euclidean and computed on demand.
/// For CVRP node 0 is the depot and carries demand 0.
struct Instance {
  static constexpr int depot = 0;

  ProblemKind kind = ProblemKind::tsp;
  std::vector<Point> coords;
  std::vector<int> demands;  // CVRP only
  int capacity = 0;          // CVRP only

  std::size_t size() const { return coords.size(); }
  bool is_cvrp() const { return kind == ProblemKind::cvrp; }
  double cost(int i, int j) const { return distance(coords[i], coords[j]); }

  friend bool operator==(const Instance&, const Instance&) = default;
};

/// Throws std::invalid_argument if the instance breaks a structural invariant.
inline void check_instance(const Instance& inst) {
  if (inst.size() < 2) throw std::invalid_argument("instance needs at least 2 nodes");
  for (const auto& p : inst.coords)
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw std::invalid_argument("instance has a non-finite coordinate");
  if (!inst.is_cvrp()) return;
  if (inst.capacity <= 0) throw std::invalid_argument("CVRP capacity must be positive");
  if (inst.demands.size() != inst.size())
    throw std::invalid_argument("CVRP demand vector does not match node count");
  if (inst.demands[Instance::depot] != 0) throw std::invalid_argument("depot demand must be 0");
  for (std::size_t i = 1; i < inst.size(); ++i)
    if (inst.demands[i] <= 0 || inst.demands[i] > inst.capacity)
      throw std::invalid_argument("customer " + std::to_string(i) + " demand " +
                                  std::to_string(inst.demands[i]) + " outside (0, " +
                                  std::to_string(inst.capacity) + "]");
}

/// A node sequence. For CVRP the sequence starts at the depot and repeated
/// depot entries delimit routes.
struct Solution {
  std::vector<int> sequence;
  std::size_t size() const { return sequence.size(); }
  friend bool operator==(const Solution&, const Solution&) = default;
};

enum class ViolationKind {
  out_of_range,
  duplicate_node,
  missing_node,
  not_starting_at_depot,
  capacity_excess,
};

inline const char* to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::out_of_range: return "out_of_range";
    case ViolationKind::duplicate_node: return "duplicate_node";
    case ViolationKind::missing_node: return "missing_node";
    case ViolationKind::not_starting_at_depot: return "not_starting_at_depot";
    case ViolationKind::capacity_excess: return "capacity_excess";
  }
  return "unknown";
}

struct Violation {
  ViolationKind kind;
  int position = -1;  // index into the sequence, when meaningful
  int node = -1;
  int route = -1;     // capacity_excess only
  int overload = 0;   // capacity_excess only

  std::string describe() const {
    std::ostringstream os;
    os << to_string(kind);
    if (node >= 0) os << " node=" << node;
    if (position >= 0) os << " position=" << position;
    if (route >= 0) os << " route=" << route << " overload=" << overload;
    return os.str();
  }
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  explicit operator bool() const { return ok(); }
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(ValidationReport report)
      : std::runtime_error("invalid solution: " + report.violations.front().describe()),
        report_(std::move(report)) {}
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

/// Customers of each depot-delimited route, in visiting order.
inline std::vector<std::vector<int>> split_routes(const Solution& sol) {
  std::vector<std::vector<int>> routes;
  std::vector<int> current;
  for (int v : sol.sequence) {
    if (v == Instance::depot) {
      if (!current.empty()) routes.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(v);
    }
  }
  if (!current.empty()) routes.push_back(std::move(current));
  return routes;
}

inline ValidationReport validate(const Instance& inst, const Solution& sol) {
  ValidationReport rep;
  const int n = static_cast<int>(inst.size());
  std::vector<int> seen(n, 0);
  for (int pos = 0; pos < static_cast<int>(sol.size()); ++pos) {
    const int v = sol.sequence[pos];
    if (v < 0 || v >= n) {
      rep.violations.push_back({ViolationKind::out_of_range, pos, v});
      continue;
    }
    if (inst.is_cvrp() && v == Instance::depot) continue;
    if (seen[v]++ > 0) rep.violations.push_back({ViolationKind::duplicate_node, pos, v});
  }
  for (int v = 0; v < n; ++v) {
    if (inst.is_cvrp() && v == Instance::depot) continue;
    if (seen[v] == 0) rep.violations.push_back({ViolationKind::missing_node, -1, v});
  }
  if (!inst.is_cvrp()) return rep;

  if (sol.sequence.empty() || sol.sequence.front() != Instance::depot)
    rep.violations.push_back({ViolationKind::not_starting_at_depot, 0,
                              sol.sequence.empty() ? -1 : sol.sequence.front()});
  int route = 0;
  long load = 0;
  auto close_route = [&] {
    if (load > inst.capacity)
      rep.violations.push_back({ViolationKind::capacity_excess, -1, -1, route,
                                static_cast<int>(load - inst.capacity)});
    ++route;
    load = 0;
  };
  bool open = false;
  for (int v : sol.sequence) {
    if (v < 0 || v >= n) continue;
    if (v == Instance::depot) {
      if (open) close_route();
      open = false;
    } else {
      open = true;
      load += inst.demands[v];
    }
  }
  if (open) close_route();
  return rep;
}

/// Closed-tour cost without validation. Depot returns are ordinary edges and
/// the wrap-around closes the final route.
inline double sequence_cost(const Instance& inst, const std::vector<int>& seq) {
  if (seq.size() < 2) return 0.0;
  double c = 0.0;
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) c += inst.cost(seq[i], seq[i + 1]);
  return c + inst.cost(seq.back(), seq.front());
}

inline double tour_cost(const Instance& inst, const Solution& sol) {
  auto rep = validate(inst, sol);
  if (!rep.ok()) throw ValidationError(std::move(rep));
  return sequence_cost(inst, sol.sequence);
}

/// A contiguous run of a labeled solution used as a teacher-forcing target.
///
/// TSP: `nodes` are distinct instance nodes. CVRP: `nodes` are distinct
/// customers and `via_depot[i]` records whether the label reaches nodes[i]
/// through the depot; the flat depot-delimited form is recovered with
/// to_flat(). `remaining_capacity_at_start` is the load budget before
/// nodes[0] is served.
struct PartialSample {
  std::vector<int> nodes;
  std::vector<char> via_depot;
  int remaining_capacity_at_start = 0;

  int size() const { return static_cast<int>(nodes.size()); }

  std::vector<int> to_flat() const {
    std::vector<int> flat;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!via_depot.empty() && via_depot[i]) flat.push_back(Instance::depot);
      flat.push_back(nodes[i]);
    }
    return flat;
  }
};

/// Feasible set at step t (1-based) and depth k: the sample nodes not
/// among x_1..x_{t+k-1}, in ascending node order. Empty optional once the
/// lookahead runs past the end of the sample (t + k > n_p).
inline std::optional<std::vector<int>> feasible_set(const PartialSample& sample, int t, int k) {
  const int np = sample.size();
  if (t < 1 || k < 0) throw std::invalid_argument("feasible_set: need t >= 1 and k >= 0");
  if (t + k > np) return std::nullopt;
  std::vector<int> out(sample.nodes.begin() + (t + k - 1), sample.nodes.end());
  std::sort(out.begin(), out.end());
  return out;
}

struct DecodeState {
  int t = 1;                  // the step about to be decided
  std::vector<char> visited;  // indexed by instance node
  int first_node = -1;
  int prev_node = -1;
  int remaining_capacity = 0;

  int visited_count() const {
    int c = 0;
    for (char v : visited) c += v != 0;
    return c;
  }
};

inline DecodeState initial_state(const Instance& inst, std::optional<int> capacity = std::nullopt) {
  DecodeState s;
  s.visited.assign(inst.size(), 0);
  s.remaining_capacity = inst.is_cvrp() ? capacity.value_or(inst.capacity) : 0;
  return s;
}

class InfeasibleStep : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Applies one selection. Customers (and every TSP node) are marked visited
/// and advance t. For CVRP a depot selection refills the vehicle; it only
/// advances t when it is the very first selection, i.e. the depot is x_1.
inline DecodeState step_env(const Instance& inst, DecodeState s, int chosen) {
  const int n = static_cast<int>(inst.size());
  if (chosen < 0 || chosen >= n) throw InfeasibleStep("step_env: node out of range");
  const bool depot = inst.is_cvrp() && chosen == Instance::depot;
  if (depot) {
    s.remaining_capacity = inst.capacity;
    if (s.t == 1) {
      s.visited[chosen] = 1;
      s.first_node = chosen;
      ++s.t;
    }
    s.prev_node = chosen;
    return s;
  }
  if (s.visited[chosen]) throw InfeasibleStep("step_env: node " + std::to_string(chosen) + " already visited");
  if (inst.is_cvrp()) {
    if (inst.demands[chosen] > s.remaining_capacity)
      throw InfeasibleStep("step_env: demand of node " + std::to_string(chosen) +
                           " exceeds remaining capacity");
    s.remaining_capacity -= inst.demands[chosen];
  }
  s.visited[chosen] = 1;
  if (s.t == 1) s.first_node = chosen;
  s.prev_node = chosen;
  ++s.t;
  return s;
}

/// A CVRP customer visit expressed as (node, reached through the depot).
struct CustomerStep {
  int node;
  bool via_depot;
  friend bool operator==(const CustomerStep&, const CustomerStep&) = default;
};

inline std::vector<CustomerStep> to_customer_steps(const Solution& sol) {
  std::vector<CustomerStep> steps;
  bool after_depot = false;
  for (int v : sol.sequence) {
    if (v == Instance::depot) {
      after_depot = true;
    } else {
      steps.push_back({v, after_depot});
      after_depot = false;
    }
  }
  return steps;
}

inline Solution from_customer_steps(const std::vector<CustomerStep>& steps) {
  Solution sol;
  sol.sequence.push_back(Instance::depot);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].via_depot && i > 0) sol.sequence.push_back(Instance::depot);
    sol.sequence.push_back(steps[i].node);
  }
  return sol;
}

}  // namespace mnlp
