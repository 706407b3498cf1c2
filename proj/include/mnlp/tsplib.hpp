#pragma once

// TSPLIB / CVRPLIB text readers (EUC_2D only) and the TOUR_SECTION reader for
// published optimal tours.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mnlp/vrp.hpp"

namespace mnlp {

class TsplibParseError : public std::runtime_error {
 public:
  TsplibParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class UnsupportedFormat : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A benchmark instance: model-ready coordinates in the unit square plus the
/// raw file coordinates for costing under the benchmark's own convention.
struct BenchmarkInstance {
  std::string name;
  Instance instance;
  std::vector<Point> raw;
  std::optional<double> declared_optimum;  // from a "(12345)" COMMENT, if any
};

/// Shared-scale min-max normalization: translate to the origin and divide by
/// the larger axis range, so the unit square holds the instance without
/// distorting its geometry.
inline std::vector<Point> normalize_uniform_scale(const std::vector<Point>& raw) {
  if (raw.empty()) return {};
  double lx = std::numeric_limits<double>::infinity(), hx = -lx, ly = lx, hy = -lx;
  for (const auto& p : raw) {
    lx = std::min(lx, p.x), hx = std::max(hx, p.x);
    ly = std::min(ly, p.y), hy = std::max(hy, p.y);
  }
  const double scale = std::max(hx - lx, hy - ly);
  std::vector<Point> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    out[i] = scale > 0 ? Point{(raw[i].x - lx) / scale, (raw[i].y - ly) / scale} : Point{};
  return out;
}

/// TSPLIB EUC_2D distance: Euclidean distance rounded to the nearest integer.
inline long nint_distance(const Point& a, const Point& b) {
  return static_cast<long>(distance(a, b) + 0.5);
}

inline long rounded_tour_cost(const std::vector<Point>& raw, const std::vector<int>& seq) {
  long c = 0;
  for (std::size_t i = 0; i < seq.size(); ++i)
    c += nint_distance(raw[seq[i]], raw[seq[(i + 1) % seq.size()]]);
  return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

struct TsplibDocument {
  std::unordered_map<std::string, std::string> spec;
  std::unordered_map<std::string, std::vector<std::pair<int, std::string>>> sections;
};

inline bool is_section(const std::string& key) {
  return key.size() > 8 && key.compare(key.size() - 8, 8, "_SECTION") == 0;
}

inline TsplibDocument read_document(const std::string& text) {
  TsplibDocument doc;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (upper(t) == "EOF") break;
    const auto colon = t.find(':');
    const std::string head = upper(trim(colon == std::string::npos ? t : t.substr(0, colon)));
    if (is_section(head)) {
      section = head;
      doc.sections[section];
      continue;
    }
    if (colon != std::string::npos && !std::isdigit(static_cast<unsigned char>(t[0])) &&
        t[0] != '-') {
      doc.spec[head] = trim(t.substr(colon + 1));
      section.clear();
      continue;
    }
    if (section.empty()) throw TsplibParseError(lineno, "unexpected data outside a section: '" + t + "'");
    doc.sections[section].emplace_back(lineno, t);
  }
  return doc;
}

inline int spec_int(const TsplibDocument& doc, const std::string& key) {
  auto it = doc.spec.find(key);
  if (it == doc.spec.end()) throw TsplibParseError(0, "missing " + key);
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw TsplibParseError(0, key + " is not an integer: '" + it->second + "'");
  }
}

inline std::vector<Point> read_coords(const TsplibDocument& doc, int n) {
  auto it = doc.sections.find("NODE_COORD_SECTION");
  if (it == doc.sections.end()) throw TsplibParseError(0, "missing NODE_COORD_SECTION");
  if (static_cast<int>(it->second.size()) != n)
    throw TsplibParseError(it->second.empty() ? 0 : it->second.back().first,
                           "NODE_COORD_SECTION has " + std::to_string(it->second.size()) +
                               " entries, DIMENSION is " + std::to_string(n));
  std::vector<Point> pts(n);
  std::vector<char> seen(n, 0);
  for (const auto& [lineno, t] : it->second) {
    std::istringstream ls(t);
    int id;
    double x, y;
    if (!(ls >> id >> x >> y)) throw TsplibParseError(lineno, "malformed coordinate line '" + t + "'");
    if (id < 1 || id > n || seen[id - 1]) throw TsplibParseError(lineno, "bad node id " + std::to_string(id));
    seen[id - 1] = 1;
    pts[id - 1] = {x, y};
  }
  return pts;
}

inline std::optional<double> declared_optimum(const TsplibDocument& doc) {
  auto it = doc.spec.find("COMMENT");
  if (it == doc.spec.end()) return std::nullopt;
  const auto& c = it->second;
  const auto open = c.rfind('(');
  const auto close = c.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close <= open + 1) return std::nullopt;
  try {
    std::size_t used = 0;
    const std::string inner = c.substr(open + 1, close - open - 1);
    const double v = std::stod(inner, &used);
    if (used != inner.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline void require_euc2d(const TsplibDocument& doc) {
  auto it = doc.spec.find("EDGE_WEIGHT_TYPE");
  if (it == doc.spec.end()) throw UnsupportedFormat("missing EDGE_WEIGHT_TYPE");
  if (upper(it->second) != "EUC_2D")
    throw UnsupportedFormat("unsupported EDGE_WEIGHT_TYPE " + it->second + " (only EUC_2D)");
}

inline std::string name_of(const TsplibDocument& doc) {
  auto it = doc.spec.find("NAME");
  return it == doc.spec.end() ? std::string{} : it->second;
}

}  // namespace detail

inline BenchmarkInstance parse_tsplib(const std::string& text) {
  const auto doc = detail::read_document(text);
  detail::require_euc2d(doc);
  const int n = detail::spec_int(doc, "DIMENSION");
  if (n < 2) throw TsplibParseError(0, "DIMENSION must be at least 2");
  BenchmarkInstance b;
  b.name = detail::name_of(doc);
  b.raw = detail::read_coords(doc, n);
  b.instance.kind = ProblemKind::tsp;
  b.instance.coords = normalize_uniform_scale(b.raw);
  b.declared_optimum = detail::declared_optimum(doc);
  return b;
}

/// Reads a CVRPLIB instance. The depot is moved to index 0 if the file lists
/// it elsewhere; customer order is otherwise preserved.
inline BenchmarkInstance parse_cvrplib(const std::string& text) {
  const auto doc = detail::read_document(text);
  detail::require_euc2d(doc);
  const int n = detail::spec_int(doc, "DIMENSION");
  if (n < 2) throw TsplibParseError(0, "DIMENSION must be at least 2");
  const int capacity = detail::spec_int(doc, "CAPACITY");
  auto raw = detail::read_coords(doc, n);

  auto dit = doc.sections.find("DEMAND_SECTION");
  if (dit == doc.sections.end()) throw TsplibParseError(0, "missing DEMAND_SECTION");
  std::vector<int> demands(n, -1);
  for (const auto& [lineno, t] : dit->second) {
    std::istringstream ls(t);
    int id, d;
    if (!(ls >> id >> d)) throw TsplibParseError(lineno, "malformed demand line '" + t + "'");
    if (id < 1 || id > n) throw TsplibParseError(lineno, "bad node id " + std::to_string(id));
    demands[id - 1] = d;
  }
  for (int i = 0; i < n; ++i)
    if (demands[i] < 0) throw TsplibParseError(0, "no demand for node " + std::to_string(i + 1));

  int depot = 0;
  auto pit = doc.sections.find("DEPOT_SECTION");
  if (pit == doc.sections.end() || pit->second.empty()) throw TsplibParseError(0, "missing DEPOT_SECTION");
  {
    const auto& [lineno, t] = pit->second.front();
    int id = 0;
    std::istringstream ls(t);
    if (!(ls >> id) || id < 1 || id > n) throw TsplibParseError(lineno, "bad depot id '" + t + "'");
    depot = id - 1;
  }
  if (depot != 0) {
    std::swap(raw[0], raw[depot]);
    std::swap(demands[0], demands[depot]);
  }

  BenchmarkInstance b;
  b.name = detail::name_of(doc);
  b.raw = raw;
  b.instance.kind = ProblemKind::cvrp;
  b.instance.coords = normalize_uniform_scale(raw);
  b.instance.demands = demands;
  b.instance.demands[0] = 0;
  b.instance.capacity = capacity;
  b.declared_optimum = detail::declared_optimum(doc);
  return b;
}

/// The "(12345)" optimum in a file's COMMENT line, for instance or tour files.
inline std::optional<double> declared_optimum_of(const std::string& text) {
  return detail::declared_optimum(detail::read_document(text));
}

/// Reads a TOUR_SECTION file into a 0-based node sequence.
inline Solution parse_tour(const std::string& text) {
  const auto doc = detail::read_document(text);
  auto it = doc.sections.find("TOUR_SECTION");
  if (it == doc.sections.end()) throw TsplibParseError(0, "missing TOUR_SECTION");
  Solution sol;
  for (const auto& [lineno, t] : it->second) {
    std::istringstream ls(t);
    long id;
    while (ls >> id) {
      if (id == -1) return sol;
      if (id < 1) throw TsplibParseError(lineno, "bad tour entry " + std::to_string(id));
      sol.sequence.push_back(static_cast<int>(id - 1));
    }
    if (!ls.eof()) throw TsplibParseError(lineno, "malformed tour line '" + t + "'");
  }
  return sol;
}

}  // namespace mnlp
