#pragma once

// Binary dataset container ("MNLPDS1"): a fixed header, packed coordinates
// (plus demands for CVRP), optional oracle labels and a trailing CRC-32.

#include <cstdint>
#include <string>
#include <vector>

#include "mnlp/instance_gen.hpp"
#include "mnlp/io.hpp"
#include "mnlp/oracle.hpp"
#include "mnlp/vrp.hpp"

namespace mnlp {

inline constexpr std::string_view kDatasetMagic = "MNLPDS1";
inline constexpr std::uint32_t kDatasetVersion = 1;

struct Dataset {
  ProblemKind kind = ProblemKind::tsp;
  int n = 0;
  Distribution distribution = Distribution::uniform;
  std::uint64_t seed = 0;
  std::vector<Instance> instances;
  std::vector<OracleLabel> labels;  // empty, or one per instance

  bool labeled() const { return !labels.empty(); }
  std::size_t size() const { return instances.size(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Throws if instances disagree with the header or a label fails validation.
inline void check_dataset(const Dataset& ds) {
  for (std::size_t i = 0; i < ds.instances.size(); ++i) {
    const auto& inst = ds.instances[i];
    if (inst.kind != ds.kind || static_cast<int>(inst.size()) != ds.n)
      throw FormatError("instance " + std::to_string(i) + " does not match dataset header");
  }
  if (!ds.labeled()) return;
  if (ds.labels.size() != ds.instances.size())
    throw FormatError("label count " + std::to_string(ds.labels.size()) + " != instance count " +
                      std::to_string(ds.instances.size()));
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    auto rep = validate(ds.instances[i], ds.labels[i].solution);
    if (!rep.ok())
      throw FormatError("label " + std::to_string(i) + ": " + rep.violations.front().describe());
  }
}

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  check_dataset(ds);
  ByteWriter w;
  w.text(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(ds.kind == ProblemKind::tsp ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(ds.n));
  w.u64(ds.instances.size());
  w.u32(static_cast<std::uint32_t>(ds.distribution));
  w.u64(ds.seed);
  w.u32(ds.labeled() ? 1 : 0);
  for (const auto& inst : ds.instances) {
    for (const auto& p : inst.coords) {
      w.f64(p.x);
      w.f64(p.y);
    }
    if (inst.is_cvrp()) {
      w.u32(static_cast<std::uint32_t>(inst.capacity));
      for (int d : inst.demands) w.u32(static_cast<std::uint32_t>(d));
    }
  }
  for (const auto& lab : ds.labels) {
    w.u32(static_cast<std::uint32_t>(lab.solution.size()));
    for (int v : lab.solution.sequence) w.u32(static_cast<std::uint32_t>(v));
    w.f64(lab.cost);
    w.u32(static_cast<std::uint32_t>(lab.provenance));
  }
  w.seal();
  return w.data();
}

inline Dataset decode_dataset(const std::vector<std::uint8_t>& file) {
  if (file.size() < kDatasetMagic.size() ||
      std::string_view(reinterpret_cast<const char*>(file.data()), kDatasetMagic.size()) != kDatasetMagic)
    throw FormatError("not a dataset file (bad magic)");
  const std::size_t body = verify_sealed(file);
  ByteReader r(file.data(), body);
  r.text(kDatasetMagic.size());
  const auto version = r.u32();
  if (version != kDatasetVersion)
    throw VersionMismatch("dataset version " + std::to_string(version) + ", expected " +
                          std::to_string(kDatasetVersion));
  Dataset ds;
  const auto kind = r.u32();
  if (kind > 1) throw FormatError("bad problem kind " + std::to_string(kind));
  ds.kind = kind == 0 ? ProblemKind::tsp : ProblemKind::cvrp;
  ds.n = static_cast<int>(r.u32());
  const auto count = r.u64();
  const auto dist = r.u32();
  if (dist > 2) throw FormatError("bad distribution " + std::to_string(dist));
  ds.distribution = static_cast<Distribution>(dist);
  ds.seed = r.u64();
  const bool labeled = r.u32() != 0;
  // Bound the count by what the file can actually hold before allocating.
  if (count > r.remaining() / (16 * static_cast<std::uint64_t>(std::max(ds.n, 1))))
    throw TruncatedFile("truncated file: header promises " + std::to_string(count) + " instances");
  ds.instances.resize(count);
  for (auto& inst : ds.instances) {
    inst.kind = ds.kind;
    inst.coords.resize(ds.n);
    for (auto& p : inst.coords) {
      p.x = r.f64();
      p.y = r.f64();
    }
    if (inst.is_cvrp()) {
      inst.capacity = static_cast<int>(r.u32());
      inst.demands.resize(ds.n);
      for (auto& d : inst.demands) d = static_cast<int>(r.u32());
    }
  }
  if (labeled) {
    ds.labels.resize(count);
    for (auto& lab : ds.labels) {
      const auto len = r.u32();
      if (len > r.remaining() / 4) throw TruncatedFile("truncated file: label length " + std::to_string(len));
      lab.solution.sequence.resize(len);
      for (auto& v : lab.solution.sequence) v = static_cast<int>(r.u32());
      lab.cost = r.f64();
      const auto prov = r.u32();
      if (prov > 2) throw FormatError("bad label provenance " + std::to_string(prov));
      lab.provenance = static_cast<Provenance>(prov);
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after dataset payload");
  check_dataset(ds);
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  write_file_bytes(path, encode_dataset(ds));
}

inline Dataset load_dataset(const std::string& path) { return decode_dataset(read_file_bytes(path)); }

/// Labels every instance of ds in place.
inline void label_dataset(Dataset& ds, OracleKind oracle) {
  ds.labels.clear();
  ds.labels.reserve(ds.instances.size());
  for (const auto& inst : ds.instances) ds.labels.push_back(label_instance(inst, oracle));
}

inline Dataset make_dataset(const GenSpec& spec, std::size_t count) {
  Dataset ds;
  ds.kind = spec.kind;
  ds.n = spec.n;
  ds.distribution = spec.distribution;
  ds.seed = spec.seed;
  ds.instances = generate_many(spec, count);
  return ds;
}

}  // namespace mnlp
