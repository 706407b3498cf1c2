#pragma once

// Run manifests: a key = value record written beside every artifact so the
// run can be repeated. Wall-clock fields are prefixed "time." and are the
// only entries allowed to differ between reruns.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "mnlp/config.hpp"
#include "mnlp/io.hpp"

#ifndef MNLP_VERSION
#define MNLP_VERSION "0.1.0"
#endif

namespace mnlp {

inline constexpr const char* kCodeVersion = MNLP_VERSION;

inline std::string crc_hex(std::uint32_t crc) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

inline std::string file_crc(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return crc_hex(crc32_of(bytes.data(), bytes.size()));
}

struct RunManifest {
  std::string command;  // verb
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  KeyValues config;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, crc
  std::vector<std::string> outputs;
  std::vector<std::pair<std::string, std::string>> timings;

  void add_input(const std::string& path) { inputs.emplace_back(path, file_crc(path)); }

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("command", command);
    std::string line;
    for (std::size_t i = 0; i < argv.size(); ++i) line += (i ? " " : "") + argv[i];
    kv.set("argv", line);
    kv.set("version", kCodeVersion);
    kv.set_num("seed", seed);
    for (const auto& [k, v] : config.items()) kv.set("config." + k, v);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      kv.set("input." + std::to_string(i) + ".path", inputs[i].first);
      kv.set("input." + std::to_string(i) + ".crc32", inputs[i].second);
    }
    for (std::size_t i = 0; i < outputs.size(); ++i) kv.set("output." + std::to_string(i), outputs[i]);
    for (const auto& [k, v] : timings) kv.set("time." + k, v);
    return kv;
  }

  /// Writes `<primary output>.manifest`.
  std::string write(const std::string& primary) const {
    const std::string path = primary + ".manifest";
    const auto text = to_kv().str();
    write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
    return path;
  }
};

}  // namespace mnlp
