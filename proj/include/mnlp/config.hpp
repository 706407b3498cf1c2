#pragma once

// Flat "key = value" text used by config files, checkpoint headers and run
// manifests. Lines starting with '#' are comments. Keys keep insertion order
// so written files diff cleanly.

#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mnlp {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class KeyValues {
 public:
  static KeyValues parse(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value, got '" + t + "'");
      const auto key = trim(t.substr(0, eq));
      if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
      kv.set(key, trim(t.substr(eq + 1)));
    }
    return kv;
  }

  void set(const std::string& key, std::string value) {
    auto it = index_.find(key);
    if (it == index_.end()) {
      index_[key] = items_.size();
      items_.emplace_back(key, std::move(value));
    } else {
      items_[it->second].second = std::move(value);
    }
  }
  template <class T>
  void set_num(const std::string& key, T v) {
    if constexpr (std::is_floating_point_v<T>) {
      // Shortest round-trip representation.
      char buf[64];
      auto r = std::to_chars(buf, buf + sizeof buf, v);
      set(key, std::string(buf, r.ptr));
    } else {
      set(key, std::to_string(v));
    }
  }

  bool contains(const std::string& key) const { return index_.contains(key); }

  const std::string& get(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw ConfigError("missing config key '" + key + "'");
    return items_[it->second].second;
  }

  template <class T>
  T num(const std::string& key) const {
    const auto& s = get(key);
    T v{};
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
      throw ConfigError("config key '" + key + "': not a number: '" + s + "'");
    return v;
  }

  bool flag(const std::string& key) const {
    const auto& s = get(key);
    if (s == "1" || s == "true" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "no") return false;
    throw ConfigError("config key '" + key + "': not a boolean: '" + s + "'");
  }

  template <class T>
  void read(const std::string& key, T& into) const {
    if (!contains(key)) return;
    if constexpr (std::is_same_v<T, bool>)
      into = flag(key);
    else if constexpr (std::is_same_v<T, std::string>)
      into = get(key);
    else
      into = num<T>(key);
  }

  /// Keys not listed in `known`, for typo detection.
  std::vector<std::string> unknown(const std::vector<std::string>& known) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : items_) {
      bool found = false;
      for (const auto& kk : known) found |= kk == k;
      if (!found) out.push_back(k);
    }
    return out;
  }

  void merge(const KeyValues& other) {
    for (const auto& [k, v] : other.items_) set(k, v);
  }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : items_) out += k + " = " + v + "\n";
    return out;
  }

  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::vector<std::pair<std::string, std::string>> items_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace mnlp
