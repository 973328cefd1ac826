// Copyright 2026 The rvqmotion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Flat "key = value" run configuration.
//
//   # comment
//   include = base.cfg      (path relative to the including file)
//   ar.epochs = 40
//
// Later assignments override earlier ones, so a file can include a base and
// then change a few keys. Typed getters record every key they are asked
// about; keys that were set but never asked for are rejected as unknown.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvqmotion {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RunConfig {
 public:
  /// Reads `path` and everything it includes.
  void load_file(const std::string& path) {
    std::vector<std::string> stack;
    load(std::filesystem::absolute(path), stack);
  }

  /// Parses configuration text; includes resolve against `base_dir`.
  void load_text(const std::string& text, const std::string& origin, const std::filesystem::path& base_dir = ".") {
    std::vector<std::string> stack{origin};
    parse(text, origin, base_dir, stack);
  }

  /// Applies a "key=value" override, e.g. from the command line.
  void set(const std::string& assignment, const std::string& origin = "command line") {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ": expected key=value, got '" + assignment + "'");
    assign(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), origin);
  }

  void set(const std::string& key, const std::string& value, const std::string& origin) { assign(key, value, origin); }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) {
    const std::string v = has(key) ? values_.at(key).value : fallback;
    resolved_[key] = v;
    return v;
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    const std::string v = str(key, std::to_string(fallback));
    std::size_t out = 0;
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size()) fail(key, v, "a non-negative integer");
    return out;
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    const std::string v = str(key, std::to_string(fallback));
    std::uint64_t out = 0;
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size()) fail(key, v, "an unsigned 64-bit integer");
    return out;
  }

  double real(const std::string& key, double fallback) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, fallback);  // shortest round-trip form
    const std::string v = str(key, std::string(buf, res.ptr));
    try {
      std::size_t used = 0;
      const double out = std::stod(v, &used);
      if (used != v.size()) fail(key, v, "a real number");
      return out;
    } catch (const std::logic_error&) {
      fail(key, v, "a real number");
    }
  }

  bool flag(const std::string& key, bool fallback) {
    const std::string v = str(key, fallback ? "true" : "false");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(key, v, "true or false");
  }

  /// Throws ConfigError naming every key that was set but never read.
  void reject_unknown() const {
    std::string unknown;
    for (const auto& [key, entry] : values_) {
      if (!resolved_.count(key)) unknown += "\n  " + key + " (" + entry.origin + ")";
    }
    if (!unknown.empty()) throw ConfigError("unknown configuration keys:" + unknown);
  }

  /// Every key read so far with its effective value, sorted.
  std::string snapshot() const {
    std::ostringstream os;
    for (const auto& [key, value] : resolved_) os << key << " = " << value << '\n';
    return os.str();
  }

  void write_snapshot(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << snapshot();
  }

 private:
  struct Entry {
    std::string value;
    std::string origin;
  };

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
  }

  [[noreturn]] void fail(const std::string& key, const std::string& value, const std::string& expected) const {
    const auto it = values_.find(key);
    const std::string where = it == values_.end() ? "default" : it->second.origin;
    throw ConfigError(where + ": " + key + " = '" + value + "' is not " + expected);
  }

  void assign(const std::string& key, const std::string& value, const std::string& origin) {
    if (key.empty()) throw ConfigError(origin + ": empty key");
    values_[key] = Entry{value, origin};
  }

  void load(const std::filesystem::path& path, std::vector<std::string>& stack) {
    const std::string canonical = std::filesystem::weakly_canonical(path).string();
    for (const auto& s : stack) {
      if (s == canonical) throw ConfigError("include cycle through " + canonical);
    }
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    stack.push_back(canonical);
    parse(text.str(), path.string(), path.parent_path(), stack);
    stack.pop_back();
  }

  void parse(const std::string& text, const std::string& origin, const std::filesystem::path& base_dir,
             std::vector<std::string>& stack) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const std::string where = origin + ":" + std::to_string(line_no);
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
      const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      if (key == "include") {
        if (value.empty()) throw ConfigError(where + ": include needs a path");
        std::filesystem::path p(value);
        load(p.is_absolute() ? p : base_dir / p, stack);
      } else {
        assign(key, value, where);
      }
    }
  }

  std::map<std::string, Entry> values_;
  std::map<std::string, std::string> resolved_;
};

}  // namespace rvqmotion
