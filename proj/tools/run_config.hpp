#pragma once

#include "vbamp/csv.hpp"
#include "vbamp/types.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace vbamp::cli {

/// Flat key=value settings. Every accepted key has a default; anything else
/// is rejected.
class RunConfig {
 public:
  explicit RunConfig(std::map<std::string, std::string> defaults) : values_(std::move(defaults)) {}

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ConfigError("unknown key: " + key);
    values_[key] = value;
  }

  /// `key=value` assignment, as on the command line.
  void assign(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got: " + kv);
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  /// Config file: one key=value per line, '#' starts a comment.
  void load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::string line;
    int no = 0;
    while (std::getline(f, line)) {
      ++no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      try {
        assign(line);
      } catch (const ConfigError& e) {
        throw ConfigError(path + ":" + std::to_string(no) + ": " + e.what());
      }
    }
  }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown key: " + key);
    return it->second;
  }

  double num(const std::string& key) const {
    const std::string& s = str(key);
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key + ": not a number: " + s);
    }
  }

  long integer(const std::string& key) const {
    const double v = num(key);
    if (v != std::floor(v)) throw ConfigError(key + ": not an integer: " + str(key));
    return long(v);
  }

  std::uint64_t seed(const std::string& key) const {
    const long v = integer(key);
    if (v < 0) throw ConfigError(key + ": seeds are non-negative");
    return std::uint64_t(v);
  }

  bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw ConfigError(key + ": not a boolean: " + s);
  }

  /// Comma or whitespace separated numbers; empty string gives an empty list.
  std::vector<double> list(const std::string& key) const {
    std::string s = str(key);
    for (char& c : s)
      if (c == ',' || c == ';') c = ' ';
    std::stringstream ss(s);
    std::vector<double> out;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t pos = 0;
        out.push_back(std::stod(tok, &pos));
        if (pos != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ConfigError(key + ": not a number list: " + str(key));
      }
    }
    return out;
  }

  std::vector<std::string> words(const std::string& key) const {
    std::string s = str(key);
    for (char& c : s)
      if (c == ',') c = ' ';
    std::stringstream ss(s);
    std::vector<std::string> out;
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
  }

  Vector vector(const std::string& key) const {
    const auto v = list(key);
    return Eigen::Map<const Vector>(v.data(), Index(v.size()));
  }

  /// Square matrix, row-major; rows separated by ';' (or a flat list of a
  /// perfect-square length).
  Matrix matrix(const std::string& key) const {
    const auto v = list(key);
    const Index n = Index(std::llround(std::sqrt(double(v.size()))));
    if (v.empty() || n * n != Index(v.size())) throw ConfigError(key + ": not a square matrix: " + str(key));
    Matrix m(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) m(i, j) = v[std::size_t(i * n + j)];
    return m;
  }

  /// FNV-1a over the resolved settings in key order.
  std::string hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [k, v] : values_)
      for (char c : k + "=" + v + "\n") {
        h ^= std::uint8_t(c);
        h *= 1099511628211ULL;
      }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

/// Writes through a temporary file renamed into place.
template <class Fn>
void write_atomic(const std::string& path, Fn&& body) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    body(f);
    if (!f) throw IoError("write failed: " + path);
  }
  std::filesystem::rename(tmp, target);
}

/// CSV with a leading comment row carrying the config hash.
template <class Fn>
void write_csv(const std::string& path, const RunConfig& cfg, Fn&& body) {
  write_atomic(path, [&](std::ostream& os) {
    os << "# config_hash=" << cfg.hash() << '\n';
    body(os);
  });
}

}  // namespace vbamp::cli
