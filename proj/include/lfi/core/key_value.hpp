#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lfi/core/error.hpp"

namespace lfi {

/// Ordered `key = value` text with `#` comments. Keys are unique.
class KeyValue {
 public:
  static KeyValue parse(std::string_view text, const std::string& origin = "config") {
    KeyValue kv;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t end = std::min(text.find('\n', pos), text.size());
      std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      const std::string key(trim(line.substr(0, eq)));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
      if (kv.values_.contains(key)) throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
      kv.set(key, std::string(trim(line.substr(eq + 1))));
    }
    return kv;
  }

  void set(const std::string& key, std::string value) {
    if (!values_.contains(key)) order_.push_back(key);
    values_[key] = std::move(value);
  }

  [[nodiscard]] bool has(const std::string& key) const { return values_.contains(key); }
  [[nodiscard]] const std::vector<std::string>& keys() const noexcept { return order_; }

  [[nodiscard]] const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required key '" + key + "'");
    return it->second;
  }

  [[nodiscard]] std::string text() const {
    std::ostringstream os;
    for (const auto& k : order_) os << k << " = " << values_.at(k) << '\n';
    return os.str();
  }

  [[nodiscard]] double get_double(const std::string& key) const { return to_double(key, get(key)); }
  [[nodiscard]] std::uint64_t get_u64(const std::string& key) const { return to_u64(key, get(key)); }
  [[nodiscard]] std::size_t get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

  [[nodiscard]] bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
  }

  /// Comma-separated list; an empty value is an empty list.
  [[nodiscard]] std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    const std::string& v = get(key);
    if (trim(v).empty()) return out;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = v.find(',', pos);
      out.emplace_back(trim(std::string_view(v).substr(pos, comma - pos)));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    return out;
  }

  [[nodiscard]] std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : get_list(key)) out.push_back(to_double(key, s));
    return out;
  }

  [[nodiscard]] std::vector<std::size_t> get_sizes(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& s : get_list(key)) out.push_back(static_cast<std::size_t>(to_u64(key, s)));
    return out;
  }

  static double to_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
    }
    return v;
  }

  static std::uint64_t to_u64(const std::string& key, const std::string& s) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + s + "'");
    }
    return v;
  }

  /// Shortest text that parses back to exactly `v`.
  static std::string format(double v) {
    char buf[32];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
  }

  template <typename T>
  static std::string join(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i) out += ", ";
      if constexpr (std::is_floating_point_v<T>) out += format(xs[i]);
      else out += std::to_string(xs[i]);
    }
    return out;
  }

 private:
  static std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace lfi
