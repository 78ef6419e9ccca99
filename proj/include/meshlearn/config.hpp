#pragma once

#include <charconv>
#include <map>
#include <string>
#include <string_view>

#include "meshlearn/error.hpp"

namespace meshlearn {

/// Flat `key = value` text. Blank lines and `#` comments are skipped; a
/// repeated key is an error.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text) {
    KeyValues kv;
    std::size_t line_no = 0;
    while (!text.empty()) {
      const std::size_t nl = text.find('\n');
      std::string_view line = text.substr(0, nl);
      text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
      ++line_no;
      if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos) throw InvalidArgument("line " + std::to_string(line_no) + ": expected key = value");
      const std::string key(trim(line.substr(0, eq)));
      const std::string value(trim(line.substr(eq + 1)));
      if (key.empty()) throw InvalidArgument("line " + std::to_string(line_no) + ": empty key");
      if (!kv.values_.emplace(key, value).second) throw InvalidArgument("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    return kv;
  }

  bool has(const std::string& key) const { return values_.contains(key); }
  const std::map<std::string, std::string>& entries() const noexcept { return values_; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get_string(const std::string& key, std::string fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_number<double>(key, it->second);
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_number<long long>(key, it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw InvalidArgument("key '" + key + "': expected true or false, got '" + it->second + "'");
  }

  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  template <class T>
  static T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size())
      throw InvalidArgument("key '" + key + "': cannot parse '" + text + "' as a number");
    return v;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace meshlearn
