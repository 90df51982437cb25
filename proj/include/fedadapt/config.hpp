#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedadapt {

// Flat `key = value` text with dotted sections (`fed.rounds = 50`).
// `#` starts a comment; lists are comma separated.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text, std::string_view origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool contains(std::string_view key) const;
  void set(std::string key, std::string value);

  std::string get_string(std::string_view key, std::string_view fallback) const;
  std::optional<std::string> find(std::string_view key) const;
  std::string require_string(std::string_view key) const;
  long long get_int(std::string_view key, long long fallback) const;
  double get_double(std::string_view key, double fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;
  std::vector<int> get_int_list(std::string_view key, std::vector<int> fallback) const;
  std::vector<std::string> get_string_list(std::string_view key,
                                           std::vector<std::string> fallback) const;

  const std::map<std::string, std::string, std::less<>>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string, std::less<>> entries_;
};

}  // namespace fedadapt
