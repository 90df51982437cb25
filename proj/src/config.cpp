#include "fedadapt/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "fedadapt/errors.hpp"

namespace fedadapt {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, std::string_view origin) {
  KeyValueConfig config;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) +
                        ": expected key = value");
    }
    std::string key = trim(std::string_view(stripped).substr(0, eq));
    std::string value = trim(std::string_view(stripped).substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": empty key");
    }
    if (config.entries_.contains(key)) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) +
                        ": duplicate key '" + key + "'");
    }
    config.entries_.emplace(std::move(key), std::move(value));
  }
  return config;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

bool KeyValueConfig::contains(std::string_view key) const { return entries_.contains(key); }

void KeyValueConfig::set(std::string key, std::string value) {
  entries_[std::move(key)] = std::move(value);
}

std::optional<std::string> KeyValueConfig::find(std::string_view key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_string(std::string_view key, std::string_view fallback) const {
  return find(key).value_or(std::string(fallback));
}

std::string KeyValueConfig::require_string(std::string_view key) const {
  auto v = find(key);
  if (!v) throw ConfigError("missing required key '" + std::string(key) + "'");
  return *v;
}

long long KeyValueConfig::get_int(std::string_view key, long long fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw ConfigError("key '" + std::string(key) + "': not an integer: " + *v);
  }
  return out;
}

double KeyValueConfig::get_double(std::string_view key, double fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw ConfigError("key '" + std::string(key) + "': not a number: " + *v);
  }
  return out;
}

bool KeyValueConfig::get_bool(std::string_view key, bool fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError("key '" + std::string(key) + "': not a boolean: " + *v);
}

std::vector<int> KeyValueConfig::get_int_list(std::string_view key,
                                              std::vector<int> fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  std::vector<int> out;
  for (const auto& item : split_list(*v)) {
    int x = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError("key '" + std::string(key) + "': bad list element: " + item);
    }
    out.push_back(x);
  }
  return out;
}

std::vector<std::string> KeyValueConfig::get_string_list(std::string_view key,
                                                         std::vector<std::string> fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  return split_list(*v);
}

}  // namespace fedadapt
