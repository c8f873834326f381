#include "recot/config_file.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "recot/errors.hpp"

namespace recot {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("key '" + key + "': expected " + expected + ", got '" + value + "'");
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues entries;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + stripped + "'");
    }
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    const bool duplicate =
        std::any_of(entries.begin(), entries.end(), [&](const auto& kv) { return kv.first == key; });
    if (duplicate) throw ConfigError("key '" + key + "': given more than once");
    entries.emplace_back(std::move(key), std::move(value));
  }
  return entries;
}

KeyValues read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_key_values(buffer.str());
}

std::string format_key_values(const KeyValues& entries) {
  std::string out;
  for (const auto& [key, value] : entries) out += key + " = " + value + "\n";
  return out;
}

ConfigReader::ConfigReader(KeyValues entries) {
  for (auto& [key, value] : entries) {
    order_.push_back(key);
    values_[key] = std::move(value);
  }
}

bool ConfigReader::has(const std::string& key) const { return values_.count(key) > 0; }

const std::string* ConfigReader::lookup(const std::string& key) {
  known_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::optional<std::string> ConfigReader::get_string(const std::string& key) {
  const std::string* v = lookup(key);
  if (!v) return std::nullopt;
  return *v;
}

std::optional<double> ConfigReader::get_double(const std::string& key) {
  const std::string* v = lookup(key);
  if (!v) return std::nullopt;
  try {
    std::size_t used = 0;
    const double parsed = std::stod(*v, &used);
    if (used != v->size()) bad_value(key, *v, "a number");
    return parsed;
  } catch (const std::logic_error&) {
    bad_value(key, *v, "a number");
  }
}

std::optional<std::int64_t> ConfigReader::get_int(const std::string& key) {
  const std::string* v = lookup(key);
  if (!v) return std::nullopt;
  std::int64_t parsed = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), parsed);
  if (ec != std::errc() || ptr != v->data() + v->size()) bad_value(key, *v, "an integer");
  return parsed;
}

std::optional<std::uint64_t> ConfigReader::get_u64(const std::string& key) {
  const std::string* v = lookup(key);
  if (!v) return std::nullopt;
  std::uint64_t parsed = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), parsed);
  if (ec != std::errc() || ptr != v->data() + v->size()) bad_value(key, *v, "a non-negative integer");
  return parsed;
}

std::optional<bool> ConfigReader::get_bool(const std::string& key) {
  const std::string* v = lookup(key);
  if (!v) return std::nullopt;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  bad_value(key, *v, "true or false");
}

std::optional<std::vector<double>> ConfigReader::get_double_list(const std::string& key) {
  const std::string* v = lookup(key);
  if (!v) return std::nullopt;
  std::vector<double> out;
  std::istringstream in(*v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) bad_value(key, *v, "a comma-separated list of numbers");
    } catch (const std::logic_error&) {
      bad_value(key, *v, "a comma-separated list of numbers");
    }
  }
  if (out.empty()) bad_value(key, *v, "a non-empty list");
  return out;
}

void ConfigReader::read(const std::string& key, double& target) {
  if (auto v = get_double(key)) target = *v;
}
void ConfigReader::read(const std::string& key, std::int64_t& target) {
  if (auto v = get_int(key)) target = *v;
}
void ConfigReader::read(const std::string& key, std::uint64_t& target) {
  if (auto v = get_u64(key)) target = *v;
}
void ConfigReader::read(const std::string& key, int& target) {
  if (auto v = get_int(key)) target = static_cast<int>(*v);
}
void ConfigReader::read(const std::string& key, bool& target) {
  if (auto v = get_bool(key)) target = *v;
}
void ConfigReader::read(const std::string& key, std::string& target) {
  if (auto v = get_string(key)) target = *v;
}

void ConfigReader::finish() const {
  for (const std::string& key : order_) {
    if (!known_.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
}

}  // namespace recot
