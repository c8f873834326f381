#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace recot {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Parses `key = value` lines. Blank lines and lines starting with '#' are
// skipped. Duplicate keys and lines without '=' are errors (ConfigError).
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_value_file(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& entries);

// Typed, consuming view over parsed entries. Every getter marks its key as
// known; finish() throws ConfigError naming the first key nobody asked for.
class ConfigReader {
 public:
  explicit ConfigReader(KeyValues entries);

  bool has(const std::string& key) const;
  std::optional<std::string> get_string(const std::string& key);
  std::optional<double> get_double(const std::string& key);
  std::optional<std::int64_t> get_int(const std::string& key);
  std::optional<std::uint64_t> get_u64(const std::string& key);
  std::optional<bool> get_bool(const std::string& key);
  std::optional<std::vector<double>> get_double_list(const std::string& key);

  // Overwrite `target` only when the key is present.
  void read(const std::string& key, double& target);
  void read(const std::string& key, std::int64_t& target);
  void read(const std::string& key, std::uint64_t& target);
  void read(const std::string& key, int& target);
  void read(const std::string& key, bool& target);
  void read(const std::string& key, std::string& target);

  void finish() const;

 private:
  const std::string* lookup(const std::string& key);

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  std::set<std::string> known_;
};

}  // namespace recot
