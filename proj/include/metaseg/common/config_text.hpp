#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace metaseg {

// Flat view of a TOML-style file: `[section]` headers and `key = value`
// lines, '#' comments. Keys are stored as "section.key". Values keep their
// source text; typed getters parse on access and remove the key, so whatever
// is left after a consumer ran is unknown.
class ConfigTable {
 public:
  static ConfigTable parse(std::string_view text, const std::string& source = "<config>");

  void set(const std::string& key, std::string raw_value);
  bool contains(const std::string& key) const { return values_.count(key) > 0; }
  bool empty() const { return values_.empty(); }
  std::vector<std::string> keys() const;

  std::optional<std::int64_t> take_int(const std::string& key);
  std::optional<std::uint64_t> take_u64(const std::string& key);
  std::optional<double> take_double(const std::string& key);
  std::optional<bool> take_bool(const std::string& key);
  std::optional<std::string> take_string(const std::string& key);
  std::optional<std::vector<std::int64_t>> take_int_list(const std::string& key);

  // Throws ValidationError naming the first leftover key.
  void reject_unknown() const;

 private:
  struct Entry {
    std::string raw;
    std::string where;
  };
  std::map<std::string, Entry> values_;
  std::optional<Entry> take(const std::string& key);
};

std::string quote(const std::string& text);
std::string format_double(double value);

}  // namespace metaseg
