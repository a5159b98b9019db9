#include "metaseg/common/config_text.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "metaseg/common/error.hpp"

namespace metaseg {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Cuts a trailing comment, leaving '#' inside double quotes alone.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

bool is_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

}  // namespace

ConfigTable ConfigTable::parse(std::string_view text, const std::string& source) {
  ConfigTable table;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    const std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ValidationError(where + ": unterminated section header");
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      if (section.empty()) throw ValidationError(where + ": empty section name");
      for (const char c : section) {
        if (!is_key_char(c) && c != '.') throw ValidationError(where + ": bad section name '" + section + "'");
      }
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ValidationError(where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty() || value.empty()) throw ValidationError(where + ": expected 'key = value'");
    for (const char c : key) {
      if (!is_key_char(c)) throw ValidationError(where + ": bad key '" + key + "'");
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (table.values_.count(full)) throw ValidationError(where + ": duplicate key '" + full + "'");
    table.values_[full] = Entry{value, where};
  }
  return table;
}

void ConfigTable::set(const std::string& key, std::string raw_value) {
  values_[key] = Entry{std::move(raw_value), "<override>"};
}

std::vector<std::string> ConfigTable::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

std::optional<ConfigTable::Entry> ConfigTable::take(const std::string& key) {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  Entry e = it->second;
  values_.erase(it);
  return e;
}

std::optional<std::int64_t> ConfigTable::take_int(const std::string& key) {
  auto e = take(key);
  if (!e) return std::nullopt;
  std::int64_t v = 0;
  const auto* end = e->raw.data() + e->raw.size();
  const auto [ptr, ec] = std::from_chars(e->raw.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ValidationError(e->where + ": '" + key + "' expects an integer, got " + e->raw);
  return v;
}

std::optional<std::uint64_t> ConfigTable::take_u64(const std::string& key) {
  auto e = take(key);
  if (!e) return std::nullopt;
  std::uint64_t v = 0;
  const auto* end = e->raw.data() + e->raw.size();
  const auto [ptr, ec] = std::from_chars(e->raw.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError(e->where + ": '" + key + "' expects an unsigned integer, got " + e->raw);
  }
  return v;
}

std::optional<double> ConfigTable::take_double(const std::string& key) {
  auto e = take(key);
  if (!e) return std::nullopt;
  double v = 0;
  const auto* end = e->raw.data() + e->raw.size();
  const auto [ptr, ec] = std::from_chars(e->raw.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ValidationError(e->where + ": '" + key + "' expects a number, got " + e->raw);
  return v;
}

std::optional<bool> ConfigTable::take_bool(const std::string& key) {
  auto e = take(key);
  if (!e) return std::nullopt;
  if (e->raw == "true") return true;
  if (e->raw == "false") return false;
  throw ValidationError(e->where + ": '" + key + "' expects true or false, got " + e->raw);
}

std::optional<std::string> ConfigTable::take_string(const std::string& key) {
  auto e = take(key);
  if (!e) return std::nullopt;
  const std::string& r = e->raw;
  if (r.size() < 2 || r.front() != '"' || r.back() != '"') {
    throw ValidationError(e->where + ": '" + key + "' expects a quoted string, got " + r);
  }
  std::string out;
  for (std::size_t i = 1; i + 1 < r.size(); ++i) {
    if (r[i] == '\\' && i + 2 < r.size()) {
      ++i;
      out.push_back(r[i] == 'n' ? '\n' : r[i] == 't' ? '\t' : r[i]);
    } else {
      out.push_back(r[i]);
    }
  }
  return out;
}

std::optional<std::vector<std::int64_t>> ConfigTable::take_int_list(const std::string& key) {
  auto e = take(key);
  if (!e) return std::nullopt;
  const std::string& r = e->raw;
  if (r.size() < 2 || r.front() != '[' || r.back() != ']') {
    throw ValidationError(e->where + ": '" + key + "' expects a list like [1, 2], got " + r);
  }
  std::vector<std::int64_t> out;
  std::istringstream items(r.substr(1, r.size() - 2));
  std::string item;
  while (std::getline(items, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    std::int64_t v = 0;
    const auto* end = item.data() + item.size();
    const auto [ptr, ec] = std::from_chars(item.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ValidationError(e->where + ": bad list entry '" + item + "' in " + key);
    out.push_back(v);
  }
  return out;
}

void ConfigTable::reject_unknown() const {
  if (values_.empty()) return;
  const auto& [key, entry] = *values_.begin();
  throw ValidationError(entry.where + ": unknown config key '" + key + "'");
}

std::string quote(const std::string& text) {
  std::string out = "\"";
  for (const char c : text) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  return out + "\"";
}

std::string format_double(double value) {
  // shortest text that parses back to the same double
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  std::string s(buf, ptr);
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

}  // namespace metaseg
