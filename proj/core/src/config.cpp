#include "gist/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "gist/binary_io.hpp"
#include "gist/error.hpp"

namespace gist {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_commas(const std::string& value) {
  std::vector<std::string> parts;
  if (trim(value).empty()) return parts;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

}  // namespace

KeyValues KeyValues::parse(std::string_view text, std::string source) {
  KeyValues kv;
  kv.source_ = std::move(source);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? text.size() - pos : end - pos);
    ++line_no;
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("", line_no,
                        kv.source_ + ":" + std::to_string(line_no) + ": expected `key = value`");
    auto key = trim(std::string_view(stripped).substr(0, eq));
    auto value = trim(std::string_view(stripped).substr(eq + 1));
    if (key.empty())
      throw ConfigError("", line_no, kv.source_ + ":" + std::to_string(line_no) + ": empty key");
    if (kv.entries_.count(key))
      throw ConfigError(key, line_no,
                        kv.source_ + ":" + std::to_string(line_no) + ": duplicate key '" + key +
                            "' (first set on line " + std::to_string(kv.entries_[key].line) + ")");
    kv.entries_[key] = {std::move(value), line_no};
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  return parse(read_text_file(path), path.string());
}

std::optional<std::string> KeyValues::find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second.value;
}

void KeyValues::set(const std::string& key, std::string value) {
  auto& e = entries_[key];
  e.value = std::move(value);
}

const KeyValues::Entry& KeyValues::entry(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end())
    throw ConfigError(key, 0, source_ + ": missing required field '" + key + "'");
  return it->second;
}

void KeyValues::bad_value(const std::string& key, const std::string& what) const {
  const auto& e = entry(key);
  throw ConfigError(key, e.line,
                    source_ + ":" + std::to_string(e.line) + ": field '" + key + "': " + what +
                        " (got '" + e.value + "')");
}

std::string KeyValues::get_string(const std::string& key) const { return entry(key).value; }

double KeyValues::get_double(const std::string& key) const {
  const auto& s = entry(key).value;
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
    bad_value(key, "expected a finite number");
  return v;
}

std::uint64_t KeyValues::get_u64(const std::string& key) const {
  const auto& s = entry(key).value;
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    bad_value(key, "expected a non-negative integer");
  errno = 0;
  const auto v = std::strtoull(s.c_str(), nullptr, 10);
  if (errno == ERANGE) bad_value(key, "integer out of range");
  return v;
}

std::size_t KeyValues::get_size(const std::string& key) const {
  return static_cast<std::size_t>(get_u64(key));
}

std::vector<std::size_t> KeyValues::get_size_list(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& part : split_commas(entry(key).value)) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      bad_value(key, "expected a comma-separated list of non-negative integers");
    out.push_back(static_cast<std::size_t>(std::strtoull(part.c_str(), nullptr, 10)));
  }
  return out;
}

std::vector<double> KeyValues::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& part : split_commas(entry(key).value)) {
    char* end = nullptr;
    const double v = std::strtod(part.c_str(), &end);
    if (part.empty() || end != part.c_str() + part.size() || !std::isfinite(v))
      bad_value(key, "expected a comma-separated list of numbers");
    out.push_back(v);
  }
  return out;
}

void KeyValues::check_known(const std::set<std::string>& known) const {
  for (const auto& [key, e] : entries_)
    if (!known.count(key))
      throw ConfigError(key, e.line,
                        source_ + ":" + std::to_string(e.line) + ": unknown field '" + key + "'");
}

std::vector<std::string> KeyValues::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

}  // namespace gist
