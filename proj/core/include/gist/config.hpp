#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace gist {

/// Flat `key = value` text with `#` comments. Errors carry the offending
/// key and line number.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text, std::string source = "<config>");
  static KeyValues load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> find(const std::string& key) const;
  void set(const std::string& key, std::string value);

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  /// Comma-separated non-negative integers; an empty value is an empty list.
  std::vector<std::size_t> get_size_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  /// Rejects keys outside `known`, naming the first offender and its line.
  void check_known(const std::set<std::string>& known) const;

  const std::string& source() const noexcept { return source_; }
  std::vector<std::string> keys() const;

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  const Entry& entry(const std::string& key) const;
  [[noreturn]] void bad_value(const std::string& key, const std::string& what) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
};

}  // namespace gist
