#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace cmirror {

/// Plain `key = value` text. `#` starts a comment; blank lines are ignored.
/// Every error names the source and the line.
class KeyValueConfig {
public:
  KeyValueConfig() = default;

  static KeyValueConfig parse_file(const std::filesystem::path& path);
  static KeyValueConfig parse(std::istream& in, const std::string& source);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Throws InputError on the first key not in `allowed`.
  void require_known(const std::set<std::string>& allowed) const;

  const std::string& source() const { return source_; }

  /// Keys in file order (overrides last).
  std::vector<std::string> keys() const;

private:
  struct Entry {
    std::string value;
    int line = 0;
  };

  const Entry& entry(const std::string& key) const;
  std::string where(const Entry& e) const;

  std::string source_ = "<memory>";
  std::map<std::string, Entry> entries_;
};

using KeyValueList = std::vector<std::pair<std::string, std::string>>;

void write_key_values(const KeyValueList& kv, const std::filesystem::path& path);
void write_key_values(const KeyValueList& kv, std::ostream& out);

/// Shortest round-trippable decimal text for a double.
std::string format_double(double v);

} // namespace cmirror
