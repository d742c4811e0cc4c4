#pragma once

// Reader for the TOML subset used by run configuration files:
//   - comments starting with '#'
//   - [table] and [table.sub] headers, [[array-of-tables]] headers
//   - key = value, where value is a basic string ("..."), integer, float,
//     boolean, or an array of those (may span lines)
// Tables are flattened into dotted keys; the i-th entry of an array of
// tables [[seg]] is addressed as "seg.<i>.key".

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace sail::toml {

using Scalar = std::variant<bool, std::int64_t, double, std::string>;

struct Entry {
  std::variant<Scalar, std::vector<Scalar>> value;
  std::size_t line = 0;
};

class Document {
 public:
  static Document parse(const std::string& text, const std::string& source = "<config>");
  static Document parse_file(const std::string& path);

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }

  // Typed getters throw ConfigError on a type mismatch. Integers are accepted
  // where reals are expected.
  std::optional<double> real(const std::string& key) const;
  std::optional<std::int64_t> integer(const std::string& key) const;
  std::optional<bool> boolean(const std::string& key) const;
  std::optional<std::string> string(const std::string& key) const;
  std::optional<std::vector<double>> real_array(const std::string& key) const;
  std::optional<std::vector<std::int64_t>> integer_array(const std::string& key) const;

  /// Number of [[name]] blocks.
  std::size_t table_array_size(const std::string& name) const;

  /// Keys never read through a getter; used to reject typos.
  std::vector<std::string> unused_keys() const;

  /// Inserts or replaces a key, parsing `raw` as a TOML value.
  void set(const std::string& key, const std::string& raw);

  const std::string& source() const { return source_; }

 private:
  const Entry* find(const std::string& key) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
  std::map<std::string, std::size_t> table_arrays_;
  mutable std::set<std::string> used_;
};

}  // namespace sail::toml
