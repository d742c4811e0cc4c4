#include "sail/toml_lite.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "sail/error.hpp"

namespace sail::toml {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Removes a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return k.front() != '.' && k.back() != '.';
}

int bracket_balance(const std::string& s) {
  int depth = 0;
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) quoted = !quoted;
    if (quoted) continue;
    if (s[i] == '[') ++depth;
    if (s[i] == ']') --depth;
  }
  return depth;
}

Scalar parse_scalar(const std::string& raw, const std::string& source, std::size_t line) {
  const std::string v = trim(raw);
  if (v.empty()) throw ParseError(source, line, "missing value");
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') throw ParseError(source, line, "unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        const char c = v[++i];
        switch (c) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: throw ParseError(source, line, std::string("unsupported escape \\") + c);
        }
      } else {
        out += v[i];
      }
    }
    return out;
  }
  std::string digits;
  for (char c : v) {
    if (c != '_') digits += c;
  }
  const bool looks_real = digits.find_first_of(".eE") != std::string::npos || digits == "inf" ||
                          digits == "+inf" || digits == "-inf" || digits == "nan";
  const char* first = digits.data();
  const char* last = first + digits.size();
  if (*first == '+') ++first;
  if (!looks_real) {
    std::int64_t i = 0;
    const auto [ptr, ec] = std::from_chars(first, last, i);
    if (ec == std::errc() && ptr == last) return i;
  } else {
    double d = 0.0;
    const auto [ptr, ec] = std::from_chars(first, last, d);
    if (ec == std::errc() && ptr == last) return d;
  }
  throw ParseError(source, line, "cannot parse value '" + v + "'");
}

std::vector<Scalar> parse_array(const std::string& raw, const std::string& source, std::size_t line) {
  std::string body = trim(raw);
  body = trim(body.substr(1, body.size() - 2));
  std::vector<Scalar> out;
  std::string item;
  bool quoted = false;
  for (std::size_t i = 0; i <= body.size(); ++i) {
    const bool end = i == body.size();
    if (!end && body[i] == '"' && (i == 0 || body[i - 1] != '\\')) quoted = !quoted;
    if (end || (body[i] == ',' && !quoted)) {
      const std::string t = trim(item);
      if (!t.empty()) {
        if (t.front() == '[') throw ParseError(source, line, "nested arrays are not supported");
        out.push_back(parse_scalar(t, source, line));
      } else if (!end) {
        throw ParseError(source, line, "empty array element");
      }
      item.clear();
    } else {
      item += body[i];
    }
  }
  return out;
}

Entry parse_value(const std::string& raw, const std::string& source, std::size_t line) {
  const std::string v = trim(raw);
  Entry e;
  e.line = line;
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') throw ParseError(source, line, "unterminated array");
    e.value = parse_array(v, source, line);
  } else {
    e.value = parse_scalar(v, source, line);
  }
  return e;
}

[[noreturn]] void type_error(const std::string& source, const std::string& key, std::size_t line,
                             const char* expected) {
  throw ConfigError(source + ":" + std::to_string(line) + ": key '" + key + "' must be " + expected);
}

}  // namespace

Document Document::parse(const std::string& text, const std::string& source) {
  Document doc;
  doc.source_ = source;
  std::istringstream in(text);
  std::string prefix;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen_tables;

  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(strip_comment(line));
    if (t.empty()) continue;

    if (t.rfind("[[", 0) == 0) {
      if (t.size() < 4 || t.substr(t.size() - 2) != "]]") throw ParseError(source, line_no, "malformed [[table]]");
      const std::string name = trim(t.substr(2, t.size() - 4));
      if (!valid_key(name)) throw ParseError(source, line_no, "invalid table name");
      const std::size_t index = doc.table_arrays_[name]++;
      prefix = name + "." + std::to_string(index) + ".";
      continue;
    }
    if (t.front() == '[') {
      if (t.back() != ']') throw ParseError(source, line_no, "malformed [table]");
      const std::string name = trim(t.substr(1, t.size() - 2));
      if (!valid_key(name)) throw ParseError(source, line_no, "invalid table name");
      if (!seen_tables.insert(name).second) throw ParseError(source, line_no, "table [" + name + "] defined twice");
      prefix = name + ".";
      continue;
    }

    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(source, line_no, "expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (!valid_key(key)) throw ParseError(source, line_no, "invalid key '" + key + "'");
    std::string value = trim(t.substr(eq + 1));
    const std::size_t start_line = line_no;
    while (bracket_balance(value) > 0) {
      if (!std::getline(in, line)) throw ParseError(source, start_line, "unterminated array");
      ++line_no;
      value += " " + trim(strip_comment(line));
    }
    const std::string full = prefix + key;
    if (doc.entries_.count(full)) throw ParseError(source, start_line, "duplicate key '" + full + "'");
    doc.entries_[full] = parse_value(value, source, start_line);
  }
  return doc;
}

Document Document::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

const Entry* Document::find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

std::optional<double> Document::real(const std::string& key) const {
  const Entry* e = find(key);
  if (!e) return std::nullopt;
  if (const auto* s = std::get_if<Scalar>(&e->value)) {
    if (const auto* d = std::get_if<double>(s)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(s)) return static_cast<double>(*i);
  }
  type_error(source_, key, e->line, "a number");
}

std::optional<std::int64_t> Document::integer(const std::string& key) const {
  const Entry* e = find(key);
  if (!e) return std::nullopt;
  if (const auto* s = std::get_if<Scalar>(&e->value)) {
    if (const auto* i = std::get_if<std::int64_t>(s)) return *i;
  }
  type_error(source_, key, e->line, "an integer");
}

std::optional<bool> Document::boolean(const std::string& key) const {
  const Entry* e = find(key);
  if (!e) return std::nullopt;
  if (const auto* s = std::get_if<Scalar>(&e->value)) {
    if (const auto* b = std::get_if<bool>(s)) return *b;
  }
  type_error(source_, key, e->line, "a boolean");
}

std::optional<std::string> Document::string(const std::string& key) const {
  const Entry* e = find(key);
  if (!e) return std::nullopt;
  if (const auto* s = std::get_if<Scalar>(&e->value)) {
    if (const auto* str = std::get_if<std::string>(s)) return *str;
  }
  type_error(source_, key, e->line, "a string");
}

std::optional<std::vector<double>> Document::real_array(const std::string& key) const {
  const Entry* e = find(key);
  if (!e) return std::nullopt;
  const auto* arr = std::get_if<std::vector<Scalar>>(&e->value);
  if (!arr) type_error(source_, key, e->line, "an array of numbers");
  std::vector<double> out;
  for (const Scalar& s : *arr) {
    if (const auto* d = std::get_if<double>(&s)) {
      out.push_back(*d);
    } else if (const auto* i = std::get_if<std::int64_t>(&s)) {
      out.push_back(static_cast<double>(*i));
    } else {
      type_error(source_, key, e->line, "an array of numbers");
    }
  }
  return out;
}

std::optional<std::vector<std::int64_t>> Document::integer_array(const std::string& key) const {
  const Entry* e = find(key);
  if (!e) return std::nullopt;
  const auto* arr = std::get_if<std::vector<Scalar>>(&e->value);
  if (!arr) type_error(source_, key, e->line, "an array of integers");
  std::vector<std::int64_t> out;
  for (const Scalar& s : *arr) {
    const auto* i = std::get_if<std::int64_t>(&s);
    if (!i) type_error(source_, key, e->line, "an array of integers");
    out.push_back(*i);
  }
  return out;
}

std::size_t Document::table_array_size(const std::string& name) const {
  const auto it = table_arrays_.find(name);
  return it == table_arrays_.end() ? 0 : it->second;
}

std::vector<std::string> Document::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [key, entry] : entries_) {
    if (!used_.count(key)) out.push_back(key);
  }
  return out;
}

void Document::set(const std::string& key, const std::string& raw) {
  if (!valid_key(key)) throw ConfigError("invalid override key '" + key + "'");
  try {
    entries_[key] = parse_value(raw, "<override>", 0);
  } catch (const ParseError&) {
    // Bare words on the command line are treated as strings.
    Entry e;
    e.value = Scalar(raw);
    entries_[key] = e;
  }
}

}  // namespace sail::toml
