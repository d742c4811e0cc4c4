#include "sail/external_logits.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <string_view>

#include "sail/error.hpp"

namespace sail::external {

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

bool has_space(std::string_view s) {
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') return true;
  }
  return false;
}

}  // namespace

LogitRecord parse_record(const std::string& line, int expected_k, const std::string& source,
                         std::size_t line_no) {
  const auto fields = split_commas(line);
  if (fields.size() < 4) throw ParseError(source, line_no, "expected sample_id,label,l_1,...,l_K with K >= 2");

  LogitRecord rec;
  if (fields[0].empty() || has_space(fields[0])) throw ParseError(source, line_no, "invalid sample_id");
  rec.sample_id = std::string(fields[0]);

  const int k = static_cast<int>(fields.size()) - 2;
  if (expected_k != 0 && k != expected_k) {
    throw ParseError(source, line_no,
                     "record has " + std::to_string(k) + " logits, expected " + std::to_string(expected_k));
  }

  if (fields[1] != "-") {
    int label = -1;
    const auto* first = fields[1].data();
    const auto* last = first + fields[1].size();
    const auto [ptr, ec] = std::from_chars(first, last, label);
    if (ec != std::errc() || ptr != last || fields[1].empty() || label < 0) {
      throw ParseError(source, line_no, "label must be '-' or a nonnegative integer");
    }
    if (label >= k) throw ParseError(source, line_no, "label out of range for K = " + std::to_string(k));
    rec.label = label;
  }

  rec.logits.reserve(static_cast<std::size_t>(k));
  for (std::size_t f = 2; f < fields.size(); ++f) {
    double v = 0.0;
    const auto* first = fields[f].data();
    const auto* last = first + fields[f].size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || fields[f].empty()) {
      throw ParseError(source, line_no, "logit " + std::to_string(f - 1) + " is not a real number");
    }
    if (!std::isfinite(v)) throw ParseError(source, line_no, "non-finite logit");
    rec.logits.push_back(v);
  }
  return rec;
}

LogitReader::LogitReader(const std::string& path) : path_(path), in_(path) {
  if (!in_) throw Error("cannot open logits file '" + path + "'");
}

std::optional<LogitRecord> LogitReader::next() {
  std::string text;
  if (!std::getline(in_, text)) return std::nullopt;
  ++line_;
  if (!text.empty() && text.back() == '\r') text.pop_back();
  if (text.empty()) {
    // Only a trailing newline at end of file is tolerated.
    if (in_.peek() == std::ifstream::traits_type::eof()) return std::nullopt;
    throw ParseError(path_, line_, "blank line");
  }
  LogitRecord rec = parse_record(text, num_classes_, path_, line_);
  if (num_classes_ == 0) num_classes_ = static_cast<int>(rec.logits.size());
  if (!seen_.insert(rec.sample_id).second) {
    throw ParseError(path_, line_, "duplicate sample_id '" + rec.sample_id + "'");
  }
  return rec;
}

std::vector<LogitRecord> load_external_logits(const std::string& path) {
  LogitReader reader(path);
  std::vector<LogitRecord> out;
  while (auto rec = reader.next()) out.push_back(std::move(*rec));
  return out;
}

void write_external_logits(const std::string& path, const std::vector<LogitRecord>& records) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error("cannot open '" + path + "' for writing");
  for (const auto& r : records) {
    std::fputs(r.sample_id.c_str(), f);
    if (r.label) {
      std::fprintf(f, ",%d", *r.label);
    } else {
      std::fputs(",-", f);
    }
    for (double v : r.logits) std::fprintf(f, ",%.17g", v);
    std::fputc('\n', f);
  }
  const bool failed = std::ferror(f) != 0;
  std::fclose(f);
  if (failed) throw Error("failed writing '" + path + "'");
}

}  // namespace sail::external
