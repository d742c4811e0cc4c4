#pragma once

// Replay files of externally produced logits. One record per line, UTF-8,
// comma separated, no header:
//
//   record   := sample_id ',' label ',' logit (',' logit)+
//   sample_id:= one or more characters other than ',' and whitespace
//   label    := '-' | nonnegative decimal integer < K
//   logit    := finite decimal real (strtod syntax)
//
// Every record in a file carries the same number of logits K >= 2 and
// sample ids are unique within a file. A trailing newline is optional; blank
// lines are rejected.

#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

namespace sail::external {

struct LogitRecord {
  std::string sample_id;
  std::optional<int> label;
  std::vector<double> logits;
};

/// Streams records from a replay file, validating as it goes. Errors are
/// ParseError carrying the 1-based line number.
class LogitReader {
 public:
  explicit LogitReader(const std::string& path);

  std::optional<LogitRecord> next();

  /// Class count, known after the first record; 0 before.
  int num_classes() const { return num_classes_; }
  std::size_t line() const { return line_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
  std::size_t line_ = 0;
  int num_classes_ = 0;
  std::unordered_set<std::string> seen_;
};

/// Parses one record; `expected_k` of 0 accepts any K >= 2.
LogitRecord parse_record(const std::string& line, int expected_k, const std::string& source,
                         std::size_t line_no);

/// Reads a whole file.
std::vector<LogitRecord> load_external_logits(const std::string& path);

/// Writes records with 17 significant digits so values round-trip exactly.
void write_external_logits(const std::string& path, const std::vector<LogitRecord>& records);

}  // namespace sail::external
