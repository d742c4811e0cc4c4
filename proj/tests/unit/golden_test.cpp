// Regression against checked-in golden files. Set SAIL_REGEN_GOLDEN=1 to
// rewrite them from the current build instead of comparing.

#include <gtest/gtest.h>

#include "golden.hpp"
#include "sail/adapter.hpp"
#include "sail/config.hpp"
#include "sail/episode.hpp"

using namespace sail;
using namespace sail::harness;

namespace {

const Artifacts& seed_artifacts() {
  static const Artifacts a = prepare_artifacts(load_config(golden::config_path("golden.toml")), golden::kLogitSeed);
  return a;
}

void check_matrix(const std::string& file, const Matrix& actual) {
  const std::string path = golden::data_path(file);
  if (golden::regenerate()) {
    golden::write_matrix(path, actual);
    GTEST_SKIP() << "rewrote " << path;
  }
  const Matrix expected = golden::read_matrix(path);
  EXPECT_LE(golden::max_rel_diff(actual, expected), golden::kTolerance);
}

}  // namespace

TEST(Golden, AdapterLogits) {
  const auto batch = golden::logit_batch(seed_artifacts());
  check_matrix("golden_adapter_logits.csv", adapter::forward(seed_artifacts().adapter, batch.features).logits);
}

TEST(Golden, GeneralistLogits) {
  const auto batch = golden::logit_batch(seed_artifacts());
  check_matrix("golden_generalist_logits.csv", seed_artifacts().generalist->predict(batch.features));
}

TEST(Golden, CorruptionAggregates) {
  const std::vector<golden::Row> rows = golden::run_config("golden.toml");
  const std::string path = golden::data_path("golden_aggregates.csv");
  if (golden::regenerate()) {
    golden::write_rows(path, rows);
    GTEST_SKIP() << "rewrote " << path;
  }
  for (const std::string& m : golden::compare_rows(golden::read_rows(path), rows)) ADD_FAILURE() << m;
}
