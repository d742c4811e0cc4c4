#pragma once
// Multi-run experiments: the component ablation grid and one-parameter sweeps.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "sail/config.hpp"
#include "sail/episode.hpp"

namespace sail::harness {

struct SeedStats {
  std::vector<double> values;  // one per seed, in seed order
  double mean = 0.0;
  double stddev = 0.0;         // population
};

SeedStats seed_stats(std::vector<double> values);

struct AblationCell {
  bool ent = false;
  bool align = false;
  bool reset = false;
  SeedStats acc_fused;
  SeedStats forgetting;  // NaN entries without recurring domains
  SeedStats resets;
};

struct AblationGrid {
  std::vector<AblationCell> cells;  // all 8 combinations, ent-major

  const AblationCell& cell(bool ent, bool align, bool reset) const;
};

/// Config for one grid cell. Disabling both losses leaves no backward pass.
RunConfig ablation_config(const RunConfig& base, bool ent, bool align, bool reset);

/// Runs every cell over the config's seeds, sharing one artifact set per seed.
AblationGrid run_ablation_grid(const RunConfig& config);

/// The five rows of the standard layout: no backward, ent + reset,
/// align + reset, ent + align, all three.
void write_ablation_table(std::ostream& os, const AblationGrid& grid);

void write_ablation_csv(std::ostream& os, const AblationGrid& grid);

struct SweepPoint {
  std::string value;
  SeedStats acc_fused;
  SeedStats resets;
  SeedStats detection_rate;
  SeedStats false_positives;
  SeedStats forgetting;
};

/// Accepted names: tau, interval, alpha, strategy, weight, normalization.
void apply_sweep_value(RunConfig& config, const std::string& parameter, const std::string& value);

std::vector<SweepPoint> run_sweep(const RunConfig& config, const std::string& parameter,
                                  const std::vector<std::string>& values);

void write_sweep_csv(std::ostream& os, const std::string& parameter, const std::vector<SweepPoint>& points);

/// Artifacts for every seed of the config, built concurrently.
std::vector<Artifacts> prepare_all(const RunConfig& config);

}  // namespace sail::harness
