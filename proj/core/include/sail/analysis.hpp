#pragma once

#include <array>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sail/report.hpp"

namespace sail::harness {

/// Pearson correlation; NaN when either side has zero variance or the inputs
/// are shorter than two.
double pearson(std::span<const double> x, std::span<const double> y);

/// Joint correctness of the two models on a sample.
enum class Quadrant { both_right, vlm_only, ada_only, both_wrong };
std::string_view to_string(Quadrant q);
Quadrant quadrant_of(const SampleDiagnostic& s);

struct CorrelationCell {
  Quadrant quadrant = Quadrant::both_right;
  std::string model;   // "vlm" or "ada"
  std::string metric;  // "entropy" or "confidence"
  std::size_t points = 0;
  double r = 0.0;      // NaN when undefined
};

struct CorrelationReport {
  std::array<std::size_t, 4> counts{};  // samples per quadrant, by enum order
  std::vector<CorrelationCell> cells;
  std::vector<std::string> notes;       // skipped quadrants
};

/// For each quadrant with at least three samples, the correlation of each
/// model's entropy and confidence with that model's per-sample
/// cross-entropy. Unlabeled samples are ignored.
CorrelationReport analyze_correlations(const std::vector<SampleDiagnostic>& samples);

void write_correlations_csv(std::ostream& os, const CorrelationReport& report);

/// Scatter points: quadrant, model, entropy, confidence, cross-entropy.
void write_scatter_csv(std::ostream& os, const std::vector<SampleDiagnostic>& samples);

struct EntropyHistogram {
  double lo = 0.0;
  double hi = 0.0;
  // counts[model][correct][bin], model 0 = vlm, 1 = ada; correct 1 = right
  std::array<std::array<std::vector<std::size_t>, 2>, 2> counts;
};

EntropyHistogram entropy_histogram(const std::vector<SampleDiagnostic>& samples, int bins, double hi);

void write_histogram_csv(std::ostream& os, const EntropyHistogram& h);

}  // namespace sail::harness
