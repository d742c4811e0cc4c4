#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sail/drift_reset.hpp"
#include "sail/objectives.hpp"

namespace sail::harness {

struct StepRecord {
  long step = 0;  // 1-based
  std::string domain_id;
  std::size_t segment = 0;
  double acc_fused = 0.0;
  double acc_vlm = 0.0;
  double acc_ada = 0.0;
  double lambda_mean = 0.0;
  objectives::LossBreakdown loss;
  double gdi = 1.0;
  bool reset = false;
  // Mean entropy of each model's own prediction, split by whether that model
  // was correct; NaN when the split is empty.
  double ent_vlm_correct = 0.0;
  double ent_vlm_wrong = 0.0;
  double ent_ada_correct = 0.0;
  double ent_ada_wrong = 0.0;
  std::uint64_t param_hash = 0;  // of the trainable vector after the step
};

/// One retained sample; only collected when requested.
struct SampleDiagnostic {
  long step = 0;
  int label = -1;
  int pred_fused = 0;
  int pred_vlm = 0;
  int pred_ada = 0;
  double lambda = 0.0;
  double conf_vlm = 0.0;
  double conf_ada = 0.0;
  double ent_vlm = 0.0;
  double ent_ada = 0.0;
  double ce_vlm = 0.0;  // -log p_vlm[label]
  double ce_ada = 0.0;
};

struct SegmentSummary {
  std::size_t index = 0;
  std::string domain_id;
  long first_step = 0;
  long last_step = 0;
  double acc_fused = 0.0;
  double acc_vlm = 0.0;
  double acc_ada = 0.0;
};

struct DetectionSummary {
  std::vector<long> transitions;
  /// Steps from each transition to the first reset inside its window.
  std::vector<std::optional<long>> delays;
  std::size_t detected = 0;
  std::size_t false_positives = 0;
  double rate = 0.0;  // NaN without transitions
};

struct RunReport {
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  std::vector<SegmentSummary> segments;
  double mean_acc_fused = 0.0;
  double mean_acc_vlm = 0.0;
  double mean_acc_ada = 0.0;
  /// First-visit minus latest-revisit fused accuracy, per recurring domain.
  std::map<std::string, double> forgetting;
  double mean_forgetting = 0.0;  // NaN without recurring domains
  std::vector<drift::ResetEvent> resets;
  DetectionSummary detection;
  double wall_seconds = 0.0;
  std::vector<SampleDiagnostic> samples;
};

/// Fills segments, means, forgetting and detection from `steps` and `resets`.
void summarize(RunReport& report, const std::vector<long>& transitions, int window);

DetectionSummary detection_metrics(const std::vector<long>& transitions,
                                   const std::vector<drift::ResetEvent>& resets, int window);

/// Columns: step, domain_id, acc_fused, acc_vlm, acc_ada, lambda_mean,
/// loss_align, loss_balance, loss_ent, loss_total, gdi, reset_flag.
/// Reals are printed with 9 significant digits.
void write_steps_csv(std::ostream& os, const RunReport& report);

/// Per-step entropy splits, mean sample weight and parameter hash.
void write_step_details_csv(std::ostream& os, const RunReport& report);

void write_samples_csv(std::ostream& os, const RunReport& report);

/// One JSON object per reset event.
void write_events_jsonl(std::ostream& os, const RunReport& report);

/// Aggregates (accuracies, segments, forgetting, detection, resets).
std::string summary_json(const RunReport& report, bool include_wall_time = true);

/// Formats a real with 9 significant digits ("nan" for NaN).
std::string fmt9(double v);

}  // namespace sail::harness
