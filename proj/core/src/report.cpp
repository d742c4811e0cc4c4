#include "sail/report.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include <nlohmann/json.hpp>

namespace sail::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json real_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

}  // namespace

std::string fmt9(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

DetectionSummary detection_metrics(const std::vector<long>& transitions,
                                   const std::vector<drift::ResetEvent>& resets, int window) {
  DetectionSummary d;
  d.transitions = transitions;
  d.delays.assign(transitions.size(), std::nullopt);
  std::vector<bool> matched(resets.size(), false);
  for (std::size_t t = 0; t < transitions.size(); ++t) {
    const long start = transitions[t];
    for (std::size_t r = 0; r < resets.size(); ++r) {
      const long step = resets[r].step;
      if (step > start && step <= start + window) {
        matched[r] = true;
        if (!d.delays[t]) d.delays[t] = step - start;
      }
    }
    if (d.delays[t]) ++d.detected;
  }
  for (bool m : matched) {
    if (!m) ++d.false_positives;
  }
  d.rate = transitions.empty() ? kNaN : static_cast<double>(d.detected) / static_cast<double>(transitions.size());
  return d;
}

void summarize(RunReport& report, const std::vector<long>& transitions, int window) {
  report.segments.clear();
  double f = 0.0;
  double v = 0.0;
  double a = 0.0;
  for (const StepRecord& s : report.steps) {
    f += s.acc_fused;
    v += s.acc_vlm;
    a += s.acc_ada;
    if (report.segments.empty() || report.segments.back().index != s.segment) {
      report.segments.push_back({s.segment, s.domain_id, s.step, s.step, 0.0, 0.0, 0.0});
    }
    SegmentSummary& seg = report.segments.back();
    seg.last_step = s.step;
    seg.acc_fused += s.acc_fused;
    seg.acc_vlm += s.acc_vlm;
    seg.acc_ada += s.acc_ada;
  }
  const double n = static_cast<double>(report.steps.size());
  report.mean_acc_fused = report.steps.empty() ? kNaN : f / n;
  report.mean_acc_vlm = report.steps.empty() ? kNaN : v / n;
  report.mean_acc_ada = report.steps.empty() ? kNaN : a / n;
  for (SegmentSummary& seg : report.segments) {
    const double len = static_cast<double>(seg.last_step - seg.first_step + 1);
    seg.acc_fused /= len;
    seg.acc_vlm /= len;
    seg.acc_ada /= len;
  }

  report.forgetting.clear();
  std::map<std::string, std::vector<double>> visits;
  for (const SegmentSummary& seg : report.segments) visits[seg.domain_id].push_back(seg.acc_fused);
  double total = 0.0;
  for (const auto& [id, accs] : visits) {
    if (accs.size() < 2) continue;
    report.forgetting[id] = accs.front() - accs.back();
    total += report.forgetting[id];
  }
  report.mean_forgetting =
      report.forgetting.empty() ? kNaN : total / static_cast<double>(report.forgetting.size());
  report.detection = detection_metrics(transitions, report.resets, window);
}

void write_steps_csv(std::ostream& os, const RunReport& report) {
  os << "step,domain_id,acc_fused,acc_vlm,acc_ada,lambda_mean,loss_align,loss_balance,loss_ent,"
        "loss_total,gdi,reset_flag\n";
  for (const StepRecord& s : report.steps) {
    os << s.step << ',' << s.domain_id << ',' << fmt9(s.acc_fused) << ',' << fmt9(s.acc_vlm) << ','
       << fmt9(s.acc_ada) << ',' << fmt9(s.lambda_mean) << ',' << fmt9(s.loss.align_ce) << ','
       << fmt9(s.loss.balance) << ',' << fmt9(s.loss.ent) << ',' << fmt9(s.loss.total) << ','
       << fmt9(s.gdi) << ',' << (s.reset ? 1 : 0) << '\n';
  }
}

void write_step_details_csv(std::ostream& os, const RunReport& report) {
  os << "step,ent_vlm_correct,ent_vlm_wrong,ent_ada_correct,ent_ada_wrong,mean_weight,param_hash\n";
  for (const StepRecord& s : report.steps) {
    os << s.step << ',' << fmt9(s.ent_vlm_correct) << ',' << fmt9(s.ent_vlm_wrong) << ','
       << fmt9(s.ent_ada_correct) << ',' << fmt9(s.ent_ada_wrong) << ',' << fmt9(s.loss.mean_weight)
       << ',' << s.param_hash << '\n';
  }
}

void write_samples_csv(std::ostream& os, const RunReport& report) {
  os << "step,label,pred_fused,pred_vlm,pred_ada,lambda,conf_vlm,conf_ada,ent_vlm,ent_ada,ce_vlm,ce_ada\n";
  for (const SampleDiagnostic& s : report.samples) {
    os << s.step << ',' << s.label << ',' << s.pred_fused << ',' << s.pred_vlm << ',' << s.pred_ada << ','
       << fmt9(s.lambda) << ',' << fmt9(s.conf_vlm) << ',' << fmt9(s.conf_ada) << ',' << fmt9(s.ent_vlm)
       << ',' << fmt9(s.ent_ada) << ',' << fmt9(s.ce_vlm) << ',' << fmt9(s.ce_ada) << '\n';
  }
}

void write_events_jsonl(std::ostream& os, const RunReport& report) {
  for (const drift::ResetEvent& e : report.resets) {
    nlohmann::json j;
    j["step"] = e.step;
    j["gdi"] = e.gdi;
    j["num_params_reset"] = e.num_params_reset;
    j["strategy"] = std::string(drift::to_string(e.strategy));
    os << j.dump() << '\n';
  }
}

std::string summary_json(const RunReport& report, bool include_wall_time) {
  nlohmann::json j;
  j["seed"] = report.seed;
  j["steps"] = report.steps.size();
  j["mean_acc_fused"] = real_or_null(report.mean_acc_fused);
  j["mean_acc_vlm"] = real_or_null(report.mean_acc_vlm);
  j["mean_acc_ada"] = real_or_null(report.mean_acc_ada);
  j["segments"] = nlohmann::json::array();
  for (const SegmentSummary& s : report.segments) {
    j["segments"].push_back({{"index", s.index},
                             {"domain_id", s.domain_id},
                             {"first_step", s.first_step},
                             {"last_step", s.last_step},
                             {"acc_fused", real_or_null(s.acc_fused)},
                             {"acc_vlm", real_or_null(s.acc_vlm)},
                             {"acc_ada", real_or_null(s.acc_ada)}});
  }
  j["forgetting"] = nlohmann::json::object();
  for (const auto& [id, value] : report.forgetting) j["forgetting"][id] = value;
  j["mean_forgetting"] = real_or_null(report.mean_forgetting);
  j["reset_count"] = report.resets.size();
  nlohmann::json det;
  det["transitions"] = report.detection.transitions;
  det["delays"] = nlohmann::json::array();
  for (const auto& d : report.detection.delays) {
    det["delays"].push_back(d ? nlohmann::json(*d) : nlohmann::json(nullptr));
  }
  det["detected"] = report.detection.detected;
  det["false_positives"] = report.detection.false_positives;
  det["rate"] = real_or_null(report.detection.rate);
  j["detection"] = det;
  if (include_wall_time) j["wall_seconds"] = report.wall_seconds;
  return j.dump(2);
}

}  // namespace sail::harness
