#include "sail/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sail/error.hpp"

namespace sail::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kMinPoints = 3;

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidInput("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return kNaN;
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return kNaN;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::string_view to_string(Quadrant q) {
  switch (q) {
    case Quadrant::both_right: return "both_right";
    case Quadrant::vlm_only: return "vlm_only";
    case Quadrant::ada_only: return "ada_only";
    case Quadrant::both_wrong: return "both_wrong";
  }
  return "?";
}

Quadrant quadrant_of(const SampleDiagnostic& s) {
  const bool v = s.pred_vlm == s.label;
  const bool a = s.pred_ada == s.label;
  if (v && a) return Quadrant::both_right;
  if (v) return Quadrant::vlm_only;
  if (a) return Quadrant::ada_only;
  return Quadrant::both_wrong;
}

CorrelationReport analyze_correlations(const std::vector<SampleDiagnostic>& samples) {
  CorrelationReport out;
  std::array<std::vector<const SampleDiagnostic*>, 4> groups;
  for (const SampleDiagnostic& s : samples) {
    if (s.label < 0) continue;
    groups[static_cast<std::size_t>(quadrant_of(s))].push_back(&s);
  }
  for (std::size_t q = 0; q < 4; ++q) {
    out.counts[q] = groups[q].size();
    const auto quad = static_cast<Quadrant>(q);
    if (groups[q].size() < kMinPoints) {
      out.notes.push_back("quadrant " + std::string(to_string(quad)) + " skipped: " +
                          std::to_string(groups[q].size()) + " points");
      continue;
    }
    for (const char* model : {"vlm", "ada"}) {
      const bool vlm = std::string_view(model) == "vlm";
      std::vector<double> ent;
      std::vector<double> conf;
      std::vector<double> ce;
      for (const SampleDiagnostic* s : groups[q]) {
        ent.push_back(vlm ? s->ent_vlm : s->ent_ada);
        conf.push_back(vlm ? s->conf_vlm : s->conf_ada);
        ce.push_back(vlm ? s->ce_vlm : s->ce_ada);
      }
      out.cells.push_back({quad, model, "entropy", ent.size(), pearson(ent, ce)});
      out.cells.push_back({quad, model, "confidence", conf.size(), pearson(conf, ce)});
    }
  }
  return out;
}

void write_correlations_csv(std::ostream& os, const CorrelationReport& report) {
  os << "quadrant,model,metric,points,r\n";
  for (const CorrelationCell& c : report.cells) {
    os << to_string(c.quadrant) << ',' << c.model << ',' << c.metric << ',' << c.points << ',' << fmt9(c.r)
       << '\n';
  }
  for (const std::string& note : report.notes) os << "# " << note << '\n';
}

void write_scatter_csv(std::ostream& os, const std::vector<SampleDiagnostic>& samples) {
  os << "quadrant,model,entropy,confidence,cross_entropy\n";
  for (const SampleDiagnostic& s : samples) {
    if (s.label < 0) continue;
    const std::string_view q = to_string(quadrant_of(s));
    os << q << ",vlm," << fmt9(s.ent_vlm) << ',' << fmt9(s.conf_vlm) << ',' << fmt9(s.ce_vlm) << '\n';
    os << q << ",ada," << fmt9(s.ent_ada) << ',' << fmt9(s.conf_ada) << ',' << fmt9(s.ce_ada) << '\n';
  }
}

EntropyHistogram entropy_histogram(const std::vector<SampleDiagnostic>& samples, int bins, double hi) {
  if (bins < 1 || !(hi > 0.0)) throw InvalidInput("entropy_histogram: need bins >= 1 and hi > 0");
  EntropyHistogram h;
  h.hi = hi;
  for (auto& per_model : h.counts) {
    for (auto& v : per_model) v.assign(static_cast<std::size_t>(bins), 0);
  }
  auto bin_of = [&](double e) {
    const auto b = static_cast<long>(std::floor(e / hi * bins));
    return static_cast<std::size_t>(std::clamp(b, 0L, static_cast<long>(bins - 1)));
  };
  for (const SampleDiagnostic& s : samples) {
    if (s.label < 0) continue;
    ++h.counts[0][s.pred_vlm == s.label ? 1 : 0][bin_of(s.ent_vlm)];
    ++h.counts[1][s.pred_ada == s.label ? 1 : 0][bin_of(s.ent_ada)];
  }
  return h;
}

void write_histogram_csv(std::ostream& os, const EntropyHistogram& h) {
  os << "model,correct,bin_lo,bin_hi,count\n";
  for (int m = 0; m < 2; ++m) {
    for (int c = 0; c < 2; ++c) {
      const auto& v = h.counts[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)];
      const double width = (h.hi - h.lo) / static_cast<double>(v.size());
      for (std::size_t b = 0; b < v.size(); ++b) {
        os << (m == 0 ? "vlm" : "ada") << ',' << c << ',' << fmt9(h.lo + width * static_cast<double>(b)) << ','
           << fmt9(h.lo + width * static_cast<double>(b + 1)) << ',' << v[b] << '\n';
      }
    }
  }
}

}  // namespace sail::harness
