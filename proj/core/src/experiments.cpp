#include "sail/experiments.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>

#include "sail/error.hpp"

namespace sail::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double parse_real(const std::string& name, const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("sweep " + name + ": '" + text + "' is not a number");
  }
  return v;
}

std::string pct(const SeedStats& s) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%6.2f +- %.2f", 100.0 * s.mean, 100.0 * s.stddev);
  return buf;
}

// Runs configs[c] for every seed; result[c][s].
std::vector<std::vector<RunReport>> run_matrix(const std::vector<RunConfig>& configs,
                                               const std::vector<std::uint64_t>& seeds,
                                               const std::vector<Artifacts>& artifacts) {
  std::vector<std::vector<RunReport>> out(configs.size(), std::vector<RunReport>(seeds.size()));
  parallel_for(configs.size() * seeds.size(), [&](std::size_t job) {
    const std::size_t c = job / seeds.size();
    const std::size_t s = job % seeds.size();
    out[c][s] = run_episode(configs[c], seeds[s], artifacts[s]);
  });
  return out;
}

template <typename F>
SeedStats collect(const std::vector<RunReport>& reports, F f) {
  std::vector<double> v;
  for (const RunReport& r : reports) v.push_back(f(r));
  return seed_stats(std::move(v));
}

}  // namespace

SeedStats seed_stats(std::vector<double> values) {
  SeedStats s;
  s.values = std::move(values);
  if (s.values.empty()) {
    s.mean = s.stddev = kNaN;
    return s;
  }
  double sum = 0.0;
  for (double v : s.values) sum += v;
  s.mean = sum / static_cast<double>(s.values.size());
  double sq = 0.0;
  for (double v : s.values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(s.values.size()));
  return s;
}

const AblationCell& AblationGrid::cell(bool ent, bool align, bool reset) const {
  for (const AblationCell& c : cells) {
    if (c.ent == ent && c.align == align && c.reset == reset) return c;
  }
  throw InvalidInput("ablation grid has no such cell");
}

RunConfig ablation_config(const RunConfig& base, bool ent, bool align, bool reset) {
  RunConfig c = base;
  c.disable_ent = !ent;
  c.disable_align = !align;
  c.disable_reset = !reset;
  c.loss.use_entropy = ent;
  c.loss.use_alignment = align;
  c.no_backward = !(ent || align);
  return c;
}

std::vector<Artifacts> prepare_all(const RunConfig& config) {
  std::vector<Artifacts> out(config.seeds.size());
  parallel_for(config.seeds.size(), [&](std::size_t i) { out[i] = prepare_artifacts(config, config.seeds[i]); });
  return out;
}

AblationGrid run_ablation_grid(const RunConfig& config) {
  config.validate();
  std::vector<RunConfig> configs;
  AblationGrid grid;
  for (bool ent : {false, true}) {
    for (bool align : {false, true}) {
      for (bool reset : {false, true}) {
        configs.push_back(ablation_config(config, ent, align, reset));
        AblationCell cell;
        cell.ent = ent;
        cell.align = align;
        cell.reset = reset;
        grid.cells.push_back(cell);
      }
    }
  }
  const auto reports = run_matrix(configs, config.seeds, prepare_all(config));
  for (std::size_t c = 0; c < configs.size(); ++c) {
    grid.cells[c].acc_fused = collect(reports[c], [](const RunReport& r) { return r.mean_acc_fused; });
    grid.cells[c].forgetting = collect(reports[c], [](const RunReport& r) { return r.mean_forgetting; });
    grid.cells[c].resets =
        collect(reports[c], [](const RunReport& r) { return static_cast<double>(r.resets.size()); });
  }
  return grid;
}

void write_ablation_table(std::ostream& os, const AblationGrid& grid) {
  struct Row {
    const char* name;
    bool ent;
    bool align;
    bool reset;
  };
  const Row rows[] = {{"(1) No Backward", false, false, false},
                      {"(2)", true, false, true},
                      {"(3)", false, true, true},
                      {"(4)", true, true, false},
                      {"(5) SAIL", true, true, true}};
  os << "row              ent  align  reset  acc_fused (%)      forgetting (%)\n";
  for (const Row& r : rows) {
    const AblationCell& c = grid.cell(r.ent, r.align, r.reset);
    char head[96];
    std::snprintf(head, sizeof(head), "%-16s %-4s %-6s %-6s ", r.name, r.ent ? "x" : "", r.align ? "x" : "",
                  r.reset ? "x" : "");
    os << head << pct(c.acc_fused);
    os << "    " << (std::isnan(c.forgetting.mean) ? std::string("n/a") : pct(c.forgetting)) << '\n';
  }
}

void write_ablation_csv(std::ostream& os, const AblationGrid& grid) {
  os << "ent,align,reset,acc_mean,acc_std,forgetting_mean,forgetting_std,resets_mean\n";
  for (const AblationCell& c : grid.cells) {
    os << c.ent << ',' << c.align << ',' << c.reset << ',' << fmt9(c.acc_fused.mean) << ','
       << fmt9(c.acc_fused.stddev) << ',' << fmt9(c.forgetting.mean) << ',' << fmt9(c.forgetting.stddev) << ','
       << fmt9(c.resets.mean) << '\n';
  }
}

void apply_sweep_value(RunConfig& config, const std::string& parameter, const std::string& value) {
  if (parameter == "tau") {
    config.reset.threshold = parse_real(parameter, value);
  } else if (parameter == "interval") {
    const double v = parse_real(parameter, value);
    if (v != std::floor(v)) throw ConfigError("sweep interval: '" + value + "' is not an integer");
    config.reset.interval = static_cast<int>(v);
  } else if (parameter == "alpha") {
    config.reset.alpha = parse_real(parameter, value);
  } else if (parameter == "strategy") {
    try {
      config.reset.strategy = drift::parse_strategy(value);
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
  } else if (parameter == "weight") {
    try {
      config.weight = fusion::parse_weight(value);
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
  } else if (parameter == "normalization") {
    try {
      config.normalization = fusion::parse_normalization(value);
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
  } else {
    throw ConfigError("unknown sweep parameter '" + parameter +
                      "' (tau, interval, alpha, strategy, weight, normalization)");
  }
  config.validate();
}

std::vector<SweepPoint> run_sweep(const RunConfig& config, const std::string& parameter,
                                  const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<RunConfig> configs;
  for (const std::string& v : values) {
    RunConfig c = config;
    apply_sweep_value(c, parameter, v);
    configs.push_back(std::move(c));
  }
  const auto reports = run_matrix(configs, config.seeds, prepare_all(config));
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    SweepPoint p;
    p.value = values[i];
    p.acc_fused = collect(reports[i], [](const RunReport& r) { return r.mean_acc_fused; });
    p.resets = collect(reports[i], [](const RunReport& r) { return static_cast<double>(r.resets.size()); });
    p.detection_rate = collect(reports[i], [](const RunReport& r) { return r.detection.rate; });
    p.false_positives =
        collect(reports[i], [](const RunReport& r) { return static_cast<double>(r.detection.false_positives); });
    p.forgetting = collect(reports[i], [](const RunReport& r) { return r.mean_forgetting; });
    out.push_back(std::move(p));
  }
  return out;
}

void write_sweep_csv(std::ostream& os, const std::string& parameter, const std::vector<SweepPoint>& points) {
  os << parameter
     << ",acc_mean,acc_std,resets_mean,detection_rate_mean,false_positives_mean,forgetting_mean\n";
  for (const SweepPoint& p : points) {
    os << p.value << ',' << fmt9(p.acc_fused.mean) << ',' << fmt9(p.acc_fused.stddev) << ','
       << fmt9(p.resets.mean) << ',' << fmt9(p.detection_rate.mean) << ',' << fmt9(p.false_positives.mean)
       << ',' << fmt9(p.forgetting.mean) << '\n';
  }
}

}  // namespace sail::harness
