// sail: command-line front end for adaptation episodes, ablations and sweeps.
//
// Exit status: 0 on success, 2 on usage or configuration errors, 3 on
// numerical failure, 1 on anything else (I/O, fit errors).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "sail/adapter.hpp"
#include "sail/analysis.hpp"
#include "sail/config.hpp"
#include "sail/episode.hpp"
#include "sail/error.hpp"
#include "sail/experiments.hpp"
#include "sail/external_logits.hpp"
#include "sail/generalist.hpp"
#include "sail/report.hpp"

namespace fs = std::filesystem;
using namespace sail;
using namespace sail::harness;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

constexpr const char* kLogitsGrammar = R"(External logits files: one record per line,
  sample_id,label,l_1,...,l_K
sample_id is any non-empty text without commas and must be unique; label is a
class index in [0, K) or '-' when unknown; every record carries the same
K >= 2 logits written as decimal reals. An empty file holds no records.)";

struct CommonOptions {
  std::string config;
  std::vector<std::string> set;
  std::vector<std::uint64_t> seeds;
  std::string out = ".";

  // Individual flags, applied as overrides of the matching config keys.
  std::vector<std::pair<std::string, std::string>> flags;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_out = true) {
  cmd->add_option("-c,--config", o.config, "TOML config file (defaults when omitted)")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.set, "override a config key, e.g. --set reset.alpha=25 (repeatable)");
  cmd->add_option("--seed", o.seeds, "episode seed(s); replaces the config's seed list");
  if (with_out) cmd->add_option("-o,--out", o.out, "output directory");
}

void add_flag_override(CLI::App* cmd, CommonOptions& o, const std::string& flag, const std::string& key,
                       const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [&o, key](const std::string& v) { o.flags.emplace_back(key, v); }, help);
}

void add_switch_override(CLI::App* cmd, CommonOptions& o, const std::string& flag, const std::string& key,
                         const std::string& help) {
  cmd->add_flag_callback(flag, [&o, key] { o.flags.emplace_back(key, "true"); }, help);
}

void add_run_flags(CLI::App* cmd, CommonOptions& o) {
  add_flag_override(cmd, o, "--preset", "stream.preset", "stream preset");
  add_flag_override(cmd, o, "--lr", "adapt.lr", "adaptation learning rate");
  add_flag_override(cmd, o, "--tau", "reset.threshold", "reset threshold on the drift cosine");
  add_flag_override(cmd, o, "--interval", "reset.interval", "anchor refresh interval");
  add_flag_override(cmd, o, "--alpha", "reset.alpha", "percent of parameters restored per reset");
  add_flag_override(cmd, o, "--strategy", "reset.strategy", "deep|shallow|random|max_drift|full|none");
  add_flag_override(cmd, o, "--weight", "fusion.weight", "confidence|average|batch_entropy|sample_entropy");
  add_flag_override(cmd, o, "--normalization", "fusion.normalization", "lse|softmax|z_score|l2|min_max");
  add_flag_override(cmd, o, "--force-lambda", "fusion.force_lambda", "fixed interpolation weight (debug)");
  add_switch_override(cmd, o, "--no-backward", "adapt.no_backward", "never update the adapter");
  add_switch_override(cmd, o, "--disable-align", "adapt.disable_align", "drop the alignment loss");
  add_switch_override(cmd, o, "--disable-ent", "adapt.disable_ent", "drop the entropy loss");
  add_switch_override(cmd, o, "--disable-reset", "adapt.disable_reset", "never reset");
}

RunConfig resolve(const CommonOptions& o) {
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const std::string& s : o.set) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  overrides.insert(overrides.end(), o.flags.begin(), o.flags.end());
  if (!o.seeds.empty()) {
    std::string list = "[";
    for (std::size_t i = 0; i < o.seeds.size(); ++i) list += (i ? "," : "") + std::to_string(o.seeds[i]);
    overrides.emplace_back("seeds", list + "]");
  }
  return load_config(o.config, overrides);
}

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  return os;
}

std::string suffix(const RunConfig& c, std::uint64_t seed) {
  return c.seeds.size() > 1 ? "_" + std::to_string(seed) : "";
}

void write_run(const fs::path& dir, const RunConfig& config, const RunReport& r) {
  const std::string sfx = suffix(config, r.seed);
  {
    auto os = open_out(dir / ("steps" + sfx + ".csv"));
    write_steps_csv(os, r);
  }
  {
    auto os = open_out(dir / ("step_details" + sfx + ".csv"));
    write_step_details_csv(os, r);
  }
  {
    auto os = open_out(dir / ("events" + sfx + ".jsonl"));
    write_events_jsonl(os, r);
  }
  {
    auto os = open_out(dir / ("summary" + sfx + ".json"));
    os << summary_json(r) << '\n';
  }
  if (config.keep_samples) {
    auto os = open_out(dir / ("samples" + sfx + ".csv"));
    write_samples_csv(os, r);
  }
}

void print_run(const RunReport& r) {
  std::printf("seed %llu: %zu steps, acc fused %.4f vlm %.4f ada %.4f, %zu resets", static_cast<unsigned long long>(r.seed),
              r.steps.size(), r.mean_acc_fused, r.mean_acc_vlm, r.mean_acc_ada, r.resets.size());
  if (!r.detection.transitions.empty()) {
    std::printf(", detected %zu/%zu, false positives %zu", r.detection.detected, r.detection.transitions.size(),
                r.detection.false_positives);
  }
  if (!r.forgetting.empty()) std::printf(", forgetting %.4f", r.mean_forgetting);
  std::printf("\n");
}

int cmd_pretrain(const CommonOptions& o, bool text_format) {
  const RunConfig config = resolve(o);
  const fs::path dir = prepare_out(o.out);
  for (std::uint64_t seed : config.seeds) {
    const Artifacts a = prepare_artifacts(config, seed);
    const std::string sfx = suffix(config, seed);
    const fs::path ada = dir / ("adapter" + sfx + (text_format ? ".txt" : ".bin"));
    adapter::save_params(ada.string(), a.adapter,
                         text_format ? adapter::ParamFormat::text : adapter::ParamFormat::binary);
    const fs::path gen = dir / ("generalist" + sfx + ".txt");
    generalist::save_classifier(gen.string(), *a.generalist);
    std::printf("seed %llu: source holdout accuracy %.4f, final pretrain loss %.4f -> %s, %s\n",
                static_cast<unsigned long long>(seed), a.source_holdout_accuracy, a.pretrain_loss,
                ada.string().c_str(), gen.string().c_str());
  }
  return 0;
}

int cmd_run(const CommonOptions& o) {
  const RunConfig config = resolve(o);
  const fs::path dir = prepare_out(o.out);
  for (const RunReport& r : run_seeds(config)) {
    write_run(dir, config, r);
    print_run(r);
  }
  return 0;
}

int cmd_ablate(const CommonOptions& o) {
  const RunConfig config = resolve(o);
  const fs::path dir = prepare_out(o.out);
  const AblationGrid grid = run_ablation_grid(config);
  write_ablation_table(std::cout, grid);
  auto os = open_out(dir / "ablation.csv");
  write_ablation_csv(os, grid);
  return 0;
}

int cmd_sweep(const CommonOptions& o, const std::string& param, const std::vector<std::string>& values) {
  const RunConfig config = resolve(o);
  const fs::path dir = prepare_out(o.out);
  const auto points = run_sweep(config, param, values);
  write_sweep_csv(std::cout, param, points);
  auto os = open_out(dir / ("sweep_" + param + ".csv"));
  write_sweep_csv(os, param, points);
  return 0;
}

// Writes the stream an episode would see plus both models' logits on it
// (adapter frozen at its source state), ready for replay.
int cmd_gen_stream(const CommonOptions& o) {
  const RunConfig config = resolve(o);
  const fs::path dir = prepare_out(o.out);
  for (std::uint64_t seed : config.seeds) {
    const Artifacts a = prepare_artifacts(config, seed);
    stream::Stream s(a.base, episode_schedule(config, seed));
    const std::string sfx = suffix(config, seed);
    auto features = open_out(dir / ("stream" + sfx + ".csv"));
    features << "sample_id,step,domain_id,label";
    for (int j = 0; j < config.model.arch.input_dim; ++j) features << ",x" << j;
    features << '\n';
    std::vector<external::LogitRecord> vlm;
    std::vector<external::LogitRecord> ada;
    long step = 0;
    while (auto batch = s.next()) {
      ++step;
      const Matrix zv = a.generalist->predict(batch->features);
      const Matrix za = adapter::forward(a.adapter, batch->features).logits;
      for (Eigen::Index i = 0; i < batch->features.rows(); ++i) {
        const std::string id = "s" + std::to_string(step) + "_" + std::to_string(i);
        const int y = batch->labels[static_cast<std::size_t>(i)];
        features << id << ',' << step << ',' << batch->domain_id << ',' << y;
        for (Eigen::Index j = 0; j < batch->features.cols(); ++j) features << ',' << fmt9(batch->features(i, j));
        features << '\n';
        vlm.push_back({id, y, std::vector<double>(zv.row(i).begin(), zv.row(i).end())});
        ada.push_back({id, y, std::vector<double>(za.row(i).begin(), za.row(i).end())});
      }
    }
    external::write_external_logits((dir / ("vlm_logits" + sfx + ".csv")).string(), vlm);
    external::write_external_logits((dir / ("ada_logits" + sfx + ".csv")).string(), ada);
    std::printf("seed %llu: %ld batches, transitions after steps", static_cast<unsigned long long>(seed), step);
    for (long t : s.transitions()) std::printf(" %ld", t);
    std::printf("\n");
  }
  return 0;
}

int cmd_analyze(const CommonOptions& o, int bins) {
  RunConfig config = resolve(o);
  config.keep_samples = true;
  const fs::path dir = prepare_out(o.out);
  for (const RunReport& r : run_seeds(config)) {
    const std::string sfx = suffix(config, r.seed);
    const CorrelationReport corr = analyze_correlations(r.samples);
    {
      auto os = open_out(dir / ("correlations" + sfx + ".csv"));
      write_correlations_csv(os, corr);
    }
    {
      auto os = open_out(dir / ("scatter" + sfx + ".csv"));
      write_scatter_csv(os, r.samples);
    }
    {
      auto os = open_out(dir / ("entropy_hist" + sfx + ".csv"));
      write_histogram_csv(os, entropy_histogram(r.samples, bins, std::log(config.model.arch.num_classes)));
    }
    std::printf("seed %llu quadrants:", static_cast<unsigned long long>(r.seed));
    for (std::size_t q = 0; q < 4; ++q) {
      std::printf(" %s=%zu", std::string(to_string(static_cast<Quadrant>(q))).c_str(), corr.counts[q]);
    }
    std::printf("\n");
    for (const std::string& note : corr.notes) std::printf("  note: %s\n", note.c_str());
    write_correlations_csv(std::cout, corr);
  }
  return 0;
}

int cmd_replay(CommonOptions o, const std::string& vlm, const std::string& ada) {
  if (vlm.empty() && ada.empty()) throw ConfigError("replay needs --vlm-logits and/or --ada-logits");
  if (!vlm.empty()) o.flags.emplace_back("replay.vlm_logits", "\"" + vlm + "\"");
  if (!ada.empty()) o.flags.emplace_back("replay.ada_logits", "\"" + ada + "\"");
  return cmd_run(o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online test-time adaptation with a frozen generalist and a resettable adapter"};
  app.require_subcommand(1);
  app.footer(std::string("\nConfig keys (TOML):\n") + config_reference() + "\n" + kLogitsGrammar);

  CommonOptions common;
  bool text_format = false;
  auto* pretrain = app.add_subcommand("pretrain", "build and save the adapter and generalist artifacts");
  add_common(pretrain, common);
  pretrain->add_flag("--text", text_format, "save the adapter in the text format");

  auto* run = app.add_subcommand("run", "run one adaptation episode per seed");
  add_common(run, common);
  add_run_flags(run, common);

  auto* ablate = app.add_subcommand("ablate", "entropy x alignment x reset grid over the seed list");
  add_common(ablate, common);
  add_run_flags(ablate, common);

  std::string param;
  std::vector<std::string> values;
  auto* sweep = app.add_subcommand("sweep", "sweep one parameter over the seed list");
  add_common(sweep, common);
  add_run_flags(sweep, common);
  sweep->add_option("--param", param, "tau|interval|alpha|strategy|weight|normalization")->required();
  sweep->add_option("--values", values, "values to try")->required()->delimiter(',');

  auto* gen = app.add_subcommand("gen-stream", "write the stream and source-model logits for replay");
  add_common(gen, common);

  int bins = 20;
  auto* analyze = app.add_subcommand("analyze", "per-sample entropy/confidence correlation analysis");
  add_common(analyze, common);
  add_run_flags(analyze, common);
  analyze->add_option("--bins", bins, "entropy histogram bins")->check(CLI::PositiveNumber);

  std::string vlm_logits;
  std::string ada_logits;
  auto* replay = app.add_subcommand("replay", "fusion over external logits for either or both models");
  add_common(replay, common);
  add_run_flags(replay, common);
  replay->add_option("--vlm-logits", vlm_logits, "generalist logits file")->check(CLI::ExistingFile);
  replay->add_option("--ada-logits", ada_logits, "adapter logits file (disables training)")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (pretrain->parsed()) return cmd_pretrain(common, text_format);
    if (run->parsed()) return cmd_run(common);
    if (ablate->parsed()) return cmd_ablate(common);
    if (sweep->parsed()) return cmd_sweep(common, param, values);
    if (gen->parsed()) return cmd_gen_stream(common);
    if (analyze->parsed()) return cmd_analyze(common, bins);
    if (replay->parsed()) return cmd_replay(common, vlm_logits, ada_logits);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kExitConfig;
  } catch (const InvalidInput& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericalFailure& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const PretrainFailure& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
