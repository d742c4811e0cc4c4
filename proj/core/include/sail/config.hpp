#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sail/adapter.hpp"
#include "sail/drift_reset.hpp"
#include "sail/fusion.hpp"
#include "sail/generalist.hpp"
#include "sail/objectives.hpp"
#include "sail/streamgen.hpp"
#include "sail/toml_lite.hpp"

namespace sail::harness {

enum class ModelSource { synthetic, replay };

struct ModelConfig {
  adapter::Architecture arch;
  int pretrain_epochs = 30;
  double pretrain_lr = 0.05;
  int pretrain_samples = 4000;
  int pretrain_batch = 64;
  generalist::GeneralistOptions generalist;
  int broad_samples_per_domain = 600;
  stream::BroadOptions broad;
  /// Optional pre-built artifacts; when empty they are rebuilt from the seed.
  std::string adapter_path;
  std::string generalist_path;
};

struct ReplayConfig {
  ModelSource vlm = ModelSource::synthetic;
  ModelSource ada = ModelSource::synthetic;
  std::string vlm_logits;
  std::string ada_logits;
};

struct RunConfig {
  ModelConfig model;

  /// Either a preset name or explicit segments; the schedule's seed is
  /// replaced by the episode seed.
  std::string preset = "corruption";
  int batches_per_domain = 20;
  stream::StreamSchedule schedule;

  objectives::LossHyperparams loss;
  fusion::WeightStrategy weight = fusion::WeightStrategy::confidence;
  fusion::NormalizationStrategy normalization = fusion::NormalizationStrategy::lse;
  drift::ResetConfig reset;
  int detection_window = 5;
  double lr = 1e-3;
  std::vector<std::uint64_t> seeds{2022, 2023, 2024};

  bool no_backward = false;
  bool disable_align = false;
  bool disable_ent = false;
  bool disable_reset = false;
  std::optional<double> force_lambda;
  bool keep_samples = false;

  ReplayConfig replay;

  /// Throws ConfigError describing the first problem found.
  void validate() const;

  /// Schedule for one episode seed.
  stream::StreamSchedule schedule_for(std::uint64_t seed) const;

  bool adapts() const;
};

RunConfig default_config();

/// Builds a config from a parsed document on top of the defaults. Unknown
/// keys are a ConfigError.
RunConfig config_from_document(const toml::Document& doc);

/// Parses `path` (empty for defaults only) and applies `key=value`
/// overrides, e.g. {"reset.alpha", "25"}.
RunConfig load_config(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// Human-readable description of every accepted key.
std::string config_reference();

}  // namespace sail::harness
