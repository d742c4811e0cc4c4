#pragma once
// Online adaptation episodes: one pass over a drifting stream, predicting each
// batch before the adapter takes its single update on it.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sail/adapter.hpp"
#include "sail/config.hpp"
#include "sail/drift_reset.hpp"
#include "sail/generalist.hpp"
#include "sail/report.hpp"
#include "sail/streamgen.hpp"

namespace sail::harness {

/// Frozen inputs of an episode. Immutable once built; shared read-only by
/// concurrent episodes of the same seed.
struct Artifacts {
  stream::Base base;
  adapter::AdapterParams adapter;
  std::vector<double> source_snapshot;
  std::optional<generalist::PrototypeClassifier> generalist;
  double source_holdout_accuracy = 0.0;
  double pretrain_loss = 0.0;
};

/// Seed used for one named sub-stream of randomness of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

/// Stream schedule an episode of `seed` consumes.
stream::StreamSchedule episode_schedule(const RunConfig& config, std::uint64_t seed);

/// Builds the class means, pretrains the adapter on the source domain and fits
/// the generalist on the broad domains, or loads them from the configured
/// paths.
Artifacts prepare_artifacts(const RunConfig& config, std::uint64_t seed);

/// Passed to the observer after every step's drift check.
struct StepView {
  long step = 0;
  const StepRecord* record = nullptr;
  const drift::Observation* observation = nullptr;  // null without a trainable adapter
  const drift::DriftMonitor* monitor = nullptr;
  std::span<const double> params;  // trainable vector after any reset
};

using StepObserver = std::function<void(const StepView&)>;

RunReport run_episode(const RunConfig& config, std::uint64_t seed, const Artifacts& artifacts,
                      const StepObserver& observer = {});

/// Prepares artifacts first when the config needs them.
RunReport run_episode(const RunConfig& config, std::uint64_t seed);

/// Runs every configured seed, concurrently up to SAIL_STREAM_THREADS
/// episodes. Reports come back in seed order.
std::vector<RunReport> run_seeds(const RunConfig& config);

/// Concurrency cap from SAIL_STREAM_THREADS (default: hardware threads).
unsigned stream_threads();

/// Runs `jobs` tasks on up to stream_threads() workers; rethrows the first
/// failure by index once all have finished.
void parallel_for(std::size_t jobs, const std::function<void(std::size_t)>& task);

/// FNV-1a over the bytes of the vector.
std::uint64_t hash_params(std::span<const double> params);

}  // namespace sail::harness
