#pragma once

// Gradient drift monitoring and strategic reset.
//
// After every optimizer step the monitor compares the latest parameter
// displacement with the displacement accumulated since the anchor. A cosine
// (the gradient drift indicator) below the threshold triggers a restore of a
// selected subset of parameters to their source values. The anchor is
// refreshed every `interval` steps, after any reset of that step.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace sail::drift {

enum class ResetStrategy { deep, shallow, random, max_drift, full, none };

ResetStrategy parse_strategy(std::string_view name);
std::string_view to_string(ResetStrategy s);

/// Norm below which a displacement counts as no movement.
inline constexpr double kZeroNorm = 1e-12;

struct ResetConfig {
  double threshold = 0.0;  // tau, cosine in [-1, 1]
  int interval = 10;       // s, steps between anchor refreshes
  double alpha = 50.0;     // percent of parameters restored
  ResetStrategy strategy = ResetStrategy::deep;
  std::uint64_t seed = 2022;  // random strategy only

  void validate() const;
};

struct Displacements {
  std::vector<double> step;    // theta_t - theta_prev
  std::vector<double> anchor;  // theta_prev - theta_anchor
};

Displacements displacements(std::span<const double> current, std::span<const double> previous,
                            std::span<const double> anchor);

/// Cosine of the two displacements in [-1, 1]; +1 when either is (near) zero.
double gdi(std::span<const double> step, std::span<const double> anchor);

/// Number of parameters restored for `alpha` percent of `total`: ceil, and at
/// least one whenever alpha > 0.
std::size_t reset_count(double alpha, std::size_t total);

/// Indices restored by a reset, ascending. `depth_rank[i]` orders parameters
/// from shallow (small) to deep (large). `rng` is consumed only by the random
/// strategy, which draws one uniform key per parameter and restores the
/// largest keys.
std::vector<std::size_t> reset_selection(std::span<const double> current,
                                         std::span<const double> source, double alpha,
                                         ResetStrategy strategy,
                                         std::span<const std::size_t> depth_rank,
                                         std::mt19937_64* rng);

/// Copy of `current` with the selected entries replaced by `source`.
std::vector<double> strategic_reset(std::span<const double> current, std::span<const double> source,
                                    double alpha, ResetStrategy strategy,
                                    std::span<const std::size_t> depth_rank, std::mt19937_64* rng);

struct ResetEvent {
  long step = 0;  // 1-based count of completed adaptation steps
  double gdi = 0.0;
  std::size_t num_params_reset = 0;
  ResetStrategy strategy = ResetStrategy::deep;
};

struct Observation {
  double gdi = 1.0;
  std::optional<ResetEvent> reset;
  bool anchor_updated = false;
};

/// Per-run anchor state. Not shareable between runs; copyable as a snapshot.
class DriftMonitor {
 public:
  /// `source` is the pretrained trainable vector; it is both the reset target
  /// and the initial anchor and previous parameters.
  DriftMonitor(std::vector<double> source, std::vector<std::size_t> depth_rank, ResetConfig config);

  /// Processes the parameters produced by one adaptation step. On a reset the
  /// restored entries are written back into `params`.
  Observation observe(std::span<double> params);

  long step() const { return step_; }
  const std::vector<double>& anchor() const { return anchor_; }
  const std::vector<double>& previous() const { return previous_; }
  const std::vector<double>& source() const { return source_; }
  const ResetConfig& config() const { return config_; }

 private:
  std::vector<double> source_;
  std::vector<std::size_t> depth_rank_;
  ResetConfig config_;
  std::vector<double> anchor_;
  std::vector<double> previous_;
  long step_ = 0;
  std::mt19937_64 rng_;
};

}  // namespace sail::drift
