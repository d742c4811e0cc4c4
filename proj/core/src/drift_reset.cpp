#include "sail/drift_reset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sail/error.hpp"

namespace sail::drift {

ResetStrategy parse_strategy(std::string_view name) {
  if (name == "deep") return ResetStrategy::deep;
  if (name == "shallow") return ResetStrategy::shallow;
  if (name == "random") return ResetStrategy::random;
  if (name == "max-drift") return ResetStrategy::max_drift;
  if (name == "full") return ResetStrategy::full;
  if (name == "none") return ResetStrategy::none;
  throw InvalidInput("unknown reset strategy '" + std::string(name) + "'");
}

std::string_view to_string(ResetStrategy s) {
  switch (s) {
    case ResetStrategy::deep: return "deep";
    case ResetStrategy::shallow: return "shallow";
    case ResetStrategy::random: return "random";
    case ResetStrategy::max_drift: return "max-drift";
    case ResetStrategy::full: return "full";
    case ResetStrategy::none: return "none";
  }
  return "?";
}

void ResetConfig::validate() const {
  if (!(threshold >= -1.0 && threshold <= 1.0)) throw InvalidInput("reset threshold must be in [-1, 1]");
  if (interval < 1) throw InvalidInput("anchor interval must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 100.0)) throw InvalidInput("reset alpha must be in [0, 100]");
}

Displacements displacements(std::span<const double> current, std::span<const double> previous,
                            std::span<const double> anchor) {
  if (current.size() != previous.size() || previous.size() != anchor.size()) {
    throw InvalidInput("displacements: parameter vectors differ in length");
  }
  Displacements d;
  d.step.resize(current.size());
  d.anchor.resize(current.size());
  for (std::size_t i = 0; i < current.size(); ++i) {
    d.step[i] = current[i] - previous[i];
    d.anchor[i] = previous[i] - anchor[i];
  }
  return d;
}

double gdi(std::span<const double> step, std::span<const double> anchor) {
  if (step.size() != anchor.size()) throw InvalidInput("gdi: vectors differ in length");
  double dot = 0.0;
  double ns = 0.0;
  double na = 0.0;
  for (std::size_t i = 0; i < step.size(); ++i) {
    dot += step[i] * anchor[i];
    ns += step[i] * step[i];
    na += anchor[i] * anchor[i];
  }
  ns = std::sqrt(ns);
  na = std::sqrt(na);
  if (ns < kZeroNorm || na < kZeroNorm) return 1.0;
  return std::clamp(dot / (ns * na), -1.0, 1.0);
}

std::size_t reset_count(double alpha, std::size_t total) {
  if (alpha <= 0.0 || total == 0) return 0;
  // Round away representation noise (e.g. 40% of 10 must be exactly 4).
  const double exact = alpha * static_cast<double>(total) / 100.0;
  const double rounded = std::round(exact);
  const double count = std::abs(exact - rounded) < 1e-9 ? rounded : std::ceil(exact);
  return std::clamp<std::size_t>(static_cast<std::size_t>(count), 1, total);
}

std::vector<std::size_t> reset_selection(std::span<const double> current,
                                         std::span<const double> source, double alpha,
                                         ResetStrategy strategy,
                                         std::span<const std::size_t> depth_rank,
                                         std::mt19937_64* rng) {
  const std::size_t total = current.size();
  if (source.size() != total || depth_rank.size() != total) {
    throw InvalidInput("strategic_reset: parameter vectors differ in length");
  }
  if (!(alpha >= 0.0 && alpha <= 100.0)) throw InvalidInput("strategic_reset: alpha must be in [0, 100]");

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t count = reset_count(alpha, total);

  switch (strategy) {
    case ResetStrategy::none:
      return {};
    case ResetStrategy::full:
      return order;
    case ResetStrategy::deep:
      std::sort(order.begin(), order.end(),
                [&](std::size_t a, std::size_t b) { return depth_rank[a] > depth_rank[b]; });
      break;
    case ResetStrategy::shallow:
      std::sort(order.begin(), order.end(),
                [&](std::size_t a, std::size_t b) { return depth_rank[a] < depth_rank[b]; });
      break;
    case ResetStrategy::max_drift:
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(current[a] - source[a]) > std::abs(current[b] - source[b]);
      });
      break;
    case ResetStrategy::random: {
      if (!rng) throw InvalidInput("strategic_reset: random strategy needs a generator");
      std::uniform_real_distribution<double> uniform(0.0, 1.0);
      std::vector<double> key(total);
      for (double& k : key) k = uniform(*rng);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
      break;
    }
  }
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<double> strategic_reset(std::span<const double> current, std::span<const double> source,
                                    double alpha, ResetStrategy strategy,
                                    std::span<const std::size_t> depth_rank, std::mt19937_64* rng) {
  std::vector<double> out(current.begin(), current.end());
  for (std::size_t i : reset_selection(current, source, alpha, strategy, depth_rank, rng)) {
    out[i] = source[i];
  }
  return out;
}

DriftMonitor::DriftMonitor(std::vector<double> source, std::vector<std::size_t> depth_rank,
                           ResetConfig config)
    : source_(std::move(source)),
      depth_rank_(std::move(depth_rank)),
      config_(config),
      anchor_(source_),
      previous_(source_),
      rng_(config.seed) {
  config_.validate();
  if (depth_rank_.size() != source_.size()) throw InvalidInput("drift monitor: depth rank length mismatch");
}

Observation DriftMonitor::observe(std::span<double> params) {
  if (params.size() != source_.size()) throw InvalidInput("drift monitor: parameter length mismatch");
  ++step_;
  Observation obs;
  const Displacements d = displacements(params, previous_, anchor_);
  obs.gdi = gdi(d.step, d.anchor);

  if (obs.gdi < config_.threshold && config_.strategy != ResetStrategy::none) {
    const auto selected =
        reset_selection(params, source_, config_.alpha, config_.strategy, depth_rank_, &rng_);
    for (std::size_t i : selected) params[i] = source_[i];
    obs.reset = ResetEvent{step_, obs.gdi, selected.size(), config_.strategy};
  }
  if (step_ % config_.interval == 0) {
    anchor_.assign(params.begin(), params.end());
    obs.anchor_updated = true;
  }
  previous_.assign(params.begin(), params.end());
  return obs;
}

}  // namespace sail::drift
