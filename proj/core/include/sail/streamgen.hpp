#pragma once

// Deterministic synthetic continual-shift streams. Classes are Gaussian
// clusters; a domain applies a seeded rotation, a feature scale, a mean shift
// and severity-controlled additive noise:
//   x = scale * R (mu_y + e1) + shift + sigma(severity) * e2
// Schedules concatenate domains into a stream of batches with known
// transition steps.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sail/types.hpp"

namespace sail::stream {

/// Additive noise standard deviation for severities 1..5.
inline constexpr std::array<double, 5> kSeverityNoise{0.1, 0.2, 0.4, 0.8, 1.2};

/// Radius of the sphere the class means are drawn on.
inline constexpr double kMeanRadius = 4.0;

/// Severity 0 is a noiseless test mode; 1..5 index kSeverityNoise.
double severity_noise(int severity);

struct Base {
  int num_classes = 0;
  int input_dim = 0;
  Matrix means;  // num_classes x input_dim
};

Base make_base(int num_classes, int input_dim, std::uint64_t seed);

struct DomainSpec {
  std::string id;
  std::uint64_t rotation_seed = 0;
  /// Spectral radius of the skew generator of the Cayley rotation; 0 is the
  /// identity, the largest plane angle is 2 * atan(|rotation|). A negative
  /// value gives the inverse of the positive one.
  double rotation = 0.0;
  std::vector<double> mean_shift;  // empty means zero
  int severity = 1;
  double scale = 1.0;

  void validate(int input_dim) const;
};

/// Orthogonal d x d matrix from the Cayley transform of a seeded skew matrix.
Matrix rotation_matrix(int dim, std::uint64_t seed, double strength);

/// Random direction of the given length, seeded.
std::vector<double> random_shift(int dim, double magnitude, std::uint64_t seed);

struct Batch {
  Matrix features;
  std::vector<int> labels;
  std::string domain_id;
};

/// A domain with its rotation precomputed.
class DomainSampler {
 public:
  DomainSampler(const Base& base, DomainSpec spec);

  /// Labels are balanced by a shuffled round-robin; a positive `label_skew`
  /// first assigns that fraction of the batch to class 0.
  Batch sample(int n, std::mt19937_64& rng, double label_skew = 0.0) const;

  const DomainSpec& spec() const { return spec_; }
  const Matrix& rotation() const { return rotation_; }

 private:
  Base base_;
  DomainSpec spec_;
  Matrix rotation_;
};

Batch sample_batch(const Base& base, const DomainSpec& domain, int n, std::mt19937_64& rng);

/// `per_domain` labeled samples from each domain; domain index = position in
/// `domains`.
LabeledSet sample_dataset(const Base& base, std::span<const DomainSpec> domains, int per_domain,
                          std::uint64_t seed);

struct Segment {
  DomainSpec domain;
  int batch_count = 1;
};

struct StreamSchedule {
  std::vector<Segment> segments;
  int batch_size = 64;
  std::uint64_t seed = 2022;
  double label_skew = 0.0;

  void validate(int input_dim) const;
  std::size_t total_batches() const;
};

/// Prefix sums of segment lengths, excluding the final one: a value t means
/// batch t (1-based) is the last of one segment and t + 1 the first of the
/// next.
std::vector<long> transition_steps(const StreamSchedule& schedule);

class Stream {
 public:
  Stream(const Base& base, StreamSchedule schedule);

  std::optional<Batch> next();

  const std::vector<long>& transitions() const { return transitions_; }
  const StreamSchedule& schedule() const { return schedule_; }
  /// Segment of the most recently emitted batch.
  std::size_t segment_index() const { return segment_; }

 private:
  StreamSchedule schedule_;
  std::vector<DomainSampler> samplers_;
  std::vector<long> transitions_;
  std::mt19937_64 rng_;
  std::size_t segment_ = 0;
  int emitted_in_segment_ = 0;
};

// Preset schedules. Domain geometry is fixed by the preset; `seed` only drives
// sampling.

/// Fixed rotation, severity sweep 1..5, one segment per severity.
StreamSchedule corruption_preset(int input_dim, int batches_per_domain, int batch_size,
                                 std::uint64_t seed);
/// Style-like shifts: distinct rotations and mean shifts at severity 1.
StreamSchedule domain_generalization_preset(int input_dim, int batches_per_domain, int batch_size,
                                            std::uint64_t seed);
/// A, B, A where B is the inverse rotation of A; B runs 3 batches longer.
StreamSchedule recurring_preset(int input_dim, int batches_per_domain, int batch_size,
                                std::uint64_t seed);
/// Six domains alternating between a rotation and its inverse, five abrupt
/// transitions, segment lengths staggered around `batches_per_domain`.
StreamSchedule abrupt_preset(int input_dim, int batches_per_domain, int batch_size,
                             std::uint64_t seed);

StreamSchedule preset_by_name(const std::string& name, int input_dim, int batches_per_domain,
                              int batch_size, std::uint64_t seed);

/// The labeled source domain the adapter is pretrained on.
DomainSpec source_domain();

struct BroadOptions {
  int count = 5;           // including the source
  double rotation = 0.8;
  double shift = 0.5;
};

/// Domains the generalist's prototypes are averaged over: the source plus
/// count - 1 rotated, shifted domains at severities 1..3.
std::vector<DomainSpec> broad_domains(int input_dim, const BroadOptions& options = {});

}  // namespace sail::stream
