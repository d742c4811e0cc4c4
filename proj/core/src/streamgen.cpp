#include "sail/streamgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sail/error.hpp"

namespace sail::stream {

double severity_noise(int severity) {
  if (severity == 0) return 0.0;
  if (severity < 1 || severity > 5) throw InvalidInput("severity must be in 1..5 (0 for clean)");
  return kSeverityNoise[static_cast<std::size_t>(severity - 1)];
}

Base make_base(int num_classes, int input_dim, std::uint64_t seed) {
  if (num_classes < 2 || input_dim < 2) throw InvalidInput("make_base: need K >= 2 and d >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Base base{num_classes, input_dim, Matrix(num_classes, input_dim)};
  for (int k = 0; k < num_classes; ++k) {
    for (int j = 0; j < input_dim; ++j) base.means(k, j) = normal(rng);
    base.means.row(k) *= kMeanRadius / base.means.row(k).norm();
  }
  return base;
}

void DomainSpec::validate(int input_dim) const {
  if (severity < 0 || severity > 5) throw InvalidInput("domain '" + id + "': severity must be in 1..5");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidInput("domain '" + id + "': scale must be positive");
  if (!std::isfinite(rotation)) throw InvalidInput("domain '" + id + "': rotation must be finite");
  if (!mean_shift.empty() && static_cast<int>(mean_shift.size()) != input_dim) {
    throw InvalidInput("domain '" + id + "': mean_shift length differs from input_dim");
  }
}

Matrix rotation_matrix(int dim, std::uint64_t seed, double strength) {
  const Matrix identity = Matrix::Identity(dim, dim);
  if (strength == 0.0) return identity;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(dim, dim);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  Matrix skew = 0.5 * (g - g.transpose());
  const double radius = Eigen::JacobiSVD<Matrix>(skew).singularValues()(0);
  skew *= strength / radius;
  // Cayley: R = (I - S)^-1 (I + S)
  return (identity - skew).partialPivLu().solve(identity + skew);
}

std::vector<double> random_shift(int dim, double magnitude, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm = 0.0;
  for (double& x : v) {
    x = normal(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x *= magnitude / norm;
  return v;
}

DomainSampler::DomainSampler(const Base& base, DomainSpec spec)
    : base_(base), spec_(std::move(spec)) {
  spec_.validate(base.input_dim);
  rotation_ = rotation_matrix(base.input_dim, spec_.rotation_seed, spec_.rotation);
}

Batch DomainSampler::sample(int n, std::mt19937_64& rng, double label_skew) const {
  if (n < 2) throw InvalidInput("sample_batch: batch size must be >= 2");
  const int k = base_.num_classes;
  const int d = base_.input_dim;
  Batch batch;
  batch.domain_id = spec_.id;
  batch.labels.resize(static_cast<std::size_t>(n));

  const int skewed = std::clamp(static_cast<int>(std::floor(label_skew * n)), 0, n);
  for (int i = 0; i < n; ++i) {
    batch.labels[static_cast<std::size_t>(i)] = i < skewed ? 0 : (i - skewed) % k;
  }
  std::shuffle(batch.labels.begin(), batch.labels.end(), rng);

  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma = severity_noise(spec_.severity);
  Matrix clean(n, d);
  Matrix noise(n, d);
  for (int i = 0; i < n; ++i) {
    const int y = batch.labels[static_cast<std::size_t>(i)];
    for (int j = 0; j < d; ++j) clean(i, j) = base_.means(y, j) + normal(rng);
    for (int j = 0; j < d; ++j) noise(i, j) = normal(rng);
  }
  batch.features = spec_.scale * clean * rotation_.transpose() + sigma * noise;
  if (!spec_.mean_shift.empty()) {
    const Eigen::Map<const Eigen::RowVectorXd> shift(spec_.mean_shift.data(), d);
    batch.features.rowwise() += shift;
  }
  return batch;
}

Batch sample_batch(const Base& base, const DomainSpec& domain, int n, std::mt19937_64& rng) {
  return DomainSampler(base, domain).sample(n, rng);
}

LabeledSet sample_dataset(const Base& base, std::span<const DomainSpec> domains, int per_domain,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LabeledSet out;
  out.features.resize(static_cast<Eigen::Index>(domains.size()) * per_domain, base.input_dim);
  Eigen::Index row = 0;
  for (std::size_t di = 0; di < domains.size(); ++di) {
    const DomainSampler sampler(base, domains[di]);
    const Batch b = sampler.sample(per_domain, rng);
    out.features.middleRows(row, per_domain) = b.features;
    row += per_domain;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.domains.insert(out.domains.end(), static_cast<std::size_t>(per_domain), static_cast<int>(di));
  }
  return out;
}

void StreamSchedule::validate(int input_dim) const {
  if (segments.empty()) throw InvalidInput("stream schedule has no segments");
  if (batch_size < 2) throw InvalidInput("stream batch_size must be >= 2");
  if (!(label_skew >= 0.0 && label_skew <= 1.0)) throw InvalidInput("label_skew must be in [0, 1]");
  for (const Segment& s : segments) {
    if (s.batch_count < 1) throw InvalidInput("segment '" + s.domain.id + "' needs batch_count >= 1");
    s.domain.validate(input_dim);
  }
}

std::size_t StreamSchedule::total_batches() const {
  std::size_t total = 0;
  for (const Segment& s : segments) total += static_cast<std::size_t>(s.batch_count);
  return total;
}

std::vector<long> transition_steps(const StreamSchedule& schedule) {
  std::vector<long> out;
  long acc = 0;
  for (std::size_t i = 0; i + 1 < schedule.segments.size(); ++i) {
    acc += schedule.segments[i].batch_count;
    out.push_back(acc);
  }
  return out;
}

Stream::Stream(const Base& base, StreamSchedule schedule)
    : schedule_(std::move(schedule)), rng_(schedule_.seed) {
  schedule_.validate(base.input_dim);
  samplers_.reserve(schedule_.segments.size());
  for (const Segment& s : schedule_.segments) samplers_.emplace_back(base, s.domain);
  transitions_ = transition_steps(schedule_);
}

std::optional<Batch> Stream::next() {
  while (segment_ < schedule_.segments.size() &&
         emitted_in_segment_ >= schedule_.segments[segment_].batch_count) {
    if (segment_ + 1 == schedule_.segments.size()) return std::nullopt;
    ++segment_;
    emitted_in_segment_ = 0;
  }
  if (segment_ >= schedule_.segments.size()) return std::nullopt;
  ++emitted_in_segment_;
  return samplers_[segment_].sample(schedule_.batch_size, rng_, schedule_.label_skew);
}

namespace {

DomainSpec make_domain(std::string id, int dim, std::uint64_t geometry_seed, double rotation,
                       double shift, int severity, double scale = 1.0) {
  DomainSpec d;
  d.id = std::move(id);
  d.rotation_seed = geometry_seed;
  d.rotation = rotation;
  if (shift > 0.0) d.mean_shift = random_shift(dim, shift, geometry_seed + 7919);
  d.severity = severity;
  d.scale = scale;
  return d;
}

StreamSchedule assemble(std::vector<DomainSpec> domains, int batches_per_domain, int batch_size,
                        std::uint64_t seed) {
  StreamSchedule s;
  s.batch_size = batch_size;
  s.seed = seed;
  for (auto& d : domains) s.segments.push_back({std::move(d), batches_per_domain});
  return s;
}

}  // namespace

StreamSchedule corruption_preset(int dim, int batches_per_domain, int batch_size, std::uint64_t seed) {
  std::vector<DomainSpec> domains;
  for (int sev = 1; sev <= 5; ++sev) {
    domains.push_back(make_domain("corrupt-s" + std::to_string(sev), dim, 101, 0.8, 0.0, sev));
  }
  return assemble(std::move(domains), batches_per_domain, batch_size, seed);
}

StreamSchedule domain_generalization_preset(int dim, int batches_per_domain, int batch_size,
                                            std::uint64_t seed) {
  std::vector<DomainSpec> domains;
  const char* names[] = {"style-a", "style-b", "style-c", "style-d"};
  for (int i = 0; i < 4; ++i) {
    domains.push_back(make_domain(names[i], dim, 301 + static_cast<std::uint64_t>(i), 0.3, 1.5, 1, 1.0 + 0.2 * i));
  }
  return assemble(std::move(domains), batches_per_domain, batch_size, seed);
}

StreamSchedule recurring_preset(int dim, int batches_per_domain, int batch_size, std::uint64_t seed) {
  const DomainSpec a = make_domain("A", dim, 501, 0.8, 0.0, 1);
  const DomainSpec b = make_domain("B", dim, 501, -0.8, 0.0, 1);
  StreamSchedule s = assemble({a, b, a}, batches_per_domain, batch_size, seed);
  s.segments[1].batch_count += 3;
  return s;
}

StreamSchedule abrupt_preset(int dim, int batches_per_domain, int batch_size, std::uint64_t seed) {
  // Alternating rotation direction; staggered lengths vary the phase of each
  // transition against the anchor refresh.
  constexpr int kStagger[] = {3, -3, 6, -1, 2, 1};
  std::vector<DomainSpec> domains;
  for (int i = 0; i < 6; ++i) {
    domains.push_back(make_domain("abrupt-" + std::to_string(i), dim, 501, i % 2 == 0 ? 0.8 : -0.8, 0.0, 1));
  }
  StreamSchedule s = assemble(std::move(domains), batches_per_domain, batch_size, seed);
  for (int i = 0; i < 6; ++i) s.segments[i].batch_count = std::max(1, batches_per_domain + kStagger[i]);
  return s;
}

StreamSchedule preset_by_name(const std::string& name, int dim, int batches_per_domain,
                              int batch_size, std::uint64_t seed) {
  if (name == "corruption") return corruption_preset(dim, batches_per_domain, batch_size, seed);
  if (name == "domain-generalization") {
    return domain_generalization_preset(dim, batches_per_domain, batch_size, seed);
  }
  if (name == "recurring") return recurring_preset(dim, batches_per_domain, batch_size, seed);
  if (name == "abrupt") return abrupt_preset(dim, batches_per_domain, batch_size, seed);
  throw InvalidInput("unknown stream preset '" + name + "'");
}

DomainSpec source_domain() {
  DomainSpec d;
  d.id = "source";
  d.severity = 1;
  return d;
}

std::vector<DomainSpec> broad_domains(int dim, const BroadOptions& options) {
  if (options.count < 1) throw InvalidInput("broad domain count must be >= 1");
  std::vector<DomainSpec> out{source_domain()};
  for (int i = 0; i + 1 < options.count; ++i) {
    out.push_back(make_domain("broad-" + std::to_string(i), dim, 601 + static_cast<std::uint64_t>(i),
                              options.rotation, options.shift, 1 + i % 3));
  }
  return out;
}

}  // namespace sail::stream
