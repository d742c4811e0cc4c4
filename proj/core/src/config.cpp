#include "sail/config.hpp"

#include <cmath>
#include <sstream>

#include "sail/error.hpp"

namespace sail::harness {

namespace {

ModelSource parse_source(const std::string& s) {
  if (s == "synthetic") return ModelSource::synthetic;
  if (s == "replay") return ModelSource::replay;
  throw ConfigError("model source must be 'synthetic' or 'replay', got '" + s + "'");
}

template <typename T, typename Getter>
void read(const Getter& value, T& target) {
  if (value) target = static_cast<T>(*value);
}

// Strategy parsers throw InvalidInput; report them as configuration errors.
template <typename F>
auto as_config_error(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
}

stream::DomainSpec read_segment_domain(const toml::Document& doc, const std::string& prefix,
                                       int input_dim, std::size_t index) {
  stream::DomainSpec d;
  d.id = doc.string(prefix + "id").value_or("segment-" + std::to_string(index));
  read(doc.integer(prefix + "rotation_seed"), d.rotation_seed);
  read(doc.real(prefix + "rotation"), d.rotation);
  read(doc.integer(prefix + "severity"), d.severity);
  read(doc.real(prefix + "scale"), d.scale);
  const auto shift = doc.real(prefix + "shift");
  const auto shift_vec = doc.real_array(prefix + "mean_shift");
  if (shift && shift_vec) throw ConfigError("segment '" + d.id + "': give either shift or mean_shift");
  if (shift && *shift > 0.0) d.mean_shift = stream::random_shift(input_dim, *shift, d.rotation_seed + 7919);
  if (shift_vec) d.mean_shift = *shift_vec;
  return d;
}

}  // namespace

bool RunConfig::adapts() const {
  return !no_backward && (!disable_align || !disable_ent) && replay.ada == ModelSource::synthetic;
}

void RunConfig::validate() const {
  try {
    model.arch.validate();
    loss.validate();
    reset.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  if (model.pretrain_epochs < 0) throw ConfigError("model.pretrain_epochs must be >= 0");
  if (model.pretrain_samples < 2) throw ConfigError("model.pretrain_samples must be >= 2");
  if (model.pretrain_batch < 2) throw ConfigError("model.pretrain_batch must be >= 2");
  if (model.broad_samples_per_domain < 1) throw ConfigError("model.broad_samples_per_domain must be >= 1");
  if (model.broad.count < 3) throw ConfigError("model.broad_domains must be >= 3");
  if (model.generalist.feature_dim < 1) throw ConfigError("model.feature_dim must be >= 1");
  if (!(model.generalist.temperature > 0.0)) throw ConfigError("model.temperature must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("adapt.lr must be >= 0");
  if (detection_window < 1) throw ConfigError("reset.window must be >= 1");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (force_lambda && !(*force_lambda >= 0.0 && *force_lambda <= 1.0)) {
    throw ConfigError("fusion.force_lambda must be in [0, 1]");
  }
  if (batches_per_domain < 1) throw ConfigError("stream.batches_per_domain must be >= 1");

  if (replay.vlm == ModelSource::replay && replay.vlm_logits.empty()) {
    throw ConfigError("replay.vlm_source = replay needs replay.vlm_logits");
  }
  if (replay.ada == ModelSource::replay && replay.ada_logits.empty()) {
    throw ConfigError("replay.ada_source = replay needs replay.ada_logits");
  }
  if (replay.vlm == ModelSource::synthetic && !replay.vlm_logits.empty()) {
    throw ConfigError("generalist is both synthetic and replayed from '" + replay.vlm_logits + "'");
  }
  if (replay.ada == ModelSource::synthetic && !replay.ada_logits.empty()) {
    throw ConfigError("adapter is both synthetic and replayed from '" + replay.ada_logits + "'");
  }
  const bool fully_replayed = replay.vlm == ModelSource::replay && replay.ada == ModelSource::replay;
  if (!fully_replayed) {
    try {
      schedule_for(seeds.front()).validate(model.arch.input_dim);
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
  }
  if (schedule.batch_size < 2) throw ConfigError("stream.batch_size must be >= 2");
}

stream::StreamSchedule RunConfig::schedule_for(std::uint64_t seed) const {
  stream::StreamSchedule s = schedule;
  if (s.segments.empty()) {
    s = as_config_error([&] {
      return stream::preset_by_name(preset, model.arch.input_dim, batches_per_domain, schedule.batch_size, seed);
    });
    s.label_skew = schedule.label_skew;
  }
  s.seed = seed;
  return s;
}

RunConfig default_config() {
  RunConfig c;
  c.model.arch.widths = {64, 64, 64};
  c.schedule.batch_size = 64;
  c.reset.threshold = 0.0;
  c.reset.interval = 10;
  c.reset.alpha = 25.0;
  c.reset.strategy = drift::ResetStrategy::deep;
  c.loss.entropy_threshold = objectives::default_entropy_threshold(c.model.arch.num_classes);
  return c;
}

RunConfig config_from_document(const toml::Document& doc) {
  RunConfig c = default_config();
  ModelConfig& m = c.model;

  if (const auto seed = doc.integer("seed")) c.seeds = {static_cast<std::uint64_t>(*seed)};
  if (const auto seeds = doc.integer_array("seeds")) {
    c.seeds.clear();
    for (auto s : *seeds) c.seeds.push_back(static_cast<std::uint64_t>(s));
  }

  read(doc.integer("model.num_classes"), m.arch.num_classes);
  read(doc.integer("model.input_dim"), m.arch.input_dim);
  if (const auto w = doc.integer_array("model.widths")) {
    m.arch.widths.clear();
    for (auto v : *w) m.arch.widths.push_back(static_cast<int>(v));
  }
  read(doc.real("model.norm_eps"), m.arch.norm_eps);
  read(doc.integer("model.pretrain_epochs"), m.pretrain_epochs);
  read(doc.real("model.pretrain_lr"), m.pretrain_lr);
  read(doc.integer("model.pretrain_samples"), m.pretrain_samples);
  read(doc.integer("model.pretrain_batch"), m.pretrain_batch);
  read(doc.integer("model.feature_dim"), m.generalist.feature_dim);
  read(doc.real("model.temperature"), m.generalist.temperature);
  read(doc.real("model.feature_weight_scale"), m.generalist.weight_scale);
  read(doc.real("model.feature_bias_scale"), m.generalist.bias_scale);
  read(doc.integer("model.broad_samples_per_domain"), m.broad_samples_per_domain);
  read(doc.integer("model.broad_domains"), m.broad.count);
  read(doc.real("model.broad_rotation"), m.broad.rotation);
  read(doc.real("model.broad_shift"), m.broad.shift);
  read(doc.string("model.adapter_path"), m.adapter_path);
  read(doc.string("model.generalist_path"), m.generalist_path);

  read(doc.real("loss.balance"), c.loss.balance_coef);
  read(doc.real("loss.entropy"), c.loss.entropy_coef);
  read(doc.boolean("loss.weighting"), c.loss.weighting);
  c.loss.entropy_threshold = objectives::default_entropy_threshold(m.arch.num_classes);
  read(doc.real("loss.entropy_threshold"), c.loss.entropy_threshold);
  if (const auto s = doc.string("loss.balance_source")) {
    c.loss.balance_source = as_config_error([&] { return objectives::parse_balance_source(*s); });
  }

  if (const auto s = doc.string("fusion.weight")) {
    c.weight = as_config_error([&] { return fusion::parse_weight(*s); });
  }
  if (const auto s = doc.string("fusion.normalization")) {
    c.normalization = as_config_error([&] { return fusion::parse_normalization(*s); });
  }
  if (const auto f = doc.real("fusion.force_lambda")) c.force_lambda = *f;

  read(doc.real("reset.threshold"), c.reset.threshold);
  read(doc.integer("reset.interval"), c.reset.interval);
  read(doc.real("reset.alpha"), c.reset.alpha);
  if (const auto s = doc.string("reset.strategy")) {
    c.reset.strategy = as_config_error([&] { return drift::parse_strategy(*s); });
  }
  read(doc.integer("reset.window"), c.detection_window);

  read(doc.real("adapt.lr"), c.lr);
  read(doc.boolean("adapt.no_backward"), c.no_backward);
  read(doc.boolean("adapt.disable_align"), c.disable_align);
  read(doc.boolean("adapt.disable_ent"), c.disable_ent);
  read(doc.boolean("adapt.disable_reset"), c.disable_reset);
  read(doc.boolean("adapt.keep_samples"), c.keep_samples);

  read(doc.string("stream.preset"), c.preset);
  read(doc.integer("stream.batches_per_domain"), c.batches_per_domain);
  read(doc.integer("stream.batch_size"), c.schedule.batch_size);
  read(doc.real("stream.label_skew"), c.schedule.label_skew);
  const std::size_t segments = doc.table_array_size("segment");
  for (std::size_t i = 0; i < segments; ++i) {
    const std::string prefix = "segment." + std::to_string(i) + ".";
    stream::Segment seg;
    seg.domain = read_segment_domain(doc, prefix, m.arch.input_dim, i);
    seg.batch_count = static_cast<int>(doc.integer(prefix + "batches").value_or(c.batches_per_domain));
    c.schedule.segments.push_back(std::move(seg));
  }

  read(doc.string("replay.vlm_logits"), c.replay.vlm_logits);
  read(doc.string("replay.ada_logits"), c.replay.ada_logits);
  if (!c.replay.vlm_logits.empty()) c.replay.vlm = ModelSource::replay;
  if (!c.replay.ada_logits.empty()) c.replay.ada = ModelSource::replay;
  if (const auto s = doc.string("replay.vlm_source")) c.replay.vlm = parse_source(*s);
  if (const auto s = doc.string("replay.ada_source")) c.replay.ada = parse_source(*s);

  const auto unused = doc.unused_keys();
  if (!unused.empty()) {
    std::string list;
    for (const auto& k : unused) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError(doc.source() + ": unknown key(s): " + list);
  }

  c.loss.use_alignment = !c.disable_align;
  c.loss.use_entropy = !c.disable_ent;
  if (c.replay.ada == ModelSource::replay) c.no_backward = true;
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
  toml::Document doc = path.empty() ? toml::Document::parse("", "<defaults>") : toml::Document::parse_file(path);
  for (const auto& [key, value] : overrides) doc.set(key, value);
  try {
    return config_from_document(doc);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

std::string config_reference() {
  std::ostringstream os;
  os << R"(Run configuration (TOML subset). All keys optional.

seed = 2022                    single episode seed
seeds = [2022, 2023, 2024]     seeds for ablate / sweep

[model]
num_classes = 10               K
input_dim = 32                 feature dimension d
widths = [64, 64, 64]          adapter block widths (>= 2 blocks)
norm_eps = 1e-5                batch standardization guard
pretrain_epochs = 30           source pretraining epochs
pretrain_lr = 0.05
pretrain_samples = 4000        labeled source samples
pretrain_batch = 64
feature_dim = 256              generalist feature width
temperature = 100              generalist cosine scale
feature_weight_scale = 0.3     generalist feature weights ~ N(0, scale^2 / d)
feature_bias_scale = 1.0       generalist feature biases ~ N(0, scale^2)
broad_samples_per_domain = 600 generalist fitting samples per broad domain
broad_domains = 5              broad domains, including the source (>= 3)
broad_rotation = 0.8           rotation strength of the non-source broad domains
broad_shift = 0.5              mean-shift magnitude of the non-source broad domains
adapter_path = ""              load adapter parameters instead of pretraining
generalist_path = ""           load generalist instead of fitting

[loss]
balance = 1.0                  gamma_b
entropy = 1.0                  gamma_e
weighting = false              entropy-based sample weighting
entropy_threshold = 0.921      E0 (default 0.4 ln K)
balance_source = "fused"       fused | adapter

[fusion]
weight = "confidence"          confidence | average | batch-entropy | sample-entropy
normalization = "lse"          lse | softmax | z-score | l2 | min-max
force_lambda = 0.5             debug: fixed interpolation weight

[reset]
threshold = 0.0                tau
interval = 10                  s, anchor refresh period in steps
alpha = 25                     percent of trainable parameters restored
strategy = "deep"              deep | shallow | random | max-drift | full | none
window = 5                     detection window W in steps

[adapt]
lr = 1e-3                      SGD learning rate on the affine parameters
no_backward = false            fuse only, never update the adapter
disable_align = false
disable_ent = false
disable_reset = false
keep_samples = false           retain per-sample diagnostics

[stream]
preset = "corruption"          corruption | domain-generalization | recurring | abrupt
batches_per_domain = 20
batch_size = 64
label_skew = 0.0               fraction of each batch forced to class 0

[[segment]]                    explicit schedule; replaces the preset
id = "A"
rotation_seed = 7
rotation = 0.3                 Cayley generator spectral radius
shift = 1.0                    mean-shift magnitude (or mean_shift = [...])
severity = 3                   1..5, 0 = noiseless
scale = 1.0
batches = 20

[replay]
vlm_logits = "vlm.csv"         replay generalist logits
ada_logits = "ada.csv"         replay adapter logits (disables training)
vlm_source = "synthetic"       synthetic | replay
ada_source = "synthetic"
)";
  return os.str();
}

}  // namespace sail::harness
