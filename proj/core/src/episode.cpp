#include "sail/episode.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <limits>
#include <memory>
#include <string>
#include <thread>

#include "sail/error.hpp"
#include "sail/external_logits.hpp"
#include "sail/fusion.hpp"
#include "sail/objectives.hpp"

namespace sail::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum SeedTag : std::uint64_t {
  kBaseTag = 1,
  kPretrainDataTag,
  kHoldoutTag,
  kPretrainShuffleTag,
  kGeneralistTag,
  kBroadDataTag,
  kStreamTag,
  kResetTag,
};

constexpr int kHoldoutSamples = 1000;

bool fully_replayed(const RunConfig& c) {
  return c.replay.vlm == ModelSource::replay && c.replay.ada == ModelSource::replay;
}

// Reads consecutive records of a logits file, one batch at a time.
class ReplaySource {
 public:
  explicit ReplaySource(const std::string& path) : reader_(path) {}

  // Up to n records; fewer only at the end of the file.
  std::vector<external::LogitRecord> take(std::size_t n) {
    std::vector<external::LogitRecord> out;
    while (out.size() < n) {
      auto r = reader_.next();
      if (!r) break;
      out.push_back(std::move(*r));
    }
    return out;
  }

  const std::string& path() const { return reader_.path(); }

 private:
  external::LogitReader reader_;
};

Matrix to_matrix(const std::vector<external::LogitRecord>& records, int expected_k,
                 const std::string& path) {
  const int k = static_cast<int>(records.front().logits.size());
  if (expected_k > 0 && k != expected_k) {
    throw InvalidInput(path + ": records have " + std::to_string(k) + " logits, expected " +
                       std::to_string(expected_k));
  }
  Matrix m(static_cast<Eigen::Index>(records.size()), k);
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (int j = 0; j < k; ++j) m(static_cast<Eigen::Index>(i), j) = records[i].logits[j];
  }
  return m;
}

// Fills in labels from a replayed file, checking them against known labels.
void merge_labels(std::vector<int>& labels, const std::vector<external::LogitRecord>& records,
                  const std::string& path) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].label) continue;
    if (labels[i] < 0) {
      labels[i] = *records[i].label;
    } else if (labels[i] != *records[i].label) {
      throw InvalidInput(path + ": label of sample '" + records[i].sample_id + "' disagrees with the stream");
    }
  }
}

double mean_of(double sum, int count) { return count > 0 ? sum / count : kNaN; }

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_params(std::span<const double> params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : params) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

stream::StreamSchedule episode_schedule(const RunConfig& config, std::uint64_t seed) {
  stream::StreamSchedule schedule = config.schedule_for(seed);
  schedule.seed = derive_seed(seed, kStreamTag);
  return schedule;
}

Artifacts prepare_artifacts(const RunConfig& config, std::uint64_t seed) {
  const adapter::Architecture& arch = config.model.arch;
  Artifacts a;
  a.base = stream::make_base(arch.num_classes, arch.input_dim, derive_seed(seed, kBaseTag));

  const stream::DomainSpec source = stream::source_domain();
  const LabeledSet holdout = stream::sample_dataset(a.base, std::span(&source, 1), kHoldoutSamples,
                                                    derive_seed(seed, kHoldoutTag));

  if (config.replay.ada == ModelSource::synthetic) {
    if (!config.model.adapter_path.empty()) {
      a.adapter = adapter::load_params(config.model.adapter_path);
      if (a.adapter.arch.input_dim != arch.input_dim || a.adapter.arch.num_classes != arch.num_classes) {
        throw ConfigError("adapter file '" + config.model.adapter_path + "' does not match the configured shape");
      }
      a.source_snapshot = adapter::flatten(a.adapter);
    } else {
      const LabeledSet train = stream::sample_dataset(a.base, std::span(&source, 1), config.model.pretrain_samples,
                                                      derive_seed(seed, kPretrainDataTag));
      adapter::PretrainOptions opt;
      opt.epochs = config.model.pretrain_epochs;
      opt.lr = config.model.pretrain_lr;
      opt.batch_size = config.model.pretrain_batch;
      opt.seed = derive_seed(seed, kPretrainShuffleTag);
      // initial weights and shuffling both come from opt.seed
      adapter::PretrainResult r = adapter::pretrain(arch, train, opt);
      a.adapter = std::move(r.params);
      a.source_snapshot = std::move(r.source_snapshot);
      a.pretrain_loss = r.final_loss;
    }
    a.source_holdout_accuracy = adapter::accuracy(a.adapter, holdout, 64);
  }

  if (config.replay.vlm == ModelSource::synthetic) {
    if (!config.model.generalist_path.empty()) {
      a.generalist = generalist::load_classifier(config.model.generalist_path);
      if (a.generalist->input_dim() != arch.input_dim || a.generalist->num_classes() != arch.num_classes) {
        throw ConfigError("generalist file '" + config.model.generalist_path +
                          "' does not match the configured shape");
      }
    } else {
      const std::vector<stream::DomainSpec> broad = stream::broad_domains(arch.input_dim, config.model.broad);
      const LabeledSet data = stream::sample_dataset(a.base, broad, config.model.broad_samples_per_domain,
                                                     derive_seed(seed, kBroadDataTag));
      generalist::GeneralistOptions opt = config.model.generalist;
      opt.seed = derive_seed(seed, kGeneralistTag);
      a.generalist = generalist::fit_prototypes(data, arch.num_classes, opt);
    }
  }
  return a;
}

RunReport run_episode(const RunConfig& config, std::uint64_t seed, const Artifacts& artifacts,
                      const StepObserver& observer) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const bool replay_vlm = config.replay.vlm == ModelSource::replay;
  const bool replay_ada = config.replay.ada == ModelSource::replay;
  const bool from_stream = !fully_replayed(config);
  const bool adapts = config.adapts();
  const int k_expected = from_stream ? config.model.arch.num_classes : 0;

  if (!replay_vlm && !artifacts.generalist) throw ConfigError("episode needs a generalist");

  RunReport report;
  report.seed = seed;

  std::unique_ptr<stream::Stream> stream;
  std::vector<long> transitions;
  if (from_stream) {
    stream = std::make_unique<stream::Stream>(artifacts.base, episode_schedule(config, seed));
    transitions = stream->transitions();
  }
  std::unique_ptr<ReplaySource> vlm_file;
  std::unique_ptr<ReplaySource> ada_file;
  if (replay_vlm) vlm_file = std::make_unique<ReplaySource>(config.replay.vlm_logits);
  if (replay_ada) ada_file = std::make_unique<ReplaySource>(config.replay.ada_logits);

  adapter::AdapterParams params = artifacts.adapter;
  std::optional<drift::DriftMonitor> monitor;
  std::vector<double> flat;
  if (!replay_ada) {
    if (artifacts.source_snapshot.size() != params.arch.trainable_size()) {
      throw ConfigError("episode needs a pretrained adapter");
    }
    drift::ResetConfig rc = config.reset;
    rc.seed = derive_seed(seed, kResetTag);
    if (config.disable_reset) rc.strategy = drift::ResetStrategy::none;
    monitor.emplace(artifacts.source_snapshot, adapter::depth_index(params.arch), rc);
    flat = adapter::flatten(params);
  }

  const int batch_size = config.schedule_for(seed).batch_size;
  long step = 0;
  while (true) {
    // 1. next batch: features and labels from the stream, or logits only
    Matrix x;
    std::vector<int> labels;
    std::string domain_id = "replay";
    std::size_t segment = 0;
    std::vector<external::LogitRecord> vlm_records;
    std::vector<external::LogitRecord> ada_records;
    if (from_stream) {
      segment = stream->segment_index();
      auto batch = stream->next();
      if (!batch) break;
      x = std::move(batch->features);
      labels = std::move(batch->labels);
      domain_id = batch->domain_id;
    }
    const std::size_t n_want = from_stream ? labels.size() : static_cast<std::size_t>(batch_size);
    if (vlm_file) {
      vlm_records = vlm_file->take(n_want);
      if (from_stream && vlm_records.size() != n_want) {
        throw InvalidInput(vlm_file->path() + ": fewer records than stream samples");
      }
    }
    if (ada_file) {
      ada_records = ada_file->take(n_want);
      if (from_stream && ada_records.size() != n_want) {
        throw InvalidInput(ada_file->path() + ": fewer records than stream samples");
      }
    }
    if (!from_stream) {
      if (vlm_records.size() != ada_records.size()) {
        throw InvalidInput("replayed logit files have different record counts");
      }
      if (vlm_records.empty()) break;
      for (std::size_t i = 0; i < vlm_records.size(); ++i) {
        if (vlm_records[i].sample_id != ada_records[i].sample_id) {
          throw InvalidInput("replayed files disagree on sample order at '" + vlm_records[i].sample_id + "'");
        }
      }
      labels.assign(vlm_records.size(), -1);
    }
    if (!vlm_records.empty()) merge_labels(labels, vlm_records, vlm_file->path());
    if (!ada_records.empty()) merge_labels(labels, ada_records, ada_file->path());
    ++step;

    // 2. raw logits of both models
    const Matrix z_vlm = vlm_file ? to_matrix(vlm_records, k_expected, vlm_file->path())
                                  : artifacts.generalist->predict(x);
    std::optional<adapter::ForwardResult> fwd;
    Matrix z_ada;
    if (ada_file) {
      z_ada = to_matrix(ada_records, static_cast<int>(z_vlm.cols()), ada_file->path());
    } else {
      fwd = adapter::forward(params, x);
      z_ada = fwd->logits;
      if (!z_ada.allFinite()) throw NumericalFailure("adapter produced non-finite logits", step);
    }
    if (z_ada.cols() != z_vlm.cols()) throw InvalidInput("models disagree on the number of classes");
    const Eigen::Index n = z_vlm.rows();

    // 3. interpolation weights and fused prediction
    const Matrix p_vlm = fusion::softmax_rows(z_vlm);
    const Matrix p_ada = fusion::softmax_rows(z_ada);
    const std::vector<double> lambda =
        config.force_lambda ? std::vector<double>(static_cast<std::size_t>(n), *config.force_lambda)
                            : fusion::interpolation_weight(p_vlm, p_ada, config.weight);
    const Matrix zv = fusion::normalize_rows(z_vlm, config.normalization);
    const Matrix za = fusion::normalize_rows(z_ada, config.normalization);
    const Matrix fused = fusion::fuse_rows(zv, za, lambda);

    StepRecord rec;
    rec.step = step;
    rec.domain_id = domain_id;
    rec.segment = segment;
    int labeled = 0;
    int hit_f = 0;
    int hit_v = 0;
    int hit_a = 0;
    double lam = 0.0;
    double ent_sum[4] = {0, 0, 0, 0};
    int ent_cnt[4] = {0, 0, 0, 0};
    const std::vector<double> h_vlm = fusion::entropy_rows(p_vlm);
    const std::vector<double> h_ada = fusion::entropy_rows(p_ada);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto pf = static_cast<int>(fusion::argmax(fusion::row_span(fused, i)));
      const auto pv = static_cast<int>(fusion::argmax(fusion::row_span(z_vlm, i)));
      const auto pa = static_cast<int>(fusion::argmax(fusion::row_span(z_ada, i)));
      lam += lambda[static_cast<std::size_t>(i)];
      const int y = labels[static_cast<std::size_t>(i)];
      if (y >= 0) {
        ++labeled;
        hit_f += pf == y;
        hit_v += pv == y;
        hit_a += pa == y;
        const int v_slot = pv == y ? 0 : 1;
        const int a_slot = pa == y ? 2 : 3;
        ent_sum[v_slot] += h_vlm[static_cast<std::size_t>(i)];
        ++ent_cnt[v_slot];
        ent_sum[a_slot] += h_ada[static_cast<std::size_t>(i)];
        ++ent_cnt[a_slot];
      }
      if (config.keep_samples) {
        SampleDiagnostic s;
        s.step = step;
        s.label = y;
        s.pred_fused = pf;
        s.pred_vlm = pv;
        s.pred_ada = pa;
        s.lambda = lambda[static_cast<std::size_t>(i)];
        s.conf_vlm = p_vlm.row(i).maxCoeff();
        s.conf_ada = p_ada.row(i).maxCoeff();
        s.ent_vlm = h_vlm[static_cast<std::size_t>(i)];
        s.ent_ada = h_ada[static_cast<std::size_t>(i)];
        s.ce_vlm = y >= 0 ? -std::log(std::max(p_vlm(i, y), objectives::kProbFloor)) : kNaN;
        s.ce_ada = y >= 0 ? -std::log(std::max(p_ada(i, y), objectives::kProbFloor)) : kNaN;
        report.samples.push_back(s);
      }
    }
    rec.acc_fused = mean_of(hit_f, labeled);
    rec.acc_vlm = mean_of(hit_v, labeled);
    rec.acc_ada = mean_of(hit_a, labeled);
    rec.lambda_mean = lam / static_cast<double>(n);
    rec.ent_vlm_correct = mean_of(ent_sum[0], ent_cnt[0]);
    rec.ent_vlm_wrong = mean_of(ent_sum[1], ent_cnt[1]);
    rec.ent_ada_correct = mean_of(ent_sum[2], ent_cnt[2]);
    rec.ent_ada_wrong = mean_of(ent_sum[3], ent_cnt[3]);

    // 4. objective, one update, drift check
    const objectives::LossAndGradient lg =
        objectives::total_loss_and_grad(zv, z_ada, lambda, config.normalization, config.loss, step);
    rec.loss = lg.loss;
    std::optional<drift::Observation> obs;
    if (fwd) {
      if (adapts) {
        const std::vector<double> grads = adapter::backward(params, fwd->cache, lg.d_total_d_logits);
        try {
          adapter::sgd_step(params, grads, config.lr);
        } catch (const NumericalFailure& e) {
          throw NumericalFailure("adapter update failed: " + std::string(e.what()), step);
        }
        flat = adapter::flatten(params);
      }
      obs = monitor->observe(flat);
      if (obs->reset) {
        adapter::unflatten(params, flat);
        report.resets.push_back(*obs->reset);
      }
      rec.gdi = obs->gdi;
      rec.reset = obs->reset.has_value();
      rec.param_hash = hash_params(flat);
    }
    report.steps.push_back(rec);

    if (observer) {
      StepView view;
      view.step = step;
      view.record = &report.steps.back();
      view.observation = obs ? &*obs : nullptr;
      view.monitor = monitor ? &*monitor : nullptr;
      view.params = flat;
      observer(view);
    }
  }

  summarize(report, transitions, config.detection_window);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

RunReport run_episode(const RunConfig& config, std::uint64_t seed) {
  config.validate();
  if (fully_replayed(config)) return run_episode(config, seed, Artifacts{});
  return run_episode(config, seed, prepare_artifacts(config, seed));
}

unsigned stream_threads() {
  unsigned cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SAIL_STREAM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) cap = static_cast<unsigned>(v);
  }
  return cap;
}

void parallel_for(std::size_t jobs, const std::function<void(std::size_t)>& task) {
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min<std::size_t>(stream_threads(), jobs);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<RunReport> run_seeds(const RunConfig& config) {
  config.validate();
  std::vector<RunReport> reports(config.seeds.size());
  parallel_for(config.seeds.size(), [&](std::size_t i) { reports[i] = run_episode(config, config.seeds[i]); });
  return reports;
}

}  // namespace sail::harness
