// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "golden.hpp"
#include "oracles.hpp"
#include "sail/adapter.hpp"
#include "sail/config.hpp"
#include "sail/drift_reset.hpp"
#include "sail/episode.hpp"
#include "sail/experiments.hpp"
#include "sail/external_logits.hpp"
#include "sail/fusion.hpp"
#include "sail/objectives.hpp"

using namespace sail;
using namespace sail::harness;
using Vec = std::vector<double>;

namespace {

// Margins measured on the golden configs during development, in accuracy
// points; a rerun may drift from them by at most kMarginTolerance.
constexpr double kFrozenAccuracyMargin = 2.14;     // SAIL minus no-backward, corruption
constexpr double kFrozenForgettingMargin = 0.04;   // no-reset minus reset, recurring
constexpr double kMarginTolerance = 0.5;
constexpr double kMinDetectionRate = 0.8;
constexpr std::size_t kMaxFalsePositives = 2;

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------- 1

adapter::Architecture random_arch(std::mt19937_64& rng) {
  adapter::Architecture a;
  a.input_dim = 2 + static_cast<int>(rng() % 4);
  a.widths.assign(2 + rng() % 2, 0);
  for (int& w : a.widths) w = 2 + static_cast<int>(rng() % 4);
  a.num_classes = 2 + static_cast<int>(rng() % 5);
  return a;
}

adapter::AdapterParams perturbed(const adapter::Architecture& a, std::uint64_t seed) {
  adapter::AdapterParams p = adapter::initialize(a, seed);
  std::mt19937_64 rng(seed ^ 0x5eed);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto& b : p.blocks) {
    for (Eigen::Index i = 0; i < b.gamma.size(); ++i) {
      b.gamma(i) += nd(rng);
      b.beta(i) += nd(rng);
      b.bias(i) += nd(rng);
    }
  }
  for (Eigen::Index i = 0; i < p.out_bias.size(); ++i) p.out_bias(i) = nd(rng);
  return p;
}

Outcome gradient_correctness() {
  using fusion::NormalizationStrategy;
  std::mt19937_64 rng(20220);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = 1e-5;
  const NormalizationStrategy norms[] = {NormalizationStrategy::lse, NormalizationStrategy::softmax,
                                         NormalizationStrategy::z_score, NormalizationStrategy::l2,
                                         NormalizationStrategy::min_max};
  std::size_t checked = 0;
  std::size_t bad = 0;
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const adapter::Architecture arch = random_arch(rng);
    const adapter::AdapterParams p = perturbed(arch, 1000 + static_cast<std::uint64_t>(t));
    const int n = 2 + static_cast<int>(rng() % 7);
    const Matrix x = oracle::random_matrix(rng, n, arch.input_dim);
    const auto norm = norms[t % 5];
    objectives::LossHyperparams hp;
    hp.balance_coef = 2 * u(rng);
    hp.entropy_coef = 2 * u(rng);
    hp.weighting = rng() % 3 == 0;
    hp.entropy_threshold = objectives::default_entropy_threshold(arch.num_classes) * (1 + u(rng));
    hp.balance_source = rng() % 4 == 0 ? objectives::BalanceSource::adapter : objectives::BalanceSource::fused;
    const Matrix z_vlm = oracle::random_matrix(rng, n, arch.num_classes, 2.0);
    const Matrix zv = fusion::normalize_rows(z_vlm, norm);

    const auto fwd = adapter::forward(p, x);
    const std::vector<double> lambda = fusion::interpolation_weight(
        fusion::softmax_rows(z_vlm), fusion::softmax_rows(fwd.logits), fusion::WeightStrategy::confidence);
    const auto lg = objectives::total_loss_and_grad(zv, fwd.logits, lambda, norm, hp);
    const std::vector<double> grad = adapter::backward(p, fwd.cache, lg.d_total_d_logits);

    // Reference: plain-loop forward and objective with the target and
    // weights held at their values for the unperturbed parameters.
    const oracle::LMat zvl = oracle::rows(zv);
    const oracle::Frozen frozen = oracle::freeze(zvl, oracle::forward(p, x), lambda, norm, hp);
    const Vec theta = adapter::flatten(p);
    for (std::size_t j = 0; j < theta.size(); ++j) {
      Vec tp = theta;
      Vec tm = theta;
      tp[j] += h;
      tm[j] -= h;
      adapter::AdapterParams pp = p;
      adapter::AdapterParams pm = p;
      adapter::unflatten(pp, tp);
      adapter::unflatten(pm, tm);
      const double fd = static_cast<double>(
          (oracle::objective(zvl, oracle::forward(pp, x), lambda, norm, hp, frozen) -
           oracle::objective(zvl, oracle::forward(pm, x), lambda, norm, hp, frozen)) /
          (2 * h));
      ++checked;
      const double scale = std::max(std::abs(grad[j]), std::abs(fd));
      if (scale > 1e-6) worst = std::max(worst, std::abs(grad[j] - fd) / scale);
      if (!oracle::grad_close(grad[j], fd)) ++bad;
    }
  }
  return {bad == 0, std::to_string(checked) + " partials over 200 instances, " + std::to_string(bad) +
                        " outside tolerance, worst relative error " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------- 2

Outcome fusion_algebra() {
  using fusion::NormalizationStrategy;
  std::mt19937_64 rng(20221);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  std::size_t failures = 0;
  double lam_lo = 1.0;
  double lam_hi = 0.0;
  for (int t = 0; t < 2000; ++t) {
    const int k = 2 + static_cast<int>(rng() % 20);
    const double scale = std::pow(10.0, u(rng) / 25.0);
    Vec z(static_cast<std::size_t>(k));
    for (double& v : z) v = scale * nd(rng);
    const double c = u(rng);
    Vec shifted = z;
    for (double& v : shifted) v += c;
    const Vec a = fusion::normalize_logits(z, NormalizationStrategy::lse);
    const Vec b = fusion::normalize_logits(shifted, NormalizationStrategy::lse);
    const Vec pz = fusion::softmax(z);
    const Vec pa = fusion::softmax(a);
    for (int j = 0; j < k; ++j) {
      failures += std::abs(a[j] - b[j]) > 1e-10;
      failures += std::abs(pz[j] - pa[j]) > 1e-12;
    }
    Vec w(static_cast<std::size_t>(k));
    for (double& v : w) v = scale * nd(rng);
    const Vec f0 = fusion::fuse(z, w, 0.0);
    const Vec f1 = fusion::fuse(z, w, 1.0);
    failures += f0 != w;
    failures += f1 != z;
  }
  // Confidence weights over random, uniform and one-hot distributions.
  for (int t = 0; t < 500; ++t) {
    const int k = 2 + static_cast<int>(rng() % 20);
    const int n = 8;
    Matrix zv = oracle::random_matrix(rng, n, k, std::pow(10.0, u(rng) / 25.0));
    Matrix za = oracle::random_matrix(rng, n, k, std::pow(10.0, u(rng) / 25.0));
    zv.row(0).setZero();
    za.row(1).setZero();
    zv(2, 0) = 1e4;
    za(3, 0) = 1e4;
    const auto lam = fusion::interpolation_weight(fusion::softmax_rows(zv), fusion::softmax_rows(za),
                                                  fusion::WeightStrategy::confidence);
    for (double l : lam) {
      lam_lo = std::min(lam_lo, l);
      lam_hi = std::max(lam_hi, l);
      failures += !(l > 0.268941 && l < 0.731059);
    }
  }
  return {failures == 0, std::to_string(failures) + " violations; confidence lambda range " +
                             fmt("[%.6f, %.6f]", lam_lo, lam_hi)};
}

// ---------------------------------------------------------------- 3

Vec random_vec(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec v(n);
  for (double& x : v) x = nd(rng);
  return v;
}

std::vector<std::size_t> identity_rank(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

Outcome gdi_behaviour() {
  std::mt19937_64 rng(20222);
  std::size_t failures = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng() % 50;
    const Vec v = random_vec(rng, n);
    Vec neg = v;
    for (double& x : neg) x = -x;
    // orthogonal: Gram-Schmidt of a second random vector against v
    Vec w = random_vec(rng, n);
    const double vv = std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
    const double wv = std::inner_product(w.begin(), w.end(), v.begin(), 0.0);
    for (std::size_t i = 0; i < n; ++i) w[i] -= wv / vv * v[i];
    failures += std::abs(drift::gdi(v, v) - 1.0) > 1e-12;
    failures += std::abs(drift::gdi(v, neg) + 1.0) > 1e-12;
    failures += std::abs(drift::gdi(v, w)) > 1e-12;
  }
  // Scripted trajectory: +v for `turn` steps, then -v.
  std::size_t scripts = 0;
  for (int turn : {2, 5, 9, 17}) {
    const Vec src = random_vec(rng, 16);
    const Vec v = random_vec(rng, 16);
    drift::ResetConfig c;
    c.threshold = 0.0;
    c.interval = 1000;
    c.alpha = 100.0;
    drift::DriftMonitor m(src, identity_rank(16), c);
    Vec theta = src;
    std::vector<long> resets;
    for (int t = 1; t <= 40; ++t) {
      const double sign = t <= turn ? 1.0 : -1.0;
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += sign * v[i];
      const auto o = m.observe(theta);
      if (o.reset) resets.push_back(o.reset->step);
    }
    ++scripts;
    failures += resets != std::vector<long>{turn + 1};
  }
  return {failures == 0, std::to_string(failures) + " violations over 600 cosine checks and " +
                             std::to_string(scripts) + " scripted reversals"};
}

// ---------------------------------------------------------------- 4

std::vector<std::size_t> naive_selection(const Vec& key, double alpha) {
  const std::size_t p = key.size();
  std::size_t count = 0;
  while (count < p && 100.0 * static_cast<double>(count) < alpha * static_cast<double>(p)) ++count;
  std::vector<std::size_t> idx = identity_rank(p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = i + 1; j < p; ++j)
      if (key[idx[j]] > key[idx[i]] || (key[idx[j]] == key[idx[i]] && idx[j] < idx[i])) std::swap(idx[i], idx[j]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Outcome reset_semantics() {
  using drift::ResetStrategy;
  std::mt19937_64 rng(20223);
  std::size_t failures = 0;
  std::size_t cases = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t p = 1 + rng() % 80;
    const Vec cur = random_vec(rng, p);
    const Vec src = random_vec(rng, p);
    std::vector<std::size_t> rank = identity_rank(p);
    std::shuffle(rank.begin(), rank.end(), rng);
    for (double alpha : {0.0, 25.0, 50.0, 100.0}) {
      for (auto s : {ResetStrategy::deep, ResetStrategy::shallow, ResetStrategy::random, ResetStrategy::max_drift,
                     ResetStrategy::full, ResetStrategy::none}) {
        const std::uint64_t seed = rng();
        Vec key(p);
        std::vector<std::size_t> expect;
        switch (s) {
          case ResetStrategy::deep:
            for (std::size_t i = 0; i < p; ++i) key[i] = static_cast<double>(rank[i]);
            expect = naive_selection(key, alpha);
            break;
          case ResetStrategy::shallow:
            for (std::size_t i = 0; i < p; ++i) key[i] = -static_cast<double>(rank[i]);
            expect = naive_selection(key, alpha);
            break;
          case ResetStrategy::max_drift:
            for (std::size_t i = 0; i < p; ++i) key[i] = std::abs(cur[i] - src[i]);
            expect = naive_selection(key, alpha);
            break;
          case ResetStrategy::random: {
            std::mt19937_64 g(seed);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            for (double& k : key) k = u(g);
            expect = naive_selection(key, alpha);
            break;
          }
          case ResetStrategy::full:
            expect = identity_rank(p);
            break;
          case ResetStrategy::none:
            break;
        }
        std::mt19937_64 g(seed);
        const Vec out = drift::strategic_reset(cur, src, alpha, s, rank, &g);
        ++cases;
        for (std::size_t i = 0; i < p; ++i) {
          const bool selected = std::binary_search(expect.begin(), expect.end(), i);
          // bitwise: compare the representations
          const double want = selected ? src[i] : cur[i];
          failures += std::memcmp(&out[i], &want, sizeof(double)) != 0;
        }
      }
    }
  }
  return {failures == 0, std::to_string(cases) + " (vector, alpha, strategy) cases, " + std::to_string(failures) +
                             " entries differ from the sorting oracle"};
}

// ---------------------------------------------------------------- 5

Outcome algorithm_ordering() {
  std::size_t anchor_steps = 0;
  std::size_t coinciding = 0;
  std::size_t failures = 0;
  for (double tau : {0.0, 0.5}) {
    RunConfig c = load_config(golden::config_path("golden_abrupt.toml"));
    c.reset.threshold = tau;
    const std::uint64_t seed = c.seeds.front();
    run_episode(c, seed, prepare_artifacts(c, seed), [&](const StepView& v) {
      if (!v.observation || !v.observation->anchor_updated) return;
      ++anchor_steps;
      const std::vector<double>& anchor = v.monitor->anchor();
      const bool same = anchor.size() == v.params.size() &&
                        std::equal(anchor.begin(), anchor.end(), v.params.begin());
      failures += !same;
      if (v.observation->reset && v.observation->reset->num_params_reset > 0) ++coinciding;
    });
  }
  return {failures == 0 && coinciding > 0,
          std::to_string(anchor_steps) + " anchor refreshes, " + std::to_string(coinciding) +
              " coinciding with a reset, " + std::to_string(failures) + " anchors differ from post-reset parameters"};
}

// ---------------------------------------------------------------- 6 and 8

struct GoldenRuns {
  std::vector<RunReport> sail;
  std::vector<RunReport> no_backward;
  std::vector<RunReport> recurring_reset;
  std::vector<RunReport> recurring_no_reset;
};

std::vector<RunReport> run_with(const RunConfig& c, const std::vector<Artifacts>& arts) {
  std::vector<RunReport> out(c.seeds.size());
  parallel_for(c.seeds.size(), [&](std::size_t i) { out[i] = run_episode(c, c.seeds[i], arts[i]); });
  return out;
}

double mean_of(const std::vector<RunReport>& rs, double RunReport::*field) {
  double s = 0.0;
  for (const auto& r : rs) s += r.*field;
  return s / static_cast<double>(rs.size());
}

GoldenRuns golden_runs() {
  GoldenRuns g;
  const RunConfig corr = load_config(golden::config_path("golden.toml"));
  const std::vector<Artifacts> corr_art = prepare_all(corr);
  g.sail = run_with(corr, corr_art);
  g.no_backward = run_with(ablation_config(corr, false, false, false), corr_art);
  const RunConfig rec = load_config(golden::config_path("golden_recurring.toml"));
  const std::vector<Artifacts> rec_art = prepare_all(rec);
  g.recurring_reset = run_with(rec, rec_art);
  RunConfig no_reset = rec;
  no_reset.disable_reset = true;
  g.recurring_no_reset = run_with(no_reset, rec_art);
  return g;
}

Outcome ablation_analog(const GoldenRuns& g) {
  const double sail = 100 * mean_of(g.sail, &RunReport::mean_acc_fused);
  const double nb = 100 * mean_of(g.no_backward, &RunReport::mean_acc_fused);
  const double f_reset = 100 * mean_of(g.recurring_reset, &RunReport::mean_forgetting);
  const double f_none = 100 * mean_of(g.recurring_no_reset, &RunReport::mean_forgetting);
  const double acc_margin = sail - nb;
  const double forget_margin = f_none - f_reset;
  const bool acc_ok = sail > nb && std::abs(acc_margin - kFrozenAccuracyMargin) <= kMarginTolerance;
  const bool forget_ok = f_reset <= f_none && std::abs(forget_margin - kFrozenForgettingMargin) <= kMarginTolerance;
  return {acc_ok && forget_ok,
          fmt("fused accuracy SAIL %.2f vs no-backward %.2f (margin %+.2f, frozen %+.2f); ", sail, nb, acc_margin,
              kFrozenAccuracyMargin) +
              fmt("forgetting with reset %.2f vs without %.2f (margin %+.2f, frozen %+.2f)", f_reset, f_none,
                  forget_margin, kFrozenForgettingMargin)};
}

Outcome determinism(const GoldenRuns& g) {
  std::vector<golden::Row> rows;
  for (const auto& r : g.sail) {
    const auto more = golden::aggregate_rows("golden.toml", r);
    rows.insert(rows.end(), more.begin(), more.end());
  }
  const auto expected = golden::read_rows(golden::data_path("golden_aggregates.csv"));
  const auto mismatches = golden::compare_rows(expected, rows);
  std::string detail = std::to_string(expected.size()) + " golden aggregates, " + std::to_string(mismatches.size()) +
                       " outside 1e-9";
  if (!mismatches.empty()) detail += " (first: " + mismatches.front() + ")";
  return {mismatches.empty(), detail};
}

// ---------------------------------------------------------------- 7

Outcome transition_detection() {
  const RunConfig c = load_config(golden::config_path("golden_abrupt.toml"));
  const auto reports = run_seeds(c);
  std::size_t detected = 0;
  std::size_t transitions = 0;
  std::size_t worst_fp = 0;
  std::string per_seed;
  for (const auto& r : reports) {
    detected += r.detection.detected;
    transitions += r.detection.transitions.size();
    worst_fp = std::max(worst_fp, r.detection.false_positives);
    per_seed += " " + std::to_string(r.seed) + ":" + std::to_string(r.detection.detected) + "/" +
                std::to_string(r.detection.transitions.size()) + " fp " +
                std::to_string(r.detection.false_positives);
  }
  const double rate = transitions ? static_cast<double>(detected) / static_cast<double>(transitions) : 0.0;
  return {transitions > 0 && rate >= kMinDetectionRate && worst_fp <= kMaxFalsePositives,
          fmt("detected %.0f of %.0f (%.0f%%), max false positives per run %.0f;", static_cast<double>(detected),
              static_cast<double>(transitions), 100 * rate, static_cast<double>(worst_fp)) +
              per_seed};
}

// ---------------------------------------------------------------- 9

Outcome replay_symmetry() {
  std::mt19937_64 rng(20229);
  std::normal_distribution<double> nd(0.0, 2.0);
  std::vector<external::LogitRecord> recs;
  for (int i = 0; i < 640; ++i) {
    external::LogitRecord r{"x" + std::to_string(i), static_cast<int>(rng() % 10), {}};
    for (int k = 0; k < 10; ++k) r.logits.push_back(nd(rng));
    if (i % 9 == 0) r.label.reset();
    recs.push_back(r);
  }
  const std::string path = (std::filesystem::temp_directory_path() / "sail_acceptance_replay.csv").string();
  external::write_external_logits(path, recs);
  RunConfig c = load_config("", {{"replay.vlm_logits", "\"" + path + "\""}, {"replay.ada_logits", "\"" + path + "\""}});
  c.keep_samples = true;
  const RunReport r = run_episode(c, 1);
  std::size_t failures = 0;
  for (const auto& s : r.steps) failures += s.acc_fused != s.acc_vlm || s.acc_fused != s.acc_ada;
  for (const auto& s : r.samples) failures += s.lambda != 0.5 || s.pred_fused != s.pred_vlm;
  std::filesystem::remove(path);
  return {failures == 0 && r.samples.size() == recs.size(),
          std::to_string(r.steps.size()) + " batches, " + std::to_string(r.samples.size()) + " samples, " +
              std::to_string(failures) + " asymmetries"};
}

}  // namespace

int main() {
  struct Line {
    int id;
    const char* name;
    Outcome outcome;
    double seconds;
  };
  std::vector<Line> lines;
  bool all = true;
  auto record = [&](int id, const char* name, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all = all && o.pass;
    std::printf("%s %d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), s);
    std::fflush(stdout);
  };

  record(1, "gradient correctness", gradient_correctness);
  record(2, "fusion algebra", fusion_algebra);
  record(3, "drift indicator", gdi_behaviour);
  record(4, "reset semantics", reset_semantics);
  record(5, "anchor after reset", algorithm_ordering);
  GoldenRuns runs;
  bool have_runs = false;
  record(6, "ablation analog", [&] {
    runs = golden_runs();
    have_runs = true;
    return ablation_analog(runs);
  });
  record(7, "transition detection", transition_detection);
  record(8, "determinism regression", [&] {
    if (!have_runs) return Outcome{false, "golden runs unavailable"};
    return determinism(runs);
  });
  record(9, "replay symmetry", replay_symmetry);
  return all ? 0 : 1;
}
