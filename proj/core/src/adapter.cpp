#include "sail/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "sail/error.hpp"
#include "sail/fusion.hpp"

namespace sail::adapter {

void Architecture::validate() const {
  if (input_dim < 1) throw InvalidInput("adapter input_dim must be positive");
  if (widths.size() < 2) throw InvalidInput("adapter needs at least two blocks");
  for (int w : widths) {
    if (w < 1) throw InvalidInput("adapter block widths must be positive");
  }
  if (num_classes < 2) throw InvalidInput("adapter needs at least two classes");
  if (!(norm_eps > 0.0)) throw InvalidInput("adapter norm_eps must be positive");
}

std::size_t Architecture::trainable_size() const {
  std::size_t total = 0;
  for (int w : widths) total += 2 * static_cast<std::size_t>(w);
  return total;
}

bool AdapterParams::operator==(const AdapterParams& other) const {
  if (arch.input_dim != other.arch.input_dim || arch.widths != other.arch.widths ||
      arch.num_classes != other.arch.num_classes || arch.norm_eps != other.arch.norm_eps ||
      blocks.size() != other.blocks.size()) {
    return false;
  }
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const Block& a = blocks[l];
    const Block& b = other.blocks[l];
    if (a.weight != b.weight || a.bias != b.bias || a.gamma != b.gamma || a.beta != b.beta) {
      return false;
    }
  }
  return out_weight == other.out_weight && out_bias == other.out_bias;
}

AdapterParams initialize(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  AdapterParams p;
  p.arch = arch;
  int fan_in = arch.input_dim;
  for (int width : arch.widths) {
    Block b;
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    b.weight.resize(width, fan_in);
    for (Eigen::Index i = 0; i < b.weight.size(); ++i) b.weight.data()[i] = scale * normal(rng);
    b.bias = Vector::Zero(width);
    b.gamma = Vector::Ones(width);
    b.beta = Vector::Zero(width);
    p.blocks.push_back(std::move(b));
    fan_in = width;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  p.out_weight.resize(arch.num_classes, fan_in);
  for (Eigen::Index i = 0; i < p.out_weight.size(); ++i) p.out_weight.data()[i] = scale * normal(rng);
  p.out_bias = Vector::Zero(arch.num_classes);
  return p;
}

ForwardResult forward(const AdapterParams& params, const Matrix& batch) {
  if (batch.rows() < 2) throw InvalidInput("adapter forward needs a batch of at least 2 samples");
  if (batch.cols() != params.arch.input_dim) throw InvalidInput("adapter forward: input width mismatch");

  ForwardResult result;
  result.cache.layers.reserve(params.blocks.size());
  const double n = static_cast<double>(batch.rows());
  Matrix h = batch;
  for (const Block& block : params.blocks) {
    ForwardCache::Layer layer;
    layer.input = h;
    Matrix pre = h * block.weight.transpose();
    pre.rowwise() += block.bias.transpose();

    layer.mean = pre.colwise().mean().transpose();
    pre.rowwise() -= layer.mean.transpose();
    layer.var = (pre.array().square().colwise().sum() / n).matrix().transpose();
    layer.inv_std = (layer.var.array() + params.arch.norm_eps).rsqrt().matrix();
    layer.xhat = pre * layer.inv_std.asDiagonal();

    Matrix a = layer.xhat * block.gamma.asDiagonal();
    a.rowwise() += block.beta.transpose();
    layer.output = a.array().tanh().matrix();
    h = layer.output;
    result.cache.layers.push_back(std::move(layer));
  }
  result.logits = h * params.out_weight.transpose();
  result.logits.rowwise() += params.out_bias.transpose();
  return result;
}

namespace {

void check_backward_shapes(const AdapterParams& params, const ForwardCache& cache,
                           const Matrix& d_logits) {
  if (cache.layers.size() != params.blocks.size() || cache.layers.empty()) {
    throw InvalidInput("adapter backward: cache does not match architecture");
  }
  if (d_logits.cols() != params.arch.num_classes ||
      d_logits.rows() != cache.layers.back().output.rows()) {
    throw InvalidInput("adapter backward: upstream gradient shape mismatch");
  }
}

// Shared reverse sweep; `full` is null when only the affine gradients are needed.
void reverse_sweep(const AdapterParams& params, const ForwardCache& cache, const Matrix& d_logits,
                   std::vector<Vector>& d_gamma, std::vector<Vector>& d_beta, FullGradients* full) {
  check_backward_shapes(params, cache, d_logits);
  const std::size_t depth = params.blocks.size();
  d_gamma.assign(depth, Vector());
  d_beta.assign(depth, Vector());

  if (full) {
    full->out_weight = d_logits.transpose() * cache.layers.back().output;
    full->out_bias = d_logits.colwise().sum().transpose();
    full->weight.assign(depth, Matrix());
    full->bias.assign(depth, Vector());
  }

  Matrix g_h = d_logits * params.out_weight;
  for (std::size_t li = depth; li-- > 0;) {
    const Block& block = params.blocks[li];
    const ForwardCache::Layer& layer = cache.layers[li];

    const Matrix g_a = (g_h.array() * (1.0 - layer.output.array().square())).matrix();
    d_gamma[li] = (g_a.array() * layer.xhat.array()).colwise().sum().transpose();
    d_beta[li] = g_a.colwise().sum().transpose();

    if (li == 0 && !full) break;

    // Batch standardization: g_pre = inv_std * (g - mean(g) - xhat * mean(g * xhat)).
    const Matrix g_xhat = g_a * block.gamma.asDiagonal();
    const Eigen::RowVectorXd g_mean = g_xhat.colwise().mean();
    const Eigen::RowVectorXd gx_mean = (g_xhat.array() * layer.xhat.array()).colwise().mean();
    Matrix g_pre = g_xhat;
    g_pre.rowwise() -= g_mean;
    g_pre -= layer.xhat * gx_mean.asDiagonal();
    g_pre = g_pre * layer.inv_std.asDiagonal();

    if (full) {
      full->weight[li] = g_pre.transpose() * layer.input;
      full->bias[li] = g_pre.colwise().sum().transpose();
    }
    if (li > 0) g_h = g_pre * block.weight;
  }
  if (full) {
    full->gamma = d_gamma;
    full->beta = d_beta;
  }
}

}  // namespace

std::vector<double> backward(const AdapterParams& params, const ForwardCache& cache,
                             const Matrix& d_loss_d_logits) {
  std::vector<Vector> d_gamma;
  std::vector<Vector> d_beta;
  reverse_sweep(params, cache, d_loss_d_logits, d_gamma, d_beta, nullptr);
  std::vector<double> grads;
  grads.reserve(params.arch.trainable_size());
  for (std::size_t l = 0; l < d_gamma.size(); ++l) {
    grads.insert(grads.end(), d_gamma[l].data(), d_gamma[l].data() + d_gamma[l].size());
    grads.insert(grads.end(), d_beta[l].data(), d_beta[l].data() + d_beta[l].size());
  }
  return grads;
}

FullGradients backward_full(const AdapterParams& params, const ForwardCache& cache,
                            const Matrix& d_loss_d_logits) {
  FullGradients full;
  std::vector<Vector> d_gamma;
  std::vector<Vector> d_beta;
  reverse_sweep(params, cache, d_loss_d_logits, d_gamma, d_beta, &full);
  return full;
}

std::vector<double> flatten(const AdapterParams& params) {
  std::vector<double> out;
  out.reserve(params.arch.trainable_size());
  for (const Block& b : params.blocks) {
    out.insert(out.end(), b.gamma.data(), b.gamma.data() + b.gamma.size());
    out.insert(out.end(), b.beta.data(), b.beta.data() + b.beta.size());
  }
  return out;
}

void unflatten(AdapterParams& params, std::span<const double> trainable) {
  if (trainable.size() != params.arch.trainable_size()) {
    throw InvalidInput("unflatten: expected " + std::to_string(params.arch.trainable_size()) +
                       " values, got " + std::to_string(trainable.size()));
  }
  std::size_t at = 0;
  for (Block& b : params.blocks) {
    for (Eigen::Index j = 0; j < b.gamma.size(); ++j) b.gamma(j) = trainable[at++];
    for (Eigen::Index j = 0; j < b.beta.size(); ++j) b.beta(j) = trainable[at++];
  }
}

std::vector<std::size_t> depth_index(const Architecture& arch) {
  std::vector<std::size_t> idx(arch.trainable_size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

std::vector<int> block_of(const Architecture& arch) {
  std::vector<int> out;
  out.reserve(arch.trainable_size());
  for (std::size_t l = 0; l < arch.widths.size(); ++l) {
    out.insert(out.end(), 2 * static_cast<std::size_t>(arch.widths[l]), static_cast<int>(l));
  }
  return out;
}

void sgd_step(AdapterParams& params, std::span<const double> grads, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidInput("sgd_step: learning rate must be >= 0");
  if (grads.size() != params.arch.trainable_size()) throw InvalidInput("sgd_step: gradient length mismatch");
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericalFailure("sgd_step: non-finite gradient");
  }
  std::vector<double> next = flatten(params);
  for (std::size_t i = 0; i < next.size(); ++i) {
    next[i] -= lr * grads[i];
    if (!std::isfinite(next[i])) throw NumericalFailure("sgd_step: update overflowed");
  }
  unflatten(params, next);
}

namespace {

// Splits [0, count) into chunks of `size`, folding a remainder of one row into
// the previous chunk so every chunk can be batch-standardized.
std::vector<std::pair<std::size_t, std::size_t>> chunks(std::size_t count, std::size_t size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t begin = 0; begin < count; begin += size) {
    out.emplace_back(begin, std::min(count, begin + size));
  }
  if (out.size() > 1 && out.back().second - out.back().first < 2) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

}  // namespace

PretrainResult pretrain(const Architecture& arch, const LabeledSet& source,
                        const PretrainOptions& options) {
  arch.validate();
  if (source.features.cols() != arch.input_dim ||
      source.features.rows() != static_cast<Eigen::Index>(source.labels.size())) {
    throw InvalidInput("pretrain: source set does not match architecture");
  }
  if (options.batch_size < 2) throw InvalidInput("pretrain: batch size must be >= 2");

  PretrainResult result;
  result.params = initialize(arch, options.seed);
  AdapterParams& p = result.params;
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (const auto& [begin, end] : chunks(order.size(), static_cast<std::size_t>(options.batch_size))) {
      if (end - begin < 2) continue;
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const Matrix x = gather_rows(source.features, rows);
      ForwardResult fr = forward(p, x);
      if (!fr.logits.allFinite()) {
        throw PretrainFailure("pretraining diverged at epoch " + std::to_string(epoch));
      }
      const Matrix prob = fusion::softmax_rows(fr.logits);
      Matrix d = prob;
      double loss = 0.0;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const int y = source.labels[rows[i]];
        loss -= std::log(std::max(prob(r, y), 1e-300));
        d(r, y) -= 1.0;
      }
      const double inv = 1.0 / static_cast<double>(rows.size());
      d *= inv;
      loss *= inv;
      if (!std::isfinite(loss)) {
        throw PretrainFailure("pretraining diverged at epoch " + std::to_string(epoch));
      }
      epoch_loss += loss * static_cast<double>(rows.size());

      const FullGradients g = backward_full(p, fr.cache, d);
      for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        p.blocks[l].weight -= options.lr * g.weight[l];
        p.blocks[l].bias -= options.lr * g.bias[l];
        p.blocks[l].gamma -= options.lr * g.gamma[l];
        p.blocks[l].beta -= options.lr * g.beta[l];
      }
      p.out_weight -= options.lr * g.out_weight;
      p.out_bias -= options.lr * g.out_bias;
    }
    result.final_loss = epoch_loss / static_cast<double>(std::max<std::size_t>(order.size(), 1));
  }
  result.source_snapshot = flatten(p);
  return result;
}

double accuracy(const AdapterParams& params, const LabeledSet& data, int batch_size) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  for (const auto& [begin, end] : chunks(rows.size(), static_cast<std::size_t>(std::max(batch_size, 2)))) {
    const Matrix x = gather_rows(data.features, std::span<const std::size_t>(rows.data() + begin, end - begin));
    const Matrix logits = forward(params, x).logits;
    for (std::size_t i = begin; i < end; ++i) {
      const auto pred = fusion::argmax(fusion::row_span(logits, static_cast<Eigen::Index>(i - begin)));
      if (static_cast<int>(pred) == data.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace sail::adapter
