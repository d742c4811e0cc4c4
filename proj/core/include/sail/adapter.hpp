#pragma once

// The trainable adapter: a small dense network of L blocks
//   h <- tanh(gamma_l * standardize_batch(W_l h + b_l) + beta_l)
// followed by a linear classifier head. After source pretraining every weight
// is frozen except the per-block affine pair (gamma_l, beta_l).
//
// Trainable scalars are addressed through a flat vector in depth order:
// block 0 gamma, block 0 beta, block 1 gamma, ... with features ascending
// inside each group. Index i of that vector has depth rank i.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sail/types.hpp"

namespace sail::adapter {

struct Architecture {
  int input_dim = 32;
  std::vector<int> widths{32, 32};
  int num_classes = 10;
  double norm_eps = 1e-5;

  /// Throws InvalidInput unless there are at least two blocks, all sizes are
  /// positive and num_classes >= 2.
  void validate() const;
  std::size_t trainable_size() const;
};

struct Block {
  Matrix weight;  // width x fan_in, frozen
  Vector bias;    // frozen
  Vector gamma;   // trainable
  Vector beta;    // trainable
};

struct AdapterParams {
  Architecture arch;
  std::vector<Block> blocks;
  Matrix out_weight;  // num_classes x widths.back(), frozen
  Vector out_bias;    // frozen

  bool operator==(const AdapterParams& other) const;
};

/// Everything backward() needs from a forward pass.
struct ForwardCache {
  struct Layer {
    Matrix input;   // n x fan_in
    Matrix xhat;    // standardized pre-activations, n x width
    Vector inv_std; // 1 / sqrt(var + eps) per feature
    Vector mean;
    Vector var;
    Matrix output;  // tanh(gamma * xhat + beta), n x width
  };
  std::vector<Layer> layers;
};

struct ForwardResult {
  Matrix logits;
  ForwardCache cache;
};

/// Gradients for every parameter, used by pretraining.
struct FullGradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  std::vector<Vector> gamma;
  std::vector<Vector> beta;
  Matrix out_weight;
  Vector out_bias;
};

/// Fresh parameters: Gaussian weights scaled by 1/sqrt(fan_in), zero biases,
/// gamma = 1, beta = 0.
AdapterParams initialize(const Architecture& arch, std::uint64_t seed);

/// Standardizes with the statistics of `batch` itself; requires >= 2 rows.
ForwardResult forward(const AdapterParams& params, const Matrix& batch);

/// Gradient of the loss w.r.t. the trainable vector, in depth order.
std::vector<double> backward(const AdapterParams& params, const ForwardCache& cache,
                             const Matrix& d_loss_d_logits);

FullGradients backward_full(const AdapterParams& params, const ForwardCache& cache,
                            const Matrix& d_loss_d_logits);

/// trainable <- trainable - lr * grads. Throws NumericalFailure on non-finite
/// gradients or updated values, leaving params untouched, and InvalidInput on a negative learning rate or length mismatch.
void sgd_step(AdapterParams& params, std::span<const double> grads, double lr);

std::vector<double> flatten(const AdapterParams& params);
void unflatten(AdapterParams& params, std::span<const double> trainable);

/// Depth rank of each flat trainable index.
std::vector<std::size_t> depth_index(const Architecture& arch);

/// Block owning each flat trainable index.
std::vector<int> block_of(const Architecture& arch);

struct PretrainOptions {
  int epochs = 30;
  double lr = 0.05;
  int batch_size = 64;
  std::uint64_t seed = 2022;
};

struct PretrainResult {
  AdapterParams params;
  std::vector<double> source_snapshot;  // trainable vector after pretraining
  double final_loss = 0.0;
};

/// Supervised cross-entropy SGD over all parameters on the labeled source
/// set. Deterministic for a given seed. Throws PretrainFailure on divergence.
PretrainResult pretrain(const Architecture& arch, const LabeledSet& source,
                        const PretrainOptions& options);

/// Fraction of rows whose argmax logit equals the label. Evaluated in chunks
/// of `batch_size` rows, each standardized with its own statistics.
double accuracy(const AdapterParams& params, const LabeledSet& data, int batch_size = 64);

enum class ParamFormat { binary, text };

void save_params(const std::string& path, const AdapterParams& params, ParamFormat format);
AdapterParams load_params(const std::string& path);

}  // namespace sail::adapter
