#pragma once

// Frozen generalist: a fixed random tanh feature map followed by cosine
// similarity against one unit prototype per class, scaled by a temperature.
//   logit_k = temperature * cos(phi(x), psi_k)

#include <cstdint>
#include <string>

#include "sail/types.hpp"

namespace sail::generalist {

struct GeneralistOptions {
  int feature_dim = 256;
  double temperature = 100.0;
  double weight_scale = 0.3;  // feature weights ~ N(0, weight_scale^2 / d_in)
  double bias_scale = 1.0;    // feature biases ~ N(0, bias_scale^2)
  std::uint64_t seed = 2022;
};

class PrototypeClassifier {
 public:
  PrototypeClassifier(Matrix feature_weight, Vector feature_bias, Matrix prototypes,
                      double temperature);

  /// phi(x) = tanh(W x + b), one row per sample.
  Matrix features(const Matrix& batch) const;
  Matrix predict(const Matrix& batch) const;
  /// Cosine logits for precomputed features; a zero feature row yields zeros.
  Matrix predict_from_features(const Matrix& phi) const;

  const Matrix& feature_weight() const { return feature_weight_; }
  const Vector& feature_bias() const { return feature_bias_; }
  const Matrix& prototypes() const { return prototypes_; }
  double temperature() const { return temperature_; }
  int num_classes() const { return static_cast<int>(prototypes_.rows()); }
  int input_dim() const { return static_cast<int>(feature_weight_.cols()); }

  bool operator==(const PrototypeClassifier&) const = default;

 private:
  Matrix feature_weight_;
  Vector feature_bias_;
  Matrix prototypes_;
  double temperature_;
};

/// Random feature map drawn from `options.seed`.
PrototypeClassifier make_unfitted(int input_dim, int num_classes, const GeneralistOptions& options);

/// psi_k = normalized mean feature of class k over `broad`. Requires samples
/// from at least three distinct domains; throws FitError naming any class
/// without samples.
PrototypeClassifier fit_prototypes(const LabeledSet& broad, int num_classes,
                                   const GeneralistOptions& options);

double accuracy(const PrototypeClassifier& classifier, const LabeledSet& data);

void save_classifier(const std::string& path, const PrototypeClassifier& classifier);
PrototypeClassifier load_classifier(const std::string& path);

}  // namespace sail::generalist
