#include "sail/generalist.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "sail/error.hpp"
#include "sail/fusion.hpp"

namespace sail::generalist {

PrototypeClassifier::PrototypeClassifier(Matrix feature_weight, Vector feature_bias,
                                         Matrix prototypes, double temperature)
    : feature_weight_(std::move(feature_weight)),
      feature_bias_(std::move(feature_bias)),
      prototypes_(std::move(prototypes)),
      temperature_(temperature) {
  if (feature_bias_.size() != feature_weight_.rows() || prototypes_.cols() != feature_weight_.rows()) {
    throw InvalidInput("prototype classifier: inconsistent shapes");
  }
  if (!(temperature_ > 0.0)) throw InvalidInput("prototype classifier: temperature must be positive");
}

Matrix PrototypeClassifier::features(const Matrix& batch) const {
  if (batch.cols() != feature_weight_.cols()) throw InvalidInput("generalist: input width mismatch");
  Matrix pre = batch * feature_weight_.transpose();
  pre.rowwise() += feature_bias_.transpose();
  return pre.array().tanh().matrix();
}

Matrix PrototypeClassifier::predict(const Matrix& batch) const {
  return predict_from_features(features(batch));
}

Matrix PrototypeClassifier::predict_from_features(const Matrix& phi) const {
  Matrix logits = phi * prototypes_.transpose();
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    const double norm = phi.row(i).norm();
    if (norm == 0.0) {
      logits.row(i).setZero();
    } else {
      logits.row(i) *= temperature_ / norm;
    }
  }
  return logits;
}

PrototypeClassifier make_unfitted(int input_dim, int num_classes, const GeneralistOptions& options) {
  if (options.feature_dim < 1) throw InvalidInput("generalist feature_dim must be positive");
  std::mt19937_64 rng(options.seed ^ 0x5851f42d4c957f2dULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = options.weight_scale / std::sqrt(static_cast<double>(input_dim));
  Matrix w(options.feature_dim, input_dim);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * normal(rng);
  Vector b(options.feature_dim);
  for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = options.bias_scale * normal(rng);
  return PrototypeClassifier(std::move(w), std::move(b), Matrix::Zero(num_classes, options.feature_dim),
                             options.temperature);
}

PrototypeClassifier fit_prototypes(const LabeledSet& broad, int num_classes,
                                   const GeneralistOptions& options) {
  const std::set<int> domains(broad.domains.begin(), broad.domains.end());
  if (domains.size() < 3) throw FitError("generalist needs data from at least 3 domains");
  if (broad.features.rows() != static_cast<Eigen::Index>(broad.labels.size())) {
    throw FitError("generalist: features and labels differ in length");
  }
  PrototypeClassifier blank = make_unfitted(static_cast<int>(broad.features.cols()), num_classes, options);
  const Matrix phi = blank.features(broad.features);

  Matrix sums = Matrix::Zero(num_classes, options.feature_dim);
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    const int y = broad.labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= num_classes) throw FitError("generalist: label out of range");
    sums.row(y) += phi.row(i);
    ++counts[static_cast<std::size_t>(y)];
  }
  for (int k = 0; k < num_classes; ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0) {
      throw FitError("generalist: class " + std::to_string(k) + " has no samples");
    }
    const double norm = sums.row(k).norm();
    if (norm == 0.0) throw FitError("generalist: class " + std::to_string(k) + " has a zero mean feature");
    sums.row(k) /= norm;
  }
  return PrototypeClassifier(blank.feature_weight(), blank.feature_bias(), std::move(sums),
                             options.temperature);
}

double accuracy(const PrototypeClassifier& classifier, const LabeledSet& data) {
  if (data.size() == 0) return 0.0;
  const Matrix logits = classifier.predict(data.features);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (static_cast<int>(fusion::argmax(fusion::row_span(logits, i))) == data.labels[static_cast<std::size_t>(i)]) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

void save_classifier(const std::string& path, const PrototypeClassifier& c) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << "sail-generalist 1\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << c.input_dim() << ' ' << c.feature_weight().rows() << ' ' << c.num_classes() << ' '
     << c.temperature() << '\n';
  const auto dump = [&os](const auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) os << m.data()[i] << '\n';
  };
  dump(c.feature_weight());
  dump(c.feature_bias());
  dump(c.prototypes());
  if (!os) throw Error("failed writing '" + path + "'");
}

PrototypeClassifier load_classifier(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "'");
  std::string tag;
  int version = 0;
  is >> tag >> version;
  if (tag != "sail-generalist" || version != 1) throw ParseError(path, 1, "not a generalist file");
  int d = 0;
  int m = 0;
  int k = 0;
  double temperature = 0.0;
  is >> d >> m >> k >> temperature;
  if (!is || d < 1 || m < 1 || k < 2) throw ParseError(path, 2, "malformed header");
  Matrix w(m, d);
  Vector b(m);
  Matrix protos(k, m);
  const auto load = [&](auto& mat) {
    for (Eigen::Index i = 0; i < mat.size(); ++i) {
      if (!(is >> mat.data()[i])) throw ParseError(path, 0, "truncated values");
    }
  };
  load(w);
  load(b);
  load(protos);
  return PrototypeClassifier(std::move(w), std::move(b), std::move(protos), temperature);
}

}  // namespace sail::generalist
