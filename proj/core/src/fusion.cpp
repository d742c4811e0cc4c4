#include "sail/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sail/error.hpp"

namespace sail::fusion {

namespace {

void require_finite(std::span<const double> z, const char* what) {
  if (z.empty()) throw InvalidInput(std::string(what) + ": empty logit vector");
  for (double v : z) {
    if (!std::isfinite(v)) throw InvalidInput(std::string(what) + ": non-finite logit");
  }
}

double mean_of(std::span<const double> z) {
  return std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(z.size());
}

double z_score_scale(std::span<const double> z, double mu) {
  double var = 0.0;
  for (double v : z) var += (v - mu) * (v - mu);
  var /= static_cast<double>(z.size());
  return std::sqrt(var + kZScoreEps);
}

double l2_norm(std::span<const double> z) {
  double s = 0.0;
  for (double v : z) s += v * v;
  return std::sqrt(s);
}

}  // namespace

NormalizationStrategy parse_normalization(std::string_view name) {
  if (name == "lse") return NormalizationStrategy::lse;
  if (name == "softmax") return NormalizationStrategy::softmax;
  if (name == "z-score" || name == "zscore") return NormalizationStrategy::z_score;
  if (name == "l2") return NormalizationStrategy::l2;
  if (name == "min-max" || name == "minmax") return NormalizationStrategy::min_max;
  throw InvalidInput("unknown normalization strategy '" + std::string(name) + "'");
}

std::string_view to_string(NormalizationStrategy s) {
  switch (s) {
    case NormalizationStrategy::lse: return "lse";
    case NormalizationStrategy::softmax: return "softmax";
    case NormalizationStrategy::z_score: return "z-score";
    case NormalizationStrategy::l2: return "l2";
    case NormalizationStrategy::min_max: return "min-max";
  }
  return "?";
}

WeightStrategy parse_weight(std::string_view name) {
  if (name == "confidence") return WeightStrategy::confidence;
  if (name == "average") return WeightStrategy::average;
  if (name == "batch-entropy") return WeightStrategy::batch_entropy;
  if (name == "sample-entropy") return WeightStrategy::sample_entropy;
  throw InvalidInput("unknown weight strategy '" + std::string(name) + "'");
}

std::string_view to_string(WeightStrategy s) {
  switch (s) {
    case WeightStrategy::confidence: return "confidence";
    case WeightStrategy::average: return "average";
    case WeightStrategy::batch_entropy: return "batch-entropy";
    case WeightStrategy::sample_entropy: return "sample-entropy";
  }
  return "?";
}

double log_sum_exp(std::span<const double> z) {
  require_finite(z, "log_sum_exp");
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> z) {
  const double lse = log_sum_exp(z);
  std::vector<double> p(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) p[j] = std::exp(z[j] - lse);
  return p;
}

std::vector<double> normalize_logits(std::span<const double> z, NormalizationStrategy strategy) {
  require_finite(z, "normalize_logits");
  std::vector<double> out(z.begin(), z.end());
  switch (strategy) {
    case NormalizationStrategy::lse: {
      const double lse = log_sum_exp(z);
      for (double& v : out) v -= lse;
      break;
    }
    case NormalizationStrategy::softmax:
      out = softmax(z);
      break;
    case NormalizationStrategy::z_score: {
      const auto [lo, hi] = std::minmax_element(z.begin(), z.end());
      if (*lo == *hi) throw DegenerateInput("z-score normalization of a constant vector");
      const double mu = mean_of(z);
      const double s = z_score_scale(z, mu);
      for (double& v : out) v = (v - mu) / s;
      break;
    }
    case NormalizationStrategy::l2: {
      const double norm = l2_norm(z);
      if (norm == 0.0) throw DegenerateInput("l2 normalization of a zero vector");
      for (double& v : out) v /= norm;
      break;
    }
    case NormalizationStrategy::min_max: {
      const auto [lo, hi] = std::minmax_element(z.begin(), z.end());
      if (*lo == *hi) throw DegenerateInput("min-max normalization of a constant vector");
      const double range = *hi - *lo;
      const double base = *lo;
      for (double& v : out) v = (v - base) / range;
      break;
    }
  }
  return out;
}

std::vector<double> normalize_logits_vjp(std::span<const double> z,
                                         NormalizationStrategy strategy,
                                         std::span<const double> upstream) {
  if (upstream.size() != z.size()) throw InvalidInput("normalize_logits_vjp: length mismatch");
  require_finite(z, "normalize_logits_vjp");
  const std::size_t k = z.size();
  std::vector<double> g(k);
  switch (strategy) {
    case NormalizationStrategy::lse: {
      // d(z_j - LSE)/dz_k = delta_jk - p_k
      const auto p = softmax(z);
      const double total = std::accumulate(upstream.begin(), upstream.end(), 0.0);
      for (std::size_t j = 0; j < k; ++j) g[j] = upstream[j] - p[j] * total;
      break;
    }
    case NormalizationStrategy::softmax: {
      const auto p = softmax(z);
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += upstream[j] * p[j];
      for (std::size_t j = 0; j < k; ++j) g[j] = p[j] * (upstream[j] - dot);
      break;
    }
    case NormalizationStrategy::z_score: {
      const auto y = normalize_logits(z, strategy);
      const double mu = mean_of(z);
      const double s = z_score_scale(z, mu);
      const double g_mean = mean_of(upstream);
      double gy = 0.0;
      for (std::size_t j = 0; j < k; ++j) gy += upstream[j] * y[j];
      gy /= static_cast<double>(k);
      for (std::size_t j = 0; j < k; ++j) g[j] = (upstream[j] - g_mean - y[j] * gy) / s;
      break;
    }
    case NormalizationStrategy::l2: {
      const auto y = normalize_logits(z, strategy);
      const double norm = l2_norm(z);
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += upstream[j] * y[j];
      for (std::size_t j = 0; j < k; ++j) g[j] = (upstream[j] - y[j] * dot) / norm;
      break;
    }
    case NormalizationStrategy::min_max: {
      const auto y = normalize_logits(z, strategy);
      const auto lo = static_cast<std::size_t>(std::min_element(z.begin(), z.end()) - z.begin());
      const auto hi = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
      const double range = z[hi] - z[lo];
      double to_min = 0.0;
      double to_max = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        g[j] = upstream[j] / range;
        to_min += upstream[j] * (y[j] - 1.0) / range;
        to_max -= upstream[j] * y[j] / range;
      }
      g[lo] += to_min;
      g[hi] += to_max;
      break;
    }
  }
  return g;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw InvalidInput("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t j = 1; j < v.size(); ++j) {
    if (v[j] > v[best]) best = j;
  }
  return best;
}

std::vector<double> interpolation_weight(const Matrix& p_vlm, const Matrix& p_ada,
                                         WeightStrategy strategy) {
  if (p_vlm.rows() == 0) throw InvalidInput("interpolation_weight: empty batch");
  if (p_vlm.rows() != p_ada.rows() || p_vlm.cols() != p_ada.cols()) {
    throw InvalidInput("interpolation_weight: batch shapes differ");
  }
  const auto n = static_cast<std::size_t>(p_vlm.rows());
  std::vector<double> lambda(n, 0.5);
  // exp(a) / (exp(a) + exp(b)) written as a logistic of the difference.
  const auto ratio = [](double a, double b) { return 1.0 / (1.0 + std::exp(b - a)); };

  switch (strategy) {
    case WeightStrategy::average:
      break;
    case WeightStrategy::confidence:
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        lambda[i] = ratio(p_vlm.row(r).maxCoeff(), p_ada.row(r).maxCoeff());
      }
      break;
    case WeightStrategy::sample_entropy:
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        lambda[i] = ratio(-entropy(row_span(p_vlm, r)), -entropy(row_span(p_ada, r)));
      }
      break;
    case WeightStrategy::batch_entropy: {
      double h_vlm = 0.0;
      double h_ada = 0.0;
      for (Eigen::Index r = 0; r < p_vlm.rows(); ++r) {
        h_vlm += entropy(row_span(p_vlm, r));
        h_ada += entropy(row_span(p_ada, r));
      }
      const double shared = ratio(-h_vlm / static_cast<double>(n), -h_ada / static_cast<double>(n));
      std::fill(lambda.begin(), lambda.end(), shared);
      break;
    }
  }
  return lambda;
}

std::vector<double> fuse(std::span<const double> z_vlm, std::span<const double> z_ada,
                         double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidInput("fuse: lambda outside [0, 1]");
  if (z_vlm.size() != z_ada.size()) throw InvalidInput("fuse: logit lengths differ");
  std::vector<double> out(z_vlm.size());
  if (lambda == 1.0) {
    std::copy(z_vlm.begin(), z_vlm.end(), out.begin());
  } else if (lambda == 0.0) {
    std::copy(z_ada.begin(), z_ada.end(), out.begin());
  } else {
    for (std::size_t j = 0; j < out.size(); ++j) {
      out[j] = lambda * z_vlm[j] + (1.0 - lambda) * z_ada[j];
    }
  }
  return out;
}

Matrix normalize_rows(const Matrix& z, NormalizationStrategy strategy) {
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const auto row = normalize_logits(row_span(z, r), strategy);
    std::copy(row.begin(), row.end(), out.data() + r * out.cols());
  }
  return out;
}

Matrix softmax_rows(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const auto row = softmax(row_span(z, r));
    std::copy(row.begin(), row.end(), out.data() + r * out.cols());
  }
  return out;
}

std::vector<double> entropy_rows(const Matrix& p) {
  std::vector<double> h(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index r = 0; r < p.rows(); ++r) h[static_cast<std::size_t>(r)] = entropy(row_span(p, r));
  return h;
}

Matrix fuse_rows(const Matrix& z_vlm, const Matrix& z_ada, std::span<const double> lambda) {
  if (z_vlm.rows() != z_ada.rows() || z_vlm.cols() != z_ada.cols()) {
    throw InvalidInput("fuse_rows: batch shapes differ");
  }
  if (static_cast<Eigen::Index>(lambda.size()) != z_vlm.rows()) {
    throw InvalidInput("fuse_rows: one lambda per row required");
  }
  Matrix out(z_vlm.rows(), z_vlm.cols());
  for (Eigen::Index r = 0; r < z_vlm.rows(); ++r) {
    const auto row = fuse(row_span(z_vlm, r), row_span(z_ada, r), lambda[static_cast<std::size_t>(r)]);
    std::copy(row.begin(), row.end(), out.data() + r * out.cols());
  }
  return out;
}

}  // namespace sail::fusion
