#include "sail/objectives.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "sail/error.hpp"

namespace sail::objectives {

namespace {

double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

// d/dp [p * log(max(p, floor))]
double plogp_derivative(double p) {
  return p >= kProbFloor ? std::log(p) + 1.0 : std::log(kProbFloor);
}

double clamped_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) h -= v * safe_log(v);
  return h;
}

// In place: g <- p .* (g - <g, p>), the softmax vector-Jacobian product.
void softmax_vjp(std::span<const double> p, std::span<double> g) {
  double dot = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) dot += g[c] * p[c];
  for (std::size_t c = 0; c < p.size(); ++c) g[c] = p[c] * (g[c] - dot);
}

std::span<double> mutable_row(Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInput(std::string(what) + ": shape mismatch");
  }
  if (a.rows() < 1) throw InvalidInput(std::string(what) + ": empty batch");
}

}  // namespace

BalanceSource parse_balance_source(std::string_view name) {
  if (name == "fused") return BalanceSource::fused;
  if (name == "adapter") return BalanceSource::adapter;
  throw InvalidInput("unknown balance source '" + std::string(name) + "'");
}

std::string_view to_string(BalanceSource s) {
  return s == BalanceSource::fused ? "fused" : "adapter";
}

void LossHyperparams::validate() const {
  if (!std::isfinite(balance_coef) || balance_coef < 0.0) {
    throw InvalidInput("balance coefficient must be finite and nonnegative");
  }
  if (!std::isfinite(entropy_coef) || entropy_coef < 0.0) {
    throw InvalidInput("entropy coefficient must be finite and nonnegative");
  }
  if (weighting && !(entropy_threshold > 0.0 && std::isfinite(entropy_threshold))) {
    throw InvalidInput("entropy threshold must be positive when weighting is enabled");
  }
}

double default_entropy_threshold(int num_classes) {
  return 0.4 * std::log(static_cast<double>(num_classes));
}

AlignmentTerms alignment_loss(const Matrix& p_target, const Matrix& p_ada, double balance_coef) {
  check_same_shape(p_target, p_ada, "alignment_loss");
  const double n = static_cast<double>(p_target.rows());
  AlignmentTerms out;
  for (Eigen::Index i = 0; i < p_target.rows(); ++i) {
    for (Eigen::Index c = 0; c < p_target.cols(); ++c) {
      out.cross_entropy -= p_target(i, c) * safe_log(p_ada(i, c));
    }
  }
  out.cross_entropy /= n;
  if (balance_coef != 0.0) {
    const Vector q = p_target.colwise().mean().transpose();
    double s = 0.0;
    for (Eigen::Index c = 0; c < q.size(); ++c) s += q(c) * safe_log(q(c));
    out.balance = balance_coef * s;
  }
  return out;
}

double entropy_loss(const Matrix& p, std::span<const double> weights) {
  if (static_cast<Eigen::Index>(weights.size()) != p.rows()) {
    throw InvalidInput("entropy_loss: one weight per sample required");
  }
  if (p.rows() < 1) throw InvalidInput("entropy_loss: empty batch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double w = weights[static_cast<std::size_t>(i)];
    if (w < 0.0) throw InvalidInput("entropy_loss: negative sample weight");
    if (w != 0.0) s += w * clamped_entropy(fusion::row_span(p, i));
  }
  return s / static_cast<double>(p.rows());
}

double sample_weight(double entropy, double threshold) {
  if (entropy >= threshold) return 0.0;
  return std::exp(threshold - entropy);
}

LossAndGradient total_loss_and_grad(const Matrix& z_vlm_norm, const Matrix& z_ada_raw,
                                    std::span<const double> lambda,
                                    fusion::NormalizationStrategy normalization,
                                    const LossHyperparams& hyper, long step) {
  check_same_shape(z_vlm_norm, z_ada_raw, "total_loss_and_grad");
  if (static_cast<Eigen::Index>(lambda.size()) != z_ada_raw.rows()) {
    throw InvalidInput("total_loss_and_grad: one lambda per sample required");
  }
  hyper.validate();

  const Eigen::Index n = z_ada_raw.rows();
  const Eigen::Index k = z_ada_raw.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  const Matrix z_ada = fusion::normalize_rows(z_ada_raw, normalization);
  const Matrix p_ada = fusion::softmax_rows(z_ada);
  const Matrix p = fusion::softmax_rows(fusion::fuse_rows(z_vlm_norm, z_ada, lambda));

  LossAndGradient out;
  LossBreakdown& loss = out.loss;

  // Per-sample gradients w.r.t. fused probabilities and w.r.t. the adapter's
  // normalized logits; combined at the end.
  Matrix g_p = Matrix::Zero(n, k);
  Matrix g_u = Matrix::Zero(n, k);

  if (hyper.use_alignment) {
    const AlignmentTerms align = alignment_loss(
        p, p_ada, hyper.balance_source == BalanceSource::fused ? hyper.balance_coef : 0.0);
    loss.align_ce = align.cross_entropy;
    loss.balance = align.balance;

    for (Eigen::Index i = 0; i < n; ++i) {
      double kept = 0.0;
      for (Eigen::Index c = 0; c < k; ++c) {
        if (p_ada(i, c) >= kProbFloor) {
          kept += p(i, c);
          g_u(i, c) -= inv_n * p(i, c);
        }
      }
      for (Eigen::Index c = 0; c < k; ++c) g_u(i, c) += inv_n * kept * p_ada(i, c);
    }

    if (hyper.balance_coef != 0.0) {
      const Matrix& source = hyper.balance_source == BalanceSource::fused ? p : p_ada;
      const Vector q = source.colwise().mean().transpose();
      if (hyper.balance_source == BalanceSource::adapter) {
        double s = 0.0;
        for (Eigen::Index c = 0; c < k; ++c) s += q(c) * safe_log(q(c));
        loss.balance = hyper.balance_coef * s;
      }
      Vector dq(k);
      for (Eigen::Index c = 0; c < k; ++c) dq(c) = hyper.balance_coef * inv_n * plogp_derivative(q(c));
      if (hyper.balance_source == BalanceSource::fused) {
        for (Eigen::Index i = 0; i < n; ++i) g_p.row(i) += dq.transpose();
      } else {
        for (Eigen::Index i = 0; i < n; ++i) {
          std::vector<double> g(dq.data(), dq.data() + k);
          softmax_vjp(fusion::row_span(p_ada, i), g);
          for (Eigen::Index c = 0; c < k; ++c) g_u(i, c) += g[static_cast<std::size_t>(c)];
        }
      }
    }
  }

  std::vector<double> weights(static_cast<std::size_t>(n), 1.0);
  if (hyper.weighting) {
    for (Eigen::Index i = 0; i < n; ++i) {
      weights[static_cast<std::size_t>(i)] =
          sample_weight(clamped_entropy(fusion::row_span(p, i)), hyper.entropy_threshold);
    }
  }
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  loss.mean_weight = wsum * inv_n;

  if (hyper.use_entropy) {
    loss.ent = entropy_loss(p, weights);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double scale = hyper.entropy_coef * weights[static_cast<std::size_t>(i)] * inv_n;
      if (scale == 0.0) continue;
      for (Eigen::Index c = 0; c < k; ++c) g_p(i, c) -= scale * plogp_derivative(p(i, c));
    }
  }

  loss.total = loss.align_ce + loss.balance + hyper.entropy_coef * loss.ent;

  out.d_total_d_logits.resize(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto gp = mutable_row(g_p, i);
    softmax_vjp(fusion::row_span(p, i), gp);
    const double through_fusion = 1.0 - lambda[static_cast<std::size_t>(i)];
    for (Eigen::Index c = 0; c < k; ++c) g_u(i, c) += through_fusion * g_p(i, c);
    const auto gz =
        fusion::normalize_logits_vjp(fusion::row_span(z_ada_raw, i), normalization,
                                     fusion::row_span(g_u, i));
    std::copy(gz.begin(), gz.end(), out.d_total_d_logits.data() + i * k);
  }

  if (!std::isfinite(loss.total) || !out.d_total_d_logits.allFinite()) {
    throw NumericalFailure("non-finite loss or gradient", step);
  }
  return out;
}

}  // namespace sail::objectives
