#pragma once

// Self-supervised objective for the adapter: cross-entropy toward the
// detached fused prediction, the category-balance regularizer, entropy
// minimization with optional sample weighting, and the analytic gradient of
// the total with respect to the adapter's raw logits.

#include <span>
#include <string_view>

#include "sail/fusion.hpp"
#include "sail/types.hpp"

namespace sail::objectives {

/// Floor applied to probabilities before any logarithm.
inline constexpr double kProbFloor = 1e-12;

/// Which distribution feeds the batch-mean q of the balance term.
enum class BalanceSource { fused, adapter };

BalanceSource parse_balance_source(std::string_view name);
std::string_view to_string(BalanceSource s);

struct LossHyperparams {
  double balance_coef = 1.0;  // gamma_b
  double entropy_coef = 1.0;  // gamma_e
  bool weighting = false;
  double entropy_threshold = 0.0;  // E0 in nats, used only when weighting
  BalanceSource balance_source = BalanceSource::fused;
  bool use_alignment = true;
  bool use_entropy = true;

  /// Throws InvalidInput on negative or non-finite coefficients, or a
  /// non-positive threshold with weighting enabled.
  void validate() const;
};

/// E0 = 0.4 * ln(K), the threshold commonly used with entropy weighting.
double default_entropy_threshold(int num_classes);

struct LossBreakdown {
  double align_ce = 0.0;
  double balance = 0.0;  // already multiplied by gamma_b
  double ent = 0.0;      // not multiplied by gamma_e
  double total = 0.0;
  double mean_weight = 1.0;
};

struct AlignmentTerms {
  double cross_entropy = 0.0;
  double balance = 0.0;
  double value() const { return cross_entropy + balance; }
};

/// `p_target` is the (detached) fused distribution, one row per sample.
/// Balance uses the batch mean of `p_target`.
AlignmentTerms alignment_loss(const Matrix& p_target, const Matrix& p_ada, double balance_coef);

/// -(1/n) sum_i w_i sum_c p_ic log p_ic.
double entropy_loss(const Matrix& p, std::span<const double> weights);

/// exp(E0 - H) when H < E0, otherwise 0.
double sample_weight(double entropy, double threshold);

struct LossAndGradient {
  LossBreakdown loss;
  Matrix d_total_d_logits;  // n x K, w.r.t. the adapter's raw logits
};

/// Evaluates the objective on one batch and differentiates it w.r.t. the
/// adapter's raw logits. `lambda` is held constant, as are the CE target and
/// the entropy sample weights. `step` is only used to tag a
/// NumericalFailure.
LossAndGradient total_loss_and_grad(const Matrix& z_vlm_norm, const Matrix& z_ada_raw,
                                    std::span<const double> lambda,
                                    fusion::NormalizationStrategy normalization,
                                    const LossHyperparams& hyper, long step = -1);

}  // namespace sail::objectives
