#pragma once

// Per-sample logit arithmetic: normalization, softmax, entropy, the
// interpolation weight between generalist and adapter, and the fusion itself.
// Everything here is a pure function of its arguments.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sail/types.hpp"

namespace sail::fusion {

enum class NormalizationStrategy { lse, softmax, z_score, l2, min_max };

enum class WeightStrategy { confidence, average, batch_entropy, sample_entropy };

NormalizationStrategy parse_normalization(std::string_view name);
std::string_view to_string(NormalizationStrategy s);
WeightStrategy parse_weight(std::string_view name);
std::string_view to_string(WeightStrategy s);

/// Guard used by the z-score strategy's denominator.
inline constexpr double kZScoreEps = 1e-12;

/// log(sum_j exp(z_j)) with max-subtraction. Throws InvalidInput on empty or
/// non-finite input.
double log_sum_exp(std::span<const double> z);

std::vector<double> normalize_logits(std::span<const double> z, NormalizationStrategy strategy);

/// Vector-Jacobian product of normalize_logits at z: given dL/dy for
/// y = normalize_logits(z), returns dL/dz.
std::vector<double> normalize_logits_vjp(std::span<const double> z,
                                         NormalizationStrategy strategy,
                                         std::span<const double> upstream);

std::vector<double> softmax(std::span<const double> z);

/// Shannon entropy in nats, 0*ln(0) taken as 0.
double entropy(std::span<const double> p);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> v);

/// One weight per row. `p_vlm` and `p_ada` hold probability rows of equal
/// shape. The batch-entropy strategy returns the same value for every row.
std::vector<double> interpolation_weight(const Matrix& p_vlm, const Matrix& p_ada,
                                         WeightStrategy strategy);

/// lambda * z_vlm + (1 - lambda) * z_ada. Throws InvalidInput when lambda is
/// outside [0, 1] or the lengths differ.
std::vector<double> fuse(std::span<const double> z_vlm, std::span<const double> z_ada,
                         double lambda);

// Row-wise batch helpers.
Matrix normalize_rows(const Matrix& z, NormalizationStrategy strategy);
Matrix softmax_rows(const Matrix& z);
std::vector<double> entropy_rows(const Matrix& p);
Matrix fuse_rows(const Matrix& z_vlm, const Matrix& z_ada, std::span<const double> lambda);

inline std::span<const double> row_span(const Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace sail::fusion
