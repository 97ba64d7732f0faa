#pragma once
// Binary cross-entropy in its plain and weighted forms, the self-paced
// penalty, and the consistency-regularized objective.

#include <cmath>
#include <span>
#include <string>
#include <string_view>

#include "cdcr/numeric.hpp"

namespace cdcr {

struct LossValue {
  double total = 0.0;
  Matrix per_term;    // unweighted l(y_ij, p_ij)
  Matrix grad_wrt_p;  // d total / d p_ij
};

/// How non-candidate labels enter the weighted loss.
enum class NegativeMode {
  // Non-candidates are trained as negatives with weight 1; unidentified
  // candidates contribute nothing.
  ConfidentNegatives,
  // Only the weighted terms count; non-candidates have weight 0, so there is
  // no negative supervision at all.
  PaperLiteral,
};

inline std::string_view to_string(NegativeMode m) {
  return m == NegativeMode::ConfidentNegatives ? "CONFIDENT_NEGATIVES" : "PAPER_LITERAL";
}

inline NegativeMode parse_negative_mode(std::string_view s) {
  if (s == "CONFIDENT_NEGATIVES") return NegativeMode::ConfidentNegatives;
  if (s == "PAPER_LITERAL") return NegativeMode::PaperLiteral;
  throw ValidationError("negative_mode must be CONFIDENT_NEGATIVES or PAPER_LITERAL, got '" +
                        std::string(s) + "'");
}

/// l(y, p) = -[y log p + (1 - y) log(1 - p)] on the clamped probability.
inline double bce_term(double y, double p) {
  const double pc = clamp_prob(p);
  return -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
}

inline double bce_term_grad(double y, double p) {
  const double pc = clamp_prob(p);
  return (pc - y) / (pc * (1.0 - pc));
}

/// Plain multi-label BCE of one row, summed over labels.
inline LossValue bce(std::span<const double> candidates_row, std::span<const double> probs_row) {
  if (candidates_row.size() != probs_row.size()) {
    throw ValidationError("bce: length mismatch " + std::to_string(candidates_row.size()) +
                          " vs " + std::to_string(probs_row.size()));
  }
  const std::size_t k = probs_row.size();
  LossValue out{0.0, Matrix(1, k), Matrix(1, k)};
  for (std::size_t j = 0; j < k; ++j) {
    out.per_term(0, j) = bce_term(candidates_row[j], probs_row[j]);
    out.grad_wrt_p(0, j) = bce_term_grad(candidates_row[j], probs_row[j]);
    out.total += out.per_term(0, j);
  }
  return out;
}

/// Effective weight of term (i, j) in the weighted loss.
inline double term_weight(double candidate, double omega, NegativeMode mode) {
  if (candidate == 1.0) return omega;
  return mode == NegativeMode::ConfidentNegatives ? 1.0 : 0.0;
}

/// Weighted BCE averaged over the batch. Omega must be binary and zero on
/// every non-candidate entry.
inline LossValue weighted_bce(const Matrix& candidates, const Matrix& omega, const Matrix& probs,
                              NegativeMode mode) {
  require_same_shape(candidates, omega, "weighted_bce: omega");
  require_same_shape(candidates, probs, "weighted_bce: probs");
  const std::size_t b = probs.rows();
  const std::size_t k = probs.cols();
  LossValue out{0.0, Matrix(b, k), Matrix(b, k)};
  if (b == 0) return out;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double y = candidates(i, j);
      const double w = omega(i, j);
      if (w != 0.0 && w != 1.0) {
        throw ValidationError("weighted_bce: omega[" + std::to_string(i) + "][" +
                              std::to_string(j) + "] is not binary");
      }
      if (w != 0.0 && y == 0.0) {
        throw ValidationError("weighted_bce: omega[" + std::to_string(i) + "][" +
                              std::to_string(j) + "] is set on a non-candidate label");
      }
      const double p = probs(i, j);
      const double ell = bce_term(y, p);
      const double weight = term_weight(y, w, mode);
      out.per_term(i, j) = ell;
      out.total += weight * ell;
      out.grad_wrt_p(i, j) = weight == 0.0 ? 0.0 : weight * bce_term_grad(y, p) * inv_b;
    }
  }
  out.total *= inv_b;
  return out;
}

/// Self-paced regularizer: -lambda * sum of weights.
inline double selfpaced_penalty(const Matrix& omega, double lambda) {
  double count = 0.0;
  for (double w : omega.data()) count += w;
  return -lambda * count;
}

/// The training objective on augmented-view probabilities with Omega fixed.
/// The penalty term is constant in the parameters and is not included.
inline LossValue cdcr_objective(const Matrix& candidates, const Matrix& omega,
                                const Matrix& probs_on_augmented, NegativeMode mode) {
  return weighted_bce(candidates, omega, probs_on_augmented, mode);
}

}  // namespace cdcr
