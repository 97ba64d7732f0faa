#pragma once
// Disambiguation weight estimation. Each rule returns a binary matrix that
// marks the candidate labels currently treated as true.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cdcr/numeric.hpp"

namespace cdcr {

/// Binary n x K weights; never set outside the candidate set.
struct WeightMatrix {
  Matrix omega;

  std::size_t identified() const {
    std::size_t n = 0;
    for (double w : omega.data()) n += w == 1.0 ? 1 : 0;
    return n;
  }
  std::vector<std::size_t> per_class_identified() const {
    std::vector<std::size_t> counts(omega.cols(), 0);
    for (std::size_t i = 0; i < omega.rows(); ++i) {
      for (std::size_t j = 0; j < omega.cols(); ++j) counts[j] += omega(i, j) == 1.0 ? 1 : 0;
    }
    return counts;
  }
  friend bool operator==(const WeightMatrix&, const WeightMatrix&) = default;
};

/// Alpha is the stored threshold; lambda is derived from it so that for a
/// positive term l(1, p) < lambda holds exactly when p > alpha.
struct CurriculumConfig {
  double alpha = 0.8;
  bool difficulty_enabled = false;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw ValidationError("alpha must lie in [0, 1], got " + std::to_string(alpha));
    }
  }
  double lambda() const {
    return alpha == 0.0 ? std::numeric_limits<double>::infinity() : -std::log(alpha);
  }
};

struct DifficultyBaselines {
  std::vector<double> b;  // per class
  double b_bar = 0.5;     // pooled over all classes
};

namespace detail {
template <typename Pred>
WeightMatrix select_candidates(const Matrix& values, const Matrix& candidates, Pred&& keep) {
  require_same_shape(values, candidates, "curriculum: candidates");
  WeightMatrix out{Matrix(values.rows(), values.cols())};
  for (std::size_t i = 0; i < values.rows(); ++i) {
    for (std::size_t j = 0; j < values.cols(); ++j) {
      if (candidates(i, j) == 1.0 && keep(values(i, j), j)) out.omega(i, j) = 1.0;
    }
  }
  return out;
}
}  // namespace detail

/// omega_ij = 1 iff candidate and p_ij >= alpha.
inline WeightMatrix estimate_weights(const Matrix& probs, const Matrix& candidates, double alpha) {
  return detail::select_candidates(probs, candidates,
                                   [alpha](double p, std::size_t) { return p >= alpha; });
}

/// Closed-form minimizer of the self-paced objective: omega_ij = 1 iff
/// candidate and loss_ij < lambda.
inline WeightMatrix selfpaced_weights(const Matrix& losses, const Matrix& candidates,
                                      double lambda) {
  return detail::select_candidates(losses, candidates,
                                   [lambda](double l, std::size_t) { return l < lambda; });
}

/// b_j is the mean probability over the candidates of class j predicted
/// above 0.5; b_bar pools those entries over every class. Empty sets fall
/// back to b_j = b_bar and b_bar = 0.5.
inline DifficultyBaselines compute_baselines(const Matrix& probs, const Matrix& candidates) {
  require_same_shape(probs, candidates, "compute_baselines: candidates");
  const std::size_t k = probs.cols();
  std::vector<double> sum(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double p = probs(i, j);
      if (p > 0.5 && candidates(i, j) == 1.0) {
        sum[j] += p;
        count[j] += 1;
      }
    }
  }
  double pooled_sum = 0.0;
  std::size_t pooled_count = 0;
  for (std::size_t j = 0; j < k; ++j) {
    pooled_sum += sum[j];
    pooled_count += count[j];
  }
  DifficultyBaselines out;
  out.b_bar = pooled_count == 0 ? 0.5 : pooled_sum / static_cast<double>(pooled_count);
  out.b.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    out.b[j] = count[j] == 0 ? out.b_bar : sum[j] / static_cast<double>(count[j]);
  }
  return out;
}

/// omega_ij = 1 iff candidate and p_ij - b_j >= alpha - b_bar, evaluated as
/// p_ij >= alpha + (b_j - b_bar) so equal baselines give the plain rule
/// bit for bit.
inline WeightMatrix estimate_weights_difficulty(const Matrix& probs, const Matrix& candidates,
                                                double alpha,
                                                const DifficultyBaselines& baselines) {
  if (baselines.b.size() != probs.cols()) {
    throw ValidationError("estimate_weights_difficulty: " + std::to_string(baselines.b.size()) +
                          " baselines for " + std::to_string(probs.cols()) + " classes");
  }
  std::vector<double> threshold(probs.cols());
  for (std::size_t j = 0; j < threshold.size(); ++j) {
    threshold[j] = alpha + (baselines.b[j] - baselines.b_bar);
  }
  return detail::select_candidates(
      probs, candidates, [&threshold](double p, std::size_t j) { return p >= threshold[j]; });
}

/// Estimates weights with the rule selected by the config.
inline WeightMatrix estimate(const Matrix& probs, const Matrix& candidates,
                             const CurriculumConfig& config) {
  if (config.difficulty_enabled) {
    return estimate_weights_difficulty(probs, candidates, config.alpha,
                                       compute_baselines(probs, candidates));
  }
  return estimate_weights(probs, candidates, config.alpha);
}

struct Diagnostics {
  double precision = 0.0;         // fraction of identified labels that are true
  std::size_t repeated_noisy = 0; // noisy labels identified in both snapshots
  std::size_t identified = 0;
};

inline Diagnostics diagnostics(const WeightMatrix& current,
                               const std::optional<WeightMatrix>& previous,
                               const Matrix& true_labels, const Matrix& candidates) {
  require_same_shape(current.omega, true_labels, "diagnostics: true_labels");
  require_same_shape(current.omega, candidates, "diagnostics: candidates");
  if (previous) require_same_shape(current.omega, previous->omega, "diagnostics: previous");
  Diagnostics d;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < current.omega.rows(); ++i) {
    for (std::size_t j = 0; j < current.omega.cols(); ++j) {
      if (current.omega(i, j) != 1.0) continue;
      d.identified += 1;
      if (true_labels(i, j) == 1.0) {
        hits += 1;
      } else if (previous && previous->omega(i, j) == 1.0) {
        d.repeated_noisy += 1;
      }
    }
  }
  d.precision = static_cast<double>(hits) / static_cast<double>(std::max<std::size_t>(1, d.identified));
  return d;
}

}  // namespace cdcr
