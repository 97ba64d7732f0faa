#pragma once
// Stochastic feature-space augmentation: multiplicative jitter, additive
// Gaussian noise and coordinate dropout.

#include <span>
#include <string>
#include <vector>

#include "cdcr/numeric.hpp"

namespace cdcr {

struct AugmentPolicy {
  double gaussian_std = 0.1;
  double dropout_rate = 0.0;  // any dropout flips labels of linear concepts; see README
  double scale_jitter = 0.1;  // half-width of the uniform multiplicative jitter

  static AugmentPolicy identity() { return {0.0, 0.0, 0.0}; }
  bool is_identity() const {
    return gaussian_std == 0.0 && dropout_rate == 0.0 && scale_jitter == 0.0;
  }

  void validate() const {
    if (!(gaussian_std >= 0.0)) throw ValidationError("augment: gaussian_std must be >= 0");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw ValidationError("augment: dropout_rate must lie in [0, 1), got " +
                            std::to_string(dropout_rate));
    }
    if (!(scale_jitter >= 0.0)) throw ValidationError("augment: scale_jitter must be >= 0");
  }
  friend bool operator==(const AugmentPolicy&, const AugmentPolicy&) = default;
};

/// x' = mask * (x * (1 + u) + g). Three draws per coordinate, always in the
/// same order, so a given stream produces the same view regardless of policy
/// values.
inline std::vector<double> augment(std::span<const double> x, const AugmentPolicy& policy,
                                   Rng& rng) {
  policy.validate();
  std::vector<double> out(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) {
    const double g = policy.gaussian_std * rng.normal();
    const double u = policy.scale_jitter * (2.0 * rng.uniform() - 1.0);
    const bool drop = rng.uniform() < policy.dropout_rate;
    out[c] = drop ? 0.0 : x[c] * (1.0 + u) + g;
  }
  return out;
}

/// Augments every row of `batch`; row r draws from `root.split(stream_ids[r])`.
inline Matrix augment_rows(const Matrix& batch, const AugmentPolicy& policy, const Rng& root,
                           std::span<const std::uint64_t> stream_ids) {
  if (policy.is_identity()) return batch;
  Matrix out(batch.rows(), batch.cols());
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    Rng rng = root.split(stream_ids[r]);
    const auto view = augment(batch.row(r), policy, rng);
    std::copy(view.begin(), view.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace cdcr
