#pragma once
// Multi-label evaluation: per-class average precision / mAP, macro
// precision-recall-F1 (CP, CR, CF1) and micro precision-recall-F1 (OP, OR, OF1).

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdcr/io.hpp"
#include "cdcr/numeric.hpp"

namespace cdcr {

inline constexpr const char* kMetricConventions =
    "AP ties broken by sample index; classes without positives excluded from mAP; "
    "precision/recall/F1 are 0 when their denominator is 0; CF1 from averaged CP and CR";

struct MetricsReport {
  double map = 0.0;
  std::vector<std::optional<double>> per_class_ap;  // nullopt: class has no positives
  double cp = 0.0, cr = 0.0, cf1 = 0.0;
  double op = 0.0, or_ = 0.0, of1 = 0.0;
  double threshold = 0.5;
  std::size_t total_tp = 0;
  std::size_t total_predicted = 0;
};

/// Precision averaged over the ranks of the positive samples, ranking by
/// score descending with ties broken by index. nullopt when no positives.
inline std::optional<double> average_precision(std::span<const double> scores,
                                               std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw ValidationError("average_precision: length mismatch");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] == 1.0) {
      hits += 1.0;
      sum += hits / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0.0) return std::nullopt;
  return sum / hits;
}

namespace detail {
inline double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
inline double f1(double p, double r) { return safe_div(2.0 * p * r, p + r); }
}  // namespace detail

inline MetricsReport evaluate(const Matrix& probs, const Matrix& labels, double threshold = 0.5) {
  require_same_shape(probs, labels, "evaluate: labels");
  const std::size_t n = probs.rows();
  const std::size_t k = probs.cols();
  MetricsReport r;
  r.threshold = threshold;
  r.per_class_ap.resize(k);

  std::vector<double> scores(n);
  std::vector<double> column(n);
  double ap_sum = 0.0;
  std::size_t ap_count = 0;
  double cp_sum = 0.0;
  double cr_sum = 0.0;
  std::size_t tp_all = 0, fp_all = 0, fn_all = 0;
  for (std::size_t j = 0; j < k; ++j) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = probs(i, j);
      column[i] = labels(i, j);
      const bool predicted = probs(i, j) >= threshold;
      const bool actual = labels(i, j) == 1.0;
      tp += predicted && actual;
      fp += predicted && !actual;
      fn += !predicted && actual;
    }
    r.per_class_ap[j] = average_precision(scores, column);
    if (r.per_class_ap[j]) {
      ap_sum += *r.per_class_ap[j];
      ++ap_count;
    }
    cp_sum += detail::safe_div(static_cast<double>(tp), static_cast<double>(tp + fp));
    cr_sum += detail::safe_div(static_cast<double>(tp), static_cast<double>(tp + fn));
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
  }
  r.map = detail::safe_div(ap_sum, static_cast<double>(ap_count));
  r.cp = detail::safe_div(cp_sum, static_cast<double>(k));
  r.cr = detail::safe_div(cr_sum, static_cast<double>(k));
  r.cf1 = detail::f1(r.cp, r.cr);
  r.op = detail::safe_div(static_cast<double>(tp_all), static_cast<double>(tp_all + fp_all));
  r.or_ = detail::safe_div(static_cast<double>(tp_all), static_cast<double>(tp_all + fn_all));
  r.of1 = detail::f1(r.op, r.or_);
  r.total_tp = tp_all;
  r.total_predicted = tp_all + fp_all;
  return r;
}

inline json to_json(const MetricsReport& r) {
  json ap = json::array();
  for (const auto& a : r.per_class_ap) ap.push_back(a ? json(*a) : json(nullptr));
  return json{{"mAP", r.map}, {"CP", r.cp},   {"CR", r.cr},
              {"CF1", r.cf1}, {"OP", r.op},   {"OR", r.or_},
              {"OF1", r.of1}, {"threshold", r.threshold},
              {"per_class_ap", ap},
              {"conventions", kMetricConventions}};
}

inline std::string metrics_csv_header() { return "mAP,CP,CR,CF1,OP,OR,OF1"; }

inline std::string metrics_csv_row(const MetricsReport& r) {
  return format_real(r.map) + "," + format_real(r.cp) + "," + format_real(r.cr) + "," +
         format_real(r.cf1) + "," + format_real(r.op) + "," + format_real(r.or_) + "," +
         format_real(r.of1);
}

}  // namespace cdcr
