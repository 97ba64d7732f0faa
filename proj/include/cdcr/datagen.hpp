#pragma once
// Synthetic multi-label data with linear class concepts, and its corruption
// into partial-label form by independent per-label flips.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdcr/io.hpp"
#include "cdcr/numeric.hpp"

namespace cdcr {

struct DatasetSpec {
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  std::size_t n_features = 32;
  std::size_t n_classes = 20;
  double avg_positives = 1.6;
  double class_frequency_skew = 0.0;  // 0 = balanced; geometric decay of class rates otherwise
  double concept_noise_std = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_classes < 2) throw ValidationError("n_classes must be >= 2");
    if (n_features < 1) throw ValidationError("n_features must be >= 1");
    if (n_train < 1) throw ValidationError("n_train must be >= 1");
    if (!(avg_positives >= 1.0 && avg_positives < static_cast<double>(n_classes))) {
      throw ValidationError("avg_positives must lie in [1, n_classes), got " +
                            std::to_string(avg_positives));
    }
    if (!(class_frequency_skew >= 0.0)) throw ValidationError("class_frequency_skew must be >= 0");
    if (!(concept_noise_std >= 0.0)) throw ValidationError("concept_noise_std must be >= 0");
  }

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct MultiLabelDataset {
  Matrix features;     // n x d
  Matrix true_labels;  // n x K, binary

  std::size_t size() const { return features.rows(); }
  std::size_t num_classes() const { return true_labels.cols(); }
  friend bool operator==(const MultiLabelDataset&, const MultiLabelDataset&) = default;
};

struct PartialDataset {
  MultiLabelDataset base;
  Matrix candidates;  // n x K, binary, candidates >= base.true_labels
  double flip_rate = 0.0;
  std::uint64_t seed = 0;
  std::optional<DatasetSpec> spec;

  std::size_t size() const { return base.size(); }
  std::size_t num_classes() const { return base.num_classes(); }
  const Matrix& features() const { return base.features; }
  const Matrix& true_labels() const { return base.true_labels; }
  friend bool operator==(const PartialDataset&, const PartialDataset&) = default;
};

struct SplitDataset {
  MultiLabelDataset train;
  MultiLabelDataset test;
};

/// A training set in partial-label form plus its clean held-out split; the
/// on-disk unit for every CLI command.
struct DatasetBundle {
  PartialDataset train;
  std::optional<MultiLabelDataset> test;
  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

namespace detail {

// Expected row sum conditioned on at least one positive, assuming
// independent labels with rates r_j.
inline double conditional_row_mean(const std::vector<double>& rates) {
  double sum = 0.0;
  double none = 1.0;
  for (double r : rates) {
    sum += r;
    none *= 1.0 - r;
  }
  return sum / (1.0 - none);
}

inline std::vector<double> class_profile(std::size_t k, double skew) {
  std::vector<double> profile(k);
  for (std::size_t j = 0; j < k; ++j) {
    profile[j] = std::exp(-skew * static_cast<double>(j) / static_cast<double>(k - 1));
  }
  return profile;
}

}  // namespace detail

/// Per-class positive rates r_j = c * exp(-skew * j / (K-1)), with c chosen
/// so that the expected row sum after re-drawing empty rows is avg_positives.
inline std::vector<double> calibrate_class_rates(const DatasetSpec& spec) {
  spec.validate();
  const auto profile = detail::class_profile(spec.n_classes, spec.class_frequency_skew);
  auto rates_for = [&](double c) {
    std::vector<double> r(profile.size());
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = c * profile[j];
    return r;
  };
  // profile[0] == 1, so c must stay below 1 to keep every rate a probability.
  const double c_max = 1.0 - 1e-9;
  if (!(detail::conditional_row_mean(rates_for(c_max)) > spec.avg_positives) ||
      !(detail::conditional_row_mean(rates_for(1e-12)) < spec.avg_positives)) {
    throw ValidationError("calibration failure: avg_positives " +
                          std::to_string(spec.avg_positives) +
                          " unreachable with n_classes " + std::to_string(spec.n_classes) +
                          " and class_frequency_skew " +
                          std::to_string(spec.class_frequency_skew));
  }
  double lo = 1e-12;
  double hi = c_max;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (detail::conditional_row_mean(rates_for(mid)) < spec.avg_positives ? lo : hi) = mid;
  }
  return rates_for(0.5 * (lo + hi));
}

/// Draws train and test splits from the same class concepts.
inline SplitDataset generate(const DatasetSpec& spec) {
  const auto rates = calibrate_class_rates(spec);
  const std::size_t d = spec.n_features;
  const std::size_t k = spec.n_classes;

  // Unit concept vectors; projection of a standard Gaussian on each is N(0,1).
  Rng concept_rng(spec.seed, 0);
  Matrix concepts(k, d);
  for (std::size_t j = 0; j < k; ++j) {
    auto w = concepts.row(j);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : w) {
        v = concept_rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& v : w) v /= norm;
  }
  std::vector<double> thresholds(k);
  for (std::size_t j = 0; j < k; ++j) thresholds[j] = normal_quantile(1.0 - rates[j]);

  const Rng row_root(spec.seed, 1);
  auto draw = [&](std::size_t n, std::uint64_t stream_offset) {
    MultiLabelDataset out{Matrix(n, d), Matrix(n, k)};
    std::vector<double> z(d);
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = row_root.split(stream_offset + i);
      auto y = out.true_labels.row(i);
      std::size_t positives = 0;
      for (int attempt = 0; positives == 0; ++attempt) {
        if (attempt == 100000) throw ValidationError("generate: cannot draw a non-empty label row");
        for (auto& v : z) v = rng.normal();
        positives = 0;
        for (std::size_t j = 0; j < k; ++j) {
          double proj = 0.0;
          auto w = concepts.row(j);
          for (std::size_t c = 0; c < d; ++c) proj += w[c] * z[c];
          y[j] = proj > thresholds[j] ? 1.0 : 0.0;
          positives += proj > thresholds[j] ? 1 : 0;
        }
      }
      auto x = out.features.row(i);
      for (std::size_t c = 0; c < d; ++c) x[c] = z[c] + spec.concept_noise_std * rng.normal();
    }
    return out;
  };
  return SplitDataset{draw(spec.n_train, 0), draw(spec.n_test, spec.n_train)};
}

/// Flips every irrelevant label into a candidate independently with
/// probability q; true labels are always candidates.
inline PartialDataset corrupt(const MultiLabelDataset& dataset, double q, std::uint64_t seed) {
  if (!(q >= 0.0 && q < 1.0)) {
    throw ValidationError("q must lie in [0, 1), got " + std::to_string(q));
  }
  PartialDataset out{dataset, dataset.true_labels, q, seed, std::nullopt};
  const Rng root(seed, 2);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Rng rng = root.split(i);
    auto cand = out.candidates.row(i);
    for (std::size_t j = 0; j < cand.size(); ++j) {
      const bool flip = rng.bernoulli(q);
      if (cand[j] == 0.0 && flip) cand[j] = 1.0;
    }
  }
  return out;
}

/// Fraction of each class's candidates that are false positives.
inline std::vector<double> noise_rate_per_class(const PartialDataset& p) {
  const std::size_t k = p.num_classes();
  std::vector<double> flipped(k, 0.0);
  std::vector<double> observed(k, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (p.candidates(i, j) == 1.0) {
        observed[j] += 1.0;
        if (p.true_labels()(i, j) == 0.0) flipped[j] += 1.0;
      }
    }
  }
  std::vector<double> rate(k);
  for (std::size_t j = 0; j < k; ++j) rate[j] = flipped[j] / std::max(1.0, observed[j]);
  return rate;
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(json& j, const DatasetSpec& s) {
  j = json{{"n_train", s.n_train},
           {"n_test", s.n_test},
           {"n_features", s.n_features},
           {"n_classes", s.n_classes},
           {"avg_positives", s.avg_positives},
           {"class_frequency_skew", s.class_frequency_skew},
           {"concept_noise_std", s.concept_noise_std},
           {"seed", s.seed}};
}

/// Missing fields keep their defaults; unknown fields are ignored.
inline void from_json(const json& j, DatasetSpec& s) {
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw ValidationError(std::string("spec field '") + key + "' has the wrong type");
    }
  };
  get("n_train", s.n_train);
  get("n_test", s.n_test);
  get("n_features", s.n_features);
  get("n_classes", s.n_classes);
  get("avg_positives", s.avg_positives);
  get("class_frequency_skew", s.class_frequency_skew);
  get("concept_noise_std", s.concept_noise_std);
  get("seed", s.seed);
}

namespace detail {

inline json matrix_to_json(const Matrix& m, bool binary) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (double v : m.row(i)) {
      if (binary) {
        row.push_back(static_cast<int>(v));
      } else {
        row.push_back(v);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& doc, const char* field, std::size_t rows,
                               std::size_t cols, bool binary) {
  if (!doc.contains(field)) throw ValidationError(std::string("missing field '") + field + "'");
  const json& arr = doc.at(field);
  if (!arr.is_array() || arr.size() != rows) {
    throw ValidationError(std::string("field '") + field + "': expected " +
                          std::to_string(rows) + " rows");
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const json& row = arr[i];
    if (!row.is_array() || row.size() != cols) {
      throw ValidationError(std::string(field) + "[" + std::to_string(i) + "]: expected " +
                            std::to_string(cols) + " entries");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      const json& v = row[c];
      const std::string where =
          std::string(field) + "[" + std::to_string(i) + "][" + std::to_string(c) + "]";
      if (!v.is_number()) throw ValidationError(where + ": not a number");
      const double x = v.get<double>();
      if (!std::isfinite(x)) throw ValidationError(where + ": not finite");
      if (binary && x != 0.0 && x != 1.0) throw ValidationError(where + ": expected 0 or 1");
      m(i, c) = x;
    }
  }
  return m;
}

inline std::size_t count_field(const json& doc, const char* field) {
  if (!doc.contains(field) || !doc.at(field).is_number_unsigned()) {
    throw ValidationError(std::string("missing or non-integer field '") + field + "'");
  }
  return doc.at(field).get<std::size_t>();
}

inline void check_label_rows(const Matrix& y, const char* field) {
  for (std::size_t i = 0; i < y.rows(); ++i) {
    bool any = false;
    for (double v : y.row(i)) any = any || v == 1.0;
    if (!any) {
      throw ValidationError(std::string(field) + "[" + std::to_string(i) +
                            "]: row has no positive label");
    }
  }
}

}  // namespace detail

inline json bundle_to_json(const DatasetBundle& b) {
  const PartialDataset& p = b.train;
  json doc{{"n", p.size()},
           {"d", p.features().cols()},
           {"K", p.num_classes()},
           {"q", p.flip_rate},
           {"seed", p.seed},
           {"spec", p.spec ? json(*p.spec) : json(nullptr)},
           {"features", detail::matrix_to_json(p.features(), false)},
           {"true_labels", detail::matrix_to_json(p.true_labels(), true)},
           {"candidates", detail::matrix_to_json(p.candidates, true)}};
  if (b.test) {
    doc["test"] = json{{"n", b.test->size()},
                       {"features", detail::matrix_to_json(b.test->features, false)},
                       {"true_labels", detail::matrix_to_json(b.test->true_labels, true)}};
  }
  return doc;
}

inline DatasetBundle bundle_from_json(const json& doc) {
  if (!doc.is_object()) throw ValidationError("dataset document must be a JSON object");
  const std::size_t n = detail::count_field(doc, "n");
  const std::size_t d = detail::count_field(doc, "d");
  const std::size_t k = detail::count_field(doc, "K");
  if (!doc.contains("q") || !doc.at("q").is_number()) throw ValidationError("missing field 'q'");
  const double q = doc.at("q").get<double>();
  if (!(q >= 0.0 && q < 1.0)) throw ValidationError("field 'q' must lie in [0, 1)");
  if (!doc.contains("seed") || !doc.at("seed").is_number_unsigned()) {
    throw ValidationError("missing or non-integer field 'seed'");
  }

  DatasetBundle b;
  PartialDataset& p = b.train;
  p.flip_rate = q;
  p.seed = doc.at("seed").get<std::uint64_t>();
  if (doc.contains("spec") && !doc.at("spec").is_null()) p.spec = doc.at("spec").get<DatasetSpec>();
  p.base.features = detail::matrix_from_json(doc, "features", n, d, false);
  p.base.true_labels = detail::matrix_from_json(doc, "true_labels", n, k, true);
  p.candidates = detail::matrix_from_json(doc, "candidates", n, k, true);
  detail::check_label_rows(p.base.true_labels, "true_labels");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (p.base.true_labels(i, j) == 1.0 && p.candidates(i, j) == 0.0) {
        throw ValidationError("candidates[" + std::to_string(i) + "][" + std::to_string(j) +
                              "]: true label is not a candidate");
      }
    }
  }
  if (doc.contains("test") && !doc.at("test").is_null()) {
    const json& t = doc.at("test");
    const std::size_t nt = detail::count_field(t, "n");
    MultiLabelDataset test{detail::matrix_from_json(t, "features", nt, d, false),
                           detail::matrix_from_json(t, "true_labels", nt, k, true)};
    detail::check_label_rows(test.true_labels, "test.true_labels");
    b.test = std::move(test);
  }
  return b;
}

inline void save(const DatasetBundle& b, const std::filesystem::path& path) {
  write_file_atomic(path, bundle_to_json(b).dump() + "\n");
}

inline void save(const PartialDataset& p, const std::filesystem::path& path) {
  save(DatasetBundle{p, std::nullopt}, path);
}

inline DatasetBundle load_bundle(const std::filesystem::path& path) {
  try {
    return bundle_from_json(read_json_file(path));
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path.string(), 0) == 0) throw;
    throw ValidationError(path.string() + ": " + msg);
  }
}

inline PartialDataset load(const std::filesystem::path& path) { return load_bundle(path).train; }

}  // namespace cdcr
