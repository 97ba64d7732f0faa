#pragma once
// End-to-end training: BCE warm-up, then per-epoch weight estimation from the
// EMA model on clean inputs followed by mini-batch updates of the weighted
// loss on augmented inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cdcr/augment.hpp"
#include "cdcr/classifier.hpp"
#include "cdcr/curriculum.hpp"
#include "cdcr/datagen.hpp"
#include "cdcr/io.hpp"
#include "cdcr/losses.hpp"
#include "cdcr/metrics.hpp"

namespace cdcr {

enum class Method { BCE, CD, CDCR, CDCR_DIFF };

inline constexpr Method kAllMethods[] = {Method::BCE, Method::CD, Method::CDCR, Method::CDCR_DIFF};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::BCE: return "BCE";
    case Method::CD: return "CD";
    case Method::CDCR: return "CDCR";
    case Method::CDCR_DIFF: return "CDCR_DIFF";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (Method m : kAllMethods) {
    if (to_string(m) == s) return m;
  }
  throw ValidationError("method must be one of BCE, CD, CDCR, CDCR_DIFF, got '" +
                        std::string(s) + "'");
}

struct TrainConfig {
  int epochs = 60;  // total, warm-up included
  int warmup_epochs = 15;
  std::size_t batch_size = 32;
  double max_lr = 2e-2;
  double warmup_fraction = 0.3;
  double start_div = 25.0;
  double final_div = 1e4;
  double alpha = 0.8;
  bool difficulty_enabled = false;
  NegativeMode negative_mode = NegativeMode::ConfidentNegatives;
  AugmentPolicy augment_policy;
  double ema_decay = 0.9997;
  bool ema_warmup = true;
  std::vector<std::size_t> hidden = {256};
  std::uint64_t seed = 1;
  Method method = Method::CDCR;

  void validate() const {
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs >= epochs) {
      throw ValidationError("warmup_epochs must lie in [0, epochs)");
    }
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ValidationError("ema_decay must lie in [0, 1]");
    for (auto h : hidden) {
      if (h == 0) throw ValidationError("hidden layer sizes must be positive");
    }
    curriculum().validate();
    augment_policy.validate();
    LrSchedule{max_lr, 1, warmup_fraction, start_div, final_div}.validate();
  }

  bool uses_weights() const { return method != Method::BCE; }
  CurriculumConfig curriculum() const {
    return {alpha, difficulty_enabled || method == Method::CDCR_DIFF};
  }
  /// CD isolates the curriculum from consistency: it trains on clean inputs.
  AugmentPolicy effective_augment() const {
    return method == Method::CDCR || method == Method::CDCR_DIFF ? augment_policy
                                                                 : AugmentPolicy::identity();
  }
};

struct EpochRecord {
  int epoch = 0;
  std::string phase;  // "warmup" or "curriculum"
  double lr = 0.0;    // rate of the last step of the epoch
  double train_loss = 0.0;
  std::size_t updates = 0;
  std::optional<MetricsReport> test;      // EMA model
  std::optional<MetricsReport> test_raw;  // live parameters
  double disamb_precision = 0.0;
  std::size_t identified = 0;
  std::size_t repeated_noisy = 0;
  std::vector<std::size_t> per_class_identified;
  double mean_prob_true_candidates = 0.0;
  double mean_prob_noisy_candidates = 0.0;
  double selfpaced_penalty = 0.0;
};

/// One record per completed epoch. snapshots[e] is the weight matrix
/// estimated from the EMA model at the end of epoch e, i.e. the one used
/// during epoch e + 1.
struct TrainHistory {
  Method method = Method::CDCR;
  std::vector<EpochRecord> records;
  std::vector<WeightMatrix> snapshots;
};

struct TrainState {
  Classifier model;
  OptimState opt;
  EmaShadow ema;
  LrSchedule schedule;
  std::int64_t step = 0;
  std::int64_t ema_updates = 0;

  Checkpoint checkpoint() const { return {model, ema, opt, step}; }
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainHistory history;
  WeightMatrix final_weights;
};

inline std::int64_t steps_per_epoch(std::size_t n, std::size_t batch_size) {
  return static_cast<std::int64_t>((n + batch_size - 1) / batch_size);
}

inline TrainState make_state(const TrainConfig& config, const PartialDataset& data) {
  config.validate();
  std::vector<std::size_t> sizes{data.features().cols()};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(data.num_classes());
  TrainState s;
  s.model = init_classifier(sizes, config.seed);
  s.opt = OptimState::for_model(s.model);
  s.ema = EmaShadow::of(s.model, config.ema_decay);
  s.schedule = LrSchedule{config.max_lr,
                          config.epochs * steps_per_epoch(data.size(), config.batch_size),
                          config.warmup_fraction, config.start_div, config.final_div};
  return s;
}

struct EpochStats {
  double mean_loss = 0.0;
  double last_lr = 0.0;
  std::size_t updates = 0;
};

/// One pass of ceil(n / B) updates over a reshuffled training set. With
/// `weights` null the loss is plain BCE on the candidates.
inline EpochStats run_epoch(TrainState& state, const PartialDataset& data, const TrainConfig& config,
                            int epoch, const WeightMatrix* weights) {
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(config.seed, 1000 + static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

  // Warm-up is shared by every method, so it never augments.
  const AugmentPolicy policy = weights ? config.effective_augment() : AugmentPolicy::identity();
  const Rng aug_root = Rng(config.seed, 3).split(static_cast<std::uint64_t>(epoch));
  const NegativeMode mode = weights ? config.negative_mode : NegativeMode::ConfidentNegatives;

  EpochStats stats;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < n; start += config.batch_size) {
    const std::size_t end = std::min(n, start + config.batch_size);
    const std::span<const std::size_t> idx(order.data() + start, end - start);
    const std::vector<std::uint64_t> streams(idx.begin(), idx.end());

    const Matrix x = augment_rows(gather_rows(data.features(), idx), policy, aug_root, streams);
    const Matrix y = gather_rows(data.candidates, idx);
    const Matrix omega = weights ? gather_rows(weights->omega, idx) : y;

    const ForwardPass pass = forward_pass(state.model.params, x);
    const LossValue loss = cdcr_objective(y, omega, pass.probs, mode);
    if (!std::isfinite(loss.total)) {
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(state.step));
    }
    const Parameters grads = backward(state.model.params, pass, loss.grad_wrt_p);
    const double lr = lr_at(state.schedule, std::min(state.step, state.schedule.total_steps - 1));
    try {
      adam_step(state.model, state.opt, grads, lr);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                         ", step " + std::to_string(state.step));
    }
    state.ema.decay = ema_decay_at(config.ema_decay, state.ema_updates, config.ema_warmup);
    ema_update(state.ema, state.model);
    state.ema.decay = config.ema_decay;
    state.ema_updates += 1;
    state.step += 1;

    loss_sum += loss.total;
    stats.last_lr = lr;
    stats.updates += 1;
  }
  stats.mean_loss = stats.updates == 0 ? 0.0 : loss_sum / static_cast<double>(stats.updates);
  return stats;
}

namespace detail {

inline EpochRecord open_record(int epoch, const char* phase, const EpochStats& stats) {
  EpochRecord rec;
  rec.epoch = epoch;
  rec.phase = phase;
  rec.lr = stats.last_lr;
  rec.train_loss = stats.mean_loss;
  rec.updates = stats.updates;
  return rec;
}

inline void fill_candidate_means(EpochRecord& rec, const Matrix& probs, const PartialDataset& data) {
  double true_sum = 0.0, noisy_sum = 0.0;
  std::size_t true_n = 0, noisy_n = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.num_classes(); ++j) {
      if (data.candidates(i, j) != 1.0) continue;
      if (data.true_labels()(i, j) == 1.0) {
        true_sum += probs(i, j);
        ++true_n;
      } else {
        noisy_sum += probs(i, j);
        ++noisy_n;
      }
    }
  }
  rec.mean_prob_true_candidates = true_n == 0 ? 0.0 : true_sum / static_cast<double>(true_n);
  rec.mean_prob_noisy_candidates = noisy_n == 0 ? 0.0 : noisy_sum / static_cast<double>(noisy_n);
}

// Estimates the next weights from the EMA model and fills the epoch record.
inline WeightMatrix close_epoch(EpochRecord& rec, const TrainState& state, const PartialDataset& data,
                                const std::optional<MultiLabelDataset>& test,
                                const TrainConfig& config, const TrainHistory& history) {
  const Matrix probs = forward(state.ema.shadow, data.features());
  const CurriculumConfig curriculum = config.curriculum();
  WeightMatrix next = estimate(probs, data.candidates, curriculum);
  std::optional<WeightMatrix> previous;
  if (!history.snapshots.empty()) previous = history.snapshots.back();
  const Diagnostics diag = diagnostics(next, previous, data.true_labels(), data.candidates);
  rec.disamb_precision = diag.precision;
  rec.identified = diag.identified;
  rec.repeated_noisy = diag.repeated_noisy;
  rec.per_class_identified = next.per_class_identified();
  rec.selfpaced_penalty = selfpaced_penalty(next.omega, curriculum.lambda());
  fill_candidate_means(rec, probs, data);
  if (test) {
    rec.test = evaluate(forward(state.ema.shadow, test->features), test->true_labels);
    rec.test_raw = evaluate(forward(state.model.params, test->features), test->true_labels);
  }
  return next;
}

}  // namespace detail

/// Plain-BCE epochs on the full candidate set. Appends history records when
/// `history` is given.
inline void warmup(TrainState& state, const PartialDataset& data, const TrainConfig& config,
                   const std::optional<MultiLabelDataset>& test = std::nullopt,
                   TrainHistory* history = nullptr) {
  for (int epoch = 0; epoch < config.warmup_epochs; ++epoch) {
    const EpochStats stats = run_epoch(state, data, config, epoch, nullptr);
    if (!history) continue;
    EpochRecord rec = detail::open_record(epoch, "warmup", stats);
    WeightMatrix next = detail::close_epoch(rec, state, data, test, config, *history);
    history->records.push_back(std::move(rec));
    history->snapshots.push_back(std::move(next));
  }
}

inline TrainResult train(const TrainConfig& config, const PartialDataset& data,
                         const std::optional<MultiLabelDataset>& test = std::nullopt) {
  config.validate();
  if (test && (test->features.cols() != data.features().cols() ||
               test->num_classes() != data.num_classes())) {
    throw ValidationError("train: test split shape does not match the training split");
  }
  TrainState state = make_state(config, data);
  TrainHistory history;
  history.method = config.method;
  warmup(state, data, config, test, &history);

  for (int epoch = config.warmup_epochs; epoch < config.epochs; ++epoch) {
    const WeightMatrix* weights = nullptr;
    WeightMatrix initial;
    if (config.uses_weights()) {
      if (history.snapshots.empty()) {
        // No warm-up: estimate from the untrained EMA model.
        initial = estimate(forward(state.ema.shadow, data.features()), data.candidates,
                           config.curriculum());
        weights = &initial;
      } else {
        weights = &history.snapshots.back();
      }
    }
    const EpochStats stats = run_epoch(state, data, config, epoch, weights);
    EpochRecord rec = detail::open_record(epoch, "curriculum", stats);
    WeightMatrix next = detail::close_epoch(rec, state, data, test, config, history);
    history.records.push_back(std::move(rec));
    history.snapshots.push_back(std::move(next));
  }
  WeightMatrix final_weights = history.snapshots.back();
  return TrainResult{state.checkpoint(), std::move(history), std::move(final_weights)};
}

inline TrainResult train(const TrainConfig& config, const DatasetBundle& bundle) {
  return train(config, bundle.train, bundle.test);
}

struct MethodRun {
  Method method;
  TrainResult result;
};

/// BCE, CD, CDCR and CDCR_DIFF on the same data and seed.
inline std::vector<MethodRun> ablate(const TrainConfig& base, const DatasetBundle& bundle) {
  std::vector<MethodRun> runs;
  for (Method m : kAllMethods) {
    TrainConfig cfg = base;
    cfg.method = m;
    runs.push_back({m, train(cfg, bundle)});
  }
  return runs;
}

struct AlphaRun {
  double alpha;
  TrainResult result;
};

/// One run per alpha, shared seed; results ordered by ascending alpha.
inline std::vector<AlphaRun> alpha_sweep(const TrainConfig& base, const DatasetBundle& bundle,
                                         std::vector<double> alphas) {
  if (alphas.empty()) throw ValidationError("alpha_sweep: no alpha values given");
  std::sort(alphas.begin(), alphas.end());
  std::vector<AlphaRun> runs;
  for (double a : alphas) {
    TrainConfig cfg = base;
    cfg.alpha = a;
    runs.push_back({a, train(cfg, bundle)});
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Output formats

inline json to_json(const EpochRecord& r, Method method) {
  json j{{"method", to_string(method)},
         {"epoch", r.epoch},
         {"phase", r.phase},
         {"lr", r.lr},
         {"train_loss", r.train_loss},
         {"updates", r.updates},
         {"disamb_precision", r.disamb_precision},
         {"identified", r.identified},
         {"repeated_noisy", r.repeated_noisy},
         {"per_class_identified", r.per_class_identified},
         {"mean_prob_true_candidates", r.mean_prob_true_candidates},
         {"mean_prob_noisy_candidates", r.mean_prob_noisy_candidates},
         {"selfpaced_penalty", r.selfpaced_penalty}};
  j["test"] = r.test ? to_json(*r.test) : json(nullptr);
  j["test_raw"] = r.test_raw ? to_json(*r.test_raw) : json(nullptr);
  return j;
}

inline std::string history_jsonl(const TrainHistory& h) {
  std::string out;
  for (const auto& r : h.records) out += to_json(r, h.method).dump() + "\n";
  return out;
}

inline constexpr const char* kSummaryHeader =
    "method,epoch,mAP,CF1,OF1,disamb_precision,identified,repeated_noisy";

inline std::string summary_csv_rows(const TrainHistory& h) {
  std::string out;
  for (const auto& r : h.records) {
    out += std::string(to_string(h.method)) + "," + std::to_string(r.epoch) + ",";
    out += r.test ? format_real(r.test->map) + "," + format_real(r.test->cf1) + "," +
                        format_real(r.test->of1)
                  : std::string(",,");
    out += "," + format_real(r.disamb_precision) + "," + std::to_string(r.identified) + "," +
           std::to_string(r.repeated_noisy) + "\n";
  }
  return out;
}

inline std::string summary_csv(const TrainHistory& h) {
  return std::string(kSummaryHeader) + "\n" + summary_csv_rows(h);
}

/// Sparse weight snapshot: the (row, class) pairs with weight 1.
inline json weights_to_json(const WeightMatrix& w, int epoch) {
  json pairs = json::array();
  for (std::size_t i = 0; i < w.omega.rows(); ++i) {
    for (std::size_t j = 0; j < w.omega.cols(); ++j) {
      if (w.omega(i, j) == 1.0) pairs.push_back({i, j});
    }
  }
  return json{{"epoch", epoch}, {"n", w.omega.rows()}, {"K", w.omega.cols()},
              {"identified", std::move(pairs)}};
}

inline WeightMatrix weights_from_json(const json& doc) {
  try {
    const auto n = doc.at("n").get<std::size_t>();
    const auto k = doc.at("K").get<std::size_t>();
    WeightMatrix w{Matrix(n, k)};
    for (const auto& pair : doc.at("identified")) {
      const auto i = pair.at(0).get<std::size_t>();
      const auto j = pair.at(1).get<std::size_t>();
      if (i >= n || j >= k) throw ValidationError("weight snapshot: index out of range");
      w.omega(i, j) = 1.0;
    }
    return w;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("weight snapshot: ") + e.what());
  }
}

inline std::string snapshots_jsonl(const TrainHistory& h) {
  std::string out;
  for (std::size_t e = 0; e < h.snapshots.size(); ++e) {
    out += weights_to_json(h.snapshots[e], h.records[e].epoch).dump() + "\n";
  }
  return out;
}

}  // namespace cdcr
