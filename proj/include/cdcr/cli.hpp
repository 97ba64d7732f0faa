#pragma once
// Command implementations behind the `cdcr` executable. Each command reads a
// flat JSON config, does all of its work in memory and only then writes its
// outputs, so a rejected config never leaves partial files behind.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cdcr/datagen.hpp"
#include "cdcr/io.hpp"
#include "cdcr/trainer.hpp"

namespace cdcr {

namespace fs = std::filesystem;

struct ExperimentConfig {
  DatasetSpec spec;
  double q = 0.4;
  TrainConfig train;
  std::vector<double> alphas = {0.6, 0.7, 0.8, 0.9};
  std::optional<fs::path> dataset;     // dataset file read by every command except generate
  std::optional<fs::path> checkpoint;  // eval
  std::optional<fs::path> snapshots;   // diagnose
};

struct CliOptions {
  fs::path config;
  fs::path out_dir = ".";
  std::optional<std::uint64_t> seed;
  bool timestamp = true;
  bool quiet = false;
};

namespace detail {

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{
      "dataset", "checkpoint", "snapshots", "alphas",
      // dataset
      "n_train", "n_test", "n_features", "n_classes", "avg_positives", "class_frequency_skew",
      "concept_noise_std", "q", "seed",
      // training
      "method", "epochs", "warmup_epochs", "batch_size", "max_lr", "warmup_fraction", "start_div",
      "final_div", "alpha", "difficulty_enabled", "negative_mode", "ema_decay", "ema_warmup",
      "hidden",
      // augmentation
      "gaussian_std", "dropout_rate", "scale_jitter"};
  return keys;
}

template <typename T>
void read_field(const json& doc, const char* key, T& field) {
  if (!doc.contains(key)) return;
  try {
    doc.at(key).get_to(field);
  } catch (const json::exception&) {
    throw ValidationError(std::string("config field '") + key + "' has the wrong type");
  }
}

// Relative paths are resolved against the directory holding the config.
inline std::optional<fs::path> read_path(const json& doc, const char* key, const fs::path& base) {
  if (!doc.contains(key)) return std::nullopt;
  std::string s;
  read_field(doc, key, s);
  fs::path p(s);
  return p.is_absolute() ? p : base / p;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (!detail::config_keys().count(key)) {
      throw ValidationError("config field '" + key + "' is not recognised");
    }
  }
  ExperimentConfig c;
  detail::read_field(doc, "n_train", c.spec.n_train);
  detail::read_field(doc, "n_test", c.spec.n_test);
  detail::read_field(doc, "n_features", c.spec.n_features);
  detail::read_field(doc, "n_classes", c.spec.n_classes);
  detail::read_field(doc, "avg_positives", c.spec.avg_positives);
  detail::read_field(doc, "class_frequency_skew", c.spec.class_frequency_skew);
  detail::read_field(doc, "concept_noise_std", c.spec.concept_noise_std);
  detail::read_field(doc, "q", c.q);
  std::uint64_t seed = c.train.seed;
  detail::read_field(doc, "seed", seed);
  c.spec.seed = c.train.seed = seed;

  TrainConfig& t = c.train;
  if (doc.contains("method")) {
    std::string m;
    detail::read_field(doc, "method", m);
    t.method = parse_method(m);
  }
  if (doc.contains("negative_mode")) {
    std::string m;
    detail::read_field(doc, "negative_mode", m);
    t.negative_mode = parse_negative_mode(m);
  }
  detail::read_field(doc, "epochs", t.epochs);
  detail::read_field(doc, "warmup_epochs", t.warmup_epochs);
  detail::read_field(doc, "batch_size", t.batch_size);
  detail::read_field(doc, "max_lr", t.max_lr);
  detail::read_field(doc, "warmup_fraction", t.warmup_fraction);
  detail::read_field(doc, "start_div", t.start_div);
  detail::read_field(doc, "final_div", t.final_div);
  detail::read_field(doc, "alpha", t.alpha);
  detail::read_field(doc, "difficulty_enabled", t.difficulty_enabled);
  detail::read_field(doc, "ema_decay", t.ema_decay);
  detail::read_field(doc, "ema_warmup", t.ema_warmup);
  detail::read_field(doc, "hidden", t.hidden);
  detail::read_field(doc, "gaussian_std", t.augment_policy.gaussian_std);
  detail::read_field(doc, "dropout_rate", t.augment_policy.dropout_rate);
  detail::read_field(doc, "scale_jitter", t.augment_policy.scale_jitter);
  detail::read_field(doc, "alphas", c.alphas);

  c.dataset = detail::read_path(doc, "dataset", base_dir);
  c.checkpoint = detail::read_path(doc, "checkpoint", base_dir);
  c.snapshots = detail::read_path(doc, "snapshots", base_dir);

  if (!(c.q >= 0.0 && c.q < 1.0)) {
    throw ValidationError("config field 'q' must lie in [0, 1), got " + std::to_string(c.q));
  }
  c.spec.validate();
  t.validate();
  return c;
}

inline ExperimentConfig load_config(const CliOptions& opts) {
  ExperimentConfig c = parse_config(read_json_file(opts.config), opts.config.parent_path());
  if (opts.seed) c.spec.seed = c.train.seed = *opts.seed;
  return c;
}

inline json to_json(const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  json j = c.spec;
  j["q"] = c.q;
  j["method"] = to_string(t.method);
  j["epochs"] = t.epochs;
  j["warmup_epochs"] = t.warmup_epochs;
  j["batch_size"] = t.batch_size;
  j["max_lr"] = t.max_lr;
  j["warmup_fraction"] = t.warmup_fraction;
  j["start_div"] = t.start_div;
  j["final_div"] = t.final_div;
  j["alpha"] = t.alpha;
  j["difficulty_enabled"] = t.difficulty_enabled;
  j["negative_mode"] = to_string(t.negative_mode);
  j["ema_decay"] = t.ema_decay;
  j["ema_warmup"] = t.ema_warmup;
  j["hidden"] = t.hidden;
  j["gaussian_std"] = t.augment_policy.gaussian_std;
  j["dropout_rate"] = t.augment_policy.dropout_rate;
  j["scale_jitter"] = t.augment_policy.scale_jitter;
  j["alphas"] = c.alphas;
  if (c.dataset) j["dataset"] = c.dataset->string();
  if (c.checkpoint) j["checkpoint"] = c.checkpoint->string();
  if (c.snapshots) j["snapshots"] = c.snapshots->string();
  return j;
}

namespace detail {

inline const fs::path& require_path(const std::optional<fs::path>& p, const char* key) {
  if (!p) throw ValidationError(std::string("config field '") + key + "' is required");
  if (!fs::exists(*p)) throw ValidationError(std::string(key) + " not found: " + p->string());
  return *p;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string run_record(const std::string& command, const ExperimentConfig& c,
                              const CliOptions& opts) {
  json j{{"command", command}, {"config", to_json(c)}};
  if (opts.timestamp) j["timestamp"] = utc_timestamp();
  return j.dump(2) + "\n";
}

using Outputs = std::vector<std::pair<std::string, std::string>>;

inline void write_outputs(const fs::path& dir, const Outputs& files) {
  for (const auto& [name, content] : files) write_file_atomic(dir / name, content);
}

inline std::string final_line(const TrainHistory& h) {
  const EpochRecord& r = h.records.back();
  std::string s = std::string(to_string(h.method)) + " epoch " + std::to_string(r.epoch);
  if (r.test) s += " mAP " + format_real(r.test->map) + " CF1 " + format_real(r.test->cf1);
  s += " precision " + format_real(r.disamb_precision) + " identified " +
       std::to_string(r.identified);
  return s;
}

}  // namespace detail

inline int cmd_generate(const CliOptions& opts) {
  const ExperimentConfig c = load_config(opts);
  const SplitDataset split = generate(c.spec);
  PartialDataset train = corrupt(split.train, c.q, c.spec.seed);
  train.spec = c.spec;
  const DatasetBundle bundle{std::move(train), split.test};
  write_file_atomic(opts.out_dir / "dataset.json", bundle_to_json(bundle).dump() + "\n");
  if (!opts.quiet) std::cout << "wrote " << (opts.out_dir / "dataset.json").string() << "\n";
  return 0;
}

inline int cmd_train(const CliOptions& opts) {
  const ExperimentConfig c = load_config(opts);
  const DatasetBundle bundle = load_bundle(detail::require_path(c.dataset, "dataset"));
  const TrainResult r = train(c.train, bundle);
  detail::write_outputs(
      opts.out_dir,
      {{"history.jsonl", history_jsonl(r.history)},
       {"summary.csv", summary_csv(r.history)},
       {"checkpoint.json", checkpoint_to_json(r.checkpoint).dump() + "\n"},
       {"omega_snapshots.jsonl", snapshots_jsonl(r.history)},
       {"omega_final.json",
        weights_to_json(r.final_weights, r.history.records.back().epoch).dump() + "\n"},
       {"run.json", detail::run_record("train", c, opts)}});
  if (!opts.quiet) std::cout << detail::final_line(r.history) << "\n";
  return 0;
}

inline constexpr const char* kAblationHeader =
    "method,mAP,CP,CR,CF1,OP,OR,OF1,disamb_precision,identified";

inline int cmd_ablate(const CliOptions& opts) {
  const ExperimentConfig c = load_config(opts);
  const DatasetBundle bundle = load_bundle(detail::require_path(c.dataset, "dataset"));
  if (!bundle.test) throw ValidationError("ablate needs a dataset with a test split");
  const auto runs = ablate(c.train, bundle);
  std::string table = std::string(kAblationHeader) + "\n";
  std::string summary = std::string(kSummaryHeader) + "\n";
  for (const auto& run : runs) {
    const EpochRecord& last = run.result.history.records.back();
    table += std::string(to_string(run.method)) + "," + metrics_csv_row(*last.test) + "," +
             format_real(last.disamb_precision) + "," + std::to_string(last.identified) + "\n";
    summary += summary_csv_rows(run.result.history);
    if (!opts.quiet) std::cout << detail::final_line(run.result.history) << "\n";
  }
  detail::write_outputs(opts.out_dir, {{"ablation.csv", table},
                                       {"summary.csv", summary},
                                       {"run.json", detail::run_record("ablate", c, opts)}});
  return 0;
}

inline int cmd_sweep(const CliOptions& opts) {
  const ExperimentConfig c = load_config(opts);
  const DatasetBundle bundle = load_bundle(detail::require_path(c.dataset, "dataset"));
  if (!bundle.test) throw ValidationError("sweep needs a dataset with a test split");
  for (double a : c.alphas) CurriculumConfig{a, false}.validate();
  const auto runs = alpha_sweep(c.train, bundle, c.alphas);
  std::string table = "alpha," + metrics_csv_header() + ",disamb_precision,identified\n";
  for (const auto& run : runs) {
    const EpochRecord& last = run.result.history.records.back();
    table += format_real(run.alpha) + "," + metrics_csv_row(*last.test) + "," +
             format_real(last.disamb_precision) + "," + std::to_string(last.identified) + "\n";
    if (!opts.quiet) {
      std::cout << "alpha " << format_real(run.alpha) << " mAP " << format_real(last.test->map)
                << "\n";
    }
  }
  detail::write_outputs(opts.out_dir,
                        {{"sweep.csv", table}, {"run.json", detail::run_record("sweep", c, opts)}});
  return 0;
}

/// Scores the EMA parameters of a checkpoint on the test split, or on the
/// training split's true labels when the dataset has no test split.
inline int cmd_eval(const CliOptions& opts) {
  const ExperimentConfig c = load_config(opts);
  const DatasetBundle bundle = load_bundle(detail::require_path(c.dataset, "dataset"));
  const Checkpoint ckpt =
      checkpoint_from_json(read_json_file(detail::require_path(c.checkpoint, "checkpoint")));
  const MultiLabelDataset& target = bundle.test ? *bundle.test : bundle.train.base;
  if (ckpt.model.layer_sizes.front() != target.features.cols() ||
      ckpt.model.layer_sizes.back() != target.num_classes()) {
    throw ValidationError("checkpoint layer sizes do not match the dataset");
  }
  const MetricsReport report = evaluate(forward(ckpt.ema.shadow, target.features),
                                        target.true_labels);
  json j = to_json(report);
  j["split"] = bundle.test ? "test" : "train";
  detail::write_outputs(opts.out_dir,
                        {{"eval.json", j.dump(2) + "\n"},
                         {"eval.csv", metrics_csv_header() + "\n" + metrics_csv_row(report) + "\n"}});
  if (!opts.quiet) std::cout << "mAP " << format_real(report.map) << "\n";
  return 0;
}

/// Replays stored weight snapshots against the dataset's true labels.
inline int cmd_diagnose(const CliOptions& opts) {
  const ExperimentConfig c = load_config(opts);
  const DatasetBundle bundle = load_bundle(detail::require_path(c.dataset, "dataset"));
  const std::string text = read_file(detail::require_path(c.snapshots, "snapshots"));
  const PartialDataset& data = bundle.train;

  std::string csv = "epoch,precision,repeated_noisy,identified\n";
  std::optional<WeightMatrix> previous;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    const std::string line = text.substr(pos, end == std::string::npos ? end : end - pos);
    pos = end == std::string::npos ? text.size() : end + 1;
    ++line_no;
    if (line.empty()) continue;
    json doc;
    WeightMatrix w;
    try {
      doc = json::parse(line);
      w = weights_from_json(doc);
    } catch (const std::exception& e) {
      throw ValidationError(c.snapshots->string() + ":" + std::to_string(line_no) + ": " +
                            e.what());
    }
    if (w.omega.rows() != data.size() || w.omega.cols() != data.num_classes()) {
      throw ValidationError(c.snapshots->string() + ":" + std::to_string(line_no) +
                            ": snapshot shape does not match the dataset");
    }
    const Diagnostics d = diagnostics(w, previous, data.true_labels(), data.candidates);
    csv += std::to_string(doc.value("epoch", static_cast<int>(line_no) - 1)) + "," +
           format_real(d.precision) + "," + std::to_string(d.repeated_noisy) + "," +
           std::to_string(d.identified) + "\n";
    previous = std::move(w);
  }
  detail::write_outputs(opts.out_dir, {{"diagnose.csv", csv}});
  if (!opts.quiet) std::cout << "wrote " << (opts.out_dir / "diagnose.csv").string() << "\n";
  return 0;
}

/// Runs one command and maps failures to exit codes: 1 for invalid input,
/// 2 for a runtime abort.
template <typename Fn>
int run_command(Fn&& fn, const CliOptions& opts) {
  try {
    return fn(opts);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace cdcr
