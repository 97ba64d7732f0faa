#pragma once
// Multi-label MLP with ReLU hidden layers and independent sigmoid outputs,
// trained by hand-derived backprop, Adam and a one-cycle schedule. An EMA
// shadow of the parameters serves weight estimation and evaluation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "cdcr/io.hpp"
#include "cdcr/numeric.hpp"

namespace cdcr {

struct DenseLayer {
  Matrix weight;  // fan_in x fan_out
  std::vector<double> bias;
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Parameter-shaped storage; also used for gradients and optimizer moments.
struct Parameters {
  std::vector<DenseLayer> layers;

  static Parameters zeros_like(const Parameters& p) {
    Parameters out;
    for (const auto& l : p.layers) {
      out.layers.push_back({Matrix(l.weight.rows(), l.weight.cols()),
                            std::vector<double>(l.bias.size(), 0.0)});
    }
    return out;
  }

  /// Visits every (name, values) block in a fixed order.
  template <typename Fn>
  void for_each_block(Fn&& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      fn("layers[" + std::to_string(i) + "].weight", layers[i].weight.data());
      fn("layers[" + std::to_string(i) + "].bias", std::span<double>(layers[i].bias));
    }
  }
  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      fn("layers[" + std::to_string(i) + "].weight", layers[i].weight.data());
      fn("layers[" + std::to_string(i) + "].bias", std::span<const double>(layers[i].bias));
    }
  }

  bool same_shape(const Parameters& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].weight.rows() != o.layers[i].weight.rows() ||
          layers[i].weight.cols() != o.layers[i].weight.cols() ||
          layers[i].bias.size() != o.layers[i].bias.size()) {
        return false;
      }
    }
    return true;
  }

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

struct Classifier {
  std::vector<std::size_t> layer_sizes;  // [d, h_1, ..., K]
  Parameters params;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  friend bool operator==(const Classifier&, const Classifier&) = default;
};

/// Gaussian weights scaled by 1/sqrt(fan_in), zero biases.
inline Classifier init_classifier(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) {
    throw ValidationError("init_classifier: need at least input and output sizes");
  }
  for (auto s : layer_sizes) {
    if (s == 0) throw ValidationError("init_classifier: layer sizes must be positive");
  }
  Classifier c{layer_sizes, {}};
  Rng rng(seed, 7);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const std::size_t fan_in = layer_sizes[l];
    const std::size_t fan_out = layer_sizes[l + 1];
    DenseLayer layer{Matrix(fan_in, fan_out), std::vector<double>(fan_out, 0.0)};
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& w : layer.weight.data()) w = scale * rng.normal();
    c.params.layers.push_back(std::move(layer));
  }
  return c;
}

/// Intermediate values of a forward pass, kept for backward.
struct ForwardPass {
  std::vector<Matrix> inputs;  // input to each layer; inputs[0] is the batch
  Matrix logits;
  Matrix probs;  // clamped sigmoid(logits)
};

inline ForwardPass forward_pass(const Parameters& params, const Matrix& batch) {
  if (params.layers.empty() || batch.cols() != params.layers.front().weight.rows()) {
    throw ValidationError("forward: batch has " + std::to_string(batch.cols()) +
                          " columns, model expects " +
                          std::to_string(params.layers.empty()
                                             ? 0
                                             : params.layers.front().weight.rows()));
  }
  ForwardPass pass;
  pass.inputs.push_back(batch);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const DenseLayer& layer = params.layers[l];
    Matrix z = matmul(pass.inputs.back(), layer.weight);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto row = z.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += layer.bias[j];
    }
    if (l + 1 < params.layers.size()) {
      for (auto& v : z.data()) v = v > 0.0 ? v : 0.0;
      pass.inputs.push_back(std::move(z));
    } else {
      pass.logits = std::move(z);
    }
  }
  pass.probs = Matrix(pass.logits.rows(), pass.logits.cols());
  for (std::size_t i = 0; i < pass.logits.size(); ++i) {
    pass.probs.data()[i] = clamp_prob(sigmoid(pass.logits.data()[i]));
  }
  return pass;
}

/// Probabilities p(y_j | x) for every row of the batch (B x K).
inline Matrix forward(const Parameters& params, const Matrix& batch) {
  return forward_pass(params, batch).probs;
}
inline Matrix forward(const Classifier& c, const Matrix& batch) {
  return forward(c.params, batch);
}

/// Gradients of sum_ij grad_output_ij * p_ij with respect to the parameters,
/// given dL/dp in grad_output. Entries where the clamp is active have zero
/// derivative, matching the forward computation exactly.
inline Parameters backward(const Parameters& params, const ForwardPass& pass,
                           const Matrix& grad_output) {
  require_same_shape(pass.probs, grad_output, "backward: grad_output");
  Parameters grads = Parameters::zeros_like(params);

  Matrix delta(grad_output.rows(), grad_output.cols());
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double s = sigmoid(pass.logits.data()[i]);
    const bool clamped = s < kProbEpsilon || s > 1.0 - kProbEpsilon;
    delta.data()[i] = clamped ? 0.0 : grad_output.data()[i] * s * (1.0 - s);
  }
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const Matrix& input = pass.inputs[l];
    grads.layers[l].weight = matmul_tn(input, delta);
    auto& gb = grads.layers[l].bias;
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      auto row = delta.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) gb[j] += row[j];
    }
    if (l == 0) break;
    Matrix upstream = matmul_nt(delta, params.layers[l].weight);
    // ReLU mask: input to layer l is the activation of layer l-1.
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      if (input.data()[i] <= 0.0) upstream.data()[i] = 0.0;
    }
    delta = std::move(upstream);
  }
  return grads;
}

inline Parameters backward(const Classifier& c, const Matrix& batch, const Matrix& grad_output) {
  const ForwardPass pass = forward_pass(c.params, batch);
  return backward(c.params, pass, grad_output);
}

// ---------------------------------------------------------------------------
// Adam

struct OptimState {
  Parameters m;
  Parameters v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimState for_model(const Classifier& c) {
    return OptimState{Parameters::zeros_like(c.params), Parameters::zeros_like(c.params)};
  }
  friend bool operator==(const OptimState&, const OptimState&) = default;
};

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching any state.
inline void adam_step(Classifier& c, OptimState& opt, const Parameters& grads, double lr) {
  if (!grads.same_shape(c.params) || !opt.m.same_shape(c.params) || !opt.v.same_shape(c.params)) {
    throw ValidationError("adam_step: gradient/moment shapes do not match parameters");
  }
  grads.for_each_block([](const std::string& name, std::span<const double> g) {
    for (double v : g) {
      if (!std::isfinite(v)) throw NumericError("adam_step: non-finite gradient in " + name);
    }
  });
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t l = 0; l < c.params.layers.size(); ++l) {
    auto update = [&](std::span<double> theta, std::span<const double> g, std::span<double> m,
                      std::span<double> v) {
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
        v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
        theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.eps);
      }
    };
    auto& p = c.params.layers[l];
    const auto& g = grads.layers[l];
    update(p.weight.data(), g.weight.data(), opt.m.layers[l].weight.data(),
           opt.v.layers[l].weight.data());
    update(p.bias, g.bias, opt.m.layers[l].bias, opt.v.layers[l].bias);
  }
}

// ---------------------------------------------------------------------------
// One-cycle learning rate

struct LrSchedule {
  double max_lr = 2e-4;
  std::int64_t total_steps = 1;
  double warmup_fraction = 0.3;
  double start_div = 25.0;
  double final_div = 1e4;

  void validate() const {
    if (!(max_lr > 0.0)) throw ValidationError("LrSchedule: max_lr must be > 0");
    if (total_steps < 1) throw ValidationError("LrSchedule: total_steps must be >= 1");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
      throw ValidationError("LrSchedule: warmup_fraction must lie in (0, 1)");
    }
    if (!(start_div > 1.0 && final_div > 1.0)) {
      throw ValidationError("LrSchedule: divisors must be > 1");
    }
  }

  /// Step at which the rate peaks.
  std::int64_t peak_step() const {
    const auto peak = static_cast<std::int64_t>(
        std::floor(warmup_fraction * static_cast<double>(total_steps)));
    return std::max<std::int64_t>(1, peak);
  }
};

namespace detail {
inline double cosine_between(double from, double to, double pct) {
  return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * pct));
}
}  // namespace detail

/// Cosine ramp from max_lr/start_div up to max_lr at peak_step(), then cosine
/// anneal down to max_lr/final_div at the last step.
inline double lr_at(const LrSchedule& s, std::int64_t step) {
  s.validate();
  if (step < 0 || step >= s.total_steps) {
    throw ValidationError("lr_at: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(s.total_steps) + ")");
  }
  const double start = s.max_lr / s.start_div;
  const double end = s.max_lr / s.final_div;
  const std::int64_t peak = s.peak_step();
  if (step <= peak) {
    return detail::cosine_between(start, s.max_lr,
                                  static_cast<double>(step) / static_cast<double>(peak));
  }
  const std::int64_t span = s.total_steps - 1 - peak;
  if (span <= 0) return s.max_lr;
  return detail::cosine_between(s.max_lr, end,
                                static_cast<double>(step - peak) / static_cast<double>(span));
}

// ---------------------------------------------------------------------------
// EMA shadow

struct EmaShadow {
  Parameters shadow;
  double decay = 0.9997;

  static EmaShadow of(const Classifier& c, double decay) { return EmaShadow{c.params, decay}; }
  friend bool operator==(const EmaShadow&, const EmaShadow&) = default;
};

/// shadow <- decay * shadow + (1 - decay) * theta.
inline void ema_update(EmaShadow& e, const Classifier& c) {
  if (!e.shadow.same_shape(c.params)) throw ValidationError("ema_update: shape mismatch");
  const double d = e.decay;
  for (std::size_t l = 0; l < c.params.layers.size(); ++l) {
    auto blend = [d](std::span<double> s, std::span<const double> t) {
      for (std::size_t i = 0; i < s.size(); ++i) s[i] = d * s[i] + (1.0 - d) * t[i];
    };
    blend(e.shadow.layers[l].weight.data(), c.params.layers[l].weight.data());
    blend(e.shadow.layers[l].bias, c.params.layers[l].bias);
  }
}

/// Decay actually applied at the given update count when warm-up is on:
/// min(decay, (1 + n) / (10 + n)). Keeps the shadow from being dominated by
/// the initialization on runs shorter than the nominal time constant.
inline double ema_decay_at(double decay, std::int64_t updates, bool warmup) {
  if (!warmup) return decay;
  const double n = static_cast<double>(updates);
  return std::min(decay, (1.0 + n) / (10.0 + n));
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace detail {

inline json params_weights_json(const Parameters& p) {
  json out = json::array();
  for (const auto& l : p.layers) {
    json rows = json::array();
    for (std::size_t i = 0; i < l.weight.rows(); ++i) {
      rows.push_back(std::vector<double>(l.weight.row(i).begin(), l.weight.row(i).end()));
    }
    out.push_back(std::move(rows));
  }
  return out;
}

inline json params_biases_json(const Parameters& p) {
  json out = json::array();
  for (const auto& l : p.layers) out.push_back(l.bias);
  return out;
}

inline Parameters params_from_json(const json& weights, const json& biases,
                                   const std::vector<std::size_t>& sizes, const char* what) {
  const std::size_t nl = sizes.size() - 1;
  if (!weights.is_array() || !biases.is_array() || weights.size() != nl || biases.size() != nl) {
    throw ValidationError(std::string("checkpoint: ") + what + " must have " +
                          std::to_string(nl) + " layers");
  }
  Parameters p;
  for (std::size_t l = 0; l < nl; ++l) {
    const auto rows = weights[l].get<std::vector<std::vector<double>>>();
    Matrix w = Matrix::from_rows(rows);
    auto b = biases[l].get<std::vector<double>>();
    if (w.rows() != sizes[l] || w.cols() != sizes[l + 1] || b.size() != sizes[l + 1]) {
      throw ValidationError(std::string("checkpoint: ") + what + " layer " + std::to_string(l) +
                            " has the wrong shape");
    }
    p.layers.push_back({std::move(w), std::move(b)});
  }
  return p;
}

}  // namespace detail

struct Checkpoint {
  Classifier model;
  EmaShadow ema;
  OptimState opt;
  std::int64_t step = 0;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline json checkpoint_to_json(const Checkpoint& c) {
  return json{
      {"layer_sizes", c.model.layer_sizes},
      {"weights", detail::params_weights_json(c.model.params)},
      {"biases", detail::params_biases_json(c.model.params)},
      {"ema_weights", detail::params_weights_json(c.ema.shadow)},
      {"ema_biases", detail::params_biases_json(c.ema.shadow)},
      {"ema_decay", c.ema.decay},
      {"opt_state",
       {{"beta1", c.opt.beta1},
        {"beta2", c.opt.beta2},
        {"eps", c.opt.eps},
        {"step", c.opt.step},
        {"m_weights", detail::params_weights_json(c.opt.m)},
        {"m_biases", detail::params_biases_json(c.opt.m)},
        {"v_weights", detail::params_weights_json(c.opt.v)},
        {"v_biases", detail::params_biases_json(c.opt.v)}}},
      {"step", c.step}};
}

inline Checkpoint checkpoint_from_json(const json& doc) {
  try {
    Checkpoint c;
    c.model.layer_sizes = doc.at("layer_sizes").get<std::vector<std::size_t>>();
    if (c.model.layer_sizes.size() < 2) throw ValidationError("checkpoint: layer_sizes too short");
    const auto& sizes = c.model.layer_sizes;
    c.model.params = detail::params_from_json(doc.at("weights"), doc.at("biases"), sizes, "weights");
    c.ema.shadow =
        detail::params_from_json(doc.at("ema_weights"), doc.at("ema_biases"), sizes, "ema");
    c.ema.decay = doc.value("ema_decay", 0.9997);
    const json& o = doc.at("opt_state");
    c.opt.beta1 = o.at("beta1").get<double>();
    c.opt.beta2 = o.at("beta2").get<double>();
    c.opt.eps = o.at("eps").get<double>();
    c.opt.step = o.at("step").get<std::int64_t>();
    c.opt.m = detail::params_from_json(o.at("m_weights"), o.at("m_biases"), sizes, "opt m");
    c.opt.v = detail::params_from_json(o.at("v_weights"), o.at("v_biases"), sizes, "opt v");
    c.step = doc.at("step").get<std::int64_t>();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace cdcr
