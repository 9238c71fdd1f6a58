#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "puflock/dataset.hpp"
#include "puflock/encrypted_model.hpp"
#include "puflock/model.hpp"

namespace puflock {

struct EvalReport {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::size_t> class_correct;
  std::vector<std::size_t> class_total;
  std::map<std::string, std::string> config;

  /// Line-oriented key=value text.
  std::string to_text() const {
    std::ostringstream out;
    out.precision(6);
    out << std::fixed;
    for (const auto& [k, v] : config) out << k << '=' << v << '\n';
    out << "accuracy=" << accuracy << '\n' << "correct=" << correct << '\n' << "total=" << total << '\n';
    for (std::size_t c = 0; c < class_total.size(); ++c)
      out << "class." << c << '=' << class_correct[c] << '/' << class_total[c] << '\n';
    return out.str();
  }
};

namespace detail {

inline void check_dataset(const Dataset& ds, std::size_t in, std::size_t out) {
  if (ds.empty()) throw ParameterError("empty dataset");
  if (ds.dims != in) throw ParameterError("dataset width " + std::to_string(ds.dims) + " != model input width " + std::to_string(in));
  if (ds.classes > out) throw ParameterError("dataset has more classes than the model has outputs");
}

inline EvalReport score(const Dataset& ds, const std::vector<std::vector<double>>& outputs) {
  EvalReport r;
  r.total = ds.size();
  r.class_correct.assign(ds.classes, 0);
  r.class_total.assign(ds.classes, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto y = ds.labels[i];
    ++r.class_total[y];
    if (argmax(outputs[i]) == y) {
      ++r.correct;
      ++r.class_correct[y];
    }
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

inline std::vector<std::vector<double>> rows_as_double(const Dataset& ds) {
  std::vector<std::vector<double>> h(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) h[i].assign(ds.row(i).begin(), ds.row(i).end());
  return h;
}

}  // namespace detail

inline EvalReport evaluate(const ModelWeights& m, const Dataset& ds) {
  detail::check_dataset(ds, m.input_width(), m.output_width());
  auto h = detail::rows_as_double(ds);
  for (const auto& l : m.layers)
    for (auto& row : h) row = apply_dense(l, row);
  return detail::score(ds, h);
}

/// Decrypt-on-load evaluation. `key` may be null only for a model with no
/// encrypted layers.
inline EvalReport evaluate(const EncryptedModel& e, const SecretKey* key, const Dataset& ds) {
  if (e.layers.empty()) throw ParameterError("model has no layers");
  detail::check_dataset(ds, e.layers.front().cols, e.layers.back().rows);
  return detail::score(ds, forward_batch(e, key, detail::rows_as_double(ds)));
}

/// Double-precision working copy used by the training harness. Hidden layers
/// use ReLU; the output layer is trained through softmax + cross-entropy.
class Net {
 public:
  struct Layer {
    std::size_t rows, cols;
    std::vector<double> w, b;
    Activation act;
  };

  explicit Net(const ModelWeights& m) : names_() {
    for (const auto& l : m.layers) {
      layers_.push_back({l.rows, l.cols, {l.weights.begin(), l.weights.end()}, {l.bias.begin(), l.bias.end()}, l.act});
      names_.push_back(l.name);
    }
    if (layers_.empty()) throw ParameterError("model has no layers");
    for (std::size_t j = 1; j < layers_.size(); ++j)
      if (layers_[j].cols != layers_[j - 1].rows) throw ParameterError("layer widths do not chain");
  }

  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  ModelWeights to_weights() const {
    ModelWeights m;
    for (std::size_t j = 0; j < layers_.size(); ++j) {
      const auto& l = layers_[j];
      DenseLayer d{names_[j], l.rows, l.cols, {}, {}, l.act};
      d.weights.assign(l.w.begin(), l.w.end());
      d.bias.assign(l.b.begin(), l.b.end());
      m.layers.push_back(std::move(d));
    }
    return m;
  }

  /// Cross-entropy of softmax(logits) against `label`; fills `grad` (same
  /// layout as the layers) with d loss / d parameter.
  double loss_and_gradient(std::span<const float> x, std::uint32_t label, std::vector<Layer>& grad) const {
    const std::size_t n = layers_.size();
    std::vector<std::vector<double>> acts(n + 1);
    acts[0].assign(x.begin(), x.end());
    for (std::size_t j = 0; j < n; ++j) {
      const auto& l = layers_[j];
      auto& z = acts[j + 1];
      z.assign(l.rows, 0.0);
      for (std::size_t r = 0; r < l.rows; ++r) {
        double acc = l.b[r];
        for (std::size_t c = 0; c < l.cols; ++c) acc += l.w[r * l.cols + c] * acts[j][c];
        z[r] = acc;
      }
      if (j + 1 < n && l.act == Activation::relu)
        for (auto& v : z) v = v > 0.0 ? v : 0.0;
    }
    // output layer: logits -> softmax
    auto p = acts[n];
    apply_activation(Activation::softmax, p);
    if (label >= p.size()) throw ParameterError("label exceeds output width");
    const double loss = -std::log(std::max(p[label], 1e-300));

    grad.resize(n);
    std::vector<double> delta = p;
    delta[label] -= 1.0;
    for (std::size_t j = n; j-- > 0;) {
      const auto& l = layers_[j];
      auto& g = grad[j];
      g.rows = l.rows;
      g.cols = l.cols;
      g.act = l.act;
      g.w.assign(l.w.size(), 0.0);
      g.b = delta;
      for (std::size_t r = 0; r < l.rows; ++r)
        for (std::size_t c = 0; c < l.cols; ++c) g.w[r * l.cols + c] = delta[r] * acts[j][c];
      if (j == 0) break;
      std::vector<double> prev(l.cols, 0.0);
      for (std::size_t r = 0; r < l.rows; ++r)
        for (std::size_t c = 0; c < l.cols; ++c) prev[c] += l.w[r * l.cols + c] * delta[r];
      if (layers_[j - 1].act == Activation::relu)
        for (std::size_t c = 0; c < l.cols; ++c)
          if (acts[j][c] <= 0.0) prev[c] = 0.0;
      delta = std::move(prev);
    }
    return loss;
  }

  double loss(std::span<const float> x, std::uint32_t label) const {
    std::vector<Layer> g;
    return loss_and_gradient(x, label, g);
  }

  /// Plain SGD, batch size 1, rows visited in a seeded shuffle every epoch.
  void sgd(const Dataset& ds, unsigned epochs, double lr, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Layer> g;
    for (unsigned e = 0; e < epochs; ++e) {
      std::shuffle(order.begin(), order.end(), rng);
      for (auto i : order) {
        loss_and_gradient(ds.row(i), ds.labels[i], g);
        for (std::size_t j = 0; j < layers_.size(); ++j) {
          for (std::size_t k = 0; k < g[j].w.size(); ++k) layers_[j].w[k] -= lr * g[j].w[k];
          for (std::size_t k = 0; k < g[j].b.size(); ++k) layers_[j].b[k] -= lr * g[j].b[k];
        }
      }
    }
  }

 private:
  std::vector<Layer> layers_;
  std::vector<std::string> names_;
};

/// He-normal weights, zero biases; ReLU hidden layers and a softmax output.
/// `arch` lists every width from input to output.
inline ModelWeights init_mlp(const std::vector<std::size_t>& arch, std::uint64_t seed) {
  if (arch.size() < 2) throw ParameterError("architecture needs an input and an output width");
  for (auto w : arch)
    if (w == 0) throw ParameterError("zero-width layer in architecture");
  std::mt19937_64 rng(seed);
  ModelWeights m;
  for (std::size_t j = 0; j + 1 < arch.size(); ++j) {
    DenseLayer l{"dense" + std::to_string(j + 1), arch[j + 1], arch[j], {}, std::vector<float>(arch[j + 1], 0.0f),
                 j + 2 == arch.size() ? Activation::softmax : Activation::relu};
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(arch[j])));
    l.weights.resize(l.rows * l.cols);
    for (auto& w : l.weights) w = static_cast<float>(nd(rng));
    m.layers.push_back(std::move(l));
  }
  return m;
}

struct TrainConfig {
  unsigned epochs = 10;
  double lr = 0.01;
  std::uint64_t seed = 1;
};

inline ModelWeights train_tiny(const Dataset& ds, const std::vector<std::size_t>& arch, const TrainConfig& cfg) {
  if (arch.empty() || arch.front() != ds.dims) throw ParameterError("architecture input width does not match the dataset");
  if (arch.back() < ds.classes) throw ParameterError("architecture output width is smaller than the class count");
  if (ds.empty()) throw ParameterError("empty dataset");
  Net net(init_mlp(arch, cfg.seed));
  net.sgd(ds, cfg.epochs, cfg.lr, cfg.seed ^ 0x9E3779B97F4A7C15ull);
  return net.to_weights();
}

struct FinetuneConfig {
  double fraction = 0.01;
  unsigned epochs = 10;
  double lr = 0.01;
  std::uint64_t seed = 3;
};

/// Keyless attacker: take the ciphertext as initial weights (non-finite values
/// zeroed so SGD can start), fine-tune on the leading `fraction` of `train`,
/// and score on `test`.
inline EvalReport finetune_attack(const EncryptedModel& e, const Dataset& train, const Dataset& test,
                                  const FinetuneConfig& cfg) {
  if (!(cfg.fraction > 0.0 && cfg.fraction <= 1.0)) throw ParameterError("fraction must lie in (0, 1]");
  const auto rows = static_cast<std::size_t>(std::llround(cfg.fraction * static_cast<double>(train.size())));
  if (rows == 0) throw ParameterError("fraction selects no training rows");
  auto start = ciphertext_as_model(e);
  for (auto& l : start.layers) {
    for (auto& w : l.weights)
      if (!std::isfinite(w)) w = 0.0f;
    for (auto& b : l.bias)
      if (!std::isfinite(b)) b = 0.0f;
  }
  Net net(start);
  net.sgd(train.slice(0, rows), cfg.epochs, cfg.lr, cfg.seed);
  auto report = evaluate(net.to_weights(), test);
  report.config["attack.fraction"] = std::to_string(cfg.fraction);
  report.config["attack.rows"] = std::to_string(rows);
  report.config["attack.epochs"] = std::to_string(cfg.epochs);
  report.config["attack.lr"] = std::to_string(cfg.lr);
  report.config["model.encrypted_layers"] = std::to_string(e.encrypted_count());
  return report;
}

}  // namespace puflock
