#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "puflock/bytes.hpp"
#include "puflock/error.hpp"

namespace puflock {

enum class Activation : std::uint8_t { none = 0, relu = 1, softmax = 2 };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
    default: return "none";
  }
}

/// y = f(W x + b), W stored row-major as rows (outputs) x cols (inputs).
struct DenseLayer {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> weights;
  std::vector<float> bias;
  Activation act = Activation::none;

  friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
    // bitwise, so NaN payloads compare equal to themselves
    auto same = [](const std::vector<float>& x, const std::vector<float>& y) {
      return x.size() == y.size() && std::equal(x.begin(), x.end(), y.begin(), [](float p, float q) {
               return std::bit_cast<std::uint32_t>(p) == std::bit_cast<std::uint32_t>(q);
             });
    };
    return a.name == b.name && a.rows == b.rows && a.cols == b.cols && a.act == b.act && same(a.weights, b.weights) &&
           same(a.bias, b.bias);
  }
};

struct ModelWeights {
  std::vector<DenseLayer> layers;

  std::size_t input_width() const { return layers.empty() ? 0 : layers.front().cols; }
  std::size_t output_width() const { return layers.empty() ? 0 : layers.back().rows; }

  /// Shapes chain and all values are finite.
  void validate() const {
    if (layers.empty()) throw ParameterError("model has no layers");
    for (std::size_t j = 0; j < layers.size(); ++j) {
      const auto& l = layers[j];
      if (l.rows == 0 || l.cols == 0) throw ParameterError("layer " + l.name + " has an empty dimension");
      if (l.weights.size() != l.rows * l.cols || l.bias.size() != l.rows)
        throw ParameterError("layer " + l.name + " storage does not match its shape");
      if (j > 0 && l.cols != layers[j - 1].rows)
        throw ParameterError("layer " + l.name + " input width does not match the previous layer");
      auto finite = [](float v) { return std::isfinite(v); };
      if (!std::all_of(l.weights.begin(), l.weights.end(), finite) || !std::all_of(l.bias.begin(), l.bias.end(), finite))
        throw ParameterError("layer " + l.name + " holds non-finite values");
    }
  }

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

inline void apply_activation(Activation act, std::vector<double>& z) {
  if (act == Activation::relu) {
    for (auto& v : z) v = v > 0.0 ? v : 0.0;
  } else if (act == Activation::softmax) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) sum += (v = std::exp(v - m));
    for (auto& v : z) v /= sum;
  }
}

/// One dense layer evaluated in double precision.
inline std::vector<double> apply_dense(std::span<const float> w, std::span<const float> b, std::size_t rows,
                                       std::size_t cols, Activation act, std::span<const double> x) {
  if (x.size() != cols) throw ParameterError("input width " + std::to_string(x.size()) + " != layer width " + std::to_string(cols));
  std::vector<double> z(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = b[r];
    const float* row = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += double{row[c]} * x[c];
    z[r] = acc;
  }
  apply_activation(act, z);
  return z;
}

inline std::vector<double> apply_dense(const DenseLayer& l, std::span<const double> x) {
  return apply_dense(l.weights, l.bias, l.rows, l.cols, l.act, x);
}

inline std::vector<double> forward(const ModelWeights& m, std::span<const float> x) {
  if (m.layers.empty()) throw ParameterError("model has no layers");
  std::vector<double> h(x.begin(), x.end());
  for (const auto& l : m.layers) h = apply_dense(l, h);
  return h;
}

/// Index of the largest output; NaN entries never win, all-NaN gives 0.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] > best_v) {
      best_v = v[i];
      best = i;
    }
  return best;
}

// --- plaintext weight file: "PDWM" v1 ---

inline constexpr std::uint8_t kModelFormatVersion = 1;

namespace detail {

inline Activation read_activation(ByteReader& r) {
  auto tag = r.u8();
  if (tag > 2) r.fail("unknown activation tag " + std::to_string(tag), r.offset() - 1);
  return static_cast<Activation>(tag);
}

inline std::vector<float> read_f32s(ByteReader& r, std::size_t n) {
  if (r.remaining() / 4 < n) r.fail("truncated: " + std::to_string(n) + " values announced");
  std::vector<float> v(n);
  for (auto& x : v) x = r.f32();
  return v;
}

inline void write_f32s(ByteWriter& w, std::span<const float> v) {
  for (float x : v) w.f32(x);
}

}  // namespace detail

inline Bytes save_model_bytes(const ModelWeights& m) {
  if (m.layers.size() > 0xFFFF) throw ParameterError("too many layers for the container");
  ByteWriter w;
  w.raw("PDWM");
  w.u8(kModelFormatVersion);
  w.u16(static_cast<std::uint16_t>(m.layers.size()));
  for (const auto& l : m.layers) {
    w.str16(l.name);
    w.u8(static_cast<std::uint8_t>(l.act));
    w.u32(static_cast<std::uint32_t>(l.rows));
    w.u32(static_cast<std::uint32_t>(l.cols));
    detail::write_f32s(w, l.weights);
    detail::write_f32s(w, l.bias);
  }
  return std::move(w).bytes();
}

inline ModelWeights load_model_bytes(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  r.section("model header");
  r.expect_magic("PDWM");
  auto version = r.u8();
  if (version != kModelFormatVersion) r.fail("unsupported model version " + std::to_string(version), r.offset() - 1);
  const auto count = r.u16();
  ModelWeights m;
  for (std::size_t j = 0; j < count; ++j) {
    r.section("layer " + std::to_string(j));
    DenseLayer l;
    l.name = r.str16();
    l.act = detail::read_activation(r);
    l.rows = r.u32();
    l.cols = r.u32();
    l.weights = detail::read_f32s(r, l.rows * l.cols);
    l.bias = detail::read_f32s(r, l.rows);
    m.layers.push_back(std::move(l));
  }
  r.section("model trailer");
  if (!r.at_end()) r.fail("trailing bytes after last layer");
  return m;
}

inline void save_model(const std::string& path, const ModelWeights& m) { write_file(path, save_model_bytes(m)); }
inline ModelWeights load_model(const std::string& path) { return load_model_bytes(read_file(path)); }

}  // namespace puflock
