#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "puflock/error.hpp"

namespace puflock {

/// Row-major float features with integer labels in [0, classes).
struct Dataset {
  std::size_t dims = 0;
  unsigned classes = 0;
  std::vector<float> features;
  std::vector<std::uint32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  std::span<const float> row(std::size_t i) const { return {features.data() + i * dims, dims}; }

  void push(std::span<const float> x, std::uint32_t label) {
    if (x.size() != dims) throw ParameterError("row width does not match dataset width");
    if (label >= classes) throw ParameterError("label out of range");
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(label);
  }

  /// Rows [first, first + count).
  Dataset slice(std::size_t first, std::size_t count) const {
    if (first + count > size()) throw ParameterError("dataset slice out of range");
    Dataset d{dims, classes, {}, {}};
    d.features.assign(features.begin() + static_cast<std::ptrdiff_t>(first * dims),
                      features.begin() + static_cast<std::ptrdiff_t>((first + count) * dims));
    d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(first),
                    labels.begin() + static_cast<std::ptrdiff_t>(first + count));
    return d;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// CSV rows of `label,f1,f2,...`. Blank lines and lines starting with '#' are
/// skipped. Errors carry the 1-based line number.
inline Dataset parse_csv(std::istream& in, unsigned classes) {
  if (classes < 2) throw ParameterError("a dataset needs at least 2 classes");
  Dataset d{0, classes, {}, {}};
  std::string line;
  std::size_t lineno = 0;
  std::vector<float> row;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto bad = [&](const std::string& what) { return ParameterError("line " + std::to_string(lineno) + ": " + what); };
    std::stringstream ss(t);
    std::string cell;
    if (!std::getline(ss, cell, ',')) throw bad("empty row");
    cell = detail::trim(cell);
    std::uint32_t label = 0;
    auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), label);
    if (ec != std::errc() || p != cell.data() + cell.size()) throw bad("label is not a non-negative integer");
    if (label >= classes) throw bad("label " + std::to_string(label) + " >= class count " + std::to_string(classes));
    row.clear();
    while (std::getline(ss, cell, ',')) {
      cell = detail::trim(cell);
      std::size_t used = 0;
      float v = 0;
      try {
        v = std::stof(cell, &used);
      } catch (const std::exception&) {
        throw bad("feature '" + cell + "' is not a number");
      }
      if (used != cell.size() || !std::isfinite(v)) throw bad("feature '" + cell + "' is not a finite number");
      row.push_back(v);
    }
    if (row.empty()) throw bad("row has no features");
    if (d.dims == 0) d.dims = row.size();
    if (row.size() != d.dims)
      throw bad("row has " + std::to_string(row.size()) + " features, expected " + std::to_string(d.dims));
    d.push(row, label);
  }
  return d;
}

inline Dataset load_csv(const std::string& path, unsigned classes) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open " + path);
  return parse_csv(in, classes);
}

inline void write_csv(std::ostream& out, const Dataset& d) {
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << d.labels[i];
    for (float v : d.row(i)) out << ',' << v;
    out << '\n';
  }
}

/// Seeded Gaussian clusters: class centres ~ N(0, spread^2) per coordinate,
/// samples ~ centre + N(0, 1). Rows come out shuffled.
inline Dataset synth_blobs(unsigned classes, std::size_t dims, std::size_t per_class, std::uint64_t seed,
                           double spread = 0.75) {
  if (classes < 2) throw ParameterError("a dataset needs at least 2 classes");
  if (dims == 0 || per_class == 0) throw ParameterError("empty blob dataset requested");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> centre(0.0, spread), noise(0.0, 1.0);
  std::vector<double> centres(classes * dims);
  for (auto& c : centres) c = centre(rng);

  std::vector<std::uint32_t> order(classes * per_class);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i / per_class);
  std::shuffle(order.begin(), order.end(), rng);

  Dataset d{dims, classes, {}, {}};
  std::vector<float> x(dims);
  for (auto label : order) {
    for (std::size_t k = 0; k < dims; ++k) x[k] = static_cast<float>(centres[label * dims + k] + noise(rng));
    d.push(x, label);
  }
  return d;
}

}  // namespace puflock
