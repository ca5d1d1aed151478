#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fig/tensor.hpp"

namespace fig {

using Rng = std::mt19937_64;

using ParamVisitor = std::function<void(const std::string& name, Tensor& param)>;
using ConstParamVisitor = std::function<void(const std::string& name, const Tensor& param)>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for both weight and bias.
inline Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

/// Dense affine map x * W + b with W stored in x out.
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    Linear l;
    l.weight = init_uniform({in, out}, in, rng);
    l.bias = init_uniform({out}, in, rng);
    return l;
  }
  static Linear zeros(std::size_t in, std::size_t out) {
    return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
  }

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }

  Tensor operator()(const Tensor& x) const {
    if (x.cols() != in())
      throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
    return add(matmul(x, weight), bias);
  }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

/// Stack of Linear layers with ReLU between them and no output activation.
struct Mlp {
  std::vector<Linear> layers;

  static Mlp init(const std::vector<std::size_t>& widths, Rng& rng) {
    Mlp m;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) m.layers.push_back(Linear::init(widths[i], widths[i + 1], rng));
    return m;
  }

  Tensor operator()(Tensor x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = relu(x);
    }
    return x;
  }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + "." + std::to_string(i), f);
  }
};

inline std::size_t count_params(const std::function<void(const ParamVisitor&)>& walk) {
  std::size_t n = 0;
  walk([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

/// Fresh leaf with the same values; used to snapshot parameter sets.
inline Tensor clone_leaf(const Tensor& t) { return Tensor(t.shape(), {t.data().begin(), t.data().end()}, true); }

/// SplitMix64 step, used to derive independent per-item seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace fig
