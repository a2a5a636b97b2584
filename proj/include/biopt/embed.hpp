#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "biopt/ops.hpp"
#include "biopt/rng.hpp"
#include "biopt/tensor.hpp"

namespace biopt {

/// Architecture of the embedding network: a stack of odd-kernel convolutions,
/// ReLU between layers. widths has one more entry than the layer count.
struct EmbedSpec {
  std::vector<std::size_t> widths;
  std::vector<std::size_t> kernels;    // empty -> 3 everywhere
  std::vector<int> strides;            // empty -> 2 for the first two layers, then 1
  std::vector<int> dilations;          // empty -> 1 everywhere
  bool final_relu = false;

  std::size_t layer_count() const { return widths.empty() ? 0 : widths.size() - 1; }
  std::size_t out_channels() const { return widths.back(); }

  /// Fills defaulted per-layer fields and validates.
  EmbedSpec resolved() const {
    if (widths.size() < 2) throw ConfigError("embed spec needs at least an input and an output width");
    for (auto w : widths)
      if (w < 1) throw ConfigError("embed widths must be >= 1");
    EmbedSpec r = *this;
    const std::size_t L = layer_count();
    if (r.kernels.empty()) r.kernels.assign(L, 3);
    if (r.strides.empty())
      for (std::size_t i = 0; i < L; ++i) r.strides.push_back(i < 2 ? 2 : 1);
    if (r.dilations.empty()) r.dilations.assign(L, 1);
    if (r.kernels.size() != L || r.strides.size() != L || r.dilations.size() != L)
      throw ConfigError("embed kernels/strides/dilations must list one entry per layer (" +
                        std::to_string(L) + ")");
    for (std::size_t i = 0; i < L; ++i) {
      if (r.kernels[i] % 2 == 0) throw ConfigError("embed kernel sizes must be odd");
      if (r.strides[i] < 1 || r.dilations[i] < 1)
        throw ConfigError("embed strides and dilations must be >= 1");
    }
    return r;
  }

  int downsample() const {
    int d = 1;
    for (int s : strides) d *= s;
    return d;
  }

  friend bool operator==(const EmbedSpec&, const EmbedSpec&) = default;
};

struct EmbedLayer {
  Tensor kernel;  // k x k x Cin x Cout
  ConvGeometry geom;

  friend bool operator==(const EmbedLayer&, const EmbedLayer&) = default;
};

struct EmbedParams {
  EmbedSpec spec;  // always resolved
  std::vector<EmbedLayer> layers;

  std::size_t out_channels() const { return spec.out_channels(); }
  int downsample() const { return spec.downsample(); }

  friend bool operator==(const EmbedParams&, const EmbedParams&) = default;
};

/// Per-layer kernel gradients.
struct EmbedGrads {
  std::vector<Tensor> kernels;

  static EmbedGrads zeros_like(const EmbedParams& p) {
    EmbedGrads g;
    for (const auto& l : p.layers) g.kernels.emplace_back(l.kernel.shape());
    return g;
  }
  EmbedGrads& operator+=(const EmbedGrads& o) {
    if (o.kernels.size() != kernels.size()) throw ShapeError("EmbedGrads: layer count mismatch");
    for (std::size_t i = 0; i < kernels.size(); ++i) kernels[i] += o.kernels[i];
    return *this;
  }
  EmbedGrads& operator*=(double s) {
    for (auto& k : kernels) k *= s;
    return *this;
  }
};

inline std::uint64_t fingerprint(const EmbedParams& p) {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (const auto& l : p.layers) {
    for (double v : l.kernel.values()) {
      std::uint64_t bits;
      static_assert(sizeof bits == sizeof v);
      std::memcpy(&bits, &v, sizeof v);
      h = splitmix64(h ^ bits);
    }
  }
  return h;
}

/// Fan-in scaled uniform init in [-sqrt(6/fan_in), sqrt(6/fan_in)].
inline EmbedParams embed_init(const EmbedSpec& spec, std::uint64_t seed) {
  EmbedParams p;
  p.spec = spec.resolved();
  const CounterRng root = CounterRng(seed).derive("embed");
  for (std::size_t l = 0; l < p.spec.layer_count(); ++l) {
    const std::size_t k = p.spec.kernels[l], cin = p.spec.widths[l], cout = p.spec.widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(k * k * cin));
    Tensor ker({k, k, cin, cout});
    CounterRng rng = root.derive(l);
    for (double& v : ker.values()) v = rng.uniform(-bound, bound);
    const int dil = p.spec.dilations[l];
    p.layers.push_back({std::move(ker), ConvGeometry{p.spec.strides[l], dil * static_cast<int>(k / 2), dil}});
  }
  return p;
}

struct EmbedCache {
  std::uint64_t params_fingerprint = 0;
  std::vector<Tensor> inputs;  // input to each layer
  std::vector<Tensor> pre;     // pre-activation output of each layer
};

struct EmbedOutput {
  Tensor features;
  EmbedCache cache;
};

inline EmbedOutput embed_forward(const Tensor& img, const EmbedParams& params) {
  if (img.rank() != 3 || img.dim(2) != params.spec.widths.front())
    throw ShapeError("embed_forward: expected HxWx" + std::to_string(params.spec.widths.front()) +
                     " image, got " + shape_str(img.shape()));
  const auto ds = static_cast<std::size_t>(params.downsample());
  if (img.dim(0) % ds != 0 || img.dim(1) % ds != 0)
    throw ShapeError("embed_forward: image " + shape_str(img.shape()) +
                     " not divisible by downsample factor " + std::to_string(ds));
  EmbedOutput out;
  out.cache.params_fingerprint = fingerprint(params);
  Tensor x = img;
  const std::size_t L = params.layers.size();
  for (std::size_t l = 0; l < L; ++l) {
    const auto& layer = params.layers[l];
    Tensor y = conv2d(x, layer.kernel, layer.geom);
    out.cache.inputs.push_back(std::move(x));
    const bool act = l + 1 < L || params.spec.final_relu;
    x = act ? relu(y) : y;
    out.cache.pre.push_back(std::move(y));
  }
  out.features = std::move(x);
  return out;
}

/// Gradient of <grad_feat, embed_forward(img)> with respect to every kernel.
inline EmbedGrads embed_backward(const EmbedParams& params, const EmbedCache& cache, const Tensor& grad_feat) {
  const std::size_t L = params.layers.size();
  if (cache.inputs.size() != L || cache.pre.size() != L || cache.params_fingerprint != fingerprint(params))
    throw ShapeError("embed_backward: cache does not belong to these parameters");
  grad_feat.require_same_shape(cache.pre.back(), "embed_backward grad_feat");
  EmbedGrads g;
  g.kernels.resize(L);
  Tensor grad = grad_feat;
  for (std::size_t l = L; l-- > 0;) {
    const bool act = l + 1 < L || params.spec.final_relu;
    if (act) grad = relu_backward(cache.pre[l], std::move(grad));
    auto cg = conv2d_backward(cache.inputs[l], params.layers[l].kernel, grad, params.layers[l].geom);
    g.kernels[l] = std::move(cg.kernel);
    grad = std::move(cg.input);
  }
  return g;
}

}  // namespace biopt
