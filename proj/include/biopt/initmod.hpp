#pragma once

// Init module: temporary query mask and prototypes, the weight generator,
// the convex initialisation of query prototypes and the inner target mask.

#include <cmath>
#include <vector>

#include "biopt/proto.hpp"
#include "biopt/tensor.hpp"

namespace biopt {

/// Shared fully-connected layer 2C -> C followed by a sigmoid, applied to
/// each class row of concat(P_s, P').
struct WeightGenerator {
  Tensor W;  // C x 2C
  Tensor b;  // C

  static WeightGenerator zeros(std::size_t channels) {
    return {Tensor({channels, 2 * channels}), Tensor({channels})};
  }
  std::size_t channels() const { return b.size(); }

  friend bool operator==(const WeightGenerator&, const WeightGenerator&) = default;
};

struct GeneratorGrads {
  Tensor W;
  Tensor b;

  static GeneratorGrads zeros_like(const WeightGenerator& g) { return {Tensor(g.W.shape()), Tensor(g.b.shape())}; }
  GeneratorGrads& operator+=(const GeneratorGrads& o) {
    W += o.W;
    b += o.b;
    return *this;
  }
  GeneratorGrads& operator*=(double s) {
    W *= s;
    b *= s;
    return *this;
  }
};

/// (N+1) x C mixing weights, strictly inside (0, 1).
struct WeightTensor {
  Tensor omega;
};

struct TempMask {
  SoftMask soft;
  LabelMask hard;
};

inline TempMask temp_query_mask(const Tensor& Q, const PrototypeSet& support, double alpha) {
  TempMask t{soft_predict(Q, support, alpha), {}};
  t.hard = hard_mask(t.soft);
  return t;
}

struct TempProtos {
  PrototypeSet protos;
  std::vector<std::size_t> counts;
  std::vector<bool> fell_back;  // row copied from the fallback set
};

/// MAP of Q under M'; classes absent from M' take the fallback row.
inline TempProtos temp_query_protos(const Tensor& Q, const LabelMask& temp_mask, const PrototypeSet& fallback) {
  auto pooled = masked_average_pool(Q, temp_mask, fallback.classes());
  TempProtos t{std::move(pooled.protos), std::move(pooled.counts), std::move(pooled.empty)};
  const std::size_t C = fallback.channels();
  for (std::size_t c = 0; c < t.protos.classes(); ++c) {
    if (!t.fell_back[c]) continue;
    for (std::size_t ch = 0; ch < C; ++ch) t.protos.row(c)[ch] = fallback.row(c)[ch];
  }
  return t;
}

inline double sigmoid(double x) noexcept {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

namespace detail {

inline void check_generator(const PrototypeSet& ps, const PrototypeSet& pp, const WeightGenerator& gen) {
  const std::size_t C = ps.channels();
  if (pp.protos.shape() != ps.protos.shape())
    throw ShapeError("weight generator: support and temporary prototypes differ in shape");
  if (gen.W.shape() != Shape{C, 2 * C} || gen.b.shape() != Shape{C})
    throw ShapeError("weight generator: parameters " + shape_str(gen.W.shape()) + " do not match C=" +
                     std::to_string(C));
}

}  // namespace detail

inline WeightTensor generate_weights(const PrototypeSet& support, const PrototypeSet& temp,
                                     const WeightGenerator& gen) {
  detail::check_generator(support, temp, gen);
  const std::size_t K = support.classes(), C = support.channels();
  WeightTensor w{Tensor({K, C})};
  for (std::size_t c = 0; c < K; ++c) {
    const double* ps = support.row(c);
    const double* pp = temp.row(c);
    for (std::size_t o = 0; o < C; ++o) {
      const double* wr = gen.W.row(o);
      double z = gen.b[o];
      for (std::size_t i = 0; i < C; ++i) z += wr[i] * ps[i];
      for (std::size_t i = 0; i < C; ++i) z += wr[C + i] * pp[i];
      w.omega(c, o) = sigmoid(z);
    }
  }
  return w;
}

/// omega * P_s + (1 - omega) * P', elementwise.
inline PrototypeSet init_query_protos(const PrototypeSet& support, const PrototypeSet& temp,
                                      const WeightTensor& w) {
  support.protos.require_same_shape(temp.protos, "init_query_protos");
  support.protos.require_same_shape(w.omega, "init_query_protos omega");
  PrototypeSet p0{Tensor(support.protos.shape())};
  for (std::size_t i = 0; i < p0.protos.size(); ++i) {
    const double om = w.omega[i];
    p0.protos[i] = om * support.protos[i] + (1.0 - om) * temp.protos[i];
  }
  require_prototype_norms(p0, "init_query_protos");
  return p0;
}

inline TempMask build_target_mask(const Tensor& Q, const PrototypeSet& init, double alpha) {
  return temp_query_mask(Q, init, alpha);
}

struct WeightGeneratorBackward {
  Tensor dW;
  Tensor db;
  Tensor dSupport;
  Tensor dTemp;
};

inline WeightGeneratorBackward weight_generator_backward(const PrototypeSet& support, const PrototypeSet& temp,
                                                         const WeightGenerator& gen, const Tensor& grad_omega) {
  detail::check_generator(support, temp, gen);
  support.protos.require_same_shape(grad_omega, "weight_generator_backward grad_omega");
  const std::size_t K = support.classes(), C = support.channels();
  const WeightTensor w = generate_weights(support, temp, gen);
  WeightGeneratorBackward r{Tensor(gen.W.shape()), Tensor(gen.b.shape()), Tensor(support.protos.shape()),
                            Tensor(temp.protos.shape())};
  for (std::size_t c = 0; c < K; ++c) {
    const double* ps = support.row(c);
    const double* pp = temp.row(c);
    double* dps = r.dSupport.row(c);
    double* dpp = r.dTemp.row(c);
    for (std::size_t o = 0; o < C; ++o) {
      const double om = w.omega(c, o);
      const double dz = grad_omega(c, o) * om * (1.0 - om);
      if (dz == 0.0) continue;
      r.db[o] += dz;
      double* dwr = r.dW.row(o);
      const double* wr = gen.W.row(o);
      for (std::size_t i = 0; i < C; ++i) {
        dwr[i] += dz * ps[i];
        dwr[C + i] += dz * pp[i];
        dps[i] += dz * wr[i];
        dpp[i] += dz * wr[C + i];
      }
    }
  }
  return r;
}

}  // namespace biopt
