#pragma once

// Prototype extraction by masked average pooling and the cosine-similarity
// pixel classifier shared by every prediction in the pipeline.

#include <span>
#include <string>
#include <vector>

#include "biopt/ops.hpp"
#include "biopt/tensor.hpp"

namespace biopt {

struct PooledPrototypes {
  PrototypeSet protos;              // rows of empty classes are zero
  std::vector<std::size_t> counts;  // pixels contributing to each class
  std::vector<bool> empty;

  bool any_empty() const {
    for (bool e : empty)
      if (e) return true;
    return false;
  }
};

/// Pools pixels of every shot jointly: row c is the mean feature over all
/// pixels labelled c in any mask.
inline PooledPrototypes masked_average_pool(std::span<const Tensor> feats, std::span<const LabelMask> masks,
                                            std::size_t n_classes) {
  if (feats.size() != masks.size())
    throw ShapeError("masked_average_pool: " + std::to_string(feats.size()) + " feature maps but " +
                     std::to_string(masks.size()) + " masks");
  if (feats.empty()) throw ShapeError("masked_average_pool: no shots");
  const std::size_t C = feats.front().dim(2);
  PooledPrototypes r{PrototypeSet{Tensor({n_classes, C})}, std::vector<std::size_t>(n_classes, 0),
                     std::vector<bool>(n_classes, false)};
  for (std::size_t k = 0; k < feats.size(); ++k) {
    const Tensor& f = feats[k];
    const LabelMask& m = masks[k];
    if (f.rank() != 3 || f.dim(2) != C || f.dim(0) != m.height || f.dim(1) != m.width)
      throw ShapeError("masked_average_pool: shot " + std::to_string(k) + " feature " +
                       shape_str(f.shape()) + " does not match mask " + std::to_string(m.height) + "x" +
                       std::to_string(m.width));
    for (std::size_t p = 0; p < m.size(); ++p) {
      const int c = m.labels[p];
      if (c < 0 || static_cast<std::size_t>(c) >= n_classes)
        throw ShapeError("masked_average_pool: label " + std::to_string(c) + " out of range");
      double* row = r.protos.row(static_cast<std::size_t>(c));
      const double* v = f.data() + p * C;
      for (std::size_t ch = 0; ch < C; ++ch) row[ch] += v[ch];
      ++r.counts[static_cast<std::size_t>(c)];
    }
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (r.counts[c] == 0) {
      r.empty[c] = true;
      continue;
    }
    double* row = r.protos.row(c);
    for (std::size_t ch = 0; ch < C; ++ch) row[ch] /= static_cast<double>(r.counts[c]);
  }
  return r;
}

inline PooledPrototypes masked_average_pool(const Tensor& feat, const LabelMask& mask, std::size_t n_classes) {
  return masked_average_pool(std::span<const Tensor>(&feat, 1), std::span<const LabelMask>(&mask, 1), n_classes);
}

namespace detail {

inline void check_channels(const Tensor& Q, const PrototypeSet& P, const char* what) {
  if (Q.rank() != 3) throw ShapeError(std::string(what) + ": feature map must be HxWxC");
  if (P.protos.rank() != 2 || Q.dim(2) != P.channels())
    throw ShapeError(std::string(what) + ": feature map has " + std::to_string(Q.dim(2)) +
                     " channels, prototypes " + shape_str(P.protos.shape()));
}

inline std::vector<double> prototype_norms(const PrototypeSet& P) {
  std::vector<double> n(P.classes());
  for (std::size_t c = 0; c < n.size(); ++c) n[c] = row_norm(P.row(c), P.channels());
  return n;
}

}  // namespace detail

/// alpha * cos(Q[y,x], P[c]); pixels with norm < 1e-9 score 0 for every class.
/// Zero prototype rows likewise score 0.
inline Tensor cosine_score_map(const Tensor& Q, const PrototypeSet& P, double alpha) {
  detail::check_channels(Q, P, "cosine_score_map");
  const std::size_t H = Q.dim(0), W = Q.dim(1), C = Q.dim(2), K = P.classes();
  const auto pn = detail::prototype_norms(P);
  Tensor out({H, W, K});
  for (std::size_t p = 0; p < H * W; ++p) {
    const double* q = Q.data() + p * C;
    const double qn = row_norm(q, C);
    if (qn < kMinNorm) continue;
    for (std::size_t c = 0; c < K; ++c) {
      if (pn[c] < kMinNorm) continue;
      const double* pr = P.row(c);
      double dot = 0.0;
      for (std::size_t ch = 0; ch < C; ++ch) dot += q[ch] * pr[ch];
      out[p * K + c] = alpha * (dot / (qn * pn[c]));
    }
  }
  return out;
}

inline SoftMask soft_predict(const Tensor& Q, const PrototypeSet& P, double alpha) {
  return SoftMask{softmax_rows(cosine_score_map(Q, P, alpha))};
}

/// Per-pixel argmax; ties go to the lowest class index.
inline LabelMask hard_mask(const SoftMask& soft) {
  const std::size_t H = soft.height(), W = soft.width(), K = soft.classes();
  LabelMask m(H, W);
  for (std::size_t p = 0; p < H * W; ++p) {
    const double* s = soft.probs.data() + p * K;
    std::size_t best = 0;
    for (std::size_t c = 1; c < K; ++c)
      if (s[c] > s[best]) best = c;
    m.labels[p] = static_cast<int>(best);
  }
  return m;
}

struct PredictGrads {
  Tensor dQ;  // empty when not requested
  Tensor dP;
};

/// Gradient of cross_entropy(soft_predict(Q, P, alpha), target) with respect
/// to the feature map and the prototypes. Pixels whose target probability
/// sits below the log clamp contribute nothing.
inline PredictGrads soft_predict_backward(const Tensor& Q, const PrototypeSet& P, double alpha,
                                          const LabelMask& target, bool want_dq = true) {
  detail::check_channels(Q, P, "soft_predict_backward");
  require_prototype_norms(P, "soft_predict_backward");
  const std::size_t H = Q.dim(0), W = Q.dim(1), C = Q.dim(2), K = P.classes();
  if (target.height != H || target.width != W)
    throw ShapeError("soft_predict_backward: target mask does not match feature map");
  const auto pn = detail::prototype_norms(P);
  const double inv_pixels = 1.0 / static_cast<double>(H * W);
  PredictGrads g{want_dq ? Tensor(Q.shape()) : Tensor(), Tensor(P.protos.shape())};
  std::vector<double> cosv(K), prob(K);
  for (std::size_t p = 0; p < H * W; ++p) {
    const int t = target.labels[p];
    if (t < 0 || static_cast<std::size_t>(t) >= K)
      throw ShapeError("soft_predict_backward: label " + std::to_string(t) + " out of range");
    const double* q = Q.data() + p * C;
    const double qn = row_norm(q, C);
    if (qn < kMinNorm) continue;  // scores are constant zero here
    double mx = -1e300;
    for (std::size_t c = 0; c < K; ++c) {
      const double* pr = P.row(c);
      double dot = 0.0;
      for (std::size_t ch = 0; ch < C; ++ch) dot += q[ch] * pr[ch];
      cosv[c] = dot / (qn * pn[c]);
      prob[c] = alpha * cosv[c];
      mx = std::max(mx, prob[c]);
    }
    double total = 0.0;
    for (std::size_t c = 0; c < K; ++c) {
      prob[c] = std::exp(prob[c] - mx);
      total += prob[c];
    }
    if (prob[static_cast<std::size_t>(t)] / total < kLogFloor) continue;  // clamped: loss is flat here
    double* dq = want_dq ? g.dQ.data() + p * C : nullptr;
    for (std::size_t c = 0; c < K; ++c) {
      // dL/dcos_c
      const double gc = alpha * (prob[c] / total - (static_cast<std::size_t>(t) == c ? 1.0 : 0.0)) * inv_pixels;
      if (gc == 0.0) continue;
      const double* pr = P.row(c);
      double* dp = g.dP.row(c);
      const double inv_qp = 1.0 / (qn * pn[c]);
      const double cp = cosv[c] / (pn[c] * pn[c]);
      for (std::size_t ch = 0; ch < C; ++ch) dp[ch] += gc * (q[ch] * inv_qp - cp * pr[ch]);
      if (dq) {
        const double cq = cosv[c] / (qn * qn);
        for (std::size_t ch = 0; ch < C; ++ch) dq[ch] += gc * (pr[ch] * inv_qp - cq * q[ch]);
      }
    }
  }
  return g;
}

}  // namespace biopt
