#pragma once

// Outer loop: the three-term segmentation loss, first-order gradient routing
// through the init module, SGD with momentum and weight decay, and the
// episodic training driver.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "biopt/pipeline.hpp"

namespace biopt {

struct LossWeights {
  double mprime = 1.0;
  double target = 1.0;
  double final = 1.0;
};

struct OuterConfig {
  double lr = 7e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 250;  // parameter updates
  int batch = 8;     // episodes accumulated per update
  double lr_decay_factor = 1.0;
  int lr_decay_at = 0;  // iteration after which lr *= factor; 0 disables
  LossWeights loss_weights{};

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("outer lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (!(lr_decay_factor > 0.0)) throw ConfigError("lr_decay_factor must be > 0");
    if (lr_decay_at < 0) throw ConfigError("lr_decay_at must be >= 0");
  }

  double lr_at(int iter) const {
    return lr_decay_at > 0 && iter >= lr_decay_at ? lr * lr_decay_factor : lr;
  }
};

struct LossComponents {
  double mprime = 0.0;
  double target = 0.0;
  double final = 0.0;
};

struct SegLoss {
  double total = 0.0;
  LossComponents parts;
};

/// Weighted sum of the three cross-entropies, each taken on a soft map.
inline SegLoss seg_loss(const SoftMask& mprime, const SoftMask& target, const SoftMask& final_pred, const LabelMask& gt,
                        const LossWeights& w) {
  SegLoss l;
  l.parts.mprime = cross_entropy(mprime, gt);
  l.parts.target = cross_entropy(target, gt);
  l.parts.final = cross_entropy(final_pred, gt);
  l.total = w.mprime * l.parts.mprime + w.target * l.parts.target + w.final * l.parts.final;
  return l;
}

struct QueryPass {
  EmbedOutput feat;
  LabelMask gt;  // at feature resolution
  QueryInference inf;
  SegLoss loss;
};

struct EpisodeForward {
  bool skipped = false;
  std::string skip_reason;
  InitMode mode = InitMode::init_module;
  double alpha = 20.0;
  LossWeights weights{};
  SupportStage support;
  std::vector<QueryPass> queries;
  double loss = 0.0;  // mean over queries
  LossComponents parts;

  std::vector<FrozenRouting> routing() const {
    std::vector<FrozenRouting> r;
    for (const auto& q : queries) r.push_back({q.inf.temp.hard, q.inf.trace.final_protos});
    return r;
  }
};

/// Loss for one query under the active mode. Terms that the mode does not
/// produce are reported as 0, except that baseline reports its single
/// prediction under `final` as well so runs of different modes compare.
inline SegLoss mode_loss(const QueryInference& inf, const LabelMask& gt, InitMode mode, const LossWeights& w) {
  SegLoss l;
  l.parts.mprime = cross_entropy(inf.temp.soft, gt);
  switch (mode) {
    case InitMode::baseline:
      l.parts.final = l.parts.mprime;
      l.total = w.mprime * l.parts.mprime;
      break;
    case InitMode::support_init:
      l.parts.final = cross_entropy(inf.final_soft, gt);
      l.total = w.mprime * l.parts.mprime + w.final * l.parts.final;
      break;
    case InitMode::init_module:
      l = seg_loss(inf.temp.soft, inf.target.soft, inf.final_soft, gt, w);
      break;
  }
  return l;
}

inline EpisodeForward episode_forward(const Episode& ep, const Model& model, const InnerConfig& cfg,
                                      const LossWeights& weights = {},
                                      const std::vector<FrozenRouting>* frozen = nullptr) {
  cfg.validate();
  EpisodeForward f;
  f.mode = cfg.init_mode;
  f.alpha = cfg.alpha;
  f.weights = weights;
  f.support = support_stage(ep, model.embed);
  if (f.support.pooled.any_empty()) {
    f.skipped = true;
    f.skip_reason = "support masks leave a class without pixels at feature resolution";
    return f;
  }
  if (frozen && frozen->size() != ep.query.size()) throw ShapeError("episode_forward: frozen routing per query mismatch");
  for (std::size_t j = 0; j < ep.query.size(); ++j) {
    const auto& qs = ep.query[j];
    if (!qs.mask) throw ShapeError("episode_forward: training query " + std::to_string(j) + " has no mask");
    QueryPass qp;
    qp.feat = embed_forward(qs.image, model.embed);
    const Tensor& Q = qp.feat.features;
    qp.gt = resize_nearest_labels(*qs.mask, Q.dim(0), Q.dim(1));
    qp.inf = infer_query(Q, f.support.pooled.protos, model.gen, cfg, frozen ? &(*frozen)[j] : nullptr);
    qp.loss = mode_loss(qp.inf, qp.gt, cfg.init_mode, weights);
    f.queries.push_back(std::move(qp));
  }
  const double inv = 1.0 / static_cast<double>(f.queries.size());
  for (const auto& q : f.queries) {
    f.loss += q.loss.total * inv;
    f.parts.mprime += q.loss.parts.mprime * inv;
    f.parts.target += q.loss.parts.target * inv;
    f.parts.final += q.loss.parts.final * inv;
  }
  return f;
}

struct ModelGrads {
  EmbedGrads embed;
  GeneratorGrads gen;

  static ModelGrads zeros_like(const Model& m) {
    return {EmbedGrads::zeros_like(m.embed), GeneratorGrads::zeros_like(m.gen)};
  }
  ModelGrads& operator+=(const ModelGrads& o) {
    embed += o.embed;
    gen += o.gen;
    return *this;
  }
  ModelGrads& operator*=(double s) {
    embed *= s;
    gen *= s;
    return *this;
  }
};

namespace detail {

inline void axpy(Tensor& dst, double a, const Tensor& src) {
  dst.require_same_shape(src, "axpy");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}

// Routes dL/dP of a masked average pool back onto the pooled feature map.
inline void map_backward(Tensor& dfeat, const LabelMask& mask, const Tensor& dproto,
                         const std::vector<std::size_t>& counts, const std::vector<bool>& skip) {
  const std::size_t C = dfeat.dim(2);
  for (std::size_t p = 0; p < mask.size(); ++p) {
    const auto c = static_cast<std::size_t>(mask.labels[p]);
    if (skip[c] || counts[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[c]);
    const double* g = dproto.row(c);
    double* d = dfeat.data() + p * C;
    for (std::size_t ch = 0; ch < C; ++ch) d[ch] += g[ch] * inv;
  }
}

}  // namespace detail

/// First-order outer gradient. The M' term reaches Q and the support maps;
/// the target term additionally reaches the generator, P_s and P'; the final
/// term reaches Q only, the optimised prototypes being constants. Hard
/// argmax decisions carry no gradient.
inline ModelGrads episode_backward(const EpisodeForward& f, const Model& model) {
  ModelGrads g = ModelGrads::zeros_like(model);
  if (f.skipped) return g;
  const LossWeights& w = f.weights;
  const double inv_q = 1.0 / static_cast<double>(f.queries.size());
  const PrototypeSet& ps = f.support.pooled.protos;
  Tensor d_support(ps.protos.shape());

  for (const auto& q : f.queries) {
    const Tensor& Q = q.feat.features;
    Tensor dQ(Q.shape());
    const double w_final = f.mode == InitMode::baseline ? 0.0 : w.final;
    if (w.mprime != 0.0) {
      const auto gm = soft_predict_backward(Q, ps, f.alpha, q.gt);
      detail::axpy(dQ, w.mprime * inv_q, gm.dQ);
      detail::axpy(d_support, w.mprime * inv_q, gm.dP);
    }
    if (f.mode == InitMode::init_module && w.target != 0.0) {
      const auto& inf = q.inf;
      const auto gt = soft_predict_backward(Q, inf.init, f.alpha, q.gt);
      detail::axpy(dQ, w.target * inv_q, gt.dQ);
      Tensor d_init = gt.dP;
      d_init *= w.target * inv_q;
      const PrototypeSet& pt = inf.temp_protos.protos;
      Tensor d_omega(d_init.shape()), d_temp(d_init.shape());
      for (std::size_t i = 0; i < d_init.size(); ++i) {
        const double om = inf.omega.omega[i];
        d_omega[i] = d_init[i] * (ps.protos[i] - pt.protos[i]);
        d_support[i] += d_init[i] * om;
        d_temp[i] = d_init[i] * (1.0 - om);
      }
      const auto gg = weight_generator_backward(ps, pt, model.gen, d_omega);
      g.gen.W += gg.dW;
      g.gen.b += gg.db;
      d_support += gg.dSupport;
      d_temp += gg.dTemp;
      // P' rows pooled from Q; fallback rows are copies of P_s
      detail::map_backward(dQ, inf.temp.hard, d_temp, inf.temp_protos.counts, inf.temp_protos.fell_back);
      const std::size_t C = ps.channels();
      for (std::size_t c = 0; c < ps.classes(); ++c)
        if (inf.temp_protos.fell_back[c])
          for (std::size_t ch = 0; ch < C; ++ch) d_support(c, ch) += d_temp(c, ch);
    }
    if (w_final != 0.0) {
      const auto gf = soft_predict_backward(Q, q.inf.trace.final_protos, f.alpha, q.gt);
      detail::axpy(dQ, w_final * inv_q, gf.dQ);
    }
    g.embed += embed_backward(model.embed, q.feat.cache, dQ);
  }

  const std::vector<bool> none(ps.classes(), false);
  for (std::size_t k = 0; k < f.support.feats.size(); ++k) {
    const auto& sf = f.support.feats[k];
    Tensor dS(sf.features.shape());
    detail::map_backward(dS, f.support.masks[k], d_support, f.support.pooled.counts, none);
    g.embed += embed_backward(model.embed, sf.cache, dS);
  }
  return g;
}

/// Momentum buffers for every trainable tensor, zero-initialised.
struct OptState {
  ModelGrads velocity;

  static OptState zeros_like(const Model& m) { return {ModelGrads::zeros_like(m)}; }
};

/// g' = g + wd * p;  v = momentum * v + g';  p -= lr * v
inline void sgd_step(GradPair& pg, Tensor& velocity, double lr, double momentum, double weight_decay) {
  pg.value.require_same_shape(velocity, "sgd_step velocity");
  for (std::size_t i = 0; i < pg.value.size(); ++i) {
    const double gi = pg.grad[i] + weight_decay * pg.value[i];
    velocity[i] = momentum * velocity[i] + gi;
    pg.value[i] -= lr * velocity[i];
  }
}

inline void sgd_update(Model& model, const ModelGrads& grads, OptState& state, const OuterConfig& cfg, double lr) {
  auto step = [&](Tensor& p, const Tensor& g, Tensor& v) {
    GradPair pg(std::move(p), g);
    sgd_step(pg, v, lr, cfg.momentum, cfg.weight_decay);
    p = std::move(pg.value);
  };
  if (grads.embed.kernels.size() != model.embed.layers.size()) throw ShapeError("sgd_update: layer count mismatch");
  for (std::size_t l = 0; l < model.embed.layers.size(); ++l)
    step(model.embed.layers[l].kernel, grads.embed.kernels[l], state.velocity.embed.kernels[l]);
  step(model.gen.W, grads.gen.W, state.velocity.gen.W);
  step(model.gen.b, grads.gen.b, state.velocity.gen.b);
}

struct TrainRecord {
  int iter = 0;
  double loss_total = 0.0;
  LossComponents parts;
  std::uint64_t episode_seed = 0;
};

struct TrainLog {
  std::vector<TrainRecord> rows;
  std::size_t skipped = 0;
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers; each index is
/// handled exactly once and results are expected to be stored by index.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(threads < 1 ? 1 : threads));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += workers) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct TrainSetup {
  std::vector<ShapeClass> pool;  // base classes
  int n_way = 2;
  int k_shot = 1;
  int n_query = 1;
  std::size_t img_size = 64;
  InnerConfig inner{};
  OuterConfig outer{};
  std::uint64_t seed = 0;
  int threads = 1;
};

inline std::uint64_t train_episode_seed(std::uint64_t seed, std::uint64_t index) {
  return CounterRng(seed).derive("train-episodes").at(index);
}

struct TrainResult {
  Model model;
  TrainLog log;
};

inline TrainResult train(const TrainSetup& setup, Model model) {
  setup.inner.validate();
  setup.outer.validate();
  TrainResult r{std::move(model), {}};
  OptState state = OptState::zeros_like(r.model);
  const auto batch = static_cast<std::size_t>(setup.outer.batch);
  for (int it = 0; it < setup.outer.epochs; ++it) {
    std::vector<std::optional<ModelGrads>> grads(batch);
    std::vector<TrainRecord> recs(batch);
    std::vector<std::string> warnings(batch);
    parallel_for(batch, setup.threads, [&](std::size_t b) {
      const std::uint64_t es = train_episode_seed(setup.seed, static_cast<std::uint64_t>(it) * batch + b);
      const Episode ep = gen_episode(setup.pool, setup.n_way, setup.k_shot, setup.img_size, es, setup.n_query);
      const auto f = episode_forward(ep, r.model, setup.inner, setup.outer.loss_weights);
      recs[b].iter = it;
      recs[b].episode_seed = es;
      if (f.skipped) {
        warnings[b] = f.skip_reason;
        return;
      }
      if (!std::isfinite(f.loss))
        throw NumericalError("training loss is not finite at iteration " + std::to_string(it) + ", episode seed " +
                             std::to_string(es));
      recs[b].loss_total = f.loss;
      recs[b].parts = f.parts;
      grads[b] = episode_backward(f, r.model);
    });
    ModelGrads acc = ModelGrads::zeros_like(r.model);
    std::size_t used = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      if (!grads[b]) {
        std::fprintf(stderr, "warning: skipping episode seed %llu: %s\n",
                     static_cast<unsigned long long>(recs[b].episode_seed), warnings[b].c_str());
        ++r.log.skipped;
        continue;
      }
      acc += *grads[b];
      ++used;
      r.log.rows.push_back(recs[b]);
    }
    if (used == 0) continue;
    acc *= 1.0 / static_cast<double>(used);
    sgd_update(r.model, acc, state, setup.outer, setup.outer.lr_at(it));
  }
  return r;
}

}  // namespace biopt
