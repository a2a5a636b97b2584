#pragma once

// Per-episode inference shared by training and evaluation:
// embed -> support MAP -> init module -> inner loop -> final prediction.

#include <optional>
#include <string>
#include <vector>

#include "biopt/embed.hpp"
#include "biopt/episodes.hpp"
#include "biopt/initmod.hpp"
#include "biopt/inner.hpp"
#include "biopt/proto.hpp"

namespace biopt {

struct Model {
  EmbedParams embed;
  WeightGenerator gen;

  static Model init(const EmbedSpec& spec, std::uint64_t seed) {
    Model m{embed_init(spec, seed), {}};
    m.gen = WeightGenerator::zeros(m.embed.out_channels());
    return m;
  }

  friend bool operator==(const Model&, const Model&) = default;
};

struct SupportStage {
  std::vector<EmbedOutput> feats;
  std::vector<LabelMask> masks;  // at feature resolution
  PooledPrototypes pooled;
};

inline SupportStage support_stage(const Episode& ep, const EmbedParams& embed) {
  SupportStage s;
  std::vector<Tensor> fs;
  for (const auto& sample : ep.support) {
    if (!sample.mask) throw ShapeError("support sample without mask");
    s.feats.push_back(embed_forward(sample.image, embed));
    const Tensor& f = s.feats.back().features;
    s.masks.push_back(resize_nearest_labels(*sample.mask, f.dim(0), f.dim(1)));
    fs.push_back(f);
  }
  s.pooled = masked_average_pool(fs, s.masks, static_cast<std::size_t>(ep.n_way) + 1);
  return s;
}

/// Hard decisions the outer gradient treats as constants. Supplying them
/// replays a forward pass with exactly the same routing.
struct FrozenRouting {
  LabelMask temp_mask;
  PrototypeSet final_protos;
};

struct QueryInference {
  TempMask temp;           // M' from the support prototypes
  TempProtos temp_protos;  // P'
  WeightTensor omega;
  PrototypeSet init;  // P0
  TempMask target;     // soft map under P0 and the frozen inner target
  InnerTrace trace;
  SoftMask final_soft;  // prediction with the optimised prototypes
};

inline QueryInference infer_query(const Tensor& Q, const PrototypeSet& support, const WeightGenerator& gen,
                                  const InnerConfig& cfg, const FrozenRouting* frozen = nullptr) {
  QueryInference qi;
  qi.temp = temp_query_mask(Q, support, cfg.alpha);
  if (frozen) qi.temp.hard = frozen->temp_mask;
  switch (cfg.init_mode) {
    case InitMode::baseline:
      qi.init = support;
      qi.target = qi.temp;
      qi.trace = InnerTrace{{inner_loss(Q, support, qi.temp.hard, cfg.alpha)}, support};
      qi.final_soft = qi.temp.soft;
      return qi;
    case InitMode::support_init:
      qi.init = support;
      qi.target = qi.temp;
      break;
    case InitMode::init_module:
      qi.temp_protos = temp_query_protos(Q, qi.temp.hard, support);
      qi.omega = generate_weights(support, qi.temp_protos.protos, gen);
      qi.init = init_query_protos(support, qi.temp_protos.protos, qi.omega);
      qi.target = build_target_mask(Q, qi.init, cfg.alpha);
      break;
  }
  if (frozen) {
    qi.trace = InnerTrace{{}, frozen->final_protos};
  } else {
    qi.trace = inner_optimize(Q, qi.init, qi.target.hard, cfg);
  }
  qi.final_soft = soft_predict(Q, qi.trace.final_protos, cfg.alpha);
  return qi;
}

}  // namespace biopt
