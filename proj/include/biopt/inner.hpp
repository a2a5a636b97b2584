#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "biopt/proto.hpp"

namespace biopt {

/// How query prototypes are initialised before prediction.
///   baseline     - no inner loop, predict with the support prototypes
///   support_init - start from the support prototypes, target = M'
///   init_module  - learned convex initialisation, target from P0
enum class InitMode { baseline, support_init, init_module };

inline std::string_view to_string(InitMode m) {
  switch (m) {
    case InitMode::baseline: return "baseline";
    case InitMode::support_init: return "support_init";
    case InitMode::init_module: return "init_module";
  }
  return "?";
}

inline InitMode parse_init_mode(std::string_view s) {
  if (s == "baseline") return InitMode::baseline;
  if (s == "support_init") return InitMode::support_init;
  if (s == "init_module") return InitMode::init_module;
  throw ConfigError("unknown init mode '" + std::string(s) + "' (expected baseline|support_init|init_module)");
}

struct InnerConfig {
  int steps = 10;
  double lr = 0.1;
  double alpha = 20.0;
  InitMode init_mode = InitMode::init_module;

  void validate() const {
    if (steps < 0) throw ConfigError("inner steps must be >= 0");
    if (!(lr >= 0.0)) throw ConfigError("inner lr must be >= 0");
    if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
  }
};

struct InnerTrace {
  std::vector<double> losses;  // steps + 1 entries
  PrototypeSet final_protos;
};

inline double inner_loss(const Tensor& Q, const PrototypeSet& P, const LabelMask& target, double alpha) {
  return cross_entropy(soft_predict(Q, P, alpha), target);
}

/// Plain gradient descent on the prototypes against a frozen target mask.
inline InnerTrace inner_optimize(const Tensor& Q, const PrototypeSet& init, const LabelMask& target,
                                 const InnerConfig& cfg) {
  cfg.validate();
  require_prototype_norms(init, "inner_optimize");
  InnerTrace tr{{}, init};
  tr.losses.reserve(static_cast<std::size_t>(cfg.steps) + 1);
  for (int i = 0; i < cfg.steps; ++i) {
    tr.losses.push_back(inner_loss(Q, tr.final_protos, target, cfg.alpha));
    const auto g = soft_predict_backward(Q, tr.final_protos, cfg.alpha, target, /*want_dq=*/false);
    Tensor& p = tr.final_protos.protos;
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= cfg.lr * g.dP[k];
    for (std::size_t c = 0; c < tr.final_protos.classes(); ++c)
      if (!(row_norm(tr.final_protos.row(c), tr.final_protos.channels()) > kMinNorm))
        throw NumericalError("inner_optimize: prototype row " + std::to_string(c) + " collapsed at step " +
                             std::to_string(i + 1));
  }
  tr.losses.push_back(inner_loss(Q, tr.final_protos, target, cfg.alpha));
  return tr;
}

}  // namespace biopt
