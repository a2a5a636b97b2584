#pragma once

// train / eval / ablate / infer workflows. Each command writes its outputs
// into the configured output directory and reports through `log`.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "biopt/checkpoint.hpp"
#include "biopt/config.hpp"
#include "biopt/eval.hpp"
#include "biopt/outer.hpp"

namespace biopt {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitIo = 3, kExitNumerical = 4 };

namespace cmd_detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError(p.string() + ": cannot open for writing");
  out << text;
  if (!out) throw IoError(p.string() + ": write failed");
}

inline std::filesystem::path prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir + ": cannot create output directory: " + ec.message());
  return dir;
}

}  // namespace cmd_detail

inline std::string train_log_csv(const TrainLog& log) {
  std::string s = "iter,loss_total,loss_mprime,loss_target,loss_final,episode_seed\n";
  for (const auto& r : log.rows) {
    s += std::to_string(r.iter) + "," + format_double(r.loss_total) + "," + format_double(r.parts.mprime) + "," +
         format_double(r.parts.target) + "," + format_double(r.parts.final) + "," + std::to_string(r.episode_seed) + "\n";
  }
  return s;
}

/// Mean of loss_final over the last `n` logged episodes.
inline double trailing_final_loss(const TrainLog& log, std::size_t n) {
  const std::size_t m = std::min(n, log.rows.size());
  if (m == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = log.rows.size() - m; i < log.rows.size(); ++i) s += log.rows[i].parts.final;
  return s / static_cast<double>(m);
}

inline void check_compatible(const Model& m, const RunConfig& cfg) {
  const EmbedSpec want = cfg.embed.resolved();
  if (m.embed.spec != want) {
    auto describe = [](const EmbedSpec& s) {
      std::string d = "widths";
      for (auto w : s.widths) d += " " + std::to_string(w);
      d += " | strides";
      for (auto v : s.strides) d += " " + std::to_string(v);
      return d;
    };
    throw ConfigError("checkpoint architecture (" + describe(m.embed.spec) + ") does not match config (" +
                      describe(want) + ")");
  }
}

inline TrainResult train_from_config(const RunConfig& cfg, const ClassPools& pools) {
  return train(cfg.train_setup(pools), Model::init(cfg.embed, cfg.seed));
}

inline EvalReport evaluate_config(const Model& model, const RunConfig& cfg, const ClassPools& pools, Split split,
                                  const InnerConfig& inner) {
  return evaluate(model, eval_source(cfg, pools, split), cfg.eval_episodes, inner, cfg.scales, cfg.threads);
}

/// Writes model.ckpt, train_log.csv and config.txt.
inline int cmd_train(const RunConfig& cfg, std::ostream& log = std::cout) {
  cfg.validate();
  const auto out = cmd_detail::prepare_out_dir(cfg.out_dir);
  const auto pools = cfg.pools();
  const auto res = train_from_config(cfg, pools);
  save_checkpoint((out / "model.ckpt").string(), res.model);
  cmd_detail::write_text(out / "train_log.csv", train_log_csv(res.log));
  cmd_detail::write_text(out / "config.txt", config_text(cfg));
  log << "trained " << res.log.rows.size() << " episodes (" << res.log.skipped << " skipped), mode "
      << to_string(cfg.inner.init_mode) << ", outputs in " << out.string() << "\n";
  return kExitOk;
}

/// Writes eval_report.csv and prints mean-IoU and binary-IoU.
inline int cmd_eval(const std::string& checkpoint, const RunConfig& cfg, Split split = Split::novel,
                    std::ostream& log = std::cout) {
  cfg.validate();
  const Model model = load_checkpoint(checkpoint);
  check_compatible(model, cfg);
  const auto out = cmd_detail::prepare_out_dir(cfg.out_dir);
  const auto pools = cfg.pools();
  const auto rep = evaluate_config(model, cfg, pools, split, cfg.inner);
  cmd_detail::write_text(out / "eval_report.csv", report_csv(rep));
  log << "mean_iou=" << format_double(rep.mean_iou) << " binary_iou=" << format_double(rep.binary_iou)
      << " episodes=" << rep.n_episodes << "\n";
  return kExitOk;
}

struct StepRange {
  int first = 0;
  int last = 10;
};

inline StepRange parse_step_range(const std::string& s) {
  const auto dots = s.find("..");
  if (dots == std::string::npos) throw ConfigError("--sweep-steps expects A..B, got '" + s + "'");
  const config_detail::Parser p{"--sweep-steps"};
  StepRange r{p.small_int(s.substr(0, dots)), p.small_int(s.substr(dots + 2))};
  if (r.first < 0 || r.last < r.first) throw ConfigError("--sweep-steps needs 0 <= A <= B, got '" + s + "'");
  return r;
}

struct AblationRow {
  InitMode mode;
  EvalReport report;
  double trailing_loss_final = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<std::pair<int, EvalReport>> sweep;
  Model init_module_model;
};

inline std::string ablation_csv(const AblationResult& r) {
  std::string s = "mode,mean_iou,binary_iou,trailing_loss_final\n";
  for (const auto& row : r.rows)
    s += std::string(to_string(row.mode)) + "," + format_double(row.report.mean_iou) + "," +
         format_double(row.report.binary_iou) + "," + format_double(row.trailing_loss_final) + "\n";
  return s;
}

inline std::string sweep_csv(const AblationResult& r) {
  std::string s = "steps,mean_iou,binary_iou\n";
  for (const auto& [steps, rep] : r.sweep)
    s += std::to_string(steps) + "," + format_double(rep.mean_iou) + "," + format_double(rep.binary_iou) + "\n";
  return s;
}

inline constexpr std::size_t kTrailingWindow = 500;

/// Trains and evaluates baseline, support_init and init_module on the same
/// seed, class split and episode streams. Optionally sweeps inner steps on
/// the init_module model.
inline AblationResult run_ablation(const RunConfig& cfg, std::optional<StepRange> sweep,
                                   const std::filesystem::path* out = nullptr) {
  cfg.validate();
  const auto pools = cfg.pools();
  AblationResult result;
  for (InitMode mode : {InitMode::baseline, InitMode::support_init, InitMode::init_module}) {
    RunConfig mc = cfg;
    mc.inner.init_mode = mode;
    const auto tr = train_from_config(mc, pools);
    const auto rep = evaluate_config(tr.model, mc, pools, Split::novel, mc.inner);
    result.rows.push_back({mode, rep, trailing_final_loss(tr.log, kTrailingWindow)});
    if (out) {
      const std::string m(to_string(mode));
      cmd_detail::write_text(*out / ("train_log_" + m + ".csv"), train_log_csv(tr.log));
      cmd_detail::write_text(*out / ("eval_report_" + m + ".csv"), report_csv(rep));
      save_checkpoint((*out / ("model_" + m + ".ckpt")).string(), tr.model);
    }
    if (mode == InitMode::init_module) result.init_module_model = tr.model;
  }
  if (sweep) {
    for (int s = sweep->first; s <= sweep->last; ++s) {
      InnerConfig ic = cfg.inner;
      ic.init_mode = InitMode::init_module;
      ic.steps = s;
      result.sweep.emplace_back(s, evaluate_config(result.init_module_model, cfg, pools, Split::novel, ic));
    }
  }
  return result;
}

/// Writes ablation.csv (and sweep.csv with a step range) plus per-mode logs,
/// reports and checkpoints.
inline int cmd_ablate(const RunConfig& cfg, std::optional<StepRange> sweep, std::ostream& log = std::cout) {
  const auto out = cmd_detail::prepare_out_dir(cfg.out_dir);
  const auto r = run_ablation(cfg, sweep, &out);
  cmd_detail::write_text(out / "ablation.csv", ablation_csv(r));
  if (sweep) cmd_detail::write_text(out / "sweep.csv", sweep_csv(r));
  for (const auto& row : r.rows)
    log << to_string(row.mode) << ": mean_iou=" << format_double(row.report.mean_iou)
        << " binary_iou=" << format_double(row.report.binary_iou) << "\n";
  return kExitOk;
}

inline std::string inner_loss_csv(const Prediction& p, std::span<const double> scales) {
  std::string s = "step";
  for (double sc : scales) s += ",loss@" + format_double(sc);
  s += "\n";
  const std::size_t rows = p.traces.empty() ? 0 : p.traces.front().losses.size();
  for (std::size_t i = 0; i < rows; ++i) {
    s += std::to_string(i);
    for (const auto& t : p.traces) s += "," + format_double(t.losses[i]);
    s += "\n";
  }
  return s;
}

/// Predicts every query of an episode directory. Writes query_<j>_pred.pgm
/// and inner_loss_<j>.csv; prints IoUs when a query mask is present.
inline int cmd_infer(const std::string& checkpoint, const std::string& episode_dir, const RunConfig& cfg,
                     std::ostream& log = std::cout) {
  cfg.inner.validate();
  const Model model = load_checkpoint(checkpoint);
  const Episode ep = load_episode_dir(episode_dir);
  const auto out = cmd_detail::prepare_out_dir(cfg.out_dir);
  const auto pred = predict_episode(ep, model, cfg.inner, cfg.scales);
  if (pred.degenerate) log << "warning: a support class has no pixels at feature resolution\n";
  for (std::size_t j = 0; j < ep.query.size(); ++j) {
    const auto& qp = pred.queries[j];
    netpbm::write_mask((out / ("query_" + std::to_string(j) + "_pred.pgm")).string(), qp.hard);
    cmd_detail::write_text(out / ("inner_loss_" + std::to_string(j) + ".csv"), inner_loss_csv(qp, cfg.scales));
    log << "query " << j << ": predicted";
    if (ep.query[j].mask) {
      const EpisodeResult r{qp.hard, *ep.query[j].mask, ep.class_ids};
      log << " mean_iou=" << format_double(mean_iou(std::span<const EpisodeResult>(&r, 1)))
          << " binary_iou=" << format_double(binary_iou(r.pred, r.gt));
    }
    log << "\n";
  }
  return kExitOk;
}

/// Writes one generated episode in the directory format.
inline int cmd_make_episode(const RunConfig& cfg, Split split, std::size_t index, const std::string& dir,
                            bool with_query_mask, std::ostream& log = std::cout) {
  cfg.validate();
  const auto pools = cfg.pools();
  Episode ep = eval_source(cfg, pools, split)(index);
  if (!with_query_mask)
    for (auto& q : ep.query) q.mask.reset();
  save_episode_dir(ep, dir);
  log << "wrote episode " << index << " to " << dir << "\n";
  return kExitOk;
}

/// Maps the error families onto exit codes.
template <class F>
int run_guarded(F&& fn, std::ostream& err = std::cerr) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ShapeError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace biopt
