// biopt command-line tool: train, eval, ablate, infer, make-episode.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "biopt/biopt.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string scales;
  std::optional<int> inner_steps;
  std::string init_mode;
  std::optional<int> threads;
};

void add_common(CLI::App* sub, Overrides& o, bool config_required = true) {
  auto* c = sub->add_option("--config", o.config, "run configuration file");
  if (config_required) c->required();
  sub->add_option("--out", o.out, "output directory (overrides out_dir)");
  sub->add_option("--seed", o.seed, "seed (overrides the config)");
  sub->add_option("--scales", o.scales, "comma-separated test scales");
  sub->add_option("--inner-steps", o.inner_steps, "inner optimisation steps");
  sub->add_option("--init-mode", o.init_mode, "baseline | support_init | init_module");
  sub->add_option("--threads", o.threads, "worker threads for evaluation");
}

biopt::RunConfig resolve(const Overrides& o) {
  biopt::RunConfig cfg;
  if (!o.config.empty()) {
    cfg = biopt::load_config(o.config);
  } else if (!o.seed) {
    throw biopt::ConfigError("either --config or --seed is required");
  }
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (!o.scales.empty()) biopt::apply_config_key(cfg, "scales", o.scales, "--scales");
  if (o.inner_steps) cfg.inner.steps = *o.inner_steps;
  if (!o.init_mode.empty()) biopt::apply_config_key(cfg, "init_mode", o.init_mode, "--init-mode");
  if (o.threads) cfg.threads = *o.threads;
  cfg.validate();
  return cfg;
}

biopt::Split parse_split(const std::string& s) {
  if (s == "novel") return biopt::Split::novel;
  if (s == "base") return biopt::Split::base;
  throw biopt::ConfigError("--split must be novel or base, got '" + s + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-level prototype optimisation for few-shot segmentation"};
  app.require_subcommand(1);

  Overrides o;
  std::string checkpoint, episode_dir, sweep, split = "novel";
  std::size_t index = 0;
  bool with_mask = true;

  auto* train = app.add_subcommand("train", "train a model; writes model.ckpt, train_log.csv, config.txt");
  add_common(train, o);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; writes eval_report.csv");
  add_common(eval, o);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--split", split, "novel | base");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate baseline, support_init and init_module");
  add_common(ablate, o);
  ablate->add_option("--sweep-steps", sweep, "inner-step range A..B for the init_module model");

  auto* infer = app.add_subcommand("infer", "segment the queries of an episode directory");
  add_common(infer, o, false);
  infer->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  infer->add_option("--episode", episode_dir, "episode directory")->required();

  auto* make = app.add_subcommand("make-episode", "write a generated episode directory");
  add_common(make, o, false);
  make->add_option("--episode", episode_dir, "destination directory")->required();
  make->add_option("--split", split, "novel | base");
  make->add_option("--index", index, "episode index in the evaluation stream");
  make->add_flag("!--no-query-mask", with_mask, "omit the query masks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : biopt::kExitConfig;
  }

  return biopt::run_guarded([&]() -> int {
    if (*infer && o.config.empty() && !o.seed) o.seed = 0;
    const biopt::RunConfig cfg = resolve(o);
    if (*train) return biopt::cmd_train(cfg);
    if (*eval) return biopt::cmd_eval(checkpoint, cfg, parse_split(split));
    if (*ablate) {
      std::optional<biopt::StepRange> range;
      if (!sweep.empty()) range = biopt::parse_step_range(sweep);
      return biopt::cmd_ablate(cfg, range);
    }
    if (*infer) return biopt::cmd_infer(checkpoint, episode_dir, cfg);
    return biopt::cmd_make_episode(cfg, parse_split(split), index, episode_dir, with_mask);
  });
}
