// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails. CSV artefacts go under --out.

#include <CLI11.hpp>

#include <chrono>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "support/checks.hpp"

using namespace biopt;
using namespace biopt::checks;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kKernelFdTol = 1e-6;
constexpr double kEpisodeFdTol = 1e-5;
constexpr std::size_t kFdInstances = 50;
constexpr double kOracleFloatTol = 1e-12;
constexpr std::size_t kOracleInstances = 100;
constexpr std::size_t kDescentInstances = 100;
constexpr std::size_t kDescentMinDecreased = 95;
constexpr std::uint64_t kSeeds[] = {1, 2, 3};
constexpr int kTrainIterations = 250;  // x batch 8 = 2000 episodes
constexpr std::size_t kEvalEpisodes = 500;
constexpr double kAblationMargin = 0.03;
constexpr double kStepSpread = 0.02;
constexpr double kScaleShift = 0.02;
constexpr double kSuiteSeconds = 60.0;
constexpr double kAblationSeconds = 30.0 * 60.0;
constexpr double kSweepSeconds = 10.0 * 60.0;
constexpr double kScaleSeconds = 10.0 * 60.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Verdict {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, bool pass, const std::string& detail) {
  verdicts.push_back({id, pass, detail});
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

void gradient_suite() {
  const auto t0 = Clock::now();
  struct Path {
    const char* name;
    std::function<FdStats(std::uint64_t)> run;
    double tol;
  };
  const Path paths[] = {{"conv", conv_grad_instance, kKernelFdTol},
                        {"relu", relu_grad_instance, kKernelFdTol},
                        {"cosine-ce", cosine_ce_grad_instance, kKernelFdTol},
                        {"generator", generator_grad_instance, kKernelFdTol},
                        {"episode", episode_grad_instance, kEpisodeFdTol}};
  bool ok = true;
  std::string detail;
  for (const auto& p : paths) {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < kFdInstances; ++s) worst = std::max(worst, p.run(s).rel());
    ok = ok && worst < p.tol;
    detail += fmt("%s %.2e (<%.0e) ", p.name, worst, p.tol);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < kSuiteSeconds;
  report(1, ok, detail + fmt("over %zu instances each, %.1fs", kFdInstances, secs));
}

void oracle_suite() {
  const auto t0 = Clock::now();
  OracleStats st;
  for (std::uint64_t s = 0; s < kOracleInstances; ++s) oracle_instance(s, st);
  const double secs = seconds_since(t0);
  const bool ok = st.instances == kOracleInstances && st.max_float_diff < kOracleFloatTol &&
                  st.integer_mismatches == 0 && secs < kSuiteSeconds;
  report(2, ok,
         fmt("%zu instances, max float diff %.2e, integer mismatches %zu, %.1fs", st.instances, st.max_float_diff,
             st.integer_mismatches, secs));
}

void descent_suite() {
  const auto t0 = Clock::now();
  DescentStats st;
  for (std::uint64_t s = 0; s < kDescentInstances; ++s) descent_instance(s, st);
  const double secs = seconds_since(t0);
  const bool ok = st.monotone == kDescentInstances && st.decreased >= kDescentMinDecreased && secs < kSuiteSeconds;
  report(3, ok,
         fmt("monotone at lr 1e-3 on %zu/%zu, final < initial at lr 0.1 on %zu/%zu, %.1fs", st.monotone,
             st.instances, st.decreased, st.instances, secs));
}

RunConfig benchmark_config(std::uint64_t seed, int threads) {
  RunConfig c;
  c.seed = seed;
  c.outer.epochs = kTrainIterations;
  c.eval_episodes = kEvalEpisodes;
  c.threads = threads;
  c.validate();
  return c;
}

struct SeedRun {
  AblationResult ablation;
  EvalReport single_scale, multi_scale;
  double ablation_seconds = 0.0, sweep_seconds = 0.0, scale_seconds = 0.0;
};

const std::vector<double> kMultiScales{0.7, 1.0, 1.3};

std::string multiscale_csv(const SeedRun& r) {
  return "scales,mean_iou,binary_iou\n1," + format_double(r.single_scale.mean_iou) + "," +
         format_double(r.single_scale.binary_iou) + "\n0.7;1;1.3," + format_double(r.multi_scale.mean_iou) + "," +
         format_double(r.multi_scale.binary_iou) + "\n";
}

/// Criteria 4-7 for one seed; CSVs land in `dir`.
SeedRun run_seed(std::uint64_t seed, int threads, const fs::path& dir) {
  fs::create_directories(dir);
  RunConfig cfg = benchmark_config(seed, threads);
  SeedRun r;
  auto t0 = Clock::now();
  r.ablation = run_ablation(cfg, std::nullopt, &dir);
  r.ablation_seconds = seconds_since(t0);

  const auto pools = cfg.pools();
  const Model& model = r.ablation.init_module_model;
  InnerConfig inner = cfg.inner;
  inner.init_mode = InitMode::init_module;
  t0 = Clock::now();
  for (int s = 0; s <= 10; ++s) {
    InnerConfig ic = inner;
    ic.steps = s;
    r.ablation.sweep.emplace_back(s, evaluate_config(model, cfg, pools, Split::novel, ic));
  }
  r.sweep_seconds = seconds_since(t0);

  t0 = Clock::now();
  r.single_scale = r.ablation.sweep.back().second;
  RunConfig ms = cfg;
  ms.scales = kMultiScales;
  r.multi_scale = evaluate_config(model, ms, pools, Split::novel, inner);
  r.scale_seconds = seconds_since(t0);

  spit(dir / "ablation.csv", ablation_csv(r.ablation));
  spit(dir / "sweep.csv", sweep_csv(r.ablation));
  spit(dir / "multiscale.csv", multiscale_csv(r));
  return r;
}

double miou(const SeedRun& r, InitMode m) {
  for (const auto& row : r.ablation.rows)
    if (row.mode == m) return row.report.mean_iou;
  throw std::logic_error("missing ablation row");
}

double trailing(const SeedRun& r, InitMode m) {
  for (const auto& row : r.ablation.rows)
    if (row.mode == m) return row.trailing_loss_final;
  throw std::logic_error("missing ablation row");
}

/// Evaluation with scales [1.0] against the plain single-scale pipeline,
/// compared on raw soft-map bytes.
bool unit_scale_bitwise(const Model& model, const RunConfig& cfg) {
  const auto pools = cfg.pools();
  const auto src = eval_source(cfg, pools, Split::novel);
  InnerConfig inner = cfg.inner;
  inner.init_mode = InitMode::init_module;
  const std::vector<double> unit{1.0};
  for (std::size_t i = 0; i < 20; ++i) {
    const Episode ep = src(i);
    const auto pred = predict_episode(ep, model, inner, unit);
    if (pred.degenerate) continue;
    const auto support = support_stage(ep, model.embed);
    const auto feat = embed_forward(ep.query[0].image, model.embed);
    const auto inf = infer_query(feat.features, support.pooled.protos, model.gen, inner);
    const Tensor direct = resize_bilinear(inf.final_soft.probs, ep.query[0].image.dim(0), ep.query[0].image.dim(1));
    const Tensor& got = pred.queries[0].soft.probs;
    if (got.shape() != direct.shape() ||
        std::memcmp(got.data(), direct.data(), direct.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

void benchmark_criteria(const fs::path& out) {
  std::vector<SeedRun> runs;
  for (std::uint64_t s : kSeeds) {
    runs.push_back(run_seed(s, 1, out / ("seed_" + std::to_string(s))));
    const auto& r = runs.back();
    std::cout << fmt("  seed %llu: baseline %.4f support_init %.4f init_module %.4f (%.0fs)",
                     static_cast<unsigned long long>(s), miou(r, InitMode::baseline), miou(r, InitMode::support_init),
                     miou(r, InitMode::init_module), r.ablation_seconds)
              << std::endl;
  }

  // 4: ordering per seed and average margin
  {
    bool ordered = true;
    double margin = 0.0, secs = 0.0;
    std::string per;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const double b = miou(runs[i], InitMode::baseline), s = miou(runs[i], InitMode::support_init),
                   m = miou(runs[i], InitMode::init_module);
      ordered = ordered && b < s && s < m;
      margin += (m - b) / static_cast<double>(runs.size());
      secs += runs[i].ablation_seconds;
      per += fmt("seed %llu %.4f<%.4f<%.4f%s; ", static_cast<unsigned long long>(kSeeds[i]), b, s, m,
                 b < s && s < m ? "" : " (violated)");
    }
    report(4, ordered && margin >= kAblationMargin && secs < kAblationSeconds,
           per + fmt("mean init_module - baseline %+.2f points (need >= %.0f), %.0fs", 100 * margin,
                     100 * kAblationMargin, secs));
  }

  // 5: inner-step stability on each init_module model
  {
    bool ok = true;
    double secs = 0.0;
    std::string per;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto& sw = runs[i].ablation.sweep;
      const double zero = sw.front().second.mean_iou;
      double lo = 1.0, hi = 0.0;
      bool beats = true;
      for (std::size_t k = 1; k < sw.size(); ++k) {
        lo = std::min(lo, sw[k].second.mean_iou);
        hi = std::max(hi, sw[k].second.mean_iou);
        beats = beats && sw[k].second.mean_iou > zero;
      }
      ok = ok && hi - lo < kStepSpread && beats;
      secs += runs[i].sweep_seconds;
      per += fmt("seed %llu spread %.2f points, step0 %.4f vs min %.4f%s; ", static_cast<unsigned long long>(kSeeds[i]),
                 100 * (hi - lo), zero, lo, beats ? "" : " (not beaten)");
    }
    report(5, ok && secs / static_cast<double>(runs.size()) < kSweepSeconds,
           per + fmt("%.0fs per model", secs / static_cast<double>(runs.size())));
  }

  // 6: multi-scale shift and unit-scale identity
  {
    bool ok = true;
    double secs = 0.0;
    std::string per;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const double d = runs[i].multi_scale.mean_iou - runs[i].single_scale.mean_iou;
      ok = ok && std::abs(d) <= kScaleShift;
      secs += runs[i].scale_seconds;
      per += fmt("seed %llu %+.2f points; ", static_cast<unsigned long long>(kSeeds[i]), 100 * d);
    }
    const bool bitwise = unit_scale_bitwise(runs.front().ablation.init_module_model, benchmark_config(kSeeds[0], 1));
    report(6, ok && bitwise && secs / static_cast<double>(runs.size()) < kScaleSeconds,
           per + std::string("scales [1.0] bitwise equal to single-scale: ") + (bitwise ? "yes" : "no") +
               fmt(", %.0fs per model", secs / static_cast<double>(runs.size())));
  }

  // 7: trailing-500 training loss, BiOpt vs baseline
  {
    bool ok = true;
    std::string per;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const double b = trailing(runs[i], InitMode::baseline), m = trailing(runs[i], InitMode::init_module);
      ok = ok && m <= b;
      per += fmt("seed %llu init_module %.4f vs baseline %.4f; ", static_cast<unsigned long long>(kSeeds[i]), m, b);
    }
    report(7, ok, per + fmt("trailing %zu episodes of loss_final", kTrailingWindow));
  }

  // 8: rerun with two worker threads, compare every CSV byte for byte
  {
    std::size_t files = 0, differing = 0;
    for (std::uint64_t s : kSeeds) {
      const fs::path a = out / ("seed_" + std::to_string(s)), b = out / ("seed_" + std::to_string(s) + "_threads2");
      run_seed(s, 2, b);
      for (const auto& entry : fs::directory_iterator(a)) {
        if (entry.path().extension() != ".csv") continue;
        ++files;
        differing += slurp(entry.path()) != slurp(b / entry.path().filename());
      }
    }
    report(8, files > 0 && differing == 0,
           fmt("%zu CSVs compared between threads=1 and threads=2 reruns, %zu differ", files, differing));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria runner"};
  std::string out = "acceptance_out";
  app.add_option("--out", out, "directory for CSV artefacts");
  CLI11_PARSE(app, argc, argv);

  gradient_suite();
  oracle_suite();
  descent_suite();
  benchmark_criteria(out);

  std::size_t failed = 0;
  for (const auto& v : verdicts) failed += !v.pass;
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << verdicts.size() - failed << "/" << verdicts.size() << std::endl;
  return failed ? 1 : 0;
}
