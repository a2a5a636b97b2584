#pragma once

// IoU metrics, multi-scale prediction and the evaluation driver.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biopt/outer.hpp"
#include "biopt/pipeline.hpp"

namespace biopt {

struct IouCounts {
  std::uint64_t intersection = 0;
  std::uint64_t uni = 0;

  IouCounts& operator+=(const IouCounts& o) {
    intersection += o.intersection;
    uni += o.uni;
    return *this;
  }
  std::optional<double> iou() const {
    if (uni == 0) return std::nullopt;
    return static_cast<double>(intersection) / static_cast<double>(uni);
  }
  friend bool operator==(const IouCounts&, const IouCounts&) = default;
};

namespace detail {

inline void check_same_dims(const LabelMask& a, const LabelMask& b, const char* what) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError(std::string(what) + ": masks differ in size (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
}

template <class PredFn, class GtFn>
IouCounts count_iou(const LabelMask& pred, const LabelMask& gt, PredFn in_pred, GtFn in_gt) {
  IouCounts n;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = in_pred(pred.labels[i]), g = in_gt(gt.labels[i]);
    n.intersection += p && g;
    n.uni += p || g;
  }
  return n;
}

}  // namespace detail

inline IouCounts iou_counts(const LabelMask& pred, const LabelMask& gt, int cls) {
  detail::check_same_dims(pred, gt, "iou");
  auto is = [cls](int l) { return l == cls; };
  return detail::count_iou(pred, gt, is, is);
}

/// |pred=cls and gt=cls| / |pred=cls or gt=cls|; nullopt when the union is empty.
inline std::optional<double> iou(const LabelMask& pred, const LabelMask& gt, int cls) {
  return iou_counts(pred, gt, cls).iou();
}

struct BinaryCounts {
  IouCounts fg, bg;

  BinaryCounts& operator+=(const BinaryCounts& o) {
    fg += o.fg;
    bg += o.bg;
    return *this;
  }
  /// Mean of the defined foreground and background IoUs.
  double value() const {
    const auto f = fg.iou(), b = bg.iou();
    if (f && b) return 0.5 * (*f + *b);
    if (f) return *f;
    if (b) return *b;
    return 1.0;
  }
};

inline BinaryCounts binary_counts(const LabelMask& pred, const LabelMask& gt) {
  detail::check_same_dims(pred, gt, "binary_iou");
  auto fg = [](int l) { return l != 0; };
  auto bg = [](int l) { return l == 0; };
  return {detail::count_iou(pred, gt, fg, fg), detail::count_iou(pred, gt, bg, bg)};
}

inline double binary_iou(const LabelMask& pred, const LabelMask& gt) { return binary_counts(pred, gt).value(); }

/// A prediction with its ground truth; episode labels 1..N map to class_ids.
struct EpisodeResult {
  LabelMask pred;
  LabelMask gt;
  std::vector<int> class_ids;
};

/// Intersection and union per global class id, pooled over episodes.
inline std::map<int, IouCounts> pooled_class_counts(std::span<const EpisodeResult> results) {
  std::map<int, IouCounts> counts;
  for (const auto& r : results)
    for (std::size_t c = 0; c < r.class_ids.size(); ++c)
      counts[r.class_ids[c]] += iou_counts(r.pred, r.gt, static_cast<int>(c) + 1);
  return counts;
}

inline double mean_iou_from_counts(const std::map<int, IouCounts>& counts) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [cls, c] : counts) {
    if (auto v = c.iou()) {
      sum += *v;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

inline double mean_iou(std::span<const EpisodeResult> results) {
  if (results.empty()) throw ShapeError("mean_iou: need at least one episode");
  return mean_iou_from_counts(pooled_class_counts(results));
}

inline std::size_t scaled_extent(std::size_t extent, double scale, int multiple) {
  const auto m = static_cast<double>(multiple);
  const double v = std::round(static_cast<double>(extent) * scale / m) * m;
  return static_cast<std::size_t>(v < m ? m : v);
}

struct Prediction {
  SoftMask soft;  // at image resolution
  LabelMask hard;
  std::vector<InnerTrace> traces;  // one per scale
};

/// Runs inference on query j at each scale, upsamples the soft maps to the
/// image size, averages them and takes the argmax.
inline Prediction predict_query(const Episode& ep, const SupportStage& support, std::size_t j, const Model& model,
                                const InnerConfig& cfg, std::span<const double> scales) {
  if (scales.empty()) throw ConfigError("predict: at least one scale is required");
  const Tensor& img = ep.query.at(j).image;
  const std::size_t H = img.dim(0), W = img.dim(1);
  const int ds = model.embed.downsample();
  Prediction pred;
  const std::size_t K = static_cast<std::size_t>(ep.n_way) + 1;
  Tensor acc({H, W, K});
  for (double s : scales) {
    if (!(s > 0.0)) throw ConfigError("predict: scales must be positive");
    const std::size_t h = s == 1.0 ? H : scaled_extent(H, s, ds);
    const std::size_t w = s == 1.0 ? W : scaled_extent(W, s, ds);
    const Tensor scaled = resize_bilinear(img, h, w);
    const auto feat = embed_forward(scaled, model.embed);
    auto inf = infer_query(feat.features, support.pooled.protos, model.gen, cfg);
    acc += resize_bilinear(inf.final_soft.probs, H, W);
    pred.traces.push_back(std::move(inf.trace));
  }
  if (scales.size() > 1) acc *= 1.0 / static_cast<double>(scales.size());
  pred.soft = SoftMask{std::move(acc)};
  pred.hard = hard_mask(pred.soft);
  return pred;
}

struct EpisodePrediction {
  bool degenerate = false;
  std::vector<Prediction> queries;
};

/// Predictions for every query. When a support class has no pixels at
/// feature resolution the queries are predicted as background.
inline EpisodePrediction predict_episode(const Episode& ep, const Model& model, const InnerConfig& cfg,
                                         std::span<const double> scales) {
  cfg.validate();
  EpisodePrediction out;
  const SupportStage support = support_stage(ep, model.embed);
  if (support.pooled.any_empty()) {
    out.degenerate = true;
    const std::size_t K = static_cast<std::size_t>(ep.n_way) + 1;
    for (const auto& q : ep.query) {
      Prediction p;
      const std::size_t H = q.image.dim(0), W = q.image.dim(1);
      p.soft = SoftMask{Tensor({H, W, K})};
      for (std::size_t i = 0; i < H * W; ++i) p.soft.probs[i * K] = 1.0;
      p.hard = LabelMask(H, W);
      out.queries.push_back(std::move(p));
    }
    return out;
  }
  for (std::size_t j = 0; j < ep.query.size(); ++j) out.queries.push_back(predict_query(ep, support, j, model, cfg, scales));
  return out;
}

struct EvalReport {
  std::map<int, IouCounts> class_counts;
  BinaryCounts binary;
  double mean_iou = 0.0;
  double binary_iou = 0.0;
  std::size_t n_episodes = 0;
  std::size_t degenerate = 0;

  std::map<int, double> per_class_iou() const {
    std::map<int, double> m;
    for (const auto& [cls, c] : class_counts)
      if (auto v = c.iou()) m[cls] = *v;
    return m;
  }
};

using EpisodeSource = std::function<Episode(std::size_t)>;

/// Evaluates n episodes. Counts are integer sums, so the thread count never
/// changes the report.
inline EvalReport evaluate(const Model& model, const EpisodeSource& source, std::size_t n, const InnerConfig& cfg,
                           std::span<const double> scales, int threads = 1) {
  struct Slot {
    std::map<int, IouCounts> counts;
    BinaryCounts binary;
    bool degenerate = false;
  };
  std::vector<Slot> slots(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const Episode ep = source(i);
    const auto pred = predict_episode(ep, model, cfg, scales);
    slots[i].degenerate = pred.degenerate;
    for (std::size_t j = 0; j < ep.query.size(); ++j) {
      if (!ep.query[j].mask) throw ShapeError("evaluate: query without ground-truth mask");
      const EpisodeResult r{pred.queries[j].hard, *ep.query[j].mask, ep.class_ids};
      for (auto& [cls, c] : pooled_class_counts(std::span<const EpisodeResult>(&r, 1))) slots[i].counts[cls] += c;
      slots[i].binary += binary_counts(r.pred, r.gt);
    }
  });
  EvalReport rep;
  rep.n_episodes = n;
  for (const auto& s : slots) {
    for (const auto& [cls, c] : s.counts) rep.class_counts[cls] += c;
    rep.binary += s.binary;
    rep.degenerate += s.degenerate;
  }
  rep.mean_iou = mean_iou_from_counts(rep.class_counts);
  rep.binary_iou = rep.binary.value();
  return rep;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV rows of class, intersection, union, iou followed by a summary line.
inline std::string report_csv(const EvalReport& r) {
  std::string s = "class,intersection,union,iou\n";
  for (const auto& [cls, c] : r.class_counts) {
    s += std::to_string(cls) + "," + std::to_string(c.intersection) + "," + std::to_string(c.uni) + "," +
         (c.iou() ? format_double(*c.iou()) : std::string("nan")) + "\n";
  }
  s += "summary,mean_iou=" + format_double(r.mean_iou) + ",binary_iou=" + format_double(r.binary_iou) +
       ",n_episodes=" + std::to_string(r.n_episodes) + "\n";
  return s;
}

}  // namespace biopt
