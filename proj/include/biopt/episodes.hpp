#pragma once

// Synthetic shape-segmentation episodes and the on-disk episode directory.
//
// Every class is a (shape kind, texture) pair. Each image holds a single
// object of one class at a random scale and position over a randomly
// coloured, noisy background. Object colour, stripe phase and orientation
// are jittered per image so support and query appearance differ.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "biopt/netpbm.hpp"
#include "biopt/rng.hpp"
#include "biopt/tensor.hpp"

namespace biopt {

enum class ShapeKind { disk, square, triangle, ring, bar, cross, ellipse, lshape };
inline constexpr std::size_t kShapeKinds = 8;

inline const char* to_string(ShapeKind k) {
  static constexpr const char* names[] = {"disk", "square", "triangle", "ring", "bar", "cross", "ellipse", "lshape"};
  return names[static_cast<int>(k)];
}

struct Texture {
  std::array<double, 3> color;  // base RGB in [0,1]
  double noise;                 // per-pixel noise amplitude
  double stripe_freq;           // stripes per object half-width, 0 = none
};

struct ShapeClass {
  int id = 0;  // global class id, >= 1
  ShapeKind kind = ShapeKind::disk;
  std::size_t texture_index = 0;
  Texture texture{};

  friend bool operator==(const ShapeClass& a, const ShapeClass& b) {
    return a.id == b.id && a.kind == b.kind && a.texture_index == b.texture_index;
  }
};

namespace detail {

inline std::array<double, 3> hsv(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double x = c * (1.0 - std::fabs(std::fmod(h / 60.0, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h / 60.0)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {r + m, g + m, b + m};
}

inline const std::vector<Texture>& texture_palette() {
  static const std::vector<Texture> palette = [] {
    std::vector<Texture> p;
    for (int i = 0; i < 12; ++i) {
      const double hue = 30.0 * ((i * 5) % 12);  // interleave so neighbours in the list are far apart
      const double sat = i % 2 ? 0.75 : 0.95;
      const double val = i % 3 == 0 ? 0.95 : 0.8;
      p.push_back({hsv(hue, sat, val), 0.03 + 0.01 * (i % 4), static_cast<double>(i % 3)});
    }
    return p;
  }();
  return palette;
}

}  // namespace detail

inline std::size_t class_capacity() { return kShapeKinds * detail::texture_palette().size(); }

struct ClassPools {
  std::vector<ShapeClass> base;
  std::vector<ShapeClass> novel;
};

/// Disjoint base and novel pools drawn from seeded shuffles of the texture
/// palette and the shape kinds; kind/texture pairs are always unique.
inline ClassPools make_class_pool(std::size_t n_base, std::size_t n_novel, std::uint64_t seed) {
  if (n_base < 1) throw ConfigError("make_class_pool: need at least one base class");
  if (n_novel < 1) throw ConfigError("make_class_pool: need at least one novel class");
  const auto& palette = detail::texture_palette();
  const std::size_t T = palette.size();
  if (n_base + n_novel > class_capacity())
    throw ConfigError("make_class_pool: " + std::to_string(n_base + n_novel) + " classes requested, only " +
                      std::to_string(class_capacity()) + " kind/texture combinations exist");
  CounterRng rng = CounterRng(seed).derive("class-pool");
  std::vector<std::size_t> tex(T), kinds(kShapeKinds);
  for (std::size_t i = 0; i < T; ++i) tex[i] = i;
  for (std::size_t i = 0; i < kShapeKinds; ++i) kinds[i] = i;
  for (std::size_t i = T; i-- > 1;) std::swap(tex[i], tex[rng.below(i + 1)]);
  for (std::size_t i = kShapeKinds; i-- > 1;) std::swap(kinds[i], kinds[rng.below(i + 1)]);
  ClassPools pools;
  for (std::size_t i = 0; i < n_base + n_novel; ++i) {
    ShapeClass sc;
    sc.id = static_cast<int>(i) + 1;
    sc.texture_index = tex[i % T];
    // round r = i / T shifts the kind assignment so (kind, texture) never repeats
    sc.kind = static_cast<ShapeKind>(kinds[(i + i / T) % kShapeKinds]);
    sc.texture = palette[sc.texture_index];
    (i < n_base ? pools.base : pools.novel).push_back(sc);
  }
  return pools;
}

struct Sample {
  Tensor image;  // H x W x 3, values k/255
  std::optional<LabelMask> mask;
};

/// N-way K-shot task. Support sample c*K + k shows class_ids[c] labelled c+1.
struct Episode {
  int n_way = 1;
  int k_shot = 1;
  std::vector<Sample> support;
  std::vector<Sample> query;
  std::vector<int> class_ids;

  std::size_t height() const { return support.front().image.dim(0); }
  std::size_t width() const { return support.front().image.dim(1); }
};

namespace detail {

inline bool inside_shape(ShapeKind kind, double u, double v) {
  const double au = std::fabs(u), av = std::fabs(v);
  switch (kind) {
    case ShapeKind::disk: return u * u + v * v <= 1.0;
    case ShapeKind::square: return au <= 0.85 && av <= 0.85;
    case ShapeKind::triangle: return v >= -1.0 && v <= 1.0 && au <= 0.6 * (v + 1.0) && au <= 1.0;
    case ShapeKind::ring: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.45 * 0.45;
    }
    case ShapeKind::bar: return au <= 1.0 && av <= 0.6;
    case ShapeKind::cross: return (au <= 0.4 && av <= 1.0) || (av <= 0.4 && au <= 1.0);
    case ShapeKind::ellipse: return u * u + (v / 0.8) * (v / 0.8) <= 1.0;
    case ShapeKind::lshape:
      return (u >= -1.0 && u <= -0.2 && av <= 1.0) || (v >= 0.2 && v <= 1.0 && u >= -1.0 && u <= 1.0);
  }
  return false;
}

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

inline double quantize(double x) { return std::round(clamp01(x) * 255.0) / 255.0; }

}  // namespace detail

struct RenderedImage {
  Tensor image;
  LabelMask mask;  // foreground pixels carry `label`
};

/// One object of `cls` over textured background, fully determined by rng's key.
inline RenderedImage render_object(const ShapeClass& cls, int label, std::size_t size, CounterRng rng) {
  using detail::clamp01;
  const double S = static_cast<double>(size);
  const double half = 0.5 * S * rng.uniform(0.2, 0.6);
  const double margin = std::min(half * std::numbers::sqrt2, 0.5 * S);
  const double cx = rng.uniform(margin, S - margin);
  const double cy = rng.uniform(margin, S - margin);
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ct = std::cos(theta), st = std::sin(theta);

  // background: two low-saturation colours blended along a random direction
  const auto bg0 = detail::hsv(rng.uniform(0, 360), rng.uniform(0.0, 0.25), rng.uniform(0.2, 0.8));
  const auto bg1 = detail::hsv(rng.uniform(0, 360), rng.uniform(0.0, 0.25), rng.uniform(0.2, 0.8));
  const double gdir = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double gx = std::cos(gdir) / S, gy = std::sin(gdir) / S;
  const double bg_noise = rng.uniform(0.02, 0.06);

  // per-image appearance jitter of the object
  const double gain = rng.uniform(0.75, 1.2);
  std::array<double, 3> fg;
  for (int c = 0; c < 3; ++c) fg[c] = clamp01(cls.texture.color[c] * gain + rng.uniform(-0.08, 0.08));
  const double stripe_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double stripe_dir = rng.uniform(0.0, std::numbers::pi);
  const double sc = std::cos(stripe_dir), ss = std::sin(stripe_dir);

  RenderedImage out{Tensor({size, size, 3}), LabelMask(size, size)};
  CounterRng noise = rng.derive("pixel-noise");
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double dx = (px - cx) / half, dy = (py - cy) / half;
      const double u = ct * dx + st * dy, v = -st * dx + ct * dy;
      const std::uint64_t pix = y * size + x;
      const bool fgpix = detail::inside_shape(cls.kind, u, v);
      for (int c = 0; c < 3; ++c) {
        const double n = static_cast<double>(noise.at(pix * 3 + static_cast<unsigned>(c)) >> 11) * 0x1.0p-52 - 1.0;
        double val;
        if (fgpix) {
          const double stripe = cls.texture.stripe_freq > 0
                                    ? 0.12 * std::sin(std::numbers::pi * cls.texture.stripe_freq * (sc * u + ss * v) +
                                                      stripe_phase)
                                    : 0.0;
          val = fg[c] * (1.0 + stripe) + cls.texture.noise * n;
        } else {
          const double t = clamp01(0.5 + (px - 0.5 * S) * gx + (py - 0.5 * S) * gy);
          val = bg0[c] + t * (bg1[c] - bg0[c]) + bg_noise * n;
        }
        out.image(y, x, static_cast<std::size_t>(c)) = detail::quantize(val);
      }
      if (fgpix) out.mask(y, x) = label;
    }
  }
  return out;
}

/// Deterministic N-way K-shot episode with n_query query images.
inline Episode gen_episode(const std::vector<ShapeClass>& pool, int n_way, int k_shot, std::size_t img_size,
                           std::uint64_t seed, int n_query = 1) {
  if (n_way < 1 || static_cast<std::size_t>(n_way) > pool.size())
    throw ConfigError("gen_episode: n_way=" + std::to_string(n_way) + " but pool has " +
                      std::to_string(pool.size()) + " classes");
  if (k_shot < 1) throw ConfigError("gen_episode: k_shot must be >= 1");
  if (n_query < 1) throw ConfigError("gen_episode: n_query must be >= 1");
  if (img_size < 8) throw ConfigError("gen_episode: image size must be >= 8");
  const CounterRng root = CounterRng(seed).derive("episode");
  CounterRng pick = root.derive("classes");
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < static_cast<std::size_t>(n_way); ++i) std::swap(idx[i], idx[i + pick.below(idx.size() - i)]);

  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  for (int c = 0; c < n_way; ++c) ep.class_ids.push_back(pool[idx[static_cast<std::size_t>(c)]].id);
  const CounterRng sup = root.derive("support");
  for (int c = 0; c < n_way; ++c) {
    for (int k = 0; k < k_shot; ++k) {
      auto r = render_object(pool[idx[static_cast<std::size_t>(c)]], c + 1, img_size,
                             sup.derive(static_cast<std::uint64_t>(c * k_shot + k)));
      ep.support.push_back({std::move(r.image), std::move(r.mask)});
    }
  }
  const CounterRng qry = root.derive("query");
  for (int j = 0; j < n_query; ++j) {
    CounterRng qr = qry.derive(static_cast<std::uint64_t>(j));
    const int c = static_cast<int>(qr.below(static_cast<std::uint64_t>(n_way)));
    auto r = render_object(pool[idx[static_cast<std::size_t>(c)]], c + 1, img_size, qr.derive("render"));
    ep.query.push_back({std::move(r.image), std::move(r.mask)});
  }
  return ep;
}

// ---------------------------------------------------------------------------
// Episode directory: manifest.txt, support_<i>_img.ppm, support_<i>_mask.pgm,
// query_<j>_img.ppm, optional query_<j>_mask.pgm.

inline void save_episode_dir(const Episode& ep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream m(dir / "manifest.txt");
    if (!m) throw IoError((dir / "manifest.txt").string() + ": cannot open for writing");
    m << "N = " << ep.n_way << "\nK = " << ep.k_shot << "\nn_query = " << ep.query.size() << "\nclass_ids = ";
    for (std::size_t i = 0; i < ep.class_ids.size(); ++i) m << (i ? "," : "") << ep.class_ids[i];
    m << '\n';
  }
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    const auto stem = "support_" + std::to_string(i);
    netpbm::write_image((dir / (stem + "_img.ppm")).string(), ep.support[i].image);
    netpbm::write_mask((dir / (stem + "_mask.pgm")).string(), ep.support[i].mask.value());
  }
  for (std::size_t j = 0; j < ep.query.size(); ++j) {
    const auto stem = "query_" + std::to_string(j);
    netpbm::write_image((dir / (stem + "_img.ppm")).string(), ep.query[j].image);
    if (ep.query[j].mask) netpbm::write_mask((dir / (stem + "_mask.pgm")).string(), *ep.query[j].mask);
  }
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline long parse_long(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(where + ": expected an integer, got '" + s + "'");
  }
}

}  // namespace detail

inline Episode load_episode_dir(const std::filesystem::path& dir) {
  const auto manifest_path = (dir / "manifest.txt").string();
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError(manifest_path + ": missing manifest");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(mf, line)) {
    line = detail::trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(manifest_path + ": malformed line '" + line + "'");
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  for (const char* key : {"N", "K", "n_query", "class_ids"})
    if (!kv.count(key)) throw IoError(manifest_path + ": missing key '" + key + "'");
  Episode ep;
  ep.n_way = static_cast<int>(detail::parse_long(kv["N"], manifest_path));
  ep.k_shot = static_cast<int>(detail::parse_long(kv["K"], manifest_path));
  const long n_query = detail::parse_long(kv["n_query"], manifest_path);
  if (ep.n_way < 1 || ep.k_shot < 1 || n_query < 1) throw IoError(manifest_path + ": N, K and n_query must be >= 1");
  {
    std::stringstream ss(kv["class_ids"]);
    std::string tok;
    while (std::getline(ss, tok, ',')) ep.class_ids.push_back(static_cast<int>(detail::parse_long(detail::trim(tok), manifest_path)));
  }
  if (ep.class_ids.size() != static_cast<std::size_t>(ep.n_way))
    throw IoError(manifest_path + ": class_ids lists " + std::to_string(ep.class_ids.size()) + " ids but N = " +
                  std::to_string(ep.n_way));

  std::optional<std::pair<std::size_t, std::size_t>> dims;
  auto check_dims = [&](std::size_t h, std::size_t w, const std::string& file) {
    if (!dims) dims = {h, w};
    else if (dims->first != h || dims->second != w)
      throw IoError(file + ": size " + std::to_string(h) + "x" + std::to_string(w) + " differs from " +
                    std::to_string(dims->first) + "x" + std::to_string(dims->second));
  };
  auto load_mask = [&](const std::filesystem::path& p) {
    const auto file = p.string();
    LabelMask m = netpbm::read_mask(file);
    check_dims(m.height, m.width, file);
    if (m.max_label() > ep.n_way)
      throw IoError(file + ": label " + std::to_string(m.max_label()) + " exceeds N = " + std::to_string(ep.n_way));
    return m;
  };
  auto load_image = [&](const std::filesystem::path& p) {
    const auto file = p.string();
    if (!std::filesystem::exists(p)) throw IoError(file + ": missing file");
    Tensor img = netpbm::read_image(file);
    check_dims(img.dim(0), img.dim(1), file);
    return img;
  };

  const std::size_t n_support = static_cast<std::size_t>(ep.n_way * ep.k_shot);
  for (std::size_t i = 0; i < n_support; ++i) {
    const auto stem = "support_" + std::to_string(i);
    Sample s{load_image(dir / (stem + "_img.ppm")), {}};
    const auto mp = dir / (stem + "_mask.pgm");
    if (!std::filesystem::exists(mp)) throw IoError(mp.string() + ": missing file");
    s.mask = load_mask(mp);
    ep.support.push_back(std::move(s));
  }
  for (long j = 0; j < n_query; ++j) {
    const auto stem = "query_" + std::to_string(j);
    Sample s{load_image(dir / (stem + "_img.ppm")), {}};
    const auto mp = dir / (stem + "_mask.pgm");
    if (std::filesystem::exists(mp)) s.mask = load_mask(mp);
    ep.query.push_back(std::move(s));
  }
  return ep;
}

}  // namespace biopt
