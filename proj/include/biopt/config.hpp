#pragma once

// Run configuration: plain `key = value` lines, `#` starts a comment.
// Every key is optional except `seed`; unknown keys are errors.

#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "biopt/eval.hpp"
#include "biopt/outer.hpp"

namespace biopt {

struct EpisodeSpec {
  int n_way = 2;
  int k_shot = 1;
  int n_query = 1;
  std::size_t img_size = 64;
  std::size_t n_base = 6;
  std::size_t n_novel = 2;
};

struct RunConfig {
  std::uint64_t seed = 0;
  EmbedSpec embed{{3, 16, 32, 32}, {}, {}, {}, false};
  EpisodeSpec episodes{};
  OuterConfig outer{};
  InnerConfig inner{};
  std::size_t eval_episodes = 500;
  std::vector<double> scales{1.0};
  int threads = 1;
  std::string out_dir = "out";

  void validate() const {
    const EmbedSpec r = embed.resolved();
    outer.validate();
    inner.validate();
    if (r.widths.front() != 3) throw ConfigError("embed_widths must start with 3 (RGB input)");
    if (episodes.n_way < 1) throw ConfigError("n_way must be >= 1");
    if (episodes.k_shot < 1) throw ConfigError("k_shot must be >= 1");
    if (episodes.n_query < 1) throw ConfigError("n_query must be >= 1");
    if (static_cast<std::size_t>(episodes.n_way) > episodes.n_novel || static_cast<std::size_t>(episodes.n_way) > episodes.n_base)
      throw ConfigError("n_way exceeds the number of base or novel classes");
    if (episodes.n_base + episodes.n_novel > class_capacity())
      throw ConfigError("n_base + n_novel exceeds " + std::to_string(class_capacity()) + " available classes");
    if (episodes.img_size < 8 || episodes.img_size % static_cast<std::size_t>(r.downsample()) != 0)
      throw ConfigError("img_size must be >= 8 and divisible by the embedding downsample factor " +
                        std::to_string(r.downsample()));
    if (scales.empty()) throw ConfigError("scales must list at least one value");
    for (double s : scales)
      if (!(s > 0.0)) throw ConfigError("scales must be positive");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  }

  TrainSetup train_setup(const ClassPools& pools) const {
    TrainSetup s;
    s.pool = pools.base;
    s.n_way = episodes.n_way;
    s.k_shot = episodes.k_shot;
    s.n_query = episodes.n_query;
    s.img_size = episodes.img_size;
    s.inner = inner;
    s.outer = outer;
    s.seed = seed;
    s.threads = threads;
    return s;
  }

  ClassPools pools() const { return make_class_pool(episodes.n_base, episodes.n_novel, seed); }
};

enum class Split { novel, base };

inline std::uint64_t eval_episode_seed(std::uint64_t seed, Split split, std::uint64_t index) {
  return CounterRng(seed).derive(split == Split::novel ? "eval-novel-episodes" : "eval-base-episodes").at(index);
}

inline EpisodeSource eval_source(const RunConfig& cfg, const ClassPools& pools, Split split) {
  const auto& pool = split == Split::novel ? pools.novel : pools.base;
  return [&cfg, &pool, split](std::size_t i) {
    return gen_episode(pool, cfg.episodes.n_way, cfg.episodes.k_shot, cfg.episodes.img_size,
                       eval_episode_seed(cfg.seed, split, i), cfg.episodes.n_query);
  };
}

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(trim(tok));
  return out;
}

struct Parser {
  std::string where;

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(where + ": " + msg); }

  long long integer(const std::string& v) const {
    errno = 0;
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || *end != '\0' || errno) fail("expected an integer, got '" + v + "'");
    return x;
  }
  std::uint64_t u64(const std::string& v) const {
    errno = 0;
    char* end = nullptr;
    if (v.empty() || v[0] == '-') fail("expected an unsigned integer, got '" + v + "'");
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (*end != '\0' || errno) fail("expected an unsigned integer, got '" + v + "'");
    return x;
  }
  double real(const std::string& v) const {
    errno = 0;
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0' || errno || !std::isfinite(x)) fail("expected a number, got '" + v + "'");
    return x;
  }
  bool boolean(const std::string& v) const {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail("expected true or false, got '" + v + "'");
  }
  int small_int(const std::string& v) const {
    const long long x = integer(v);
    if (x < -1000000000LL || x > 1000000000LL) fail("value out of range: " + v);
    return static_cast<int>(x);
  }
  std::size_t count(const std::string& v) const {
    const long long x = integer(v);
    if (x < 0) fail("expected a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(x);
  }
  template <class T, class F>
  std::vector<T> list(const std::string& v, F conv) const {
    std::vector<T> out;
    for (const auto& tok : split_csv(v)) out.push_back(conv(tok));
    if (out.empty()) fail("expected a comma-separated list");
    return out;
  }
};

}  // namespace config_detail

/// Applies one key to the config; `where` prefixes error messages.
inline void apply_config_key(RunConfig& c, const std::string& key, const std::string& value, const std::string& where) {
  const config_detail::Parser p{where};
  auto sizes = [&](const std::string& v) { return p.list<std::size_t>(v, [&](const std::string& t) { return p.count(t); }); };
  auto ints = [&](const std::string& v) { return p.list<int>(v, [&](const std::string& t) { return p.small_int(t); }); };
  auto reals = [&](const std::string& v) { return p.list<double>(v, [&](const std::string& t) { return p.real(t); }); };

  if (key == "seed") c.seed = p.u64(value);
  else if (key == "embed_widths") c.embed.widths = sizes(value);
  else if (key == "embed_kernels") c.embed.kernels = value.empty() ? std::vector<std::size_t>{} : sizes(value);
  else if (key == "embed_strides") c.embed.strides = value.empty() ? std::vector<int>{} : ints(value);
  else if (key == "embed_dilations") c.embed.dilations = value.empty() ? std::vector<int>{} : ints(value);
  else if (key == "embed_final_relu") c.embed.final_relu = p.boolean(value);
  else if (key == "n_way") c.episodes.n_way = p.small_int(value);
  else if (key == "k_shot") c.episodes.k_shot = p.small_int(value);
  else if (key == "n_query") c.episodes.n_query = p.small_int(value);
  else if (key == "img_size") c.episodes.img_size = p.count(value);
  else if (key == "n_base") c.episodes.n_base = p.count(value);
  else if (key == "n_novel") c.episodes.n_novel = p.count(value);
  else if (key == "outer_lr") c.outer.lr = p.real(value);
  else if (key == "momentum") c.outer.momentum = p.real(value);
  else if (key == "weight_decay") c.outer.weight_decay = p.real(value);
  else if (key == "epochs") c.outer.epochs = p.small_int(value);
  else if (key == "batch") c.outer.batch = p.small_int(value);
  else if (key == "lr_decay_factor") c.outer.lr_decay_factor = p.real(value);
  else if (key == "lr_decay_at") c.outer.lr_decay_at = p.small_int(value);
  else if (key == "loss_weights") {
    const auto w = reals(value);
    if (w.size() != 3) p.fail("loss_weights needs exactly three values");
    c.outer.loss_weights = {w[0], w[1], w[2]};
  } else if (key == "inner_steps") c.inner.steps = p.small_int(value);
  else if (key == "inner_lr") c.inner.lr = p.real(value);
  else if (key == "alpha") c.inner.alpha = p.real(value);
  else if (key == "init_mode") {
    try {
      c.inner.init_mode = parse_init_mode(value);
    } catch (const ConfigError& e) {
      p.fail(e.what());
    }
  } else if (key == "eval_episodes") c.eval_episodes = p.count(value);
  else if (key == "scales") c.scales = reals(value);
  else if (key == "threads") c.threads = p.small_int(value);
  else if (key == "out_dir") c.out_dir = value;
  else p.fail("unknown key '" + key + "'");
}

inline RunConfig parse_config(std::istream& in, const std::string& name) {
  RunConfig c;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = name + ":" + std::to_string(lineno);
    line = config_detail::trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = config_detail::trim(line.substr(0, eq));
    const std::string value = config_detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    apply_config_key(c, key, value, where);
  }
  if (!seen.count("seed")) throw ConfigError(name + ": missing required key 'seed'");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(name + ": " + e.what());
  }
  return c;
}

inline RunConfig parse_config_string(const std::string& text, const std::string& name = "<config>") {
  std::istringstream in(text);
  return parse_config(in, name);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  return parse_config(in, path);
}

/// Fully resolved config text; parse_config accepts it unchanged.
inline std::string config_text(const RunConfig& c) {
  auto join = [](const auto& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      if constexpr (std::is_floating_point_v<std::decay_t<decltype(v[i])>>) s += format_double(v[i]);
      else s += std::to_string(v[i]);
    }
    return s;
  };
  const EmbedSpec e = c.embed.resolved();
  std::ostringstream o;
  o << "seed = " << c.seed << "\n"
    << "embed_widths = " << join(e.widths) << "\n"
    << "embed_kernels = " << join(e.kernels) << "\n"
    << "embed_strides = " << join(e.strides) << "\n"
    << "embed_dilations = " << join(e.dilations) << "\n"
    << "embed_final_relu = " << (e.final_relu ? "true" : "false") << "\n"
    << "n_way = " << c.episodes.n_way << "\n"
    << "k_shot = " << c.episodes.k_shot << "\n"
    << "n_query = " << c.episodes.n_query << "\n"
    << "img_size = " << c.episodes.img_size << "\n"
    << "n_base = " << c.episodes.n_base << "\n"
    << "n_novel = " << c.episodes.n_novel << "\n"
    << "outer_lr = " << format_double(c.outer.lr) << "\n"
    << "momentum = " << format_double(c.outer.momentum) << "\n"
    << "weight_decay = " << format_double(c.outer.weight_decay) << "\n"
    << "epochs = " << c.outer.epochs << "\n"
    << "batch = " << c.outer.batch << "\n"
    << "lr_decay_factor = " << format_double(c.outer.lr_decay_factor) << "\n"
    << "lr_decay_at = " << c.outer.lr_decay_at << "\n"
    << "loss_weights = " << format_double(c.outer.loss_weights.mprime) << ","
    << format_double(c.outer.loss_weights.target) << "," << format_double(c.outer.loss_weights.final) << "\n"
    << "inner_steps = " << c.inner.steps << "\n"
    << "inner_lr = " << format_double(c.inner.lr) << "\n"
    << "alpha = " << format_double(c.inner.alpha) << "\n"
    << "init_mode = " << to_string(c.inner.init_mode) << "\n"
    << "eval_episodes = " << c.eval_episodes << "\n"
    << "scales = " << join(c.scales) << "\n"
    << "threads = " << c.threads << "\n"
    << "out_dir = " << c.out_dir << "\n";
  return o.str();
}

}  // namespace biopt
