#pragma once

// Checkpoint layout, all integers u32 little-endian, all reals IEEE-754
// binary64 little-endian:
//
//   "BIOPTCK1"                       8-byte magic
//   n_layers, final_relu
//   per layer: cin, cout, kernel, stride, dilation
//   per layer: kernel data (kernel*kernel*cin*cout reals, row-major k,k,cin,cout)
//   "WGEN"                           4-byte section magic
//   C, W (C x 2C reals), b (C reals)

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "biopt/pipeline.hpp"

namespace biopt {

inline constexpr std::array<char, 8> kCheckpointMagic = {'B', 'I', 'O', 'P', 'T', 'C', 'K', '1'};
inline constexpr std::array<char, 4> kGeneratorMagic = {'W', 'G', 'E', 'N'};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  void bytes(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) throw IoError(path_ + ": truncated checkpoint");
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  }
  double f64() {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  void tensor(Tensor& t) {
    for (double& v : t.values()) {
      v = f64();
      if (!std::isfinite(v)) throw IoError(path_ + ": non-finite value in checkpoint");
    }
  }
  const std::string& path() const { return path_; }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Model& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  const auto& spec = m.embed.spec;
  detail::put_u32(out, static_cast<std::uint32_t>(spec.layer_count()));
  detail::put_u32(out, spec.final_relu ? 1u : 0u);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    detail::put_u32(out, static_cast<std::uint32_t>(spec.widths[l]));
    detail::put_u32(out, static_cast<std::uint32_t>(spec.widths[l + 1]));
    detail::put_u32(out, static_cast<std::uint32_t>(spec.kernels[l]));
    detail::put_u32(out, static_cast<std::uint32_t>(spec.strides[l]));
    detail::put_u32(out, static_cast<std::uint32_t>(spec.dilations[l]));
  }
  for (const auto& layer : m.embed.layers)
    for (double v : layer.kernel.values()) detail::put_f64(out, v);
  out.write(kGeneratorMagic.data(), kGeneratorMagic.size());
  detail::put_u32(out, static_cast<std::uint32_t>(m.gen.channels()));
  for (double v : m.gen.W.values()) detail::put_f64(out, v);
  for (double v : m.gen.b.values()) detail::put_f64(out, v);
  if (!out) throw IoError(path + ": write failed");
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open checkpoint");
  detail::Reader rd(in, path);
  std::array<char, 8> magic{};
  rd.bytes(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw IoError(path + ": bad checkpoint magic");
  const std::uint32_t L = rd.u32();
  if (L < 1 || L > 1024) throw IoError(path + ": implausible layer count " + std::to_string(L));
  EmbedSpec spec;
  spec.final_relu = rd.u32() != 0;
  for (std::uint32_t l = 0; l < L; ++l) {
    const std::uint32_t cin = rd.u32(), cout = rd.u32(), k = rd.u32(), stride = rd.u32(), dil = rd.u32();
    if (l == 0) spec.widths.push_back(cin);
    else if (spec.widths.back() != cin) throw IoError(path + ": layer " + std::to_string(l) + " input width mismatch");
    spec.widths.push_back(cout);
    spec.kernels.push_back(k);
    spec.strides.push_back(static_cast<int>(stride));
    spec.dilations.push_back(static_cast<int>(dil));
  }
  Model m;
  try {
    m = Model::init(spec, 0);
  } catch (const ConfigError& e) {
    throw IoError(path + ": invalid architecture header: " + e.what());
  }
  for (auto& layer : m.embed.layers) rd.tensor(layer.kernel);
  std::array<char, 4> gmagic{};
  rd.bytes(gmagic.data(), gmagic.size());
  if (gmagic != kGeneratorMagic) throw IoError(path + ": missing weight generator section");
  if (rd.u32() != m.embed.out_channels()) throw IoError(path + ": generator width does not match embedding");
  rd.tensor(m.gen.W);
  rd.tensor(m.gen.b);
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path + ": trailing bytes after checkpoint");
  return m;
}

}  // namespace biopt
