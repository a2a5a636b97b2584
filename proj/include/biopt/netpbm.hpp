#pragma once

// Binary PPM (P6) and PGM (P5) with maxval 255.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "biopt/tensor.hpp"

namespace biopt::netpbm {

struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> bytes;
};

namespace detail {

inline void skip_ws_and_comments(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

inline std::size_t read_header_int(std::istream& in, const std::string& path) {
  skip_ws_and_comments(in);
  long v = -1;
  if (!(in >> v) || v < 1) throw IoError(path + ": malformed netpbm header");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline Raster read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw IoError(path + ": not a binary PGM/PPM file");
  Raster r;
  r.channels = magic[1] == '6' ? 3 : 1;
  r.width = detail::read_header_int(in, path);
  r.height = detail::read_header_int(in, path);
  if (detail::read_header_int(in, path) != 255) throw IoError(path + ": only maxval 255 is supported");
  in.get();  // single whitespace before the raster
  r.bytes.resize(r.width * r.height * r.channels);
  in.read(reinterpret_cast<char*>(r.bytes.data()), static_cast<std::streamsize>(r.bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(r.bytes.size())) throw IoError(path + ": truncated raster");
  return r;
}

inline void write(const std::string& path, const Raster& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << (r.channels == 3 ? "P6" : "P5") << '\n' << r.width << ' ' << r.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.bytes.data()), static_cast<std::streamsize>(r.bytes.size()));
  if (!out) throw IoError(path + ": write failed");
}

inline std::uint8_t to_byte(double v) {
  const double s = std::round(v * 255.0);
  return static_cast<std::uint8_t>(s < 0.0 ? 0.0 : (s > 255.0 ? 255.0 : s));
}

/// Image tensor HxWx3 in [0,1] <-> P6.
inline void write_image(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(2) != 3) throw ShapeError("write_image: expected HxWx3, got " + shape_str(img.shape()));
  Raster r{img.dim(1), img.dim(0), 3, std::vector<std::uint8_t>(img.size())};
  for (std::size_t i = 0; i < img.size(); ++i) r.bytes[i] = to_byte(img[i]);
  write(path, r);
}

inline Tensor read_image(const std::string& path) {
  const Raster r = read(path);
  if (r.channels != 3) throw IoError(path + ": expected a P6 colour image");
  Tensor img({r.height, r.width, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(r.bytes[i]) / 255.0;
  return img;
}

/// Label mask <-> P5 with pixel value = label.
inline void write_mask(const std::string& path, const LabelMask& m) {
  Raster r{m.width, m.height, 1, std::vector<std::uint8_t>(m.size())};
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.labels[i] < 0 || m.labels[i] > 255) throw ShapeError(path + ": label outside 0..255");
    r.bytes[i] = static_cast<std::uint8_t>(m.labels[i]);
  }
  write(path, r);
}

inline LabelMask read_mask(const std::string& path) {
  const Raster r = read(path);
  if (r.channels != 1) throw IoError(path + ": expected a P5 greyscale mask");
  LabelMask m(r.height, r.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.labels[i] = r.bytes[i];
  return m;
}

}  // namespace biopt::netpbm
