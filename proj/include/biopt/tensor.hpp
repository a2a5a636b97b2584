#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace biopt {

// Error hierarchy. The CLI maps each family onto an exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // 2-D and 3-D element access (row-major).
  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  double* row(std::size_t i) noexcept { return data_.data() + i * (data_.size() / shape_[0]); }
  const double* row(std::size_t i) const noexcept {
    return data_.data() + i * (data_.size() / shape_[0]);
  }

  bool all_finite() const noexcept {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_)
      throw ShapeError(std::string(what) + ": shape " + shape_str(shape_) + " vs " +
                       shape_str(o.shape_));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline Tensor operator*(double s, Tensor t) {
  t *= s;
  return t;
}

/// A value and its gradient, shape-matched.
struct GradPair {
  Tensor value;
  Tensor grad;

  GradPair(Tensor v, Tensor g) : value(std::move(v)), grad(std::move(g)) {
    value.require_same_shape(grad, "GradPair");
  }
};

/// H x W integer class labels; 0 is background.
struct LabelMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> labels;

  LabelMask() = default;
  LabelMask(std::size_t h, std::size_t w, int fill = 0) : height(h), width(w), labels(h * w, fill) {}
  LabelMask(std::size_t h, std::size_t w, std::vector<int> l)
      : height(h), width(w), labels(std::move(l)) {
    if (labels.size() != h * w) throw ShapeError("label mask data does not match its dimensions");
  }

  int& operator()(std::size_t y, std::size_t x) noexcept { return labels[y * width + x]; }
  int operator()(std::size_t y, std::size_t x) const noexcept { return labels[y * width + x]; }
  std::size_t size() const noexcept { return labels.size(); }
  int max_label() const noexcept {
    int m = 0;
    for (int l : labels) m = l > m ? l : m;
    return m;
  }

  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

/// H x W x K per-pixel class probabilities.
struct SoftMask {
  Tensor probs;

  std::size_t height() const { return probs.dim(0); }
  std::size_t width() const { return probs.dim(1); }
  std::size_t classes() const { return probs.dim(2); }

  friend bool operator==(const SoftMask&, const SoftMask&) = default;
};

/// (N+1) x C class prototypes, row 0 is background.
struct PrototypeSet {
  Tensor protos;

  std::size_t classes() const { return protos.dim(0); }
  std::size_t channels() const { return protos.dim(1); }
  const double* row(std::size_t c) const { return protos.row(c); }
  double* row(std::size_t c) { return protos.row(c); }

  friend bool operator==(const PrototypeSet&, const PrototypeSet&) = default;
};

inline constexpr double kMinNorm = 1e-9;

inline double row_norm(const double* v, std::size_t n) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

inline void require_prototype_norms(const PrototypeSet& p, const char* what) {
  for (std::size_t c = 0; c < p.classes(); ++c)
    if (!(row_norm(p.row(c), p.channels()) > kMinNorm))
      throw NumericalError(std::string(what) + ": prototype row " + std::to_string(c) +
                           " has norm below 1e-9");
}

inline void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericalError(std::string(what) + ": non-finite value produced");
}

}  // namespace biopt
