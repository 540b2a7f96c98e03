// Dense row-major tensor and the shape primitives built on it.
//
// Activations use (batch, channels, height, width) layout. Feature vectors
// are (batch, features), and the feature axis plays the channel role.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "clap/errors.hpp"

namespace clap {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "f32 or f64 only");
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    validate_extents();
    data_.assign(element_count(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_extents();
    if (element_count(shape_) != data_.size()) {
      throw ShapeMismatch("shape " + to_string(shape_) + " holds " +
                          std::to_string(element_count(shape_)) + " elements, got " +
                          std::to_string(data_.size()));
    }
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4-d accessor for (n, c, h, w) activations.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  // 2-d accessor for (row, column) matrices.
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  // Extent of the spatial plane (h*w) for rank-4 tensors, 1 otherwise.
  std::size_t plane() const { return rank() == 4 ? shape_[2] * shape_[3] : 1; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape new_shape) const& {
    Tensor out = *this;
    out.reshape_in_place(std::move(new_shape));
    return out;
  }
  Tensor reshaped(Shape new_shape) && {
    reshape_in_place(std::move(new_shape));
    return std::move(*this);
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor& other) const = default;

  void require_same_shape(const Tensor& other, const char* where) const {
    if (shape_ != other.shape_) {
      throw ShapeMismatch(std::string(where) + ": " + to_string(shape_) + " vs " +
                          to_string(other.shape_));
    }
  }

 private:
  void validate_extents() const {
    for (auto e : shape_) {
      if (e == 0) throw ShapeMismatch("zero extent in shape " + to_string(shape_));
    }
  }

  void reshape_in_place(Shape new_shape) {
    if (element_count(new_shape) != data_.size()) {
      throw ShapeMismatch("cannot reshape " + to_string(shape_) + " to " + to_string(new_shape));
    }
    shape_ = std::move(new_shape);
    validate_extents();
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> reshape(const Tensor<T>& t, Shape new_shape) {
  return t.reshaped(std::move(new_shape));
}

namespace detail {

// Splits a tensor into (outer, channels, inner) around axis 1.
inline void channel_geometry(const Shape& s, std::size_t& outer, std::size_t& inner) {
  outer = s.empty() ? 1 : s[0];
  inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

// Concatenates along axis 1; all other axes must agree.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || a.rank() != b.rank()) {
    throw ShapeMismatch("concat_channels: " + to_string(a.shape()) + " vs " +
                        to_string(b.shape()));
  }
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != 1 && a.dim(i) != b.dim(i)) {
      throw ShapeMismatch("concat_channels: " + to_string(a.shape()) + " vs " +
                          to_string(b.shape()));
    }
  }
  Shape out_shape = a.shape();
  out_shape[1] = a.dim(1) + b.dim(1);
  Tensor<T> out(out_shape);
  std::size_t outer = 0, inner = 0;
  detail::channel_geometry(a.shape(), outer, inner);
  const std::size_t block_a = a.dim(1) * inner;
  const std::size_t block_b = b.dim(1) * inner;
  for (std::size_t n = 0; n < outer; ++n) {
    T* dst = out.ptr() + n * (block_a + block_b);
    std::copy_n(a.ptr() + n * block_a, block_a, dst);
    std::copy_n(b.ptr() + n * block_b, block_b, dst + block_a);
  }
  return out;
}

// Inverse of concat_channels: the first `leading` channels go to the first half.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, std::size_t leading) {
  if (t.rank() < 2 || leading == 0 || leading >= t.dim(1)) {
    throw ShapeMismatch("split_channels: cannot split " + to_string(t.shape()) + " at " +
                        std::to_string(leading));
  }
  Shape sa = t.shape(), sb = t.shape();
  sa[1] = leading;
  sb[1] = t.dim(1) - leading;
  Tensor<T> a(sa), b(sb);
  std::size_t outer = 0, inner = 0;
  detail::channel_geometry(t.shape(), outer, inner);
  const std::size_t block_a = sa[1] * inner, block_b = sb[1] * inner;
  for (std::size_t n = 0; n < outer; ++n) {
    const T* src = t.ptr() + n * (block_a + block_b);
    std::copy_n(src, block_a, a.ptr() + n * block_a);
    std::copy_n(src + block_a, block_b, b.ptr() + n * block_b);
  }
  return {std::move(a), std::move(b)};
}

// out[n,c,...] = t[n,c,...] * s[n,c]. `s` may be (N,C) or (N,C,1,1).
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& t, const Tensor<T>& s) {
  if (t.rank() < 2 || s.rank() < 2 || s.dim(0) != t.dim(0) || s.dim(1) != t.dim(1) ||
      s.size() != t.dim(0) * t.dim(1)) {
    throw ShapeMismatch("channel_scale: " + to_string(t.shape()) + " by " + to_string(s.shape()));
  }
  Tensor<T> out(t.shape());
  std::size_t outer = 0, inner = 0;
  detail::channel_geometry(t.shape(), outer, inner);
  const std::size_t channels = t.dim(1);
  for (std::size_t nc = 0; nc < outer * channels; ++nc) {
    const T scale = s[nc];
    const T* src = t.ptr() + nc * inner;
    T* dst = out.ptr() + nc * inner;
    for (std::size_t i = 0; i < inner; ++i) dst[i] = src[i] * scale;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raw interchange format: one text line "<dtype> <e0> <e1> ...\n" followed by
// the little-endian IEEE-754 payload.

namespace detail {

template <typename U>
void write_le(std::ostream& os, std::span<const U> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (U v : values) {
      auto bytes = std::bit_cast<std::array<char, sizeof(U)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      os.write(bytes.data(), sizeof(U));
    }
  }
}

template <typename U>
bool read_le(std::istream& is, std::span<U> values) {
  is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (is.gcount() != static_cast<std::streamsize>(values.size_bytes())) return false;
  if constexpr (std::endian::native != std::endian::little) {
    for (U& v : values) {
      auto bytes = std::bit_cast<std::array<char, sizeof(U)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      v = std::bit_cast<U>(bytes);
    }
  }
  return true;
}

}  // namespace detail

inline std::string raw_header(const char* dtype, const Shape& shape) {
  std::string line = dtype;
  for (auto e : shape) line += " " + std::to_string(e);
  return line;
}

template <typename T>
void write_payload(std::ostream& os, const Tensor<T>& t) {
  detail::write_le<T>(os, t.data());
}

template <typename T>
void write_raw(std::ostream& os, const Tensor<T>& t) {
  os << raw_header(dtype_name<T>(), t.shape()) << '\n';
  write_payload(os, t);
}

struct RawHeader {
  std::string dtype;
  Shape shape;
};

// Parses "<dtype> <extents...>"; returns false on any malformation.
inline bool parse_raw_header(const std::string& line, RawHeader& out) {
  std::istringstream is(line);
  if (!(is >> out.dtype) || (out.dtype != "f32" && out.dtype != "f64")) return false;
  out.shape.clear();
  long long e = 0;
  while (is >> e) {
    if (e <= 0) return false;
    out.shape.push_back(static_cast<std::size_t>(e));
  }
  return !out.shape.empty() && is.eof();
}

// Reads a payload of `dtype` into a tensor of T, converting when the
// dtypes differ. Throws `Err` on truncation.
template <typename T, typename Err = MalformedImage>
Tensor<T> read_payload(std::istream& is, const std::string& dtype, const Shape& shape) {
  const std::size_t n = element_count(shape);
  if (dtype == dtype_name<T>()) {
    std::vector<T> data(n);
    if (!detail::read_le<T>(is, data)) throw Err("truncated tensor payload");
    return Tensor<T>(shape, std::move(data));
  }
  if (dtype == "f32") {
    std::vector<float> data(n);
    if (!detail::read_le<float>(is, data)) throw Err("truncated tensor payload");
    return Tensor<T>(shape, std::vector<T>(data.begin(), data.end()));
  }
  std::vector<double> data(n);
  if (!detail::read_le<double>(is, data)) throw Err("truncated tensor payload");
  return Tensor<T>(shape, std::vector<T>(data.begin(), data.end()));
}

template <typename T, typename Err = MalformedImage>
Tensor<T> read_raw(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Err("missing tensor header");
  RawHeader header;
  if (!parse_raw_header(line, header)) throw Err("bad tensor header '" + line + "'");
  return read_payload<T, Err>(is, header.dtype, header.shape);
}

}  // namespace clap
