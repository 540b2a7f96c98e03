// Image decoding (binary PPM and the raw tensor format), PPM encoding, and
// bilinear resampling on (3, H, W) float images with values in [0, 1].
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "clap/errors.hpp"
#include "clap/tensor.hpp"

namespace clap {

enum class ImageFormat { ppm_p6, raw_tensor };

using Image = Tensor<float>;  // (3, H, W)

namespace detail {

// Reads one PPM header token, skipping whitespace and '#' comments.
inline std::string ppm_token(std::string_view bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw MalformedImage("truncated PPM header");
  return std::string(bytes.substr(start, pos - start));
}

inline std::size_t ppm_number(std::string_view bytes, std::size_t& pos, const char* what) {
  const std::string tok = ppm_token(bytes, pos);
  if (tok.size() > 9 || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw MalformedImage(std::string("bad PPM ") + what + " '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace detail

inline Image decode_ppm(std::string_view bytes) {
  std::size_t pos = 0;
  if (detail::ppm_token(bytes, pos) != "P6") throw MalformedImage("not a binary PPM (P6)");
  const std::size_t w = detail::ppm_number(bytes, pos, "width");
  const std::size_t h = detail::ppm_number(bytes, pos, "height");
  const std::size_t maxval = detail::ppm_number(bytes, pos, "maxval");
  if (w == 0 || h == 0) throw MalformedImage("PPM has zero extent");
  if (maxval == 0 || maxval > 65535) throw MalformedImage("PPM maxval out of range");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw MalformedImage("truncated PPM header");
  }
  ++pos;  // single whitespace before the raster
  const std::size_t bps = maxval < 256 ? 1 : 2;
  const std::size_t need = w * h * 3 * bps;
  if (bytes.size() - pos < need) {
    throw MalformedImage("truncated PPM payload: need " + std::to_string(need) + " bytes, have " +
                         std::to_string(bytes.size() - pos));
  }
  Image img({3, h, w});
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  const float scale = 1.0f / static_cast<float>(maxval);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t k = (i * 3 + c) * bps;
      const std::size_t v = bps == 1 ? p[k] : (std::size_t{p[k]} << 8 | p[k + 1]);
      if (v > maxval) throw MalformedImage("PPM sample exceeds maxval");
      img[c * h * w + i] = static_cast<float>(v) * scale;
    }
  }
  return img;
}

inline Image decode_raw_image(std::string_view bytes) {
  std::istringstream in{std::string(bytes)};
  auto t = read_raw<float, MalformedImage>(in);
  if (t.rank() != 3 || t.dim(0) != 3) throw MalformedImage("raw image must be (3,H,W), got " + to_string(t.shape()));
  for (float v : t.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw MalformedImage("raw image values must lie in [0,1]");
  }
  return t;
}

inline Image decode_image(std::string_view bytes, ImageFormat format) {
  return format == ImageFormat::ppm_p6 ? decode_ppm(bytes) : decode_raw_image(bytes);
}

// 8-bit P6 with values clamped to [0, 1] and rounded.
inline std::string encode_ppm(const Image& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeMismatch("encode_ppm expects (3,H,W)");
  const std::size_t h = img.dim(1), w = img.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(img[c * h * w + i], 0.0f, 1.0f);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
  }
  return out;
}

inline std::string encode_raw_image(const Image& img) {
  std::ostringstream out;
  write_raw(out, img);
  return out.str();
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedImage("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Format from the file extension: .ppm -> P6, .raw/.tensor -> raw tensor.
inline bool image_format_for(const std::string& path, ImageFormat& format) {
  auto ends = [&](std::string_view ext) {
    if (path.size() < ext.size()) return false;
    return std::equal(ext.rbegin(), ext.rend(), path.rbegin(),
                      [](char a, char b) { return a == std::tolower(static_cast<unsigned char>(b)); });
  };
  if (ends(".ppm")) {
    format = ImageFormat::ppm_p6;
    return true;
  }
  if (ends(".raw") || ends(".tensor")) {
    format = ImageFormat::raw_tensor;
    return true;
  }
  return false;
}

inline Image load_image(const std::string& path) {
  ImageFormat f;
  if (!image_format_for(path, f)) throw MalformedImage("unsupported image extension '" + path + "'");
  try {
    return decode_image(read_file_bytes(path), f);
  } catch (const MalformedImage& e) {
    throw MalformedImage(path + ": " + std::string(e.what()).substr(std::string("MalformedImage: ").size()));
  }
}

// Source offsets and weights of one bilinear sample at continuous pixel
// coordinates (pixel centers at integers), edge-replicated outside the image.
// Computed once per location and applied to every channel.
struct BilinearTap {
  std::size_t i00 = 0, i01 = 0, i10 = 0, i11 = 0;
  double fx = 0, fy = 0;

  template <typename T>
  T operator()(const T* plane) const {
    const double top = (1 - fx) * plane[i00] + fx * plane[i01];
    const double bottom = (1 - fx) * plane[i10] + fx * plane[i11];
    return static_cast<T>((1 - fy) * top + fy * bottom);
  }
};

inline BilinearTap bilinear_tap(std::size_t h, std::size_t w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  return {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1, x - static_cast<double>(x0), y - static_cast<double>(y0)};
}

template <typename T>
T sample_bilinear(const T* plane, std::size_t h, std::size_t w, double y, double x) {
  return bilinear_tap(h, w, y, x)(plane);
}

// Bilinear resize of every leading plane of a (..., H, W) tensor, half-pixel
// aligned (corner pixels are not pinned).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() < 2) throw ShapeMismatch("resize_bilinear expects rank >= 2");
  if (out_h == 0 || out_w == 0) throw ShapeMismatch("resize_bilinear: zero output extent");
  const std::size_t r = img.rank(), h = img.dim(r - 2), w = img.dim(r - 1);
  Shape shape = img.shape();
  shape[r - 2] = out_h;
  shape[r - 1] = out_w;
  Tensor<T> out(shape);
  const std::size_t planes = img.size() / (h * w);
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      const BilinearTap tap = bilinear_tap(h, w, (i + 0.5) * sy - 0.5, (j + 0.5) * sx - 0.5);
      for (std::size_t p = 0; p < planes; ++p) out[(p * out_h + i) * out_w + j] = tap(img.ptr() + p * h * w);
    }
  }
  return out;
}

// Central (size x size) window of a (3, H, W) image.
inline Image center_crop(const Image& img, std::size_t size) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  if (size > h || size > w) throw ShapeMismatch("center_crop larger than image");
  const std::size_t oy = (h - size) / 2, ox = (w - size) / 2;
  Image out({img.dim(0), size, size});
  for (std::size_t c = 0; c < img.dim(0); ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) out[(c * size + y) * size + x] = img[(c * h + oy + y) * w + ox + x];
  return out;
}

}  // namespace clap
