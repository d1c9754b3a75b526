#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "advbench/error.hpp"

namespace advbench {

/// Interleaved H×W×C raster, row-major.
template <class T>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c, T fill = T{})
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  T& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  bool operator==(const Image&) const = default;
};

/// 8-bit frame as stored on disk.
using PixelFrame = Image<std::uint8_t>;
/// Real-valued RGB frame or patch, each channel in [0, 255].
using RgbFrame = Image<double>;

template <class T>
double channel_mean(const Image<T>& img, int c) {
  if (img.width == 0 || img.height == 0) return 0.0;
  double s = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) s += static_cast<double>(img.at(x, y, c));
  return s / (static_cast<double>(img.width) * img.height);
}

template <class T>
Image<double> to_real(const Image<T>& img) {
  Image<double> out(img.width, img.height, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = static_cast<double>(img.data[i]);
  return out;
}

/// Rounds half away from zero and clamps into [0, 255].
inline PixelFrame quantize(const Image<double>& img) {
  PixelFrame out(img.width, img.height, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    double v = std::clamp(std::round(img.data[i]), 0.0, 255.0);
    out.data[i] = static_cast<std::uint8_t>(v);
  }
  return out;
}

namespace detail {

inline std::string next_pnm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace detail

/// Writes P6 (3 channels) or P5 (1 channel) binary portable any-map.
inline void write_pnm(const PixelFrame& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw UsageError("PNM output needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!out) throw Error("write failed: " + path.string());
}

inline PixelFrame read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string magic = detail::next_pnm_token(in);
  int channels = magic == "P6" ? 3 : (magic == "P5" ? 1 : 0);
  if (channels == 0) throw ParseError(1, path.string() + ": unsupported PNM magic '" + magic + "'");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(detail::next_pnm_token(in));
    h = std::stoi(detail::next_pnm_token(in));
    maxval = std::stoi(detail::next_pnm_token(in));
  } catch (const std::exception&) {
    throw ParseError(1, path.string() + ": malformed PNM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw ParseError(1, path.string() + ": unsupported PNM geometry");
  PixelFrame img(w, h, channels);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.data.size()))
    throw ParseError(1, path.string() + ": truncated PNM payload");
  return img;
}

}  // namespace advbench
