#pragma once

// Planar C×H×W grids of recorded values and the few layer primitives the
// surrogate tracker needs.

#include <cstddef>
#include <span>
#include <vector>

#include "advbench/diff.hpp"
#include "advbench/error.hpp"

namespace advbench {

using diff::Var;

struct Grid {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<Var> v;

  Grid() = default;
  Grid(int channels, int height, int width) : c(channels), h(height), w(width), v(static_cast<std::size_t>(channels) * height * width) {}

  std::size_t index(int ch, int y, int x) const { return (static_cast<std::size_t>(ch) * h + y) * w + x; }
  Var& at(int ch, int y, int x) { return v[index(ch, y, x)]; }
  const Var& at(int ch, int y, int x) const { return v[index(ch, y, x)]; }
  std::span<const Var> plane(int ch) const { return {v.data() + static_cast<std::size_t>(ch) * h * w, static_cast<std::size_t>(h) * w}; }
};

struct ConvShape {
  int cin = 0;
  int cout = 0;
  int k = 3;
  int stride = 1;
  int pad = 0;

  std::size_t weight_count() const { return static_cast<std::size_t>(cout) * cin * k * k; }
  int out_size(int in) const { return (in + 2 * pad - k) / stride + 1; }
};

/// Cross-correlation with zero padding. `weights` is cout×cin×k×k, `bias` has cout entries.
inline Grid conv2d(const Grid& in, const ConvShape& s, std::span<const Var> weights, std::span<const Var> bias) {
  if (in.c != s.cin) throw UsageError("conv2d input channel mismatch");
  if (weights.size() != s.weight_count() || bias.size() != static_cast<std::size_t>(s.cout))
    throw UsageError("conv2d parameter size mismatch");
  Grid out(s.cout, s.out_size(in.h), s.out_size(in.w));
  std::vector<Var> xs;
  std::vector<Var> ws;
  xs.reserve(static_cast<std::size_t>(s.cin) * s.k * s.k);
  ws.reserve(xs.capacity());
  for (int co = 0; co < s.cout; ++co) {
    for (int oy = 0; oy < out.h; ++oy) {
      for (int ox = 0; ox < out.w; ++ox) {
        xs.clear();
        ws.clear();
        for (int ci = 0; ci < s.cin; ++ci) {
          for (int ky = 0; ky < s.k; ++ky) {
            int iy = oy * s.stride - s.pad + ky;
            if (iy < 0 || iy >= in.h) continue;
            for (int kx = 0; kx < s.k; ++kx) {
              int ix = ox * s.stride - s.pad + kx;
              if (ix < 0 || ix >= in.w) continue;
              xs.push_back(in.at(ci, iy, ix));
              ws.push_back(weights[((static_cast<std::size_t>(co) * s.cin + ci) * s.k + ky) * s.k + kx]);
            }
          }
        }
        out.at(co, oy, ox) = diff::dot(xs, ws, bias[static_cast<std::size_t>(co)]);
      }
    }
  }
  return out;
}

inline Grid relu(Grid g) {
  for (auto& x : g.v) x = diff::relu(x);
  return g;
}

/// Template-over-search cross-correlation producing a search-sized response map.
inline Grid cross_correlate(const Grid& tmpl, const Grid& search) {
  if (tmpl.c != search.c) throw UsageError("correlation channel mismatch");
  Grid out(1, search.h, search.w);
  int oy0 = tmpl.h / 2;
  int ox0 = tmpl.w / 2;
  std::vector<Var> xs;
  std::vector<Var> ws;
  for (int u = 0; u < search.h; ++u) {
    for (int v = 0; v < search.w; ++v) {
      xs.clear();
      ws.clear();
      for (int ch = 0; ch < tmpl.c; ++ch)
        for (int i = 0; i < tmpl.h; ++i) {
          int sy = u + i - oy0;
          if (sy < 0 || sy >= search.h) continue;
          for (int j = 0; j < tmpl.w; ++j) {
            int sx = v + j - ox0;
            if (sx < 0 || sx >= search.w) continue;
            xs.push_back(search.at(ch, sy, sx));
            ws.push_back(tmpl.at(ch, i, j));
          }
        }
      out.at(0, u, v) = diff::dot(xs, ws);
    }
  }
  return out;
}

}  // namespace advbench
