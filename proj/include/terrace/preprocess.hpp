#pragma once

#include <algorithm>
#include <vector>

#include "terrace/raster.hpp"
#include "terrace/tensor.hpp"

namespace terrace {

// Per-channel min-max extrema plus the fixed mean/std vectors: ImageNet
// constants for the RGB slots, identity for multispectral slots.
struct normalization_stats {
  std::vector<float> x_min;
  std::vector<float> x_max;
  std::vector<float> mean;
  std::vector<float> stddev;

  int channels() const { return static_cast<int>(mean.size()); }

  // RGB mode (3 channels) or RGB + multispectral (any count >= 3).
  static normalization_stats for_channels(int c) {
    if (c < 1) throw contract_error("normalization_stats: need at least one channel");
    normalization_stats s;
    s.mean.assign(static_cast<std::size_t>(c), 0.f);
    s.stddev.assign(static_cast<std::size_t>(c), 1.f);
    const float rgb_mean[3] = {0.485f, 0.456f, 0.406f};
    const float rgb_std[3] = {0.229f, 0.224f, 0.225f};
    for (int i = 0; i < std::min(c, 3); ++i) {
      s.mean[static_cast<std::size_t>(i)] = rgb_mean[i];
      s.stddev[static_cast<std::size_t>(i)] = rgb_std[i];
    }
    s.x_min.assign(static_cast<std::size_t>(c), 0.f);
    s.x_max.assign(static_cast<std::size_t>(c), 1.f);
    return s;
  }

  void validate() const {
    if (mean.size() != stddev.size() || mean.size() != x_min.size() ||
        mean.size() != x_max.size())
      throw contract_error("normalization_stats: inconsistent vector lengths");
    for (std::size_t i = 0; i < mean.size(); ++i) {
      if (!(stddev[i] > 0.f)) throw contract_error("normalization_stats: std entries must be > 0");
      if (x_max[i] < x_min[i]) throw contract_error("normalization_stats: x_max < x_min");
    }
  }
};

// Fills x_min/x_max from the image itself (per-image, per-channel extrema).
inline normalization_stats compute_stats(const raster& img) {
  auto s = normalization_stats::for_channels(img.channels);
  for (int c = 0; c < img.channels; ++c) {
    const float* p = img.plane(c);
    float lo = p[0], hi = p[0];
    for (std::int64_t i = 1; i < img.plane_size(); ++i) {
      lo = std::min(lo, p[i]);
      hi = std::max(hi, p[i]);
    }
    s.x_min[static_cast<std::size_t>(c)] = lo;
    s.x_max[static_cast<std::size_t>(c)] = hi;
  }
  return s;
}

// Min-max to [0,1] per channel, then (v - mean) / std. Constant channels
// (x_max == x_min) map to all-zeros instead of dividing by zero. The
// semantic tag records the application so an accidental second pass is
// caught instead of silently producing out-of-range values.
inline raster normalize(const raster& img, const normalization_stats& stats) {
  stats.validate();
  if (stats.channels() != img.channels)
    throw contract_error("normalize: stats cover " + std::to_string(stats.channels()) +
                         " channels, image has " + std::to_string(img.channels));
  if (img.semantic.find("+norm") != std::string::npos)
    throw contract_error("normalize: image is already normalized (semantic tag '" + img.semantic +
                         "')");
  raster out(img.channels, img.height, img.width, img.semantic + "+norm");
  for (int c = 0; c < img.channels; ++c) {
    const float* src = img.plane(c);
    float* dst = out.plane(c);
    float lo = stats.x_min[static_cast<std::size_t>(c)];
    float hi = stats.x_max[static_cast<std::size_t>(c)];
    float mean = stats.mean[static_cast<std::size_t>(c)];
    float sd = stats.stddev[static_cast<std::size_t>(c)];
    if (hi == lo) {
      std::fill(dst, dst + img.plane_size(), 0.f);
      continue;
    }
    float scale = 1.f / (hi - lo);
    for (std::int64_t i = 0; i < img.plane_size(); ++i)
      dst[i] = ((src[i] - lo) * scale - mean) / sd;
  }
  return out;
}

// How much reflection padding pad_to_grid added on each edge.
struct pad_record {
  int top = 0;
  int bottom = 0;
  int left = 0;
  int right = 0;
  int orig_height = 0;
  int orig_width = 0;

  bool zero() const { return top == 0 && bottom == 0 && left == 0 && right == 0; }
  int padded_height() const { return orig_height + top + bottom; }
  int padded_width() const { return orig_width + left + right; }
};

namespace detail {

// reflect-101 index fold: ...3 2 1 | 0 1 2 3 | 2 1 0... (edge not repeated);
// well defined for any pad size via the 2(n-1) period.
inline int mirror_index(int i, int n) {
  if (n == 1) return 0;
  int period = 2 * (n - 1);
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

inline pad_record make_pad_record(int h, int w, int multiple) {
  auto round_up = [multiple](int v) { return ((v + multiple - 1) / multiple) * multiple; };
  int ph = round_up(h), pw = round_up(w);
  pad_record rec;
  rec.orig_height = h;
  rec.orig_width = w;
  rec.top = (ph - h) / 2;
  rec.bottom = ph - h - rec.top;  // the odd pixel goes to bottom/right
  rec.left = (pw - w) / 2;
  rec.right = pw - w - rec.left;
  return rec;
}

}  // namespace detail

// Symmetric reflection padding up to the next multiple of `multiple` per
// axis; the split is as even as possible with the extra pixel on the
// bottom/right edge.
inline std::pair<raster, pad_record> pad_to_grid(const raster& img, int multiple = 32) {
  if (multiple < 1) throw contract_error("pad_to_grid: multiple must be >= 1");
  pad_record rec = detail::make_pad_record(img.height, img.width, multiple);
  raster out(img.channels, rec.padded_height(), rec.padded_width(), img.semantic);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < out.height; ++y) {
      int sy = detail::mirror_index(y - rec.top, img.height);
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = img.at(c, sy, detail::mirror_index(x - rec.left, img.width));
    }
  return {std::move(out), rec};
}

inline raster crop_back(const raster& padded, const pad_record& rec) {
  if (padded.height != rec.padded_height() || padded.width != rec.padded_width())
    throw contract_error("crop_back: raster is " + std::to_string(padded.width) + "x" +
                         std::to_string(padded.height) + ", pad record implies " +
                         std::to_string(rec.padded_width()) + "x" +
                         std::to_string(rec.padded_height()));
  raster out(padded.channels, rec.orig_height, rec.orig_width, padded.semantic);
  for (int c = 0; c < padded.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = padded.at(c, y + rec.top, x + rec.left);
  return out;
}

// Tensor variant for prediction outputs ({N,C,H,W}).
template <typename T>
tensor<T> crop_back(const tensor<T>& padded, const pad_record& rec) {
  detail::require_nchw(padded.shape, "crop_back input");
  if (padded.h() != rec.padded_height() || padded.w() != rec.padded_width())
    throw contract_error("crop_back: tensor is " + shape_str(padded.shape) +
                         ", pad record implies " + std::to_string(rec.padded_width()) + "x" +
                         std::to_string(rec.padded_height()));
  auto out = tensor<T>::zeros({padded.n(), padded.c(), rec.orig_height, rec.orig_width});
  for (int n = 0; n < padded.n(); ++n)
    for (int c = 0; c < padded.c(); ++c)
      for (int y = 0; y < rec.orig_height; ++y)
        for (int x = 0; x < rec.orig_width; ++x)
          out.data()[((static_cast<std::int64_t>(n) * padded.c() + c) * rec.orig_height + y) *
                         rec.orig_width +
                     x] =
              padded.at(((static_cast<std::int64_t>(n) * padded.c() + c) * padded.h() + y +
                         rec.top) *
                            padded.w() +
                        x + rec.left);
  return out;
}

// Raster (CHW) -> tensor ({1,C,H,W}).
template <typename T = float>
tensor<T> to_tensor(const raster& r) {
  auto t = tensor<T>::zeros({1, r.channels, r.height, r.width});
  for (std::int64_t i = 0; i < r.size(); ++i) t.data()[i] = static_cast<T>(r.data[i]);
  return t;
}

// Tensor sample n -> raster (CHW).
template <typename T>
raster to_raster(const tensor<T>& t, int n = 0, const std::string& semantic = "") {
  detail::require_nchw(t.shape, "to_raster input");
  raster r(t.c(), t.h(), t.w(), semantic);
  const T* src = t.data() + static_cast<std::int64_t>(n) * t.c() * t.h() * t.w();
  for (std::int64_t i = 0; i < r.size(); ++i) r.data[static_cast<std::size_t>(i)] =
      static_cast<float>(src[i]);
  return r;
}

}  // namespace terrace
