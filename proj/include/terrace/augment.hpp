#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "terrace/preprocess.hpp"
#include "terrace/raster.hpp"

namespace terrace {

struct augment_config {
  double scale_min = 0.5;
  double scale_max = 1.5;
  double rotation_max_degrees = 360.0;  // angles drawn from [0, max)
  int crop_size = 384;
  std::array<double, 2> gamma_choices = {0.8, 1.2};
  double brightness_limit = 0.2;   // additive, in min-max space
  double contrast_min = 0.8;       // multiplicative around 0.5
  double contrast_max = 1.2;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(scale_min > 0.0) || scale_min > scale_max)
      throw contract_error("augment: scale bounds must be positive with min <= max");
    if (crop_size < 32 || crop_size % 32 != 0)
      throw contract_error("augment: crop size must be a positive multiple of 32");
    if (rotation_max_degrees < 0.0 || rotation_max_degrees > 360.0)
      throw contract_error("augment: rotation range must lie in [0,360]");
    if (contrast_min > contrast_max || brightness_limit < 0.0)
      throw contract_error("augment: bad photometric bounds");
  }
};

// One concrete draw of the augmentation parameters. Tests can apply exact
// transforms by constructing these directly.
struct augment_params {
  double scale = 1.0;
  double angle_degrees = 0.0;
  int crop_x = 0;  // top-left of the crop in the transformed image
  int crop_y = 0;
  double brightness = 0.0;
  double contrast = 1.0;
  double gamma = 1.0;
};

namespace detail {

inline double bilinear_reflect(const raster& img, int c, double y, double x) {
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  double fx = x - x0, fy = y - y0;
  auto sample = [&](int yy, int xx) {
    return img.at(c, mirror_index(yy, img.height), mirror_index(xx, img.width));
  };
  double v00 = sample(y0, x0), v01 = sample(y0, x0 + 1);
  double v10 = sample(y0 + 1, x0), v11 = sample(y0 + 1, x0 + 1);
  return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
}

inline float nearest_reflect(const raster& img, int c, double y, double x) {
  int xx = mirror_index(static_cast<int>(std::lround(x)), img.width);
  int yy = mirror_index(static_cast<int>(std::lround(y)), img.height);
  return img.at(c, yy, xx);
}

}  // namespace detail

inline augment_params sample_augment_params(const augment_config& cfg, const raster& img,
                                            std::uint64_t sample_seed) {
  cfg.validate();
  std::mt19937_64 rng(mix_seed(cfg.rng_seed, sample_seed));
  augment_params p;
  p.scale = std::uniform_real_distribution<double>(cfg.scale_min, cfg.scale_max)(rng);
  p.angle_degrees =
      cfg.rotation_max_degrees > 0.0
          ? std::uniform_real_distribution<double>(0.0, cfg.rotation_max_degrees)(rng)
          : 0.0;
  int sw = std::max(1, static_cast<int>(std::lround(img.width * p.scale)));
  int sh = std::max(1, static_cast<int>(std::lround(img.height * p.scale)));
  // crops larger than the transformed image center on it and read reflected
  // border content; never an error
  if (sw > cfg.crop_size)
    p.crop_x = static_cast<int>(rng() % static_cast<std::uint64_t>(sw - cfg.crop_size + 1));
  else
    p.crop_x = (sw - cfg.crop_size) / 2;
  if (sh > cfg.crop_size)
    p.crop_y = static_cast<int>(rng() % static_cast<std::uint64_t>(sh - cfg.crop_size + 1));
  else
    p.crop_y = (sh - cfg.crop_size) / 2;
  p.brightness =
      std::uniform_real_distribution<double>(-cfg.brightness_limit, cfg.brightness_limit)(rng);
  p.contrast = std::uniform_real_distribution<double>(cfg.contrast_min, cfg.contrast_max)(rng);
  p.gamma = cfg.gamma_choices[rng() % 2];
  return p;
}

// Applies the joint spatial chain (scale, rotate about the scaled-image
// center, crop) to image and target, then the photometric chain (brightness,
// contrast, gamma) to the image alone. The image is sampled bilinearly, the
// target by nearest neighbor and re-binarized. Output image values live in
// min-max [0,1] space; downstream mean/std normalization applies on top of
// that (normalization_stats::for_channels has identity extrema).
inline std::pair<raster, raster> augment_with_params(const raster& img, const raster& target,
                                                     const augment_params& p, int crop_size) {
  if (img.width != target.width || img.height != target.height)
    throw contract_error("augment: image and target dimensions differ");
  if (img.width < 1 || img.height < 1) throw contract_error("augment: empty input");

  raster out_img(img.channels, crop_size, crop_size, "image+minmax");
  raster out_tgt(target.channels, crop_size, crop_size, target.semantic);

  const double rad = p.angle_degrees * (3.14159265358979323846 / 180.0);
  const double ca = std::cos(rad), sa = std::sin(rad);
  const double scx = img.width * p.scale / 2.0, scy = img.height * p.scale / 2.0;

  // inverse map: output pixel center -> rotated/scaled space -> source
  auto source_of = [&](int oy, int ox) {
    double qx = p.crop_x + ox + 0.5, qy = p.crop_y + oy + 0.5;
    double rx = ca * (qx - scx) + sa * (qy - scy) + scx;
    double ry = -sa * (qx - scx) + ca * (qy - scy) + scy;
    return std::pair<double, double>{ry / p.scale - 0.5, rx / p.scale - 0.5};
  };

  for (int oy = 0; oy < crop_size; ++oy)
    for (int ox = 0; ox < crop_size; ++ox) {
      auto [sy, sx] = source_of(oy, ox);
      for (int c = 0; c < img.channels; ++c)
        out_img.at(c, oy, ox) = static_cast<float>(detail::bilinear_reflect(img, c, sy, sx));
      for (int c = 0; c < target.channels; ++c)
        out_tgt.at(c, oy, ox) = detail::nearest_reflect(target, c, sy, sx) > 0.5f ? 1.f : 0.f;
    }

  // photometric, per channel in min-max space; constant channels stay zero
  for (int c = 0; c < out_img.channels; ++c) {
    float* plane = out_img.plane(c);
    float lo = plane[0], hi = plane[0];
    for (std::int64_t i = 1; i < out_img.plane_size(); ++i) {
      lo = std::min(lo, plane[i]);
      hi = std::max(hi, plane[i]);
    }
    float scale = hi > lo ? 1.f / (hi - lo) : 0.f;
    for (std::int64_t i = 0; i < out_img.plane_size(); ++i) {
      double v = (plane[i] - lo) * scale;
      v += p.brightness;
      v = 0.5 + p.contrast * (v - 0.5);
      v = std::clamp(v, 0.0, 1.0);
      plane[i] = static_cast<float>(std::pow(v, p.gamma));
    }
  }
  return {std::move(out_img), std::move(out_tgt)};
}

// img: raw raster; target: aligned binary raster (any channel count).
// Fully determined by (cfg, sample_seed).
inline std::pair<raster, raster> augment_pair(const raster& img, const raster& target,
                                              const augment_config& cfg,
                                              std::uint64_t sample_seed) {
  auto params = sample_augment_params(cfg, img, sample_seed);
  return augment_with_params(img, target, params, cfg.crop_size);
}

}  // namespace terrace
