#pragma once

#include <algorithm>
#include <vector>

#include "terrace/raster.hpp"

namespace terrace {

// The two training channels derived from instance ground truth: the union
// footprint and the touching-border band.
struct target_pair {
  raster footprint;  // 1 channel, values in {0,1}
  raster touch;      // 1 channel, values in {0,1}
  int touch_distance = 2;

  // 2-channel container (footprint, touch) for persistence.
  raster to_raster() const {
    raster out(2, footprint.height, footprint.width, "targets");
    std::copy(footprint.data.begin(), footprint.data.end(), out.plane(0));
    std::copy(touch.data.begin(), touch.data.end(), out.plane(1));
    return out;
  }

  static target_pair from_raster(const raster& r, int touch_distance = 2) {
    if (r.channels != 2) throw contract_error("target_pair: expected a 2-channel raster");
    target_pair t;
    t.touch_distance = touch_distance;
    t.footprint = raster(1, r.height, r.width, "footprint");
    t.touch = raster(1, r.height, r.width, "touch");
    std::copy(r.plane(0), r.plane(0) + r.plane_size(), t.footprint.data.begin());
    std::copy(r.plane(1), r.plane(1) + r.plane_size(), t.touch.data.begin());
    return t;
  }
};

namespace detail {

// Chebyshev dilation of one instance mask by d, restricted to its padded
// bounding box: separable sliding-window OR, horizontal then vertical.
inline void dilate_into_counts(const instance_map& m, std::int32_t label, int d, int x0, int y0,
                               int x1, int y1, std::vector<std::uint16_t>& counts) {
  int bw = x1 - x0, bh = y1 - y0;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(bw) * bh, 0);
  std::vector<std::uint8_t> horiz(mask.size(), 0);
  for (int y = 0; y < bh; ++y)
    for (int x = 0; x < bw; ++x)
      mask[static_cast<std::size_t>(y) * bw + x] = m.at(y + y0, x + x0) == label;
  for (int y = 0; y < bh; ++y)
    for (int x = 0; x < bw; ++x) {
      std::uint8_t v = 0;
      for (int k = std::max(0, x - d); k <= std::min(bw - 1, x + d) && !v; ++k)
        v = mask[static_cast<std::size_t>(y) * bw + k];
      horiz[static_cast<std::size_t>(y) * bw + x] = v;
    }
  for (int y = 0; y < bh; ++y)
    for (int x = 0; x < bw; ++x) {
      std::uint8_t v = 0;
      for (int k = std::max(0, y - d); k <= std::min(bh - 1, y + d) && !v; ++k)
        v = horiz[static_cast<std::size_t>(k) * bw + x];
      if (v) ++counts[static_cast<std::size_t>(y + y0) * m.width + x + x0];
    }
}

}  // namespace detail

// footprint = (label > 0); touch = pixels covered by the Chebyshev-d
// dilations of at least two distinct instances. The band intentionally
// includes gap pixels outside any footprint so that mask-minus-border cleanly
// severs near-adjacent instances.
inline target_pair make_targets(const instance_map& m, int touch_distance = 2) {
  if (touch_distance < 1) throw contract_error("make_targets: touch distance must be >= 1");
  target_pair t;
  t.touch_distance = touch_distance;
  t.footprint = raster(1, m.height, m.width, "footprint");
  t.touch = raster(1, m.height, m.width, "touch");
  for (std::size_t i = 0; i < m.labels.size(); ++i)
    t.footprint.data[i] = m.labels[i] > 0 ? 1.f : 0.f;

  std::int32_t top = m.max_label();
  if (top < 2) return t;

  // bounding boxes per label
  std::vector<int> bx0(static_cast<std::size_t>(top) + 1, m.width);
  std::vector<int> by0(static_cast<std::size_t>(top) + 1, m.height);
  std::vector<int> bx1(static_cast<std::size_t>(top) + 1, -1);
  std::vector<int> by1(static_cast<std::size_t>(top) + 1, -1);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      std::int32_t l = m.at(y, x);
      if (l <= 0) continue;
      auto u = static_cast<std::size_t>(l);
      bx0[u] = std::min(bx0[u], x);
      by0[u] = std::min(by0[u], y);
      bx1[u] = std::max(bx1[u], x);
      by1[u] = std::max(by1[u], y);
    }

  std::vector<std::uint16_t> counts(m.labels.size(), 0);
  int d = touch_distance;
  for (std::int32_t l = 1; l <= top; ++l) {
    auto u = static_cast<std::size_t>(l);
    if (bx1[u] < 0) continue;  // label absent
    int x0 = std::max(0, bx0[u] - d), y0 = std::max(0, by0[u] - d);
    int x1 = std::min(m.width, bx1[u] + d + 1), y1 = std::min(m.height, by1[u] + d + 1);
    detail::dilate_into_counts(m, l, d, x0, y0, x1, y1, counts);
  }
  for (std::size_t i = 0; i < counts.size(); ++i) t.touch.data[i] = counts[i] >= 2 ? 1.f : 0.f;
  return t;
}

}  // namespace terrace
