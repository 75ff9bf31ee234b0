#pragma once

#include <queue>
#include <vector>

#include "terrace/raster.hpp"
#include "terrace/tensor.hpp"

namespace terrace {

struct postprocess_config {
  double mask_threshold = 0.5;
  double border_threshold = 0.5;
  int connectivity = 4;
  int min_instance_area = 0;

  void validate() const {
    if (!(mask_threshold > 0.0 && mask_threshold < 1.0) ||
        !(border_threshold > 0.0 && border_threshold < 1.0))
      throw contract_error("postprocess: thresholds must lie in (0,1)");
    if (connectivity != 4 && connectivity != 8)
      throw contract_error("postprocess: connectivity must be 4 or 8");
    if (min_instance_area < 0)
      throw contract_error("postprocess: min instance area must be >= 0");
  }
};

// seeds = (mask_prob >= mask_threshold) AND NOT (border_prob >= border_threshold)
inline raster make_seeds(const raster& mask_prob, const raster& border_prob,
                         const postprocess_config& cfg) {
  cfg.validate();
  if (mask_prob.width != border_prob.width || mask_prob.height != border_prob.height ||
      mask_prob.channels != 1 || border_prob.channels != 1)
    throw shape_error("make_seeds: mask and border must be aligned single-channel rasters");
  raster seeds(1, mask_prob.height, mask_prob.width, "seeds");
  for (std::size_t i = 0; i < seeds.data.size(); ++i)
    seeds.data[i] = (mask_prob.data[i] >= static_cast<float>(cfg.mask_threshold) &&
                     !(border_prob.data[i] >= static_cast<float>(cfg.border_threshold)))
                        ? 1.f
                        : 0.f;
  return seeds;
}

// Connected components of a binary raster, labelled 1..K in row-major
// first-encounter order. Two-pass union-find; the relabel pass canonicalizes
// to scan order, so results are deterministic and directly comparable.
inline instance_map label_components(const raster& seeds, int connectivity = 4) {
  if (seeds.channels != 1) throw shape_error("label_components: expected a single channel");
  if (connectivity != 4 && connectivity != 8)
    throw contract_error("label_components: connectivity must be 4 or 8");
  const int W = seeds.width, H = seeds.height;
  instance_map out(H, W);
  std::vector<std::int32_t> parent(1, 0);  // parent[0] unused
  auto find = [&](std::int32_t a) {
    while (parent[static_cast<std::size_t>(a)] != a) {
      parent[static_cast<std::size_t>(a)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
      a = parent[static_cast<std::size_t>(a)];
    }
    return a;
  };
  auto unite = [&](std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  };

  std::vector<std::int32_t> provisional(static_cast<std::size_t>(W) * H, 0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      std::size_t i = static_cast<std::size_t>(y) * W + x;
      if (seeds.data[i] == 0.f) continue;
      std::int32_t left = x > 0 ? provisional[i - 1] : 0;
      std::int32_t up = y > 0 ? provisional[i - static_cast<std::size_t>(W)] : 0;
      std::int32_t ul = (connectivity == 8 && y > 0 && x > 0)
                            ? provisional[i - static_cast<std::size_t>(W) - 1]
                            : 0;
      std::int32_t ur = (connectivity == 8 && y > 0 && x + 1 < W)
                            ? provisional[i - static_cast<std::size_t>(W) + 1]
                            : 0;
      std::int32_t label = 0;
      for (std::int32_t n : {left, up, ul, ur})
        if (n > 0) label = label == 0 ? n : std::min(label, find(n));
      if (label == 0) {
        label = static_cast<std::int32_t>(parent.size());
        parent.push_back(label);
      } else {
        for (std::int32_t n : {left, up, ul, ur})
          if (n > 0) unite(label, n);
      }
      provisional[i] = label;
    }
  for (std::size_t i = 0; i < provisional.size(); ++i)
    if (provisional[i] > 0) out.labels[i] = find(provisional[i]);
  return compact_labels(out);
}

// Marker-driven watershed: region pixels are claimed by priority-ordered
// flooding from the markers. Pixels leave the queue in order of descending
// priority with FIFO tie-breaking by enqueue sequence; neighbors are visited
// up, down, left, right. Region pixels no marker can reach stay 0 and are
// counted in *unreached when given.
inline instance_map watershed(const instance_map& markers, const raster& region,
                              const raster& priority, std::int64_t* unreached = nullptr,
                              int connectivity = 4) {
  if (region.channels != 1 || priority.channels != 1 ||
      region.width != markers.width || region.height != markers.height ||
      priority.width != markers.width || priority.height != markers.height)
    throw shape_error("watershed: markers, region and priority must be aligned");
  if (connectivity != 4 && connectivity != 8)
    throw contract_error("watershed: connectivity must be 4 or 8");
  const int W = markers.width, H = markers.height;
  for (std::size_t i = 0; i < markers.labels.size(); ++i)
    if (markers.labels[i] > 0 && region.data[i] == 0.f)
      throw contract_error("watershed: marker outside the region mask");

  struct entry {
    float prio;
    std::int64_t seq;
    std::int32_t x, y;
  };
  struct later {
    bool operator()(const entry& a, const entry& b) const {
      if (a.prio != b.prio) return a.prio < b.prio;
      return a.seq > b.seq;
    }
  };
  std::priority_queue<entry, std::vector<entry>, later> queue;
  instance_map out(H, W);
  std::int64_t seq = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      std::size_t i = static_cast<std::size_t>(y) * W + x;
      if (markers.labels[i] > 0) {
        out.labels[i] = markers.labels[i];
        queue.push({priority.data[i], seq++, x, y});
      }
    }
  const int dx8[8] = {0, 0, -1, 1, -1, 1, -1, 1};
  const int dy8[8] = {-1, 1, 0, 0, -1, -1, 1, 1};
  const int nn = connectivity == 8 ? 8 : 4;
  while (!queue.empty()) {
    entry e = queue.top();
    queue.pop();
    std::int32_t label = out.labels[static_cast<std::size_t>(e.y) * W + e.x];
    for (int k = 0; k < nn; ++k) {
      int nx = e.x + dx8[k], ny = e.y + dy8[k];
      if (nx < 0 || nx >= W || ny < 0 || ny >= H) continue;
      std::size_t j = static_cast<std::size_t>(ny) * W + nx;
      if (region.data[j] == 0.f || out.labels[j] != 0) continue;
      out.labels[j] = label;
      queue.push({priority.data[j], seq++, nx, ny});
    }
  }
  if (unreached) {
    *unreached = 0;
    for (std::size_t i = 0; i < out.labels.size(); ++i)
      if (region.data[i] != 0.f && out.labels[i] == 0) ++*unreached;
  }
  return out;
}

inline instance_map drop_small_instances(const instance_map& m, int min_area) {
  if (min_area <= 0) return compact_labels(m);
  std::vector<std::int64_t> area(static_cast<std::size_t>(m.max_label()) + 1, 0);
  for (auto v : m.labels)
    if (v > 0) ++area[static_cast<std::size_t>(v)];
  instance_map kept(m.height, m.width);
  for (std::size_t i = 0; i < m.labels.size(); ++i)
    if (m.labels[i] > 0 && area[static_cast<std::size_t>(m.labels[i])] >= min_area)
      kept.labels[i] = m.labels[i];
  return compact_labels(kept);
}

inline instance_map extract_instances_from_probs(const raster& mask_prob,
                                                 const raster& border_prob,
                                                 const postprocess_config& cfg);

// Full chain: sigmoid(logits) -> threshold -> seeds -> components ->
// watershed over the mask with the footprint probability as the priority
// surface -> area filter -> compact labels.
inline instance_map extract_instances(const tensor<float>& pred_logits,
                                      const postprocess_config& cfg) {
  cfg.validate();
  if (pred_logits.shape.size() != 3 && pred_logits.shape.size() != 4)
    throw shape_error("extract_instances: expected {2,H,W} logits");
  shape_t s = pred_logits.shape;
  int C = s[s.size() == 4 ? 1 : 0];
  int H = s[s.size() == 4 ? 2 : 1];
  int W = s[s.size() == 4 ? 3 : 2];
  if (C != 2 || (s.size() == 4 && s[0] != 1))
    throw shape_error("extract_instances: expected a single 2-channel prediction, got " +
                      shape_str(s));
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  raster mask_prob(1, H, W, "probabilities");
  raster border_prob(1, H, W, "probabilities");
  for (std::int64_t i = 0; i < plane; ++i) {
    float zm = pred_logits.at(i);
    float zb = pred_logits.at(plane + i);
    mask_prob.data[static_cast<std::size_t>(i)] =
        zm >= 0.f ? 1.f / (1.f + std::exp(-zm)) : std::exp(zm) / (1.f + std::exp(zm));
    border_prob.data[static_cast<std::size_t>(i)] =
        zb >= 0.f ? 1.f / (1.f + std::exp(-zb)) : std::exp(zb) / (1.f + std::exp(zb));
  }
  return extract_instances_from_probs(mask_prob, border_prob, cfg);
}

inline instance_map extract_instances_from_probs(const raster& mask_prob,
                                                 const raster& border_prob,
                                                 const postprocess_config& cfg) {
  cfg.validate();
  auto seeds = make_seeds(mask_prob, border_prob, cfg);
  auto markers = label_components(seeds, cfg.connectivity);
  raster region(1, mask_prob.height, mask_prob.width, "mask");
  for (std::size_t i = 0; i < region.data.size(); ++i)
    region.data[i] = mask_prob.data[i] >= static_cast<float>(cfg.mask_threshold) ? 1.f : 0.f;
  auto flooded = watershed(markers, region, mask_prob, nullptr, cfg.connectivity);
  return drop_small_instances(flooded, cfg.min_instance_area);
}

}  // namespace terrace
