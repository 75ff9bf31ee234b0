#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include <json.hpp>

#include "terrace/raster.hpp"
#include "terrace/targets.hpp"

namespace terrace {

// Synthetic multispectral "city" scenes: rectangles (some rotated) on a
// textured background, 11 channels = RGB + 8 bands that are deterministic
// functions of the scene geometry. Channel 3 carries a building-interior
// signal much stronger than RGB so that input-channel extension has
// something real to learn; channel 9 is a dead (constant) band.
struct scene_config {
  int size = 96;
  int buildings_min = 4;
  int buildings_max = 8;
  double touching_pair_fraction = 0.5;
  double noise_sigma = 0.03;
  double intensity_margin = 0.5;  // guaranteed building/background gap on channel 3
  double building_lo = 0.45;      // RGB fill intensity range
  double building_hi = 0.90;
  int building_size_min = 8;
  int building_size_max = 20;
  int min_visible_area = 9;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (size < 8) throw contract_error("scene: size must be >= 8");
    if (buildings_min < 0 || buildings_max < buildings_min)
      throw contract_error("scene: bad building count range");
    if (!(touching_pair_fraction >= 0.0 && touching_pair_fraction <= 1.0))
      throw contract_error("scene: touching fraction must lie in [0,1]");
    if (noise_sigma < 0.0) throw contract_error("scene: noise sigma must be >= 0");
    if (building_size_min < 2 || building_size_max < building_size_min)
      throw contract_error("scene: bad building size range");
    if (!(intensity_margin > 0.0 && intensity_margin <= 0.7))
      throw contract_error("scene: intensity margin must lie in (0, 0.7]");
  }
};

struct scene {
  raster image;        // 11 x size x size, values in [0,1]
  instance_map labels;
};

namespace detail {

struct placed_rect {
  double cx, cy, w, h, angle;  // center, extent, radians
};

inline bool point_in_rect(const placed_rect& r, double px, double py) {
  double ca = std::cos(r.angle), sa = std::sin(r.angle);
  double dx = px - r.cx, dy = py - r.cy;
  double lx = ca * dx + sa * dy, ly = -sa * dx + ca * dy;
  return std::abs(lx) <= r.w / 2.0 && std::abs(ly) <= r.h / 2.0;
}

inline std::vector<std::pair<int, int>> rect_pixels(const placed_rect& r, int size) {
  std::vector<std::pair<int, int>> px;
  double reach = std::hypot(r.w, r.h) / 2.0 + 1.0;
  int x0 = std::max(0, static_cast<int>(r.cx - reach));
  int x1 = std::min(size - 1, static_cast<int>(r.cx + reach));
  int y0 = std::max(0, static_cast<int>(r.cy - reach));
  int y1 = std::min(size - 1, static_cast<int>(r.cy + reach));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (point_in_rect(r, x + 0.5, y + 0.5)) px.emplace_back(x, y);
  return px;
}

inline bool rect_inside_frame(const placed_rect& r, int size) {
  double ca = std::cos(r.angle), sa = std::sin(r.angle);
  for (int sx = -1; sx <= 1; sx += 2)
    for (int sy = -1; sy <= 1; sy += 2) {
      double lx = sx * r.w / 2.0, ly = sy * r.h / 2.0;
      double px = r.cx + ca * lx - sa * ly;
      double py = r.cy + sa * lx + ca * ly;
      if (px < 0.5 || px > size - 0.5 || py < 0.5 || py > size - 0.5) return false;
    }
  return true;
}

// Exact Chebyshev distance transform to a label's pixels: two-pass chamfer
// over the 8-neighborhood.
inline std::vector<int> chebyshev_dt(const instance_map& m, std::int32_t label) {
  const int BIG = 1 << 28;
  const int W = m.width, H = m.height;
  std::vector<int> d(static_cast<std::size_t>(W) * H, BIG);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (m.at(y, x) == label) d[static_cast<std::size_t>(y) * W + x] = 0;
  auto relax = [&](int y, int x, int yy, int xx) {
    if (yy < 0 || yy >= H || xx < 0 || xx >= W) return;
    auto& cur = d[static_cast<std::size_t>(y) * W + x];
    cur = std::min(cur, d[static_cast<std::size_t>(yy) * W + xx] + 1);
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      relax(y, x, y - 1, x - 1);
      relax(y, x, y - 1, x);
      relax(y, x, y - 1, x + 1);
      relax(y, x, y, x - 1);
    }
  for (int y = H - 1; y >= 0; --y)
    for (int x = W - 1; x >= 0; --x) {
      relax(y, x, y + 1, x + 1);
      relax(y, x, y + 1, x);
      relax(y, x, y + 1, x - 1);
      relax(y, x, y, x + 1);
    }
  return d;
}

}  // namespace detail

// Minimum Chebyshev distance between the pixel sets of every instance pair;
// entry (i,j) for 1-based labels i < j.
inline std::vector<std::vector<int>> pairwise_chebyshev(const instance_map& m) {
  std::int32_t top = m.max_label();
  std::vector<std::vector<int>> dist(static_cast<std::size_t>(top) + 1,
                                     std::vector<int>(static_cast<std::size_t>(top) + 1, 1 << 28));
  for (std::int32_t j = 2; j <= top; ++j) {
    auto dt = detail::chebyshev_dt(m, j);
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        std::int32_t i = m.at(y, x);
        if (i > 0 && i < j) {
          auto& cell = dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
          cell = std::min(cell, dt[static_cast<std::size_t>(y) * m.width + x]);
        }
      }
  }
  return dist;
}

// Pairs separated by at most `gap` empty pixels (pixel distance gap+1).
inline int count_near_pairs(const instance_map& m, int gap = 2) {
  auto dist = pairwise_chebyshev(m);
  int count = 0;
  for (std::size_t i = 1; i < dist.size(); ++i)
    for (std::size_t j = i + 1; j < dist.size(); ++j)
      if (dist[i][j] <= gap + 1) ++count;
  return count;
}

inline scene generate_scene(const scene_config& cfg, std::uint64_t scene_seed) {
  cfg.validate();
  std::mt19937_64 rng(mix_seed(cfg.rng_seed, scene_seed, 0x5ce9e));
  const int S = cfg.size;

  scene out;
  out.labels = instance_map(S, S);
  std::uniform_int_distribution<int> count_dist(cfg.buildings_min, cfg.buildings_max);
  const int want = count_dist(rng);
  const int near_targets =
      static_cast<int>(std::ceil(cfg.touching_pair_fraction * (want / 2)));

  std::vector<std::vector<std::pair<int, int>>> instance_pixels;
  std::vector<int> visible;
  std::vector<detail::placed_rect> rects;

  auto try_place = [&](const detail::placed_rect& cand) -> bool {
    if (!detail::rect_inside_frame(cand, S)) return false;
    auto px = detail::rect_pixels(cand, S);
    if (static_cast<int>(px.size()) < cfg.min_visible_area) return false;
    std::vector<int> loss_per(visible.size(), 0);
    for (auto [x, y] : px) {
      std::int32_t prev = out.labels.at(y, x);
      if (prev > 0) ++loss_per[static_cast<std::size_t>(prev - 1)];
    }
    for (std::size_t i = 0; i < visible.size(); ++i)
      if (visible[i] - loss_per[i] < cfg.min_visible_area) return false;
    std::int32_t id = static_cast<std::int32_t>(visible.size()) + 1;
    for (auto [x, y] : px) {
      std::int32_t prev = out.labels.at(y, x);
      if (prev > 0) --visible[static_cast<std::size_t>(prev - 1)];
      out.labels.at(y, x) = id;
    }
    visible.push_back(static_cast<int>(px.size()));
    instance_pixels.push_back(std::move(px));
    rects.push_back(cand);
    return true;
  };

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto random_extent = [&] {
    return std::uniform_int_distribution<int>(cfg.building_size_min, cfg.building_size_max)(rng);
  };

  int placed = 0, near_made = 0;
  const int max_attempts = 200;
  while (placed < want) {
    bool paired = near_made < near_targets && placed + 2 <= want;
    bool ok = false;
    for (int attempt = 0; attempt < max_attempts && !ok; ++attempt) {
      if (paired) {
        // axis-aligned host + partner with a 0..2 pixel gap, integer grid
        int w1 = random_extent(), h1 = random_extent();
        int w2 = random_extent(), h2 = random_extent();
        int gap = static_cast<int>(rng() % 3);
        bool horizontal = rng() % 2 == 0;
        int jitter = static_cast<int>(rng() % 5) - 2;
        auto aa_rect = [](int x0, int y0, int w, int h) {
          return detail::placed_rect{x0 + w / 2.0, y0 + h / 2.0, static_cast<double>(w),
                                     static_cast<double>(h), 0.0};
        };
        int span_x = horizontal ? w1 + gap + w2 : std::max(w1, w2);
        int span_y = horizontal ? std::max(h1, h2) : h1 + gap + h2;
        if (span_x + 2 >= S || span_y + 2 >= S) continue;
        int x0 = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(S - span_x - 2));
        int y0 = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(S - span_y - 2));
        detail::placed_rect host = aa_rect(x0, y0, w1, h1);
        detail::placed_rect part =
            horizontal ? aa_rect(x0 + w1 + gap, std::clamp(y0 + jitter, 1, S - h2 - 1), w2, h2)
                       : aa_rect(std::clamp(x0 + jitter, 1, S - w2 - 1), y0 + h1 + gap, w2, h2);
        std::size_t before = rects.size();
        if (try_place(host)) {
          if (try_place(part)) {
            ok = true;
            ++near_made;
            placed += 2;
          } else {
            // roll back the host
            for (auto [x, y] : instance_pixels.back()) out.labels.at(y, x) = 0;
            instance_pixels.pop_back();
            visible.pop_back();
            rects.resize(before);
          }
        }
      } else {
        double angle = rng() % 2 == 0 ? 0.0 : unit(rng) * 1.5707963267948966;
        int w = random_extent(), h = random_extent();
        double margin = std::hypot(w, h) / 2.0 + 1.0;
        if (2 * margin >= S) continue;
        detail::placed_rect cand{margin + unit(rng) * (S - 2 * margin),
                                 margin + unit(rng) * (S - 2 * margin),
                                 static_cast<double>(w), static_cast<double>(h), angle};
        if (try_place(cand)) {
          ok = true;
          ++placed;
        }
      }
    }
    if (!ok)
      throw contract_error("generate_scene: could not place " + std::to_string(want) +
                           " buildings in a " + std::to_string(S) + "px frame");
  }

  // partially occluded instances may have vanished entirely; compact ids
  out.labels = compact_labels(out.labels);

  // ---- paint channels ------------------------------------------------
  out.image = raster(11, S, S, "image");
  const std::int64_t plane = out.labels.labels.size();
  std::int32_t top = out.labels.max_label();

  std::vector<int> d_nearest(static_cast<std::size_t>(plane), 1 << 28);
  std::vector<int> d_second(static_cast<std::size_t>(plane), 1 << 28);
  for (std::int32_t id = 1; id <= top; ++id) {
    auto dt = detail::chebyshev_dt(out.labels, id);
    for (std::int64_t i = 0; i < plane; ++i) {
      int v = dt[static_cast<std::size_t>(i)];
      if (v < d_nearest[static_cast<std::size_t>(i)]) {
        d_second[static_cast<std::size_t>(i)] = d_nearest[static_cast<std::size_t>(i)];
        d_nearest[static_cast<std::size_t>(i)] = v;
      } else if (v < d_second[static_cast<std::size_t>(i)]) {
        d_second[static_cast<std::size_t>(i)] = v;
      }
    }
  }

  // per-scene background bases and per-instance RGB palettes
  double bg[3] = {0.25 + 0.1 * unit(rng), 0.25 + 0.1 * unit(rng), 0.25 + 0.1 * unit(rng)};
  std::vector<std::array<double, 3>> palette(static_cast<std::size_t>(top) + 1);
  std::vector<double> band7(static_cast<std::size_t>(top) + 1, 0.0);
  for (std::int32_t id = 1; id <= top; ++id) {
    for (int c = 0; c < 3; ++c)
      palette[static_cast<std::size_t>(id)][c] =
          cfg.building_lo + unit(rng) * (cfg.building_hi - cfg.building_lo);
    band7[static_cast<std::size_t>(id)] = 0.3 + 0.5 * unit(rng);
  }

  const double interior = 0.15 + std::max(cfg.intensity_margin, 0.7);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  auto put = [&](int c, std::int64_t i, double v, double sigma_scale = 1.0) {
    double n = cfg.noise_sigma > 0.0 ? noise(rng) * sigma_scale : 0.0;
    out.image.data[static_cast<std::size_t>(c * plane + i)] =
        static_cast<float>(std::clamp(v + n, 0.0, 1.0));
  };
  for (std::int64_t i = 0; i < plane; ++i) {
    int x = static_cast<int>(i % S), y = static_cast<int>(i / S);
    std::int32_t id = out.labels.labels[static_cast<std::size_t>(i)];
    double texture = 0.03 * std::sin(2.0 * 3.14159265358979 * (x * 3.0 + y * 2.0) / S);
    for (int c = 0; c < 3; ++c)
      put(c, i, id > 0 ? palette[static_cast<std::size_t>(id)][c] : bg[c] + texture);
    put(3, i, id > 0 ? interior : 0.15);
    double d2 = static_cast<double>(d_second[static_cast<std::size_t>(i)]);
    put(4, i, 0.2 + 0.6 * std::clamp(1.0 - (d2 - 1.0) / 6.0, 0.0, 1.0), 0.5);
    int d1 = d_nearest[static_cast<std::size_t>(i)];
    bool edge_band = d1 >= 1 && d1 <= 2;
    put(5, i, edge_band ? 0.75 : 0.25);
    put(6, i, 0.3 + (id > 0 ? 0.3 : 0.0), 2.0);
    put(7, i, id > 0 ? band7[static_cast<std::size_t>(id)] : 0.4);
    put(8, i, 0.1 + 0.6 * x / S + (id > 0 ? 0.15 : 0.0));
    out.image.data[static_cast<std::size_t>(9 * plane + i)] = 0.42f;  // dead band
    put(10, i, 0.8 - (id > 0 ? 0.5 : 0.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// dataset persistence
// ---------------------------------------------------------------------------

struct dataset_entry {
  std::string id;
  std::uint64_t seed;
  int instances;
  int near_pairs;
};

struct dataset_manifest {
  scene_config config;
  int touch_distance = 2;
  std::vector<dataset_entry> entries;
};

inline scene_config scene_config_from_json(const nlohmann::json& j);
inline nlohmann::json scene_config_to_json(const scene_config& cfg);

inline dataset_manifest generate_dataset(const scene_config& cfg, int n_scenes,
                                         const std::filesystem::path& out_dir,
                                         int touch_distance = 2,
                                         std::uint64_t first_seed = 0) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  dataset_manifest manifest;
  manifest.config = cfg;
  manifest.touch_distance = touch_distance;
  for (int i = 0; i < n_scenes; ++i) {
    std::uint64_t seed = first_seed + static_cast<std::uint64_t>(i);
    auto sc = generate_scene(cfg, seed);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d", i);
    write_raster(out_dir / (std::string(name) + ".rst"), sc.image);
    auto targets = make_targets(sc.labels, touch_distance);
    write_raster(out_dir / (std::string(name) + "_targets.rst"), targets.to_raster());
    write_instance_map(out_dir / (std::string(name) + ".imap"), sc.labels);
    manifest.entries.push_back(
        {name, seed, sc.labels.max_label(), count_near_pairs(sc.labels, 2)});
  }
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : manifest.entries)
    entries.push_back({{"id", e.id},
                       {"seed", e.seed},
                       {"instances", e.instances},
                       {"near_pairs", e.near_pairs}});
  nlohmann::json j = {{"config", scene_config_to_json(cfg)},
                      {"touch_distance", touch_distance},
                      {"scenes", entries}};
  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  if (!out) throw io_error("cannot write dataset manifest in " + out_dir.string());
  out << j.dump(2) << "\n";
  if (!out) throw io_error("write failed for dataset manifest");
  return manifest;
}

inline nlohmann::json scene_config_to_json(const scene_config& cfg) {
  return {{"size", cfg.size},
          {"buildings_min", cfg.buildings_min},
          {"buildings_max", cfg.buildings_max},
          {"touching_pair_fraction", cfg.touching_pair_fraction},
          {"noise_sigma", cfg.noise_sigma},
          {"intensity_margin", cfg.intensity_margin},
          {"building_lo", cfg.building_lo},
          {"building_hi", cfg.building_hi},
          {"building_size_min", cfg.building_size_min},
          {"building_size_max", cfg.building_size_max},
          {"min_visible_area", cfg.min_visible_area},
          {"rng_seed", cfg.rng_seed}};
}

inline scene_config scene_config_from_json(const nlohmann::json& j) {
  scene_config cfg;
  cfg.size = j.value("size", cfg.size);
  cfg.buildings_min = j.value("buildings_min", cfg.buildings_min);
  cfg.buildings_max = j.value("buildings_max", cfg.buildings_max);
  cfg.touching_pair_fraction = j.value("touching_pair_fraction", cfg.touching_pair_fraction);
  cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
  cfg.intensity_margin = j.value("intensity_margin", cfg.intensity_margin);
  cfg.building_lo = j.value("building_lo", cfg.building_lo);
  cfg.building_hi = j.value("building_hi", cfg.building_hi);
  cfg.building_size_min = j.value("building_size_min", cfg.building_size_min);
  cfg.building_size_max = j.value("building_size_max", cfg.building_size_max);
  cfg.min_visible_area = j.value("min_visible_area", cfg.min_visible_area);
  cfg.rng_seed = j.value("rng_seed", cfg.rng_seed);
  return cfg;
}

}  // namespace terrace
