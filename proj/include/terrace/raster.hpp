#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "terrace/common.hpp"

namespace terrace {

// Planar CHW float32 image. On disk: `<name>.rst` raw little-endian blob plus
// `<name>.rst.json` sidecar; the blob is headerless so it can be mapped or
// seeked directly.
struct raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;  // channel-major, row-major within channel
  std::string semantic;

  raster() = default;
  raster(int channels_, int height_, int width_, std::string semantic_ = "")
      : width(width_),
        height(height_),
        channels(channels_),
        data(static_cast<std::size_t>(channels_) * height_ * width_, 0.f),
        semantic(std::move(semantic_)) {}

  std::int64_t plane_size() const { return static_cast<std::int64_t>(height) * width; }
  std::int64_t size() const { return static_cast<std::int64_t>(channels) * plane_size(); }

  float& at(int c, int y, int x) {
    return data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * height + y) * width + x)];
  }
  float at(int c, int y, int x) const {
    return data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * height + y) * width + x)];
  }
  float* plane(int c) { return data.data() + static_cast<std::int64_t>(c) * plane_size(); }
  const float* plane(int c) const {
    return data.data() + static_cast<std::int64_t>(c) * plane_size();
  }
};

// Integer-labelled raster: 0 = background, k >= 1 = instance id.
struct instance_map {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> labels;

  instance_map() = default;
  instance_map(int height_, int width_)
      : width(width_), height(height_), labels(static_cast<std::size_t>(height_) * width_, 0) {}

  std::int32_t& at(int y, int x) {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  std::int32_t at(int y, int x) const {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  std::int32_t max_label() const {
    std::int32_t m = 0;
    for (auto v : labels)
      if (v > m) m = v;
    return m;
  }
};

// Relabels so ids form {1..K} in row-major first-encounter order.
inline instance_map compact_labels(const instance_map& m) {
  instance_map out(m.height, m.width);
  std::vector<std::int32_t> remap(static_cast<std::size_t>(m.max_label()) + 1, 0);
  std::int32_t next = 1;
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    std::int32_t v = m.labels[i];
    if (v > 0) {
      if (remap[static_cast<std::size_t>(v)] == 0) remap[static_cast<std::size_t>(v)] = next++;
      out.labels[i] = remap[static_cast<std::size_t>(v)];
    }
  }
  return out;
}

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw io_error("cannot open " + p.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw io_error("read failed for " + p.string());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& p, const void* data, std::size_t n) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open " + p.string() + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw io_error("write failed for " + p.string());
}

inline nlohmann::json read_sidecar(const std::filesystem::path& blob_path) {
  auto sidecar = blob_path;
  sidecar += ".json";
  if (!std::filesystem::exists(sidecar))
    throw format_error("missing header sidecar " + sidecar.string());
  std::ifstream in(sidecar);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw format_error("corrupt header " + sidecar.string() + ": " + e.what());
  }
  return j;
}

}  // namespace detail

inline void write_raster(const std::filesystem::path& path, const raster& r) {
  if (r.width < 1 || r.height < 1 || r.channels < 1)
    throw contract_error("write_raster: degenerate dimensions");
  if (static_cast<std::int64_t>(r.data.size()) != r.size())
    throw contract_error("write_raster: data length does not match dimensions");
  static_assert(sizeof(float) == 4);
  detail::write_file_bytes(path, r.data.data(), r.data.size() * 4);
  nlohmann::json j = {{"width", r.width},   {"height", r.height}, {"channels", r.channels},
                      {"dtype", "f32le"},   {"layout", "chw"},    {"semantic", r.semantic}};
  auto sidecar = path;
  sidecar += ".json";
  std::ofstream out(sidecar, std::ios::trunc);
  if (!out) throw io_error("cannot open " + sidecar.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw io_error("write failed for " + sidecar.string());
}

inline raster read_raster(const std::filesystem::path& path) {
  nlohmann::json j = detail::read_sidecar(path);
  raster r;
  try {
    r.width = j.at("width").get<int>();
    r.height = j.at("height").get<int>();
    r.channels = j.at("channels").get<int>();
    r.semantic = j.value("semantic", "");
    if (j.at("dtype").get<std::string>() != "f32le")
      throw format_error("unsupported dtype in " + path.string());
    if (j.at("layout").get<std::string>() != "chw")
      throw format_error("unsupported layout in " + path.string());
  } catch (const nlohmann::json::exception& e) {
    throw format_error("corrupt header for " + path.string() + ": " + e.what());
  }
  if (r.width < 1 || r.height < 1 || r.channels < 1)
    throw format_error("degenerate dimensions in header for " + path.string());
  auto bytes = detail::read_file_bytes(path);
  std::size_t expected = static_cast<std::size_t>(r.size()) * 4;
  if (bytes.size() != expected)
    throw truncation_error(path.string() + ": blob holds " + std::to_string(bytes.size()) +
                           " bytes, header implies " + std::to_string(expected));
  r.data.resize(static_cast<std::size_t>(r.size()));
  std::memcpy(r.data.data(), bytes.data(), bytes.size());
  return r;
}

// Instance maps use the same blob+sidecar convention with dtype i32le.
inline void write_instance_map(const std::filesystem::path& path, const instance_map& m) {
  static_assert(sizeof(std::int32_t) == 4);
  detail::write_file_bytes(path, m.labels.data(), m.labels.size() * 4);
  nlohmann::json j = {{"width", m.width},
                      {"height", m.height},
                      {"dtype", "i32le"},
                      {"layout", "hw"},
                      {"semantic", "labels"}};
  auto sidecar = path;
  sidecar += ".json";
  std::ofstream out(sidecar, std::ios::trunc);
  if (!out) throw io_error("cannot open " + sidecar.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw io_error("write failed for " + sidecar.string());
}

inline instance_map read_instance_map(const std::filesystem::path& path) {
  nlohmann::json j = detail::read_sidecar(path);
  instance_map m;
  try {
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    if (j.at("dtype").get<std::string>() != "i32le")
      throw format_error("unsupported dtype in " + path.string());
  } catch (const nlohmann::json::exception& e) {
    throw format_error("corrupt header for " + path.string() + ": " + e.what());
  }
  if (m.width < 1 || m.height < 1)
    throw format_error("degenerate dimensions in header for " + path.string());
  auto bytes = detail::read_file_bytes(path);
  std::size_t expected = static_cast<std::size_t>(m.width) * m.height * 4;
  if (bytes.size() != expected)
    throw truncation_error(path.string() + ": blob holds " + std::to_string(bytes.size()) +
                           " bytes, header implies " + std::to_string(expected));
  m.labels.resize(expected / 4);
  std::memcpy(m.labels.data(), bytes.data(), bytes.size());
  return m;
}

// ---------------------------------------------------------------------------
// polygonization
// ---------------------------------------------------------------------------

namespace detail {

// Traces the exterior boundary of one label as a closed loop of lattice
// edges, walking with the region on the right-hand side (y axis points
// down). The turn preference right > straight > left resolves checkerboard
// corners deterministically. Interior holes are never reached.
inline std::vector<std::array<std::int64_t, 2>> trace_exterior_ring(const instance_map& m,
                                                                    std::int32_t label) {
  auto inside = [&](std::int64_t x, std::int64_t y) {
    return x >= 0 && x < m.width && y >= 0 && y < m.height &&
           m.at(static_cast<int>(y), static_cast<int>(x)) == label;
  };
  std::int64_t sx = -1, sy = -1;
  for (int y = 0; y < m.height && sx < 0; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x) == label) {
        sx = x;
        sy = y;
        break;
      }
  if (sx < 0) return {};

  // directions: 0=E, 1=S, 2=W, 3=N in corner space
  const std::int64_t dx[4] = {1, 0, -1, 0};
  const std::int64_t dy[4] = {0, 1, 0, -1};
  // an edge leaving corner (cx,cy) in direction d is on the boundary with
  // the region to its right iff pixel `rt` is inside and pixel `lt` is not
  auto edge_ok = [&](std::int64_t cx, std::int64_t cy, int d) {
    switch (d) {
      case 0: return inside(cx, cy) && !inside(cx, cy - 1);
      case 1: return inside(cx - 1, cy) && !inside(cx, cy);
      case 2: return inside(cx - 1, cy - 1) && !inside(cx - 1, cy);
      default: return inside(cx, cy - 1) && !inside(cx - 1, cy - 1);
    }
  };

  std::vector<std::array<std::int64_t, 2>> ring;
  std::int64_t cx = sx, cy = sy;
  int dir = 0;  // top-left corner of the first pixel, heading east
  ring.push_back({cx, cy});
  do {
    cx += dx[dir];
    cy += dy[dir];
    ring.push_back({cx, cy});
    int right = (dir + 1) % 4;
    int left = (dir + 3) % 4;
    int back = (dir + 2) % 4;
    if (edge_ok(cx, cy, right))
      dir = right;
    else if (edge_ok(cx, cy, dir)) {
      // keep direction
    } else if (edge_ok(cx, cy, left))
      dir = left;
    else
      dir = back;
  } while (!(cx == sx && cy == sy && dir == 0));
  ring.pop_back();  // the closing corner is re-appended after orientation

  // drop collinear intermediate corners
  std::vector<std::array<std::int64_t, 2>> slim;
  std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    auto& prev = ring[(i + n - 1) % n];
    auto& cur = ring[i];
    auto& next = ring[(i + 1) % n];
    std::int64_t ax = cur[0] - prev[0], ay = cur[1] - prev[1];
    std::int64_t bx = next[0] - cur[0], by = next[1] - cur[1];
    if (ax * by - ay * bx != 0) slim.push_back(cur);
  }
  // counterclockwise under the shoelace convention on (x, y) as stored
  std::int64_t area2 = 0;
  for (std::size_t i = 0; i < slim.size(); ++i) {
    auto& a = slim[i];
    auto& b = slim[(i + 1) % slim.size()];
    area2 += a[0] * b[1] - b[0] * a[1];
  }
  if (area2 < 0) std::reverse(slim.begin(), slim.end());
  slim.push_back(slim.front());
  return slim;
}

}  // namespace detail

// RFC 7946 FeatureCollection of per-instance exterior polygons in pixel
// coordinates (x right, y down); no geo-referencing.
inline nlohmann::json instances_to_geojson(const instance_map& m) {
  nlohmann::json features = nlohmann::json::array();
  std::int32_t top = m.max_label();
  for (std::int32_t id = 1; id <= top; ++id) {
    auto ring = detail::trace_exterior_ring(m, id);
    if (ring.empty()) continue;
    nlohmann::json coords = nlohmann::json::array();
    for (auto& pt : ring) coords.push_back({pt[0], pt[1]});
    features.push_back({{"type", "Feature"},
                        {"properties", {{"instance_id", id}}},
                        {"geometry",
                         {{"type", "Polygon"},
                          {"coordinates", nlohmann::json::array({coords})}}}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

inline void write_instances_geojson(const std::filesystem::path& path, const instance_map& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");
  out << instances_to_geojson(m).dump(2) << "\n";
  if (!out) throw io_error("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// PPM export for eyeballing results
// ---------------------------------------------------------------------------

// Writes channels (c0,c1,c2) of a raster as P6 with per-channel min-max
// stretch. Instance labels, when given, are blended over the image with a
// deterministic palette.
inline void write_ppm(const std::filesystem::path& path, const raster& r, int c0 = 0, int c1 = 1,
                      int c2 = 2, const instance_map* overlay = nullptr) {
  int chans[3] = {c0, c1, c2};
  for (int c : chans)
    if (c < 0 || c >= r.channels)
      throw contract_error("write_ppm: channel index out of range");
  float lo[3], hi[3];
  for (int i = 0; i < 3; ++i) {
    const float* p = r.plane(chans[i]);
    lo[i] = hi[i] = p[0];
    for (std::int64_t j = 1; j < r.plane_size(); ++j) {
      lo[i] = std::min(lo[i], p[j]);
      hi[i] = std::max(hi[i], p[j]);
    }
  }
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(r.plane_size()) * 3);
  for (std::int64_t j = 0; j < r.plane_size(); ++j)
    for (int i = 0; i < 3; ++i) {
      float v = r.plane(chans[i])[j];
      float s = hi[i] > lo[i] ? (v - lo[i]) / (hi[i] - lo[i]) : 0.f;
      rgb[static_cast<std::size_t>(j) * 3 + i] = static_cast<std::uint8_t>(s * 255.f + 0.5f);
    }
  if (overlay) {
    for (std::int64_t j = 0; j < r.plane_size(); ++j) {
      std::int32_t id = overlay->labels[static_cast<std::size_t>(j)];
      if (id == 0) continue;
      std::uint64_t h = mix_seed(static_cast<std::uint64_t>(id));
      std::uint8_t col[3] = {static_cast<std::uint8_t>(64 + (h & 0xbf)),
                             static_cast<std::uint8_t>(64 + ((h >> 8) & 0xbf)),
                             static_cast<std::uint8_t>(64 + ((h >> 16) & 0xbf))};
      for (int i = 0; i < 3; ++i)
        rgb[static_cast<std::size_t>(j) * 3 + i] =
            static_cast<std::uint8_t>((rgb[static_cast<std::size_t>(j) * 3 + i] + col[i]) / 2);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");
  out << "P6\n" << r.width << " " << r.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw io_error("write failed for " + path.string());
}

}  // namespace terrace
