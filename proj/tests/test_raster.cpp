#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "terrace/raster.hpp"

using namespace terrace;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto d = fs::temp_directory_path() / ("terrace_test_" + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

raster random_raster(int c, int h, int w, std::uint64_t seed) {
  raster r(c, h, w, "image");
  auto v = oracle::random_values<float>(r.size(), seed);
  r.data.assign(v.begin(), v.end());
  return r;
}

instance_map rasterize_back(const nlohmann::json& geo, int W, int H) {
  instance_map m(H, W);
  std::vector<int> buf(static_cast<std::size_t>(W) * H, 0);
  for (const auto& f : geo.at("features")) {
    int id = f.at("properties").at("instance_id").get<int>();
    std::vector<std::array<double, 2>> ring;
    for (const auto& pt : f.at("geometry").at("coordinates").at(0))
      ring.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
    ring.pop_back();  // drop the closing vertex
    oracle::rasterize_ring(ring, W, H, id, buf);
  }
  for (std::size_t i = 0; i < buf.size(); ++i) m.labels[i] = buf[i];
  return m;
}

}  // namespace

TEST_CASE("raster write/read round trip is bit exact", "[raster]") {
  auto dir = temp_dir("roundtrip");
  auto r = random_raster(3, 7, 5, 11);
  write_raster(dir / "a.rst", r);
  auto back = read_raster(dir / "a.rst");
  CHECK(back.width == r.width);
  CHECK(back.height == r.height);
  CHECK(back.channels == r.channels);
  CHECK(back.semantic == r.semantic);
  REQUIRE(back.data.size() == r.data.size());
  CHECK(std::memcmp(back.data.data(), r.data.data(), r.data.size() * 4) == 0);
}

TEST_CASE("blob shorter than the header implies is a truncation error", "[raster]") {
  auto dir = temp_dir("trunc");
  auto r = random_raster(4, 3, 3, 2);
  write_raster(dir / "a.rst", r);
  // rewrite the blob with only 3 of the 4 channels
  std::ofstream(dir / "a.rst", std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(r.data.data()), 3 * 3 * 3 * 4);
  CHECK_THROWS_AS(read_raster(dir / "a.rst"), truncation_error);
}

TEST_CASE("missing or corrupt sidecars are format errors", "[raster]") {
  auto dir = temp_dir("header");
  CHECK_THROWS_AS(read_raster(dir / "missing.rst"), format_error);
  std::ofstream(dir / "bad.rst") << "blob";
  std::ofstream(dir / "bad.rst.json") << "{ not json";
  CHECK_THROWS_AS(read_raster(dir / "bad.rst"), format_error);
  std::ofstream(dir / "keys.rst") << "blob";
  std::ofstream(dir / "keys.rst.json") << "{\"width\": 2}";
  CHECK_THROWS_AS(read_raster(dir / "keys.rst"), format_error);
}

TEST_CASE("650x650x11 container stores exactly 18590000 data bytes", "[raster]") {
  auto dir = temp_dir("size");
  raster r(11, 650, 650, "image");
  write_raster(dir / "tile.rst", r);
  std::int64_t expected = 650LL * 650LL * 11LL * 4LL;  // independent size computation
  CHECK(expected == 18590000);
  CHECK(static_cast<std::int64_t>(fs::file_size(dir / "tile.rst")) == expected);
}

TEST_CASE("instance map round trip", "[raster]") {
  auto dir = temp_dir("imap");
  instance_map m(4, 5);
  m.at(0, 0) = 1;
  m.at(3, 4) = 7;
  write_instance_map(dir / "m.imap", m);
  auto back = read_instance_map(dir / "m.imap");
  CHECK(back.labels == m.labels);
  CHECK(back.width == 5);
  CHECK(back.height == 4);
}

TEST_CASE("empty map gives an empty feature collection", "[raster]") {
  instance_map m(8, 8);
  auto geo = instances_to_geojson(m);
  CHECK(geo.at("type") == "FeatureCollection");
  CHECK(geo.at("features").size() == 0);
}

TEST_CASE("a 2x2 square polygonizes to its pixel bounds", "[raster]") {
  instance_map m(4, 4);
  m.at(0, 0) = m.at(0, 1) = m.at(1, 0) = m.at(1, 1) = 1;
  auto geo = instances_to_geojson(m);
  REQUIRE(geo.at("features").size() == 1);
  const auto& f = geo.at("features").at(0);
  CHECK(f.at("properties").at("instance_id") == 1);
  const auto& ring = f.at("geometry").at("coordinates").at(0);
  REQUIRE(ring.size() == 5);  // 4 corners + closure
  CHECK(ring.front() == ring.back());
  double area2 = 0;
  std::int64_t minx = 99, miny = 99, maxx = -1, maxy = -1;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    double x0 = ring.at(i).at(0), y0 = ring.at(i).at(1);
    double x1 = ring.at(i + 1).at(0), y1 = ring.at(i + 1).at(1);
    area2 += x0 * y1 - x1 * y0;
    minx = std::min<std::int64_t>(minx, static_cast<std::int64_t>(x0));
    maxx = std::max<std::int64_t>(maxx, static_cast<std::int64_t>(x0));
    miny = std::min<std::int64_t>(miny, static_cast<std::int64_t>(y0));
    maxy = std::max<std::int64_t>(maxy, static_cast<std::int64_t>(y0));
  }
  CHECK(area2 > 0);  // counterclockwise
  CHECK(area2 / 2 == 4.0);
  CHECK(minx == 0);
  CHECK(miny == 0);
  CHECK(maxx == 2);
  CHECK(maxy == 2);
}

TEST_CASE("two disjoint rectangles rasterize back exactly", "[raster]") {
  instance_map m(10, 12);
  for (int y = 1; y < 4; ++y)
    for (int x = 2; x < 7; ++x) m.at(y, x) = 1;
  for (int y = 6; y < 9; ++y)
    for (int x = 8; x < 11; ++x) m.at(y, x) = 2;
  auto geo = instances_to_geojson(m);
  REQUIRE(geo.at("features").size() == 2);
  auto back = rasterize_back(geo, m.width, m.height);
  CHECK(back.labels == m.labels);
}

TEST_CASE("polygonize/rasterize round trip on random hole-free scenes", "[raster]") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    std::mt19937_64 rng(seed * 101 + 3);
    int W = 16 + static_cast<int>(rng() % 17);
    int H = 16 + static_cast<int>(rng() % 17);
    instance_map m(H, W);
    int placed = 0;
    for (int attempt = 0; attempt < 30 && placed < 5; ++attempt) {
      int w = 2 + static_cast<int>(rng() % 6);
      int h = 2 + static_cast<int>(rng() % 6);
      int x0 = static_cast<int>(rng() % static_cast<std::uint64_t>(W - w));
      int y0 = static_cast<int>(rng() % static_cast<std::uint64_t>(H - h));
      bool free = true;
      for (int y = y0; y < y0 + h && free; ++y)
        for (int x = x0; x < x0 + w && free; ++x)
          if (m.at(y, x) != 0) free = false;
      if (!free) continue;
      ++placed;
      for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) m.at(y, x) = placed;
    }
    auto back = rasterize_back(instances_to_geojson(m), W, H);
    CHECK(back.labels == m.labels);
  }
}

TEST_CASE("pinched and concave shapes survive the round trip", "[raster]") {
  // L-shape
  instance_map a(6, 6);
  for (int y = 1; y < 5; ++y) a.at(y, 1) = 1;
  for (int x = 1; x < 5; ++x) a.at(4, x) = 1;
  CHECK(rasterize_back(instances_to_geojson(a), 6, 6).labels == a.labels);
  // diagonal pinch: two blocks joined through a corner-adjacent bridge pixel
  instance_map b(5, 5);
  b.at(0, 0) = b.at(0, 1) = b.at(1, 0) = b.at(1, 1) = 1;
  b.at(2, 1) = 1;
  b.at(2, 2) = b.at(3, 2) = b.at(3, 3) = 1;
  CHECK(rasterize_back(instances_to_geojson(b), 5, 5).labels == b.labels);
}

TEST_CASE("compact_labels renumbers in scan order", "[raster]") {
  instance_map m(2, 3);
  m.at(0, 1) = 9;
  m.at(1, 0) = 4;
  m.at(1, 2) = 9;
  auto c = compact_labels(m);
  CHECK(c.at(0, 1) == 1);
  CHECK(c.at(1, 0) == 2);
  CHECK(c.at(1, 2) == 1);
}

TEST_CASE("ppm export writes a well-formed P6 file", "[raster]") {
  auto dir = temp_dir("ppm");
  auto r = random_raster(3, 6, 9, 4);
  write_ppm(dir / "img.ppm", r);
  std::ifstream bytes(dir / "img.ppm", std::ios::binary);
  std::string magic, wh1, wh2, maxv;
  bytes >> magic >> wh1 >> wh2 >> maxv;
  CHECK(magic == "P6");
  CHECK(wh1 == "9");
  CHECK(wh2 == "6");
  CHECK(maxv == "255");
  CHECK(fs::file_size(dir / "img.ppm") >= 9 * 6 * 3);
}
