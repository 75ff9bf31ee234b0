#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "oracles.hpp"
#include "terrace/preprocess.hpp"

using namespace terrace;

TEST_CASE("normalize matches hand arithmetic on an 11-bit channel", "[preprocess]") {
  raster img(3, 1, 2, "image");
  // channel 0 spans the 11-bit range [0, 2047]; probe pixel holds 1023
  img.at(0, 0, 0) = 0.f;
  img.at(0, 0, 1) = 2047.f;
  img.at(1, 0, 0) = 0.f;
  img.at(1, 0, 1) = 1.f;
  img.at(2, 0, 0) = 0.f;
  img.at(2, 0, 1) = 1.f;
  auto stats = compute_stats(img);
  img.at(0, 0, 0) = 1023.f;
  auto out = normalize(img, stats);
  double minmax = 1023.0 / 2047.0;  // hand oracle
  CHECK(minmax == Catch::Approx(0.49976).margin(1e-5));
  double expected = (minmax - 0.485) / 0.229;
  CHECK(expected == Catch::Approx(0.06444).margin(1e-5));
  CHECK(out.at(0, 0, 0) == Catch::Approx(expected).margin(1e-6));
}

TEST_CASE("constant channels normalize to zero", "[preprocess]") {
  raster img(1, 2, 2, "image");
  for (auto& v : img.data) v = 7.25f;
  auto out = normalize(img, compute_stats(img));
  for (float v : out.data) CHECK(v == 0.f);
}

TEST_CASE("multispectral channels keep their min-max values", "[preprocess]") {
  raster img(11, 2, 3, "image");
  std::mt19937 rng(5);
  for (auto& v : img.data) v = static_cast<float>(rng() % 1000);
  auto out = normalize(img, compute_stats(img));
  auto stats = compute_stats(img);
  for (int c = 3; c < 11; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 3; ++x) {
        float lo = stats.x_min[static_cast<std::size_t>(c)];
        float hi = stats.x_max[static_cast<std::size_t>(c)];
        float mm = (img.at(c, y, x) - lo) / (hi - lo);
        CHECK(out.at(c, y, x) == Catch::Approx(mm).margin(1e-6));
      }
}

TEST_CASE("normalize rejects mismatched stats and double application", "[preprocess]") {
  raster img(4, 2, 2, "image");
  CHECK_THROWS_AS(normalize(img, normalization_stats::for_channels(3)), contract_error);
  auto once = normalize(img, compute_stats(img));
  CHECK_THROWS_AS(normalize(once, compute_stats(img)), contract_error);
}

TEST_CASE("650x650 pads to 672x672 with 11 pixels per side", "[preprocess]") {
  raster img(1, 650, 650);
  auto [padded, rec] = pad_to_grid(img);
  CHECK(padded.height == 672);
  CHECK(padded.width == 672);
  CHECK(rec.top == 11);
  CHECK(rec.bottom == 11);
  CHECK(rec.left == 11);
  CHECK(rec.right == 11);
}

TEST_CASE("aligned sizes are untouched and odd splits favor bottom/right", "[preprocess]") {
  raster aligned(1, 672, 672);
  auto [p1, r1] = pad_to_grid(aligned);
  CHECK(r1.zero());
  CHECK(p1.height == 672);

  raster odd(1, 33, 64);
  auto [p2, r2] = pad_to_grid(odd);
  CHECK(p2.height == 64);
  CHECK(p2.width == 64);
  CHECK(r2.top == 15);
  CHECK(r2.bottom == 16);
  CHECK(r2.left == 0);
  CHECK(r2.right == 0);
}

TEST_CASE("pad/crop round trip is the identity for all sizes", "[preprocess]") {
  std::mt19937_64 rng(17);
  for (int s = 1; s <= 700; ++s) {
    int h = s;
    int w = 1 + static_cast<int>(rng() % 700);
    raster img(1, h, w);
    for (auto& v : img.data) v = static_cast<float>(rng() % 4096);
    auto [padded, rec] = pad_to_grid(img);
    CHECK(padded.height % 32 == 0);
    CHECK(padded.width % 32 == 0);
    auto back = crop_back(padded, rec);
    REQUIRE(back.height == h);
    REQUIRE(back.width == w);
    if (back.data != img.data) {
      FAIL("content mismatch at size " << h << "x" << w);
    }
  }
}

TEST_CASE("reflection padding introduces no new values", "[preprocess]") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    int h = 1 + static_cast<int>(rng() % 40);
    int w = 1 + static_cast<int>(rng() % 40);
    raster img(2, h, w);
    for (auto& v : img.data) v = static_cast<float>(rng() % 97);
    auto [padded, rec] = pad_to_grid(img);
    for (int c = 0; c < 2; ++c) {
      std::set<float> allowed(img.plane(c), img.plane(c) + img.plane_size());
      for (std::int64_t i = 0; i < padded.plane_size(); ++i)
        if (!allowed.count(padded.plane(c)[i])) {
          FAIL("padded value not drawn from source channel");
        }
    }
  }
}

TEST_CASE("crop_back rejects inconsistent records", "[preprocess]") {
  raster img(1, 40, 40);
  auto [padded, rec] = pad_to_grid(img);
  pad_record wrong = rec;
  wrong.top += 1;
  CHECK_THROWS_AS(crop_back(padded, wrong), contract_error);

  auto t = tensor<float>::zeros({1, 2, 64, 64});
  CHECK_THROWS_AS(crop_back(t, wrong), contract_error);
}

TEST_CASE("tensor crop_back recovers the content window", "[preprocess]") {
  raster img(2, 30, 41, "image");
  std::mt19937_64 rng(3);
  for (auto& v : img.data) v = static_cast<float>(rng() % 100);
  auto [padded, rec] = pad_to_grid(img);
  auto t = to_tensor<float>(padded);
  auto cropped = crop_back(t, rec);
  REQUIRE(cropped.h() == 30);
  REQUIRE(cropped.w() == 41);
  auto back = to_raster(cropped, 0, "image");
  CHECK(back.data == img.data);
}
