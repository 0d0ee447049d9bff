#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "sara/imagecore.hpp"

using namespace sara;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "sara_test_imagecore";
  fs::create_directories(dir);
  return dir / name;
}

Image random_image(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Image img(3, h, w);
  for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data.data()[i] = u(rng);
  return img;
}

// Tent-kernel evaluation over every input pixel, half-pixel centers, edge clamp.
double bilinear_oracle(const Grid<double>& g, int c, int oy, int ox, int h, int w) {
  auto coord = [](int o, int in, int out) {
    return std::clamp((o + 0.5) * double(in) / out - 0.5, 0.0, double(in - 1));
  };
  const double sy = coord(oy, g.height, h), sx = coord(ox, g.width, w);
  double acc = 0;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      const double wy = std::max(0.0, 1.0 - std::abs(sy - y));
      const double wx = std::max(0.0, 1.0 - std::abs(sx - x));
      acc += wy * wx * g.at(c, y, x);
    }
  return acc;
}

}  // namespace

TEST_CASE("byte mapping endpoints and midpoint") {
  CHECK(decode_byte(255) == 1.0f);
  CHECK(decode_byte(0) == -1.0f);
  CHECK(decode_byte(128) == doctest::Approx(2.0 * 128 / 255 - 1).epsilon(1e-7));
  CHECK(encode_byte(0.0f) == 128);  // round-half-up
  CHECK(encode_byte(1.0f) == 255);
  CHECK(encode_byte(-1.0f) == 0);
  CHECK(encode_byte(3.0f) == 255);
  CHECK(encode_byte(-7.0f) == 0);
  for (int b = 0; b < 256; ++b) CHECK(encode_byte(decode_byte(std::uint8_t(b))) == b);
}

TEST_CASE("save/load round trip stays within one quantization step") {
  std::mt19937_64 rng(5);
  const Image img = random_image(rng, 13, 17);
  const auto path = scratch("roundtrip.png");
  save_image(img, path);
  const Image back = load_image(path);
  REQUIRE(back.height == 13);
  REQUIRE(back.width == 17);
  CHECK((back.data - img.data).cwiseAbs().maxCoeff() <= 1.0f / 255 + 1e-6f);

  SUBCASE("quantization is idempotent") {
    const Image q = quantize(img);
    CHECK(quantize(q).data == q.data);
    CHECK(back.data == q.data);
  }
}

TEST_CASE("constant zero image saves as byte 128") {
  const auto path = scratch("zero.png");
  save_image(Image(3, 4, 4), path);
  const Image back = load_image(path);
  for (Eigen::Index i = 0; i < back.data.size(); ++i) CHECK(encode_byte(back.data.data()[i]) == 128);
}

TEST_CASE("load_image resizes to the requested resolution") {
  const auto path = scratch("resize_on_load.png");
  save_image(Image::constant(3, 10, 6, 0.0f), path);
  const Image img = load_image(path, 8);
  CHECK(img.height == 8);
  CHECK(img.width == 8);
  CHECK(img.data.isApproxToConstant(decode_byte(128), 1e-6f));
}

TEST_CASE("missing and corrupt files raise typed errors") {
  CHECK_THROWS_AS(load_image(scratch("does_not_exist.png"), 8), IoError);
  const auto bad = scratch("not_a_png.png");
  {
    std::ofstream out(bad);
    out << "plain text";
  }
  CHECK_THROWS_AS(load_image(bad, 8), FormatError);
}

TEST_CASE("region masks") {
  SUBCASE("all background gives an empty lip mask") {
    LabelMap m(5, 5);
    CHECK(region_mask(m, Region::lip).data.sum() == 0.0f);
  }
  SUBCASE("a single lip pixel") {
    LabelMap m(5, 5);
    m.set(2, 3, Region::lip);
    const auto mask = region_mask(m, Region::lip);
    CHECK(mask.data.sum() == 1.0f);
    CHECK(mask.at(0, 2, 3) == 1.0f);
  }
  SUBCASE("three masks plus background partition the grid") {
    std::mt19937_64 rng(3);
    LabelMap m(9, 7);
    for (auto& l : m.labels) l = std::uint8_t(rng() % 4);
    Mat<float> total(1, Eigen::Index(m.labels.size()));
    for (std::size_t i = 0; i < m.labels.size(); ++i) total(0, Eigen::Index(i)) = m.labels[i] == 0 ? 1.0f : 0.0f;
    for (Region r : kMakeupRegions) {
      const auto mask = region_mask(m, r);
      CHECK(((mask.data.array() == 0.0f) || (mask.data.array() == 1.0f)).all());
      total += mask.data;
    }
    CHECK(total.isOnes());
  }
  SUBCASE("background and unknown ids are rejected") {
    CHECK_THROWS_AS(region_mask(LabelMap(2, 2), Region(9)), ArgumentError);
    CHECK_THROWS_AS(region_mask(LabelMap(2, 2), Region::background), ArgumentError);
  }
}

TEST_CASE("resize") {
  SUBCASE("bilinear keeps constant grids exact") {
    const Image c = Image::constant(3, 7, 5, 0.5f);
    for (auto [h, w] : {std::pair{1, 1}, {3, 11}, {14, 10}, {64, 64}})
      CHECK(resize(c, h, w, ResizeMode::bilinear).data.isApproxToConstant(0.5f, 0.0f));
  }
  SUBCASE("2x nearest upscale of a one-pixel mask gives a 2x2 block") {
    LabelMap m(3, 3);
    m.set(1, 1, Region::lip);
    const auto up = resize(m, 6, 6, ResizeMode::nearest);
    CHECK(up.count(Region::lip) == 4);
    for (int y = 2; y < 4; ++y)
      for (int x = 2; x < 4; ++x) CHECK(up.at(y, x) == Region::lip);
  }
  SUBCASE("nearest keeps the label set") {
    std::mt19937_64 rng(9);
    LabelMap m(16, 16);
    for (auto& l : m.labels) l = std::uint8_t(rng() % 4);
    for (auto l : resize(m, 5, 23).labels) CHECK(l < 4);
  }
  SUBCASE("bilinear label maps are rejected") {
    CHECK_THROWS_AS(resize(LabelMap(4, 4), 2, 2, ResizeMode::bilinear), ArgumentError);
  }
  SUBCASE("bilinear matches the tent-kernel oracle") {
    std::mt19937_64 rng(11);
    Grid<double> g(3, 12, 9);
    std::uniform_real_distribution<double> u(-1, 1);
    for (Eigen::Index i = 0; i < g.data.size(); ++i) g.data.data()[i] = u(rng);
    for (auto [h, w] : {std::pair{5, 4}, {12, 9}, {20, 31}, {3, 17}}) {
      const auto r = resize(g, h, w, ResizeMode::bilinear);
      double worst = 0;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) worst = std::max(worst, std::abs(r.at(c, y, x) - bilinear_oracle(g, c, y, x, h, w)));
      CHECK(worst <= 1e-12);
    }
  }
  SUBCASE("down then up on a smooth gradient stays close") {
    Grid<double> g(1, 32, 32);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) g.at(0, y, x) = (x + 2.0 * y) / 96.0;
    const auto back = resize(resize(g, 16, 16, ResizeMode::bilinear), 32, 32, ResizeMode::bilinear);
    // interior is linear, so only the clamped border can deviate
    double worst = 0;
    for (int y = 2; y < 30; ++y)
      for (int x = 2; x < 30; ++x) worst = std::max(worst, std::abs(back.at(0, y, x) - g.at(0, y, x)));
    CHECK(worst <= 1e-12);
    CHECK((back.data - g.data).cwiseAbs().maxCoeff() <= 3.0 / 96.0);
  }
}

TEST_CASE("label maps round trip through the paletted PNG") {
  std::mt19937_64 rng(21);
  LabelMap m(11, 8);
  for (auto& l : m.labels) l = std::uint8_t(rng() % 4);
  const auto path = scratch("labels.png");
  save_label_map(m, path);
  CHECK(load_label_map(path) == m);
  CHECK(decode_label_png(encode_label_png(m)) == m);
}

TEST_CASE("region names") {
  for (Region r : {Region::background, Region::skin, Region::lip, Region::eyes})
    CHECK(parse_region(region_name(r)) == r);
  CHECK(style_column(Region::lip) == 0);
  CHECK(style_column(Region::skin) == 1);
  CHECK(style_column(Region::eyes) == 2);
  CHECK_THROWS_AS(style_column(Region::background), ArgumentError);
  CHECK_THROWS_AS(parse_region("nose"), ArgumentError);
}
