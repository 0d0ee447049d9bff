#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sara/tensor.hpp"

namespace sara {

enum class Region : std::uint8_t { background = 0, skin = 1, lip = 2, eyes = 3 };

constexpr int kLabelCount = 4;

/// Makeup regions in style-matrix column order.
constexpr std::array<Region, 3> kMakeupRegions{Region::lip, Region::skin, Region::eyes};

const char* region_name(Region r);
Region parse_region(const std::string& name);
/// Column of `r` in the style matrix; throws ArgumentError for background.
int style_column(Region r);

/// Per-pixel semantic labels in {0,1,2,3}.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(int h, int w, Region fill = Region::background)
      : height(h), width(w), labels(std::size_t(h) * w, std::uint8_t(fill)) {}

  Region at(int y, int x) const { return Region(labels[std::size_t(y) * width + x]); }
  void set(int y, int x, Region r) { labels[std::size_t(y) * width + x] = std::uint8_t(r); }
  std::size_t count(Region r) const;
  bool operator==(const LabelMap&) const = default;
};

enum class ResizeMode { bilinear, nearest };

RegionMask region_mask(const LabelMap& map, Region region);
/// Four-channel one-hot encoding (channel = label id).
template <class S>
Grid<S> one_hot(const LabelMap& map) {
  Grid<S> g(kLabelCount, map.height, map.width);
  for (std::size_t i = 0; i < map.labels.size(); ++i) g.data(map.labels[i], Eigen::Index(i)) = S(1);
  return g;
}

Grid<float> resize(const Grid<float>& grid, int h, int w, ResizeMode mode);
Grid<double> resize(const Grid<double>& grid, int h, int w, ResizeMode mode);
LabelMap resize(const LabelMap& map, int h, int w, ResizeMode mode = ResizeMode::nearest);

/// [-1,1] value to byte with round-half-up; out-of-range values saturate.
std::uint8_t encode_byte(float value);
float decode_byte(std::uint8_t byte);
/// Quantizes an image through its 8-bit encoding.
Image quantize(const Image& img);

Image load_image(const std::filesystem::path& path, int resolution);
/// Decodes without resizing.
Image load_image(const std::filesystem::path& path);
void save_image(const Image& img, const std::filesystem::path& path);

/// PNG encode/decode in memory (for the HTTP service).
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_label_png(const LabelMap& map);
LabelMap decode_label_png(const std::vector<std::uint8_t>& bytes);

/// Paletted PNG with palette {black, green, red, blue} for {bg, skin, lip, eyes}.
void save_label_map(const LabelMap& map, const std::filesystem::path& path);
LabelMap load_label_map(const std::filesystem::path& path);

}  // namespace sara
