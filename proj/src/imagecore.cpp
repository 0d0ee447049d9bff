#include "sara/imagecore.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>

#include "sara/ops.hpp"

namespace sara {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, kLabelCount> kPalette{{
    {0, 0, 0},    // background
    {0, 255, 0},  // skin
    {255, 0, 0},  // lip
    {0, 0, 255},  // eyes
}};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

struct PngRaster {
  int width = 0;
  int height = 0;
  int color_type = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> pixels;  // row-major, tightly packed
  std::vector<std::array<std::uint8_t, 3>> palette;
};

struct ReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t offset;
};

void read_callback(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + n > cur->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->bytes->data() + cur->offset, n);
  cur->offset += n;
}

void write_callback(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void flush_callback(png_structp) {}

// libpng reports errors by longjmp; the message is parked in the error pointer.
[[noreturn]] void error_callback(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<std::string*>(png_get_error_ptr(png));
  if (sink) *sink = msg;
  png_longjmp(png, 1);
}
void warning_callback(png_structp, png_const_charp) {}

PngRaster decode_raster(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
    throw FormatError("not a PNG stream");
  std::string message;
  PngRaster r;
  std::vector<png_bytep> rows;
  ReadCursor cur{&bytes, 0};
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, error_callback, warning_callback);
  if (!png) throw FormatError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG: " + message);
  }
  png_set_read_fn(png, &cur, read_callback);
  png_read_info(png, info);
  r.width = int(png_get_image_width(png, info));
  r.height = int(png_get_image_height(png, info));
  r.color_type = png_get_color_type(png, info);
  r.bit_depth = png_get_bit_depth(png, info);
  if (r.color_type == PNG_COLOR_TYPE_PALETTE) {
    png_colorp pal = nullptr;
    int n = 0;
    png_get_PLTE(png, info, &pal, &n);
    for (int i = 0; i < n; ++i) r.palette.push_back({pal[i].red, pal[i].green, pal[i].blue});
    if (r.bit_depth < 8) png_set_packing(png);
  }
  png_read_update_info(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  r.pixels.resize(rowbytes * r.height);
  rows.resize(r.height);
  for (int y = 0; y < r.height; ++y) rows[y] = r.pixels.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return r;
}

std::vector<std::uint8_t> encode_raster(int width, int height, int color_type,
                                        const std::vector<std::uint8_t>& pixels, int channels,
                                        bool with_palette) {
  std::string message;
  std::vector<std::uint8_t> out;
  std::vector<png_bytep> rows(height);
  std::array<png_color, kLabelCount> pal{};
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, error_callback, warning_callback);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed: " + message);
  }
  png_set_write_fn(png, &out, write_callback, flush_callback);
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (with_palette) {
    for (int i = 0; i < kLabelCount; ++i) pal[i] = {kPalette[i][0], kPalette[i][1], kPalette[i][2]};
    png_set_PLTE(png, info, pal.data(), kLabelCount);
  }
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(pixels.data() + std::size_t(y) * width * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

template <class S>
Grid<S> resize_grid(const Grid<S>& grid, int h, int w, ResizeMode mode) {
  if (h < 1 || w < 1) throw ArgumentError("resize: target size must be positive");
  if (mode == ResizeMode::bilinear) {
    ad::NoGradGuard guard;
    return ad::resize_bilinear(ad::constant<S>(grid), h, w).grid();
  }
  Grid<S> out(grid.channels(), h, w);
  for (int y = 0; y < h; ++y) {
    const int sy = std::min(grid.height - 1, int(std::floor((y + 0.5) * grid.height / h)));
    for (int x = 0; x < w; ++x) {
      const int sx = std::min(grid.width - 1, int(std::floor((x + 0.5) * grid.width / w)));
      out.data.col(Eigen::Index(y) * w + x) = grid.data.col(Eigen::Index(sy) * grid.width + sx);
    }
  }
  return out;
}

}  // namespace

const char* region_name(Region r) {
  switch (r) {
    case Region::background: return "background";
    case Region::skin: return "skin";
    case Region::lip: return "lip";
    case Region::eyes: return "eyes";
  }
  return "?";
}

Region parse_region(const std::string& name) {
  if (name == "skin") return Region::skin;
  if (name == "lip") return Region::lip;
  if (name == "eyes") return Region::eyes;
  if (name == "background") return Region::background;
  throw ArgumentError("unknown region '" + name + "'");
}

int style_column(Region r) {
  for (int i = 0; i < int(kMakeupRegions.size()); ++i)
    if (kMakeupRegions[i] == r) return i;
  throw ArgumentError("background has no style column");
}

std::size_t LabelMap::count(Region r) const {
  return std::size_t(std::count(labels.begin(), labels.end(), std::uint8_t(r)));
}

RegionMask region_mask(const LabelMap& map, Region region) {
  if (std::uint8_t(region) >= kLabelCount || region == Region::background)
    throw ArgumentError("region_mask: region must be skin, lip or eyes");
  RegionMask m(1, map.height, map.width);
  for (std::size_t i = 0; i < map.labels.size(); ++i)
    m.data(0, Eigen::Index(i)) = map.labels[i] == std::uint8_t(region) ? 1.0f : 0.0f;
  return m;
}

Grid<float> resize(const Grid<float>& grid, int h, int w, ResizeMode mode) {
  return resize_grid(grid, h, w, mode);
}

Grid<double> resize(const Grid<double>& grid, int h, int w, ResizeMode mode) {
  return resize_grid(grid, h, w, mode);
}

LabelMap resize(const LabelMap& map, int h, int w, ResizeMode mode) {
  if (mode != ResizeMode::nearest) throw ArgumentError("label maps only resize with nearest");
  if (h < 1 || w < 1) throw ArgumentError("resize: target size must be positive");
  LabelMap out(h, w);
  for (int y = 0; y < h; ++y) {
    const int sy = std::min(map.height - 1, int(std::floor((y + 0.5) * map.height / h)));
    for (int x = 0; x < w; ++x) {
      const int sx = std::min(map.width - 1, int(std::floor((x + 0.5) * map.width / w)));
      out.set(y, x, map.at(sy, sx));
    }
  }
  return out;
}

std::uint8_t encode_byte(float value) {
  const double scaled = (double(value) + 1.0) * 0.5 * 255.0;
  const double rounded = std::floor(scaled + 0.5);
  return std::uint8_t(std::clamp(rounded, 0.0, 255.0));
}

float decode_byte(std::uint8_t byte) { return float(2.0 * byte / 255.0 - 1.0); }

Image quantize(const Image& img) {
  Image out = img;
  out.data = img.data.unaryExpr([](float v) { return decode_byte(encode_byte(v)); });
  return out;
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.channels() != 3) throw FormatError("encode_png: image must have 3 channels");
  std::vector<std::uint8_t> px(std::size_t(img.pixels()) * 3);
  for (Eigen::Index p = 0; p < img.pixels(); ++p)
    for (int c = 0; c < 3; ++c) px[std::size_t(p) * 3 + c] = encode_byte(img.data(c, p));
  return encode_raster(img.width, img.height, PNG_COLOR_TYPE_RGB, px, 3, false);
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  PngRaster r = decode_raster(bytes);
  if (r.color_type != PNG_COLOR_TYPE_RGB || r.bit_depth != 8)
    throw FormatError("expected an 8-bit RGB PNG");
  Image img(3, r.height, r.width);
  for (Eigen::Index p = 0; p < img.pixels(); ++p)
    for (int c = 0; c < 3; ++c) img.data(c, p) = decode_byte(r.pixels[std::size_t(p) * 3 + c]);
  return img;
}

std::vector<std::uint8_t> encode_label_png(const LabelMap& map) {
  for (auto l : map.labels)
    if (l >= kLabelCount) throw FormatError("label map contains an unknown label");
  return encode_raster(map.width, map.height, PNG_COLOR_TYPE_PALETTE, map.labels, 1, true);
}

LabelMap decode_label_png(const std::vector<std::uint8_t>& bytes) {
  PngRaster r = decode_raster(bytes);
  auto label_of = [](const std::array<std::uint8_t, 3>& rgb) {
    for (int i = 0; i < kLabelCount; ++i)
      if (kPalette[i] == rgb) return std::uint8_t(i);
    throw FormatError("label map color is not in the label palette");
  };
  LabelMap map(r.height, r.width);
  const std::size_t n = std::size_t(r.width) * r.height;
  if (r.color_type == PNG_COLOR_TYPE_PALETTE) {
    std::vector<std::uint8_t> lut;
    for (const auto& c : r.palette) lut.push_back(label_of(c));
    for (std::size_t i = 0; i < n; ++i) {
      if (r.pixels[i] >= lut.size()) throw FormatError("palette index out of range");
      map.labels[i] = lut[r.pixels[i]];
    }
  } else if (r.color_type == PNG_COLOR_TYPE_RGB && r.bit_depth == 8) {
    for (std::size_t i = 0; i < n; ++i)
      map.labels[i] = label_of({r.pixels[3 * i], r.pixels[3 * i + 1], r.pixels[3 * i + 2]});
  } else {
    throw FormatError("label map must be a paletted or 8-bit RGB PNG");
  }
  return map;
}

Image load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing image file " + path.string());
  return decode_png(read_file(path));
}

Image load_image(const std::filesystem::path& path, int resolution) {
  Image img = load_image(path);
  if (img.height == resolution && img.width == resolution) return img;
  return resize(img, resolution, resolution, ResizeMode::bilinear);
}

void save_image(const Image& img, const std::filesystem::path& path) {
  write_file(path, encode_png(img));
}

void save_label_map(const LabelMap& map, const std::filesystem::path& path) {
  write_file(path, encode_label_png(map));
}

LabelMap load_label_map(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing label map " + path.string());
  return decode_label_png(read_file(path));
}

}  // namespace sara
