#include "sara/synthfaces.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace sara::synth {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }

 private:
  std::mt19937_64 rng_;
};

Ellipse attach(const Ellipse& face, double ox, double oy, double ax, double ay) {
  const double c = std::cos(face.angle_deg * kDeg), s = std::sin(face.angle_deg * kDeg);
  const double lx = ox * face.ax, ly = oy * face.ay;
  return {face.cx + c * lx - s * ly, face.cy + s * lx + c * ly, ax * face.ax, ay * face.ay,
          face.angle_deg};
}

Rgb palette_color(Draw& d, double h_lo, double h_hi, double s_lo, double s_hi, double v_lo,
                  double v_hi) {
  double h = d.uniform(h_lo, h_hi);
  h = std::fmod(h + 360.0, 360.0);
  return hsv_to_rgb({h, d.uniform(s_lo, s_hi), d.uniform(v_lo, v_hi)});
}

// (x, y) on the canvas -> point in the spec frame.
std::pair<double, double> inverse_pose(const PoseTransform& p, double x, double y) {
  const double c = std::cos(p.rotation_deg * kDeg), s = std::sin(p.rotation_deg * kDeg);
  const double dx = (x - 0.5 - p.tx) / p.scale, dy = (y - 0.5 - p.ty) / p.scale;
  return {0.5 + c * dx + s * dy, 0.5 - s * dx + c * dy};
}

std::pair<double, double> forward_pose(const PoseTransform& p, double x, double y) {
  const double c = std::cos(p.rotation_deg * kDeg), s = std::sin(p.rotation_deg * kDeg);
  const double dx = (x - 0.5) * p.scale, dy = (y - 0.5) * p.scale;
  return {0.5 + p.tx + c * dx - s * dy, 0.5 + p.ty + s * dx + c * dy};
}

Region classify(const FaceSpec& f, double x, double y) {
  if (!f.face.contains(x, y)) return Region::background;
  for (const auto& e : f.eyes)
    if (e.contains(x, y)) return Region::eyes;
  for (const auto& e : f.shadows)
    if (e.contains(x, y)) return Region::eyes;
  if (f.lip.contains(x, y)) return Region::lip;
  return Region::skin;
}

std::string format_id(Domain d, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d", domain_name(d), i);
  return buf;
}

}  // namespace

const char* domain_name(Domain d) { return d == Domain::x ? "x" : "y"; }

Domain parse_domain(const std::string& s) {
  if (s == "x" || s == "X") return Domain::x;
  if (s == "y" || s == "Y") return Domain::y;
  throw ArgumentError("unknown domain '" + s + "'");
}

Rgb hsv_to_rgb(const Hsv& c) {
  const double h = std::fmod(std::fmod(c.h, 360.0) + 360.0, 360.0) / 60.0;
  const int sector = int(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double p = c.v * (1 - c.s), q = c.v * (1 - c.s * f), t = c.v * (1 - c.s * (1 - f));
  switch (sector) {
    case 0: return {c.v, t, p};
    case 1: return {q, c.v, p};
    case 2: return {p, c.v, t};
    case 3: return {p, q, c.v};
    case 4: return {t, p, c.v};
    default: return {c.v, p, q};
  }
}

Hsv rgb_to_hsv(const Rgb& c) {
  const double mx = std::max({c.r, c.g, c.b}), mn = std::min({c.r, c.g, c.b});
  const double d = mx - mn;
  Hsv out{0, mx > 0 ? d / mx : 0, mx};
  if (d > 0) {
    if (mx == c.r)
      out.h = 60 * std::fmod((c.g - c.b) / d + 6, 6.0);
    else if (mx == c.g)
      out.h = 60 * ((c.b - c.r) / d + 2);
    else
      out.h = 60 * ((c.r - c.g) / d + 4);
  }
  return out;
}

bool Ellipse::contains(double x, double y) const {
  const double c = std::cos(angle_deg * kDeg), s = std::sin(angle_deg * kDeg);
  const double dx = x - cx, dy = y - cy;
  const double u = c * dx + s * dy, v = -s * dx + c * dy;
  return (u * u) / (ax * ax) + (v * v) / (ay * ay) <= 1.0;
}

FaceSpec sample_spec(std::uint64_t seed, Domain domain) {
  FaceSpec f;
  Draw geo(mix(seed));
  f.face = {0.5 + geo.uniform(-0.03, 0.03), 0.5 + geo.uniform(-0.03, 0.03), geo.uniform(0.26, 0.31),
            geo.uniform(0.33, 0.38), geo.uniform(-5, 5)};
  f.lip = attach(f.face, geo.uniform(-0.03, 0.03), geo.uniform(0.5, 0.6), geo.uniform(0.28, 0.38),
                 geo.uniform(0.1, 0.14));
  const double eye_dx = geo.uniform(0.36, 0.44), eye_dy = -geo.uniform(0.12, 0.22);
  const double eye_ax = geo.uniform(0.15, 0.2), eye_ay = geo.uniform(0.07, 0.09);
  const double band_ax = eye_ax * geo.uniform(1.15, 1.35), band_ay = eye_ay * geo.uniform(1.2, 1.5);
  const double band_dy = eye_dy - eye_ay * geo.uniform(1.4, 1.8);
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? -1.0 : 1.0;
    f.eyes[side] = attach(f.face, sx * eye_dx, eye_dy, eye_ax, eye_ay);
    f.shadows[side] = attach(f.face, sx * eye_dx, band_dy, band_ax, band_ay);
  }

  Draw pal(mix(seed ^ (domain == Domain::x ? 0x5851F42D4C957F2Dull : 0x14057B7EF767814Full)));
  f.skin = palette_color(pal, 18, 35, 0.25, 0.5, 0.72, 0.95);
  f.background = palette_color(pal, 180, 240, 0.05, 0.3, 0.15, 0.45);
  if (domain == Domain::y) {
    f.lip_color = palette_color(pal, -25, 10, 0.62, 0.95, 0.55, 0.9);
    const int family = pal.pick(3);
    const double lo[3] = {200, 265, 15}, hi[3] = {240, 310, 35};
    f.eye_color = palette_color(pal, lo[family], hi[family], 0.5, 0.9, 0.35, 0.7);
  } else {
    f.lip_color = palette_color(pal, -20, 15, 0.12, 0.28, 0.5, 0.7);
    f.eye_color = palette_color(pal, 15, 40, 0.05, 0.25, 0.25, 0.45);
  }
  return f;
}

PoseTransform sample_pose(std::uint64_t seed, int attempt) {
  Draw d(mix(mix(seed) + 0xD1B54A32D192ED03ull * std::uint64_t(attempt + 1)));
  PoseTransform p;
  p.rotation_deg = d.uniform(-20, 20);
  p.tx = d.uniform(-0.1, 0.1);
  p.ty = d.uniform(-0.1, 0.1);
  p.scale = d.uniform(0.9, 1.1);
  return p;
}

bool face_on_canvas(const FaceSpec& spec, const PoseTransform& pose) {
  const auto& e = spec.face;
  const double c = std::cos(e.angle_deg * kDeg), s = std::sin(e.angle_deg * kDeg);
  for (int i = 0; i < 360; ++i) {
    const double t = i * kDeg;
    const double lx = e.ax * std::cos(t), ly = e.ay * std::sin(t);
    const auto [x, y] = forward_pose(pose, e.cx + c * lx - s * ly, e.cy + s * lx + c * ly);
    if (x < 0 || x > 1 || y < 0 || y > 1) return false;
  }
  return true;
}

Rendered render(const FaceSpec& spec, const PoseTransform& pose, int resolution,
                const RenderOptions& options) {
  if (resolution < 1) throw ArgumentError("render: resolution must be positive");
  if (!face_on_canvas(spec, pose)) throw GenerationError("pose moves the face off the canvas");
  Rendered out{Image(3, resolution, resolution), LabelMap(resolution, resolution)};
  const std::array<Rgb, kLabelCount> colors{spec.background, spec.skin, spec.lip_color,
                                            spec.eye_color};
  std::mt19937_64 noise_rng(options.texture_seed);
  std::uniform_real_distribution<double> noise(-options.texture_amplitude, options.texture_amplitude);
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      const auto [qx, qy] = inverse_pose(pose, (x + 0.5) / resolution, (y + 0.5) / resolution);
      const Region r = classify(spec, qx, qy);
      out.labels.set(y, x, r);
      const Rgb& c = colors[std::size_t(r)];
      const double rgb[3] = {c.r, c.g, c.b};
      for (int ch = 0; ch < 3; ++ch) {
        double v = 2.0 * rgb[ch] - 1.0;
        if (options.texture) v += noise(noise_rng);
        out.image.at(ch, y, x) = float(std::clamp(v, -1.0, 1.0));
      }
    }
  return out;
}

Sample make_sample(std::uint64_t seed, Domain domain, int resolution, bool random_pose,
                   const RenderOptions& options) {
  Sample s;
  s.seed = seed;
  s.domain = domain;
  s.spec = sample_spec(seed, domain);
  for (int attempt = 0; attempt < 200; ++attempt) {
    s.pose = random_pose ? sample_pose(seed, attempt) : PoseTransform{};
    if (!face_on_canvas(s.spec, s.pose)) continue;
    Rendered r = render(s.spec, s.pose, resolution, options);
    bool ok = true;
    for (Region reg : kMakeupRegions) ok = ok && r.labels.count(reg) >= kMinRegionPixels;
    if (!ok) {
      if (!random_pose) break;
      continue;
    }
    s.image = std::move(r.image);
    s.labels = std::move(r.labels);
    return s;
  }
  throw GenerationError("could not place a face with non-degenerate regions for seed " +
                        std::to_string(seed));
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, Domain d, int index) {
  return (mix(dataset_seed) >> 20) * 2 + std::uint64_t(index) * 2 + (d == Domain::y ? 1 : 0);
}

std::vector<const ManifestEntry*> Manifest::select(Domain d, const std::string& split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.domain == d && (split.empty() || e.split == split)) out.push_back(&e);
  return out;
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "# id\tdomain\timage_path\tmask_path\tseed\tsplit\n";
  for (const auto& e : m.entries)
    out << e.id << '\t' << domain_name(e.domain) << '\t' << e.image_path << '\t' << e.mask_path
        << '\t' << e.seed << '\t' << e.split << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path_or_dir) {
  std::filesystem::path path = path_or_dir;
  if (std::filesystem::is_directory(path)) path /= kManifestName;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() < 5)
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected at least 5 fields");
    ManifestEntry e;
    e.id = f[0];
    e.domain = parse_domain(f[1]);
    e.image_path = f[2];
    e.mask_path = f[3];
    e.seed = std::stoull(f[4]);
    e.split = f.size() > 5 ? f[5] : "train";
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest generate_dataset(int n_pairs, std::uint64_t seed, const std::filesystem::path& out_dir,
                          int resolution) {
  if (n_pairs < 1) throw ArgumentError("generate_dataset: n_pairs must be at least 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec || !std::filesystem::is_directory(out_dir / "masks"))
    throw IoError("cannot create dataset directory " + out_dir.string());
  Manifest m;
  m.root = out_dir;
  const int n_test = n_pairs / 5;
  for (Domain d : {Domain::x, Domain::y})
    for (int i = 0; i < n_pairs; ++i) {
      const std::uint64_t s = sample_seed(seed, d, i);
      Sample sample = make_sample(s, d, resolution);
      ManifestEntry e;
      e.id = format_id(d, i);
      e.domain = d;
      e.image_path = "images/" + e.id + ".png";
      e.mask_path = "masks/" + e.id + ".png";
      e.seed = s;
      e.split = i >= n_pairs - n_test ? "test" : "train";
      save_image(sample.image, out_dir / e.image_path);
      save_label_map(sample.labels, out_dir / e.mask_path);
      m.entries.push_back(std::move(e));
    }
  write_manifest(m, out_dir / kManifestName);
  return m;
}

}  // namespace sara::synth
