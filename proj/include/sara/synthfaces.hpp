#pragma once

// Procedural paired face/label generator for a non-makeup domain X and a
// makeup domain Y. Geometry depends only on the seed; palettes depend on the
// seed and the domain.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sara/imagecore.hpp"

namespace sara::synth {

enum class Domain { x, y };

const char* domain_name(Domain d);
Domain parse_domain(const std::string& s);

struct Rgb {
  double r = 0, g = 0, b = 0;  // in [0, 1]
};

struct Hsv {
  double h = 0, s = 0, v = 0;  // h in degrees
};

Rgb hsv_to_rgb(const Hsv& c);
Hsv rgb_to_hsv(const Rgb& c);

/// Ellipse in normalized canvas coordinates (x right, y down, both in [0,1]).
struct Ellipse {
  double cx = 0.5, cy = 0.5;
  double ax = 0.1, ay = 0.1;  // semi-axes
  double angle_deg = 0;

  bool contains(double x, double y) const;
};

struct FaceSpec {
  Ellipse face;
  Ellipse lip;
  std::array<Ellipse, 2> eyes;
  std::array<Ellipse, 2> shadows;  // eyeshadow bands, merged into the eyes region
  Rgb skin, lip_color, eye_color, background;
};

struct PoseTransform {
  double rotation_deg = 0;  // [-20, 20]
  double tx = 0, ty = 0;    // fraction of the canvas, [-0.1, 0.1]
  double scale = 1;         // [0.9, 1.1]
};

struct RenderOptions {
  bool texture = false;  // low-amplitude noise on top of the flat fill
  double texture_amplitude = 0.03;
  std::uint64_t texture_seed = 0;
};

FaceSpec sample_spec(std::uint64_t seed, Domain domain);
PoseTransform sample_pose(std::uint64_t seed, int attempt);

struct Rendered {
  Image image;
  LabelMap labels;
};

/// Rasterizes the spec under the pose. Labels are exact (no anti-aliasing);
/// region priority eyes > lip > skin > background.
Rendered render(const FaceSpec& spec, const PoseTransform& pose, int resolution,
                const RenderOptions& options = {});

/// True when the transformed face ellipse lies fully inside the canvas.
bool face_on_canvas(const FaceSpec& spec, const PoseTransform& pose);

struct Sample {
  std::string id;
  Domain domain = Domain::x;
  std::uint64_t seed = 0;
  FaceSpec spec;
  PoseTransform pose;
  Image image;
  LabelMap labels;
};

constexpr std::size_t kMinRegionPixels = 8;

/// Samples spec and pose for `seed`, re-drawing the pose until the face is on
/// canvas and every makeup region has at least kMinRegionPixels pixels.
Sample make_sample(std::uint64_t seed, Domain domain, int resolution, bool random_pose = true,
                   const RenderOptions& options = {});

struct ManifestEntry {
  std::string id;
  Domain domain = Domain::x;
  std::string image_path;  // relative to the manifest directory
  std::string mask_path;
  std::uint64_t seed = 0;
  std::string split;  // "train" | "test"
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> select(Domain d, const std::string& split) const;
  std::filesystem::path image_file(const ManifestEntry& e) const { return root / e.image_path; }
  std::filesystem::path mask_file(const ManifestEntry& e) const { return root / e.mask_path; }
};

constexpr const char* kManifestName = "manifest.tsv";

/// Writes n_pairs samples per domain plus manifest.tsv into out_dir. The last
/// n_pairs / 5 indices of each domain form the test split.
Manifest generate_dataset(int n_pairs, std::uint64_t seed, const std::filesystem::path& out_dir,
                          int resolution = 64);

Manifest load_manifest(const std::filesystem::path& path_or_dir);
void write_manifest(const Manifest& m, const std::filesystem::path& path);

/// Seed of the i-th sample of a domain in a dataset generated from `seed`.
std::uint64_t sample_seed(std::uint64_t dataset_seed, Domain d, int index);

}  // namespace sara::synth
