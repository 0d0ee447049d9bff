#pragma once

// Small models and rendered faces shared by the trainer, control and service
// suites.

#include <filesystem>

#include "sara/synthfaces.hpp"
#include "sara/trainer.hpp"

namespace fixture {

/// Narrow everything that is not pinned by the layout so a step takes well
/// under a second at 32x32.
inline sara::TrainConfig tiny_config(std::uint64_t seed = 1) {
  sara::TrainConfig c;
  c.seed = seed;
  c.model.seed = seed;
  c.model.resolution = 32;
  c.model.generator.head_hidden = 8;
  c.model.generator.style_dim = 8;
  c.model.align.feature_channels = 16;
  c.model.align.hidden_channels = 8;
  c.model.critic.base_width = 8;
  return c;
}

inline sara::Face face(std::uint64_t seed, sara::synth::Domain d, int resolution = 32) {
  auto s = sara::synth::make_sample(seed, d, resolution);
  return {std::move(s.image), std::move(s.labels)};
}

inline sara::TrainData pairs(int n, int resolution = 32, std::uint64_t base = 100) {
  sara::TrainData d;
  for (int i = 0; i < n; ++i) {
    d.x.push_back(face(base + std::uint64_t(i), sara::synth::Domain::x, resolution));
    d.y.push_back(face(base + 50 + std::uint64_t(i), sara::synth::Domain::y, resolution));
  }
  return d;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "sara_test" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixture
