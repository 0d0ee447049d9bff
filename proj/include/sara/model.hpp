#pragma once

// Full transfer network: alignment, style encoding, fusion generator, plus the
// two domain critics trained alongside it.

#include <cstdint>
#include <memory>

#include "sara/alignment.hpp"
#include "sara/critic.hpp"
#include "sara/generator.hpp"
#include "sara/regionstyle.hpp"

namespace sara {

struct ModelConfig {
  int resolution = 64;
  std::uint64_t seed = 1;
  align::AlignConfig align;
  gen::GeneratorConfig generator = gen::build_layout("1-2-2");
  critic::CriticConfig critic;
};

struct ForwardOptions {
  bool no_sam = false;  // feed the resized, unwarped reference
  bool no_ram = false;  // theta = 1 and no style path in every normalization
  style::RegionNormOptions norm;

  style::RegionNormOptions effective_norm() const {
    auto n = norm;
    if (no_ram) n.style_path = false;
    return n;
  }
};

/// Alignment products for one reference and the conditioning derived from it.
template <class S>
struct Styled {
  align::AlignResult<S> align;
  gen::Conditioning<S> cond;
};

template <class S>
class SaraModel {
 public:
  explicit SaraModel(const ModelConfig& cfg) : cfg_(cfg) {
    if (cfg.resolution < 8 || cfg.resolution % 4 != 0)
      throw ConfigError("resolution must be a positive multiple of 4 (at least 8)");
    Rng rng(cfg.seed);
    sam_ = align::SpatialAlignment<S>(g_store_, cfg.align, rng);
    styles_ = style::StyleEncoder<S>(g_store_, cfg.align.feature_channels, cfg.generator.style_dim, rng);
    generator_ = gen::Generator<S>(g_store_, cfg.generator, rng);
    Rng critic_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    critic_x_ = critic::Critic<S>(d_store_, cfg.critic, critic_rng, "critic_x");
    critic_y_ = critic::Critic<S>(d_store_, cfg.critic, critic_rng, "critic_y");
  }
  SaraModel(const SaraModel&) = delete;
  SaraModel& operator=(const SaraModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore<S>& generator_params() { return g_store_; }
  ad::ParamStore<S>& critic_params() { return d_store_; }
  const ad::ParamStore<S>& generator_params() const { return g_store_; }
  const ad::ParamStore<S>& critic_params() const { return d_store_; }
  const align::SpatialAlignment<S>& sam() const { return sam_; }
  align::SpatialAlignment<S>& sam() { return sam_; }
  const style::StyleEncoder<S>& styles() const { return styles_; }
  const gen::Generator<S>& generator() const { return generator_; }
  /// Critic of the non-makeup domain (judges removal outputs).
  const critic::Critic<S>& critic_x() const { return critic_x_; }
  /// Critic of the makeup domain (judges transfer outputs).
  const critic::Critic<S>& critic_y() const { return critic_y_; }

  /// Aligns one reference to the source layout and encodes its styles. The
  /// style matrix pools the reference features under the reference's own
  /// region masks.
  Styled<S> condition(const LabelMap& source_labels, const ad::Var<S>& ref_image, const LabelMap& ref_labels,
                      bool no_sam = false) const {
    check_input(ref_image, "reference");
    check_labels(source_labels, "source");
    check_labels(ref_labels, "reference");
    Styled<S> s;
    s.align = sam_.align(source_labels, ref_image, ref_labels, no_sam);
    const auto& f = s.align.reference_features;
    const Mat<S> masks = align::region_masks<S>(ref_labels, f.height(), f.width()).data;
    s.cond.warped_image = s.align.bundle.image;
    s.cond.warped_out = s.align.bundle.out;
    s.cond.warped_masks = s.align.bundle.masks;
    s.cond.style = styles_.encode(f, masks);
    return s;
  }

  ad::Var<S> generate(const ad::Var<S>& source, const gen::Conditioning<S>& cond,
                      const ForwardOptions& opt = {}) const {
    check_input(source, "source");
    return generator_.forward(source, cond, opt.effective_norm());
  }

  /// generate(source, condition(...)): the plain single-reference path.
  ad::Var<S> transfer(const ad::Var<S>& source, const LabelMap& source_labels, const ad::Var<S>& ref_image,
                      const LabelMap& ref_labels, const ForwardOptions& opt = {},
                      Styled<S>* styled = nullptr) const {
    auto s = condition(source_labels, ref_image, ref_labels, opt.no_sam);
    auto out = generate(source, s.cond, opt);
    if (styled) *styled = std::move(s);
    return out;
  }

  /// One power iteration for every spectrally normalized convolution.
  void refresh_spectral(int iterations = 1) const {
    for (auto* c : generator_.spectral_convolutions()) c->power_iterate(iterations);
    for (auto* c : critic_x_.convolutions()) c->power_iterate(iterations);
    for (auto* c : critic_y_.convolutions()) c->power_iterate(iterations);
  }

 private:
  void check_input(const ad::Var<S>& img, const char* what) const {
    if (img.rows() != 3 || img.height() != cfg_.resolution || img.width() != cfg_.resolution)
      throw ShapeError(std::string(what) + " image must be 3 x " + std::to_string(cfg_.resolution) + " x " +
                       std::to_string(cfg_.resolution));
  }
  void check_labels(const LabelMap& m, const char* what) const {
    if (m.height != cfg_.resolution || m.width != cfg_.resolution)
      throw ArgumentError(std::string(what) + " label map does not match the model resolution");
  }

  ModelConfig cfg_;
  ad::ParamStore<S> g_store_, d_store_;
  align::SpatialAlignment<S> sam_;
  style::StyleEncoder<S> styles_;
  gen::Generator<S> generator_;
  critic::Critic<S> critic_x_, critic_y_;
};

using Model = SaraModel<float>;

}  // namespace sara
