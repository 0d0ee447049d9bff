#pragma once

// Fusion generator: identity encoder, a sequence of region-modulated residual
// blocks interleaved with nearest upsampling, and a tanh decoder.

#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "sara/regionstyle.hpp"

namespace sara::gen {

struct BlockSpec {
  int in = 0;
  int out = 0;
  bool operator==(const BlockSpec&) const = default;
};
struct Upsample {
  bool operator==(const Upsample&) const = default;
};
using LayoutStep = std::variant<BlockSpec, Upsample>;

struct GeneratorConfig {
  std::string layout = "1-2-2";
  std::vector<LayoutStep> steps;
  int encoder_channels = 256;  // identity feature width at 1/4 resolution
  int style_dim = style::kStyleDim;
  int head_hidden = 128;       // hidden width of the modulation heads
  double slope = 0.2;

  std::vector<BlockSpec> blocks() const;
  int upsample_count() const;
};

/// The nine named layouts; throws ArgumentError for anything else.
GeneratorConfig build_layout(const std::string& name);
const std::vector<std::string>& layout_names();
/// Throws ConfigError when block channels do not chain or the spatial scale
/// does not return to the input resolution.
void validate(const GeneratorConfig& cfg);

/// Conditioning at correspondence resolution: filtered warped image, warped
/// region masks (lip, skin, eyes) and the style matrix.
template <class S>
struct Conditioning {
  ad::Var<S> warped_image;  // 3 x N, W_yr
  ad::Var<S> warped_out;    // 3 x N
  ad::Var<S> warped_masks;  // 3 x N
  ad::Var<S> style;         // D x 3
};

/// Builds per-resolution modulation inputs, cached by size.
template <class S>
class ModulationCache {
 public:
  explicit ModulationCache(const Conditioning<S>& c) : cond_(c) {}

  const style::Modulation<S>& at(int h, int w) {
    auto key = std::make_pair(h, w);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    style::Modulation<S> m;
    m.height = h;
    m.width = w;
    m.style = cond_.style;
    const bool same = cond_.warped_out.height() == h && cond_.warped_out.width() == w;
    m.warped_out = same ? cond_.warped_out : ad::resize_bilinear(cond_.warped_out, h, w);
    Mat<S> masks;
    if (same) {
      masks = cond_.warped_masks.value();
    } else {
      ad::NoGradGuard guard;
      masks = ad::resize_bilinear(ad::constant<S>(cond_.warped_masks.value(), cond_.warped_masks.height(),
                                                  cond_.warped_masks.width()),
                                  h, w)
                  .value();
    }
    m.assignment = style::broadcast_assignment(masks);
    return cache_.emplace(key, std::move(m)).first->second;
  }

 private:
  const Conditioning<S>& cond_;
  std::map<std::pair<int, int>, style::Modulation<S>> cache_;
};

/// [norm -> leaky -> SN conv3x3] twice, plus a learned [norm -> SN conv1x1]
/// shortcut when the channel count changes.
template <class S>
class FusionBlock {
 public:
  FusionBlock() = default;
  FusionBlock(ad::ParamStore<S>& store, const std::string& name, BlockSpec spec,
              const GeneratorConfig& cfg, Rng& rng, std::shared_ptr<style::RegionNormStats> stats)
      : spec_(spec), slope_(S(cfg.slope)) {
    const int mid = std::min(spec.in, spec.out);
    norm0_ = style::RegionNorm<S>(store, name + ".norm0", spec.in, cfg.style_dim, cfg.head_hidden, rng, stats);
    conv0_ = Conv2d<S>(store, name + ".conv0", {spec.in, mid, 3, 1, 1, true, true}, rng);
    norm1_ = style::RegionNorm<S>(store, name + ".norm1", mid, cfg.style_dim, cfg.head_hidden, rng, stats);
    conv1_ = Conv2d<S>(store, name + ".conv1", {mid, spec.out, 3, 1, 1, true, true}, rng);
    if (spec.in != spec.out) {
      norm_s_ = style::RegionNorm<S>(store, name + ".norm_s", spec.in, cfg.style_dim, cfg.head_hidden, rng,
                                     stats);
      conv_s_ = Conv2d<S>(store, name + ".conv_s", {spec.in, spec.out, 1, 1, 0, false, true}, rng);
    }
  }

  ad::Var<S> forward(const ad::Var<S>& x, ModulationCache<S>& cache,
                     const style::RegionNormOptions& opt) const {
    const auto& mod = cache.at(x.height(), x.width());
    auto h = conv0_.forward(ad::leaky_relu(norm0_.forward(x, mod, opt), slope_));
    h = conv1_.forward(ad::leaky_relu(norm1_.forward(h, mod, opt), slope_));
    auto skip = spec_.in == spec_.out ? x : conv_s_.forward(norm_s_.forward(x, mod, opt));
    return ad::add(skip, h);
  }

  const BlockSpec& spec() const { return spec_; }
  std::vector<const Conv2d<S>*> convolutions() const {
    std::vector<const Conv2d<S>*> out{&conv0_, &conv1_};
    if (spec_.in != spec_.out) out.push_back(&conv_s_);
    return out;
  }
  std::vector<const Conv2d<S>*> main_path() const { return {&conv0_, &conv1_}; }

 private:
  BlockSpec spec_;
  S slope_ = S(0.2);
  style::RegionNorm<S> norm0_, norm1_, norm_s_;
  Conv2d<S> conv0_, conv1_, conv_s_;
};

template <class S>
class Generator {
 public:
  Generator() = default;
  Generator(ad::ParamStore<S>& store, const GeneratorConfig& cfg, Rng& rng)
      : cfg_(cfg), stats_(std::make_shared<style::RegionNormStats>()) {
    validate(cfg_);
    const int mid = cfg.encoder_channels / 2;
    enc1_ = Conv2d<S>(store, "gen.enc1", {3, mid, 3, 2, 1}, rng);
    enc2_ = Conv2d<S>(store, "gen.enc2", {mid, cfg.encoder_channels, 3, 2, 1}, rng);
    int i = 0;
    for (const auto& step : cfg_.steps)
      if (const auto* b = std::get_if<BlockSpec>(&step))
        blocks_.emplace_back(store, "gen.block" + std::to_string(i++), *b, cfg_, rng, stats_);
    dec_ = Conv2d<S>(store, "gen.dec", {cfg_.blocks().back().out, 3, 3, 1, 1}, rng);
  }

  const GeneratorConfig& config() const { return cfg_; }
  const std::vector<FusionBlock<S>>& blocks() const { return blocks_; }
  const style::RegionNormStats& stats() const { return *stats_; }
  void reset_counters() const {
    stats_->calls = 0;
    stats_->theta_one_calls = 0;
  }

  /// 3 x H x W image -> encoder_channels x H/4 x W/4 identity features.
  ad::Var<S> encode_identity(const ad::Var<S>& x) const {
    if (x.rows() != 3) throw ShapeError("encode_identity: expected a 3-channel image");
    if (x.height() % 4 != 0 || x.width() % 4 != 0)
      throw ShapeError("encode_identity: resolution must be divisible by 4");
    const S slope(cfg_.slope);
    auto h = ad::leaky_relu(ad::instance_norm(enc1_.forward(x)), slope);
    return ad::leaky_relu(ad::instance_norm(enc2_.forward(h)), slope);
  }

  ad::Var<S> forward(const ad::Var<S>& x, const Conditioning<S>& cond,
                     const style::RegionNormOptions& opt = {}) const {
    ModulationCache<S> cache(cond);
    auto h = encode_identity(x);
    std::size_t b = 0;
    for (const auto& step : cfg_.steps) {
      if (std::holds_alternative<Upsample>(step))
        h = ad::upsample_nearest(h, 2);
      else
        h = blocks_[b++].forward(h, cache, opt);
    }
    if (h.height() != x.height() || h.width() != x.width())
      throw ShapeError("generator: output resolution differs from input");
    return ad::tanh(dec_.forward(ad::leaky_relu(h, S(cfg_.slope))));
  }

  std::vector<const Conv2d<S>*> spectral_convolutions() const {
    std::vector<const Conv2d<S>*> out;
    for (const auto& b : blocks_)
      for (auto* c : b.convolutions()) out.push_back(c);
    return out;
  }

 private:
  GeneratorConfig cfg_;
  std::shared_ptr<style::RegionNormStats> stats_;
  Conv2d<S> enc1_, enc2_, dec_;
  std::vector<FusionBlock<S>> blocks_;
};

}  // namespace sara::gen
