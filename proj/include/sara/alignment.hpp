#pragma once

// Spatial alignment: domain-specific feature extractors, cosine dense
// correspondence, softmax warping of the reference image and its region masks.

#include <array>
#include <atomic>
#include <memory>

#include "sara/imagecore.hpp"
#include "sara/layers.hpp"

namespace sara::align {

struct AlignConfig {
  int feature_channels = 128;
  int hidden_channels = 64;
  double sharpness = 100.0;  // softmax temperature on cosine similarities
  double cosine_eps = 1e-8;
  double slope = 0.2;
};

/// conv3x3 (stride 1) -> IN -> leaky -> conv3x3 (stride 2) -> IN -> leaky ->
/// conv3x3 (stride 1). Output has half the input resolution.
template <class S>
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(ad::ParamStore<S>& store, const std::string& name, int in_channels,
                   const AlignConfig& cfg, Rng& rng)
      : in_channels_(in_channels), slope_(S(cfg.slope)) {
    c1_ = Conv2d<S>(store, name + ".c1", {in_channels, cfg.hidden_channels, 3, 1, 1}, rng);
    c2_ = Conv2d<S>(store, name + ".c2", {cfg.hidden_channels, cfg.feature_channels, 3, 2, 1}, rng);
    c3_ = Conv2d<S>(store, name + ".c3", {cfg.feature_channels, cfg.feature_channels, 3, 1, 1}, rng);
  }

  ad::Var<S> forward(const ad::Var<S>& input) const {
    if (input.rows() != in_channels_)
      throw ShapeError("feature extractor expects " + std::to_string(in_channels_) +
                       " input channels, got " + std::to_string(input.rows()));
    auto h = ad::leaky_relu(ad::instance_norm(c1_.forward(input)), slope_);
    h = ad::leaky_relu(ad::instance_norm(c2_.forward(h)), slope_);
    return c3_.forward(h);
  }

  const Conv2d<S>& first_layer() const { return c1_; }
  int in_channels() const { return in_channels_; }

 private:
  int in_channels_ = 0;
  S slope_ = S(0.2);
  Conv2d<S> c1_, c2_, c3_;
};

/// Raw cosine correspondence of channel-mean-centered feature columns.
template <class S>
ad::Var<S> correspondence(const ad::Var<S>& fx, const ad::Var<S>& fy, S eps = S(1e-8)) {
  if (fx.rows() != fy.rows() || fx.cols() != fy.cols())
    throw ShapeError("correspondence: feature grids differ in shape");
  return ad::cosine_correspondence(fx, fy, eps);
}

/// Row-wise softmax of sharpness * C.
template <class S>
ad::Var<S> soften(const ad::Var<S>& raw, S sharpness) {
  if (!(sharpness > S(0))) throw ArgumentError("soften: sharpness must be positive");
  return ad::row_softmax(raw, sharpness);
}

/// out(:, u) = sum_v C(u, v) * source(:, v).
template <class S>
ad::Var<S> warp(const ad::Var<S>& corr, const ad::Var<S>& source) {
  if (corr.cols() != source.cols() || corr.rows() != corr.cols())
    throw ShapeError("warp: source does not match the correspondence grid");
  Mat<S> out;
  out.noalias() = source.value() * corr.value().transpose();
  return ad::make_op<S>(std::move(out), source.height(), source.width(), {corr, source},
                        [](ad::Node<S>& n) {
                          auto& pc = *n.parents[0];
                          auto& ps = *n.parents[1];
                          if (pc.requires_grad) pc.accumulate_expr(n.grad.transpose() * ps.value);
                          if (ps.requires_grad) ps.accumulate_expr(n.grad * pc.value);
                        });
}

template <class S>
Grid<S> warp(const Mat<S>& corr, const Grid<S>& source) {
  ad::NoGradGuard guard;
  return warp(ad::constant<S>(corr), ad::constant<S>(source)).grid();
}

/// Reference image and masks warped into the source geometry, plus the
/// filtered makeup image (warped image times the union of warped masks).
template <class S>
struct WarpedBundle {
  ad::Var<S> image;  // 3 x N
  ad::Var<S> masks;  // 3 x N, rows ordered (lip, skin, eyes)
  ad::Var<S> out;    // 3 x N
  int height = 0;
  int width = 0;
};

/// Builds the bundle from already-aligned image and mask grids.
template <class S>
WarpedBundle<S> filter_bundle(const ad::Var<S>& image, const ad::Var<S>& masks) {
  WarpedBundle<S> b;
  b.image = image;
  b.masks = masks;
  b.height = image.height();
  b.width = image.width();
  auto uni = ad::add(ad::add(ad::slice_rows(masks, 0, 1), ad::slice_rows(masks, 1, 1)),
                     ad::slice_rows(masks, 2, 1));
  b.out = ad::mul_rows(image, ad::clamp(uni, S(0), S(1)));
  return b;
}

/// `ref_image` (3 x N) and `ref_masks` (3 x N) must already be at the
/// correspondence resolution.
template <class S>
WarpedBundle<S> assemble_bundle(const ad::Var<S>& corr, const ad::Var<S>& ref_image,
                                const ad::Var<S>& ref_masks) {
  require_shape(ref_image.rows() == 3 && ref_masks.rows() == 3,
                "assemble_bundle: expected 3-channel image and 3 masks");
  auto stacked = warp(corr, ad::concat_rows<S>({ref_image, ref_masks}));
  return filter_bundle(ad::slice_rows(stacked, 0, 3), ad::slice_rows(stacked, 3, 3));
}

/// Stacks the three makeup-region masks of a label map (lip, skin, eyes)
/// after nearest resizing to h x w.
template <class S>
Grid<S> region_masks(const LabelMap& map, int h, int w) {
  const LabelMap m = (map.height == h && map.width == w) ? map : resize(map, h, w);
  Grid<S> g(3, h, w);
  for (std::size_t i = 0; i < m.labels.size(); ++i)
    for (int r = 0; r < 3; ++r)
      if (m.labels[i] == std::uint8_t(kMakeupRegions[r])) g.data(r, Eigen::Index(i)) = S(1);
  return g;
}

template <class S>
struct AlignResult {
  ad::Var<S> source_features;     // f_x, C x N
  ad::Var<S> reference_features;  // f_y, C x N
  ad::Var<S> corr_raw;            // N x N, undefined when alignment is bypassed
  ad::Var<S> corr_soft;
  ad::Var<S> reference_small;     // y_r at correspondence resolution
  WarpedBundle<S> bundle;
};

/// The two extractors plus the warping pipeline.
template <class S>
class SpatialAlignment {
 public:
  SpatialAlignment() = default;
  SpatialAlignment(ad::ParamStore<S>& store, const AlignConfig& cfg, Rng& rng) : cfg_(cfg) {
    fx_ = FeatureExtractor<S>(store, "sam.fx", kLabelCount, cfg, rng);
    fy_ = FeatureExtractor<S>(store, "sam.fy", 3, cfg, rng);
  }

  const AlignConfig& config() const { return cfg_; }
  const FeatureExtractor<S>& x_branch() const { return fx_; }
  const FeatureExtractor<S>& y_branch() const { return fy_; }

  /// `bypass` skips the correspondence and uses the resized reference as if
  /// it were already aligned.
  AlignResult<S> align(const LabelMap& source_labels, const ad::Var<S>& ref_image,
                       const LabelMap& ref_labels, bool bypass = false) const {
    AlignResult<S> r;
    r.source_features = fx_.forward(ad::constant(one_hot<S>(source_labels)));
    r.reference_features = fy_.forward(ref_image);
    const int h = r.reference_features.height(), w = r.reference_features.width();
    r.reference_small = ad::resize_bilinear(ref_image, h, w);
    auto masks = ad::constant(region_masks<S>(ref_labels, h, w));
    if (bypass) {
      r.bundle = filter_bundle(r.reference_small, masks);
      return r;
    }
    calls_->fetch_add(1, std::memory_order_relaxed);
    r.corr_raw = correspondence(r.source_features, r.reference_features, S(cfg_.cosine_eps));
    r.corr_soft = soften(r.corr_raw, S(cfg_.sharpness));
    r.bundle = assemble_bundle(r.corr_soft, r.reference_small, masks);
    return r;
  }

  std::size_t correspondence_calls() const { return calls_->load(); }
  void reset_counters() { calls_->store(0); }

 private:
  AlignConfig cfg_;
  FeatureExtractor<S> fx_, fy_;
  std::shared_ptr<std::atomic<std::size_t>> calls_ = std::make_shared<std::atomic<std::size_t>>(0);
};

}  // namespace sara::align
