#pragma once

// Region-adaptive normalization: per-region style codes pooled from reference
// features, broadcast onto the warped target layout, and per-channel
// standardization modulated by scale/bias maps mixed from two sources.

#include <atomic>
#include <memory>
#include <optional>

#include "sara/imagecore.hpp"
#include "sara/layers.hpp"

namespace sara::style {

constexpr int kStyleDim = 256;
constexpr double kEmptyRegion = 1e-6;

/// Pooling weights (N x 3): column i is mask_i / sum(mask_i), or zero when
/// the region is empty.
template <class S>
Mat<S> pooling_weights(const Mat<S>& masks) {
  require_shape(masks.rows() == 3, "pooling_weights: expected 3 masks");
  Mat<S> w = masks.transpose();
  for (int i = 0; i < 3; ++i) {
    const S total = w.col(i).sum();
    if (total < S(kEmptyRegion))
      w.col(i).setZero();
    else
      w.col(i) /= total;
  }
  return w;
}

/// Masked average pooling of features (D x N) into a style matrix (D x 3).
template <class S>
ad::Var<S> encode_styles(const ad::Var<S>& features, const Mat<S>& masks) {
  require_shape(masks.cols() == features.cols(), "encode_styles: masks do not match features");
  return ad::matmul(features, ad::constant<S>(pooling_weights(masks)));
}

/// One-hot region assignment (3 x HW): argmax over the three masks when the
/// maximum reaches 0.5, background (all zero) otherwise.
template <class S>
Mat<S> broadcast_assignment(const Mat<S>& masks) {
  require_shape(masks.rows() == 3, "broadcast_assignment: expected 3 masks");
  Mat<S> a = Mat<S>::Zero(3, masks.cols());
  for (Eigen::Index p = 0; p < masks.cols(); ++p) {
    Eigen::Index best = 0;
    const S m = masks.col(p).maxCoeff(&best);
    if (m >= S(0.5)) a(best, p) = S(1);
  }
  return a;
}

/// Style map (D x HW): each pixel carries its region's column, background zero.
template <class S>
ad::Var<S> broadcast(const ad::Var<S>& style, const Mat<S>& assignment, int h, int w) {
  require_shape(assignment.cols() == Eigen::Index(h) * w && assignment.rows() == style.cols(),
                "broadcast: assignment shape");
  return ad::with_dims(ad::matmul(style, ad::constant<S>(assignment)), h, w);
}

/// Projects reference features to the style dimension and pools them per
/// region. Pool-then-project equals project-then-pool because the 1x1
/// projection is affine; the bias is only added to non-empty columns so an
/// empty region keeps an all-zero column.
template <class S>
class StyleEncoder {
 public:
  StyleEncoder() = default;
  StyleEncoder(ad::ParamStore<S>& store, int feature_channels, int style_dim, Rng& rng)
      : proj_(store, "style.proj", {feature_channels, style_dim, 1, 1, 0}, rng) {}

  ad::Var<S> encode(const ad::Var<S>& features, const Mat<S>& masks) const {
    auto pooled = encode_styles(features, masks);
    Mat<S> present = Mat<S>::Zero(1, 3);
    for (int i = 0; i < 3; ++i) present(0, i) = masks.row(i).sum() >= S(kEmptyRegion) ? S(1) : S(0);
    auto projected = ad::matmul(proj_.effective_weight(), pooled);
    return ad::add(projected, ad::matmul(ad::leaf(*proj_.bias()), ad::constant<S>(present)));
  }

  int style_dim() const { return proj_.spec().out; }

 private:
  Conv2d<S> proj_;
};

/// Everything a normalization layer needs about the reference at its own
/// resolution.
template <class S>
struct Modulation {
  int height = 0;
  int width = 0;
  Mat<S> assignment;      // 3 x HW one-hot broadcast layout
  ad::Var<S> style;       // D x 3
  ad::Var<S> warped_out;  // 3 x HW
};

struct RegionNormOptions {
  std::optional<double> alpha;        // replaces the whole scale map
  std::optional<double> beta;         // replaces the whole bias map
  std::optional<double> theta_alpha;  // post-sigmoid mixing weight
  std::optional<double> theta_beta;
  bool style_path = true;             // false: warped-image source only, theta = 1
};

template <class S>
struct RegionNormTrace {
  ad::Var<S> alpha, beta, alpha_w, beta_w, alpha_c, beta_c, theta_alpha, theta_beta;
};

struct RegionNormStats {
  std::atomic<std::size_t> calls{0};
  std::atomic<std::size_t> theta_one_calls{0};
};

/// h_out = alpha * (h - mu_c) / sigma_c + beta with
///   alpha = theta_a * alpha_W + (1 - theta_a) * alpha_C   (beta likewise).
/// alpha_W, beta_W come from a conv head on the warped image, alpha_C, beta_C
/// from a conv head on the broadcast style map; scale heads are offset by 1.
template <class S>
class RegionNorm {
 public:
  RegionNorm() = default;
  RegionNorm(ad::ParamStore<S>& store, const std::string& name, int channels, int style_dim,
             int hidden, Rng& rng, std::shared_ptr<RegionNormStats> stats = nullptr)
      : channels_(channels), style_dim_(style_dim), stats_(std::move(stats)) {
    const double bound = 1.0 / std::sqrt(double(style_dim) * 9);
    style_trunk_w_ = &store.add(name + ".style_trunk.weight",
                                uniform_matrix<S>(rng, hidden, Eigen::Index(style_dim) * 9, bound));
    style_trunk_b_ = &store.add(name + ".style_trunk.bias", uniform_matrix<S>(rng, hidden, 1, bound));
    style_head_ = Conv2d<S>(store, name + ".style_head", {hidden, 2 * channels, 3, 1, 1}, rng);
    image_trunk_ = Conv2d<S>(store, name + ".image_trunk", {3, hidden, 3, 1, 1}, rng);
    image_head_ = Conv2d<S>(store, name + ".image_head", {hidden, 2 * channels, 3, 1, 1}, rng);
    theta_alpha_ = &store.add(name + ".theta_alpha", Mat<S>::Zero(channels, 1));
    theta_beta_ = &store.add(name + ".theta_beta", Mat<S>::Zero(channels, 1));
  }

  int channels() const { return channels_; }

  ad::Var<S> forward(const ad::Var<S>& h, const Modulation<S>& mod,
                     const RegionNormOptions& opt = {}, RegionNormTrace<S>* trace = nullptr) const {
    if (h.height() != mod.height || h.width() != mod.width)
      throw ShapeError("region_norm: modulation resolution does not match activations");
    if (h.rows() != channels_)
      throw ShapeError("region_norm: expected " + std::to_string(channels_) + " channels");
    const int H = h.height(), W = h.width();
    const Eigen::Index C = channels_;
    auto normalized = ad::instance_norm(h, S(1e-5));

    const bool style_path = opt.style_path;
    const double ta_value = style_path ? opt.theta_alpha.value_or(-1) : 1.0;
    const double tb_value = style_path ? opt.theta_beta.value_or(-1) : 1.0;
    if (stats_) {
      stats_->calls.fetch_add(1);
      if (ta_value == 1.0 && tb_value == 1.0) stats_->theta_one_calls.fetch_add(1);
    }

    ad::Var<S> alpha, beta;
    RegionNormTrace<S> local;
    RegionNormTrace<S>& t = trace ? *trace : local;
    const bool need_heads = !(opt.alpha && opt.beta);
    if (need_heads) {
      auto image_feat = ad::relu(image_trunk_.forward(mod.warped_out));
      auto ab_w = image_head_.forward(image_feat);
      t.alpha_w = ad::add_scalar(ad::slice_rows(ab_w, 0, C), S(1));
      t.beta_w = ad::slice_rows(ab_w, C, C);
      t.theta_alpha = theta(ta_value, *theta_alpha_);
      t.theta_beta = theta(tb_value, *theta_beta_);
      if (style_path) {
        auto kernel = ad::fold_kernel(ad::leaf(*style_trunk_w_), mod.style, 9);
        auto style_feat = ad::relu(ad::conv2d(ad::constant<S>(mod.assignment, H, W), kernel,
                                              ad::leaf(*style_trunk_b_), 3, 1, 1));
        auto ab_c = style_head_.forward(style_feat);
        t.alpha_c = ad::add_scalar(ad::slice_rows(ab_c, 0, C), S(1));
        t.beta_c = ad::slice_rows(ab_c, C, C);
        alpha = ad::mix_channels(t.theta_alpha, t.alpha_w, t.alpha_c);
        beta = ad::mix_channels(t.theta_beta, t.beta_w, t.beta_c);
      } else {
        alpha = t.alpha_w;
        beta = t.beta_w;
      }
    }
    if (opt.alpha) alpha = ad::constant<S>(Mat<S>::Constant(C, Eigen::Index(H) * W, S(*opt.alpha)), H, W);
    if (opt.beta) beta = ad::constant<S>(Mat<S>::Constant(C, Eigen::Index(H) * W, S(*opt.beta)), H, W);
    t.alpha = alpha;
    t.beta = beta;
    return ad::add(ad::mul(alpha, normalized), beta);
  }

 private:
  ad::Var<S> theta(double forced, ad::Param<S>& raw) const {
    if (forced >= 0) return ad::constant<S>(Mat<S>::Constant(channels_, 1, S(forced)), 1, 1);
    return ad::sigmoid(ad::leaf(raw));
  }

  int channels_ = 0;
  int style_dim_ = kStyleDim;
  ad::Param<S>* style_trunk_w_ = nullptr;
  ad::Param<S>* style_trunk_b_ = nullptr;
  Conv2d<S> style_head_, image_trunk_, image_head_;
  ad::Param<S>* theta_alpha_ = nullptr;
  ad::Param<S>* theta_beta_ = nullptr;
  std::shared_ptr<RegionNormStats> stats_;
};

}  // namespace sara::style
