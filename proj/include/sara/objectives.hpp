#pragma once

// Non-adversarial loss terms, their weighting, and the histogram-matching
// pseudo ground truth.

#include <array>
#include <cstdint>
#include <string>

#include "sara/alignment.hpp"
#include "sara/imagecore.hpp"
#include "sara/layers.hpp"

namespace sara::loss {

enum class Reduction { mean, sum };
Reduction parse_reduction(const std::string& s);
const char* reduction_name(Reduction r);

/// How the correspondence cycle term re-warps W_yr back onto the reference.
enum class CorrMode {
  as_written,  // same softened matrix again
  transpose,   // row softmax of the transposed raw similarities
};
CorrMode parse_corr_mode(const std::string& s);
const char* corr_mode_name(CorrMode m);

constexpr std::size_t kTermCount = 7;
constexpr std::array<const char*, kTermCount> kTermNames{"domain", "perc",  "corr", "makeup",
                                                         "cycle",  "adv", "id"};

struct LossWeights {
  double domain = 1.0;
  double perc = 0.001;
  double corr = 0.1;
  double makeup = 50.0;
  double cycle = 1.0;
  double adv = 10.0;
  double id = 1.0;

  std::array<double, kTermCount> as_array() const { return {domain, perc, corr, makeup, cycle, adv, id}; }
};

/// sum_k w_k * terms_k in the fixed term order.
double total_loss(const std::array<double, kTermCount>& terms, const LossWeights& w);

template <class S>
ad::Var<S> total_loss(const std::array<ad::Var<S>, kTermCount>& terms, const LossWeights& w) {
  const auto ws = w.as_array();
  std::vector<ad::Var<S>> t(terms.begin(), terms.end());
  std::vector<S> k;
  for (double v : ws) k.push_back(S(v));
  return ad::weighted_sum(t, k);
}

namespace detail {
template <class S>
ad::Var<S> reduce(const ad::Var<S>& mean_value, Eigen::Index count, Reduction r) {
  return r == Reduction::mean ? mean_value : ad::scale(mean_value, S(count));
}
}  // namespace detail

template <class S>
ad::Var<S> l1(const ad::Var<S>& a, const ad::Var<S>& b, Reduction r = Reduction::mean) {
  return detail::reduce(ad::mean_abs_diff(a, b), a.value().size(), r);
}

template <class S>
ad::Var<S> l2(const ad::Var<S>& a, const ad::Var<S>& b, Reduction r = Reduction::mean) {
  return detail::reduce(ad::mean_sq_diff(a, b), a.value().size(), r);
}

/// Features of the two alignment branches should live in one domain.
template <class S>
ad::Var<S> domain_loss(const ad::Var<S>& fx, const ad::Var<S>& fy, Reduction r = Reduction::mean) {
  if (fx.rows() != fy.rows() || fx.cols() != fy.cols()) throw ShapeError("domain_loss: shape mismatch");
  return l1(fx, fy, r);
}

/// Fixed random feature stack standing in for a pretrained classifier:
/// four stride-2 3x3 convolutions with ReLU, frozen.
template <class S>
class PerceptualNet {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5eedf00dULL;

  explicit PerceptualNet(std::uint64_t seed = kDefaultSeed) {
    Rng rng(seed);
    const int widths[] = {32, 64, 128, 256};
    int in = 3;
    for (int i = 0; i < 4; ++i) {
      stages_.emplace_back(store_, "perc.c" + std::to_string(i), ConvSpec{in, widths[i], 3, 2, 1}, rng);
      in = widths[i];
    }
    store_.set_frozen(true);
  }
  PerceptualNet(const PerceptualNet&) = delete;
  PerceptualNet& operator=(const PerceptualNet&) = delete;

  ad::Var<S> features(const ad::Var<S>& img) const {
    ad::Var<S> h = img;
    for (const auto& c : stages_) h = ad::relu(c.forward(h));
    return h;
  }

  const ad::ParamStore<S>& params() const { return store_; }
  /// FNV-1a over parameter bytes; used to prove the net never changes.
  std::uint64_t fingerprint() const;

 private:
  ad::ParamStore<S> store_;
  std::vector<Conv2d<S>> stages_;
};

template <class S>
std::uint64_t PerceptualNet<S>::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : store_.all()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
    for (std::size_t i = 0; i < std::size_t(p.value.size()) * sizeof(S); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

template <class S>
ad::Var<S> perceptual_loss(const ad::Var<S>& generated, const ad::Var<S>& source, const PerceptualNet<S>& net,
                           Reduction r = Reduction::mean) {
  if (generated.rows() != source.rows() || generated.cols() != source.cols())
    throw ShapeError("perceptual_loss: resolution mismatch");
  return l2(net.features(generated), net.features(source), r);
}

/// Reverse-warp consistency: warp W_yr back with the chosen matrix and
/// compare with the reference at correspondence resolution.
template <class S>
ad::Var<S> corr_regularization(const ad::Var<S>& corr_raw, const ad::Var<S>& corr_soft, S sharpness,
                               const ad::Var<S>& warped, const ad::Var<S>& reference, CorrMode mode,
                               Reduction r = Reduction::mean) {
  auto used = mode == CorrMode::as_written ? corr_soft : ad::row_softmax(ad::transpose(corr_raw), sharpness);
  return l1(align::warp(used, warped), reference, r);
}

/// Rank-order histogram matching per makeup region and color channel;
/// background and regions whose reference counterpart is empty are copied.
Image histogram_match(const Image& source, const Image& reference, const LabelMap& source_map,
                      const LabelMap& reference_map);

/// Matches `values` onto the empirical distribution `reference`: the pixel of
/// rank r (stable by value, then position) receives the reference quantile at
/// r (m-1)/(n-1), linearly interpolated.
std::vector<float> match_values(const std::vector<float>& values, std::vector<float> reference);

template <class S>
ad::Var<S> makeup_loss(const ad::Var<S>& gen_xy, const ad::Var<S>& gen_yx, const Mat<S>& hm_xy,
                       const Mat<S>& hm_yx, Reduction r = Reduction::mean) {
  return ad::add(l2(gen_xy, ad::constant<S>(hm_xy, gen_xy.height(), gen_xy.width()), r),
                 l2(gen_yx, ad::constant<S>(hm_yx, gen_yx.height(), gen_yx.width()), r));
}

template <class S>
ad::Var<S> cycle_loss(const ad::Var<S>& recon_y, const ad::Var<S>& y, const ad::Var<S>& recon_x,
                      const ad::Var<S>& x, Reduction r = Reduction::mean) {
  return ad::add(l1(recon_y, y, r), l1(recon_x, x, r));
}

template <class S>
ad::Var<S> identity_loss(const ad::Var<S>& gen_xx, const ad::Var<S>& x, const ad::Var<S>& gen_yy,
                         const ad::Var<S>& y, Reduction r = Reduction::mean) {
  return ad::add(l1(gen_xx, x, r), l1(gen_yy, y, r));
}

}  // namespace sara::loss
