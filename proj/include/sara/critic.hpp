#pragma once

// Multi-scale patch critic with hinge objectives.

#include <vector>

#include "sara/layers.hpp"

namespace sara::critic {

struct CriticConfig {
  int scales = 2;
  int layers = 3;
  int base_width = 64;
  double slope = 0.2;
};

/// Each scale: `layers` spectrally normalized 4x4 stride-2 convolutions with
/// doubling width, then a spectrally normalized 3x3 one-channel patch head.
/// Scale k sees the input average-pooled k times.
template <class S>
class Critic {
 public:
  Critic() = default;
  Critic(ad::ParamStore<S>& store, const CriticConfig& cfg, Rng& rng, const std::string& name = "critic")
      : cfg_(cfg) {
    for (int s = 0; s < cfg.scales; ++s) {
      std::vector<Conv2d<S>> stack;
      int in = 3, width = cfg.base_width;
      const std::string prefix = name + ".s" + std::to_string(s);
      for (int l = 0; l < cfg.layers; ++l, width *= 2) {
        stack.emplace_back(store, prefix + ".c" + std::to_string(l),
                           ConvSpec{in, width, 4, 2, 1, true, true}, rng);
        in = width;
      }
      stack.emplace_back(store, prefix + ".head", ConvSpec{in, 1, 3, 1, 1, true, true}, rng);
      scales_.push_back(std::move(stack));
    }
  }

  const CriticConfig& config() const { return cfg_; }

  std::vector<ad::Var<S>> score(const ad::Var<S>& img) const {
    if (img.rows() != 3) throw ShapeError("critic: expected a 3-channel image");
    std::vector<ad::Var<S>> out;
    ad::Var<S> x = img;
    for (std::size_t s = 0; s < scales_.size(); ++s) {
      if (s > 0) x = ad::avg_pool2(x);
      ad::Var<S> h = x;
      const auto& stack = scales_[s];
      for (std::size_t l = 0; l + 1 < stack.size(); ++l)
        h = ad::leaky_relu(stack[l].forward(h), S(cfg_.slope));
      out.push_back(stack.back().forward(h));
    }
    return out;
  }

  std::vector<const Conv2d<S>*> convolutions() const {
    std::vector<const Conv2d<S>*> out;
    for (const auto& stack : scales_)
      for (const auto& c : stack) out.push_back(&c);
    return out;
  }

 private:
  CriticConfig cfg_;
  std::vector<std::vector<Conv2d<S>>> scales_;
};

/// Mean over scales of E[relu(1 - real)] + E[relu(1 + fake)].
template <class S>
ad::Var<S> hinge_d_loss(const std::vector<ad::Var<S>>& real, const std::vector<ad::Var<S>>& fake) {
  if (real.size() != fake.size() || real.empty()) throw ShapeError("hinge_d_loss: scale count mismatch");
  std::vector<ad::Var<S>> terms;
  std::vector<S> weights;
  const S w = S(1) / S(real.size());
  for (std::size_t i = 0; i < real.size(); ++i) {
    if (real[i].rows() != fake[i].rows() || real[i].cols() != fake[i].cols())
      throw ShapeError("hinge_d_loss: score grids differ");
    terms.push_back(ad::mean(ad::relu(ad::add_scalar(ad::scale(real[i], S(-1)), S(1)))));
    terms.push_back(ad::mean(ad::relu(ad::add_scalar(fake[i], S(1)))));
    weights.insert(weights.end(), {w, w});
  }
  return ad::weighted_sum(terms, weights);
}

/// Negative mean fake score, averaged over scales.
template <class S>
ad::Var<S> hinge_g_loss(const std::vector<ad::Var<S>>& fake) {
  if (fake.empty()) throw ShapeError("hinge_g_loss: no scores");
  std::vector<ad::Var<S>> terms;
  for (const auto& f : fake) terms.push_back(ad::mean(f));
  return ad::weighted_sum(terms, std::vector<S>(fake.size(), S(-1) / S(fake.size())));
}

}  // namespace sara::critic
