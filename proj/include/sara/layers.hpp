#pragma once

#include <random>
#include <string>

#include "sara/ops.hpp"

namespace sara {

using Rng = std::mt19937_64;

template <class S>
Mat<S> uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat<S> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = S(dist(rng));
  return m;
}

template <class S>
Vec<S> unit_vector(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vec<S> v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = S(dist(rng));
  return v / v.norm();
}

struct ConvSpec {
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  bool bias = true;
  bool spectral = false;
};

/// Convolution with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization
/// and optional spectral normalization of the unfolded weight.
template <class S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ad::ParamStore<S>& store, const std::string& name, const ConvSpec& spec, Rng& rng)
      : spec_(spec) {
    const Eigen::Index fan_in = Eigen::Index(spec.in) * spec.kernel * spec.kernel;
    const double bound = 1.0 / std::sqrt(double(fan_in));
    weight_ = &store.add(name + ".weight", uniform_matrix<S>(rng, spec.out, fan_in, bound));
    if (spec.bias) bias_ = &store.add(name + ".bias", uniform_matrix<S>(rng, spec.out, 1, bound));
    if (spec.spectral) {
      u_ = &store.add(name + ".sn_u", Mat<S>(unit_vector<S>(rng, spec.out)), ad::ParamKind::buffer);
      power_iterate(1000, 1e-8);
    }
  }

  ad::Var<S> effective_weight() const {
    auto w = ad::leaf(*weight_);
    if (spec_.spectral) return ad::spectral_normalize<S>(w, u_->value.col(0));
    return w;
  }

  ad::Var<S> forward(const ad::Var<S>& x) const {
    require_shape(x.rows() == spec_.in, "conv " + weight_->name + ": expected " +
                                            std::to_string(spec_.in) + " input channels, got " +
                                            std::to_string(x.rows()));
    ad::Var<S> b;
    if (bias_) b = ad::leaf(*bias_);
    return ad::conv2d<S>(x, effective_weight(), b, spec_.kernel, spec_.stride, spec_.pad);
  }

  /// Refines the leading left singular vector estimate used by the
  /// spectral normalization; stops early once the singular value estimate
  /// moves by less than `tol` (relative).
  void power_iterate(int iterations, double tol = 0) const {
    if (!u_) return;
    Vec<S> u = u_->value.col(0);
    const auto& w = weight_->value;
    S last = 0;
    for (int i = 0; i < iterations; ++i) {
      Vec<S> v = w.transpose() * u;
      const S nv = v.norm();
      if (!(nv > S(1e-12))) break;
      v /= nv;
      u = w * v;
      const S nu = u.norm();
      if (!(nu > S(1e-12))) break;
      u /= nu;
      if (tol > 0 && std::abs(nu - last) <= S(tol) * nu) break;
      last = nu;
    }
    u_->value.col(0) = u;
  }

  const ConvSpec& spec() const { return spec_; }
  ad::Param<S>& weight() const { return *weight_; }
  ad::Param<S>* bias() const { return bias_; }
  ad::Param<S>* sn_vector() const { return u_; }

 private:
  ConvSpec spec_;
  ad::Param<S>* weight_ = nullptr;
  ad::Param<S>* bias_ = nullptr;
  ad::Param<S>* u_ = nullptr;
};

}  // namespace sara
