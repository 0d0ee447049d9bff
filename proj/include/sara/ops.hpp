#pragma once

// Differentiable free functions over ad::Var. Spatial operands are
// channel-major grids (rows = channels, cols = height * width).

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "sara/autodiff.hpp"

namespace sara::ad {

namespace detail {

template <class S>
void require_same(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": operand shapes differ");
}

inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// Tap-major patch matrix: row (ky*k + kx)*C + c, column oy*Wo + ox.
template <class S>
Mat<S> im2col(const Mat<S>& x, int H, int W, int k, int stride, int pad, int Ho, int Wo) {
  const Eigen::Index C = x.rows();
  const Eigen::Index K = C * k * k;
  Mat<S> cols(K, Eigen::Index(Ho) * Wo);
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      S* col = cols.data() + (Eigen::Index(oy) * Wo + ox) * K;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride - pad + kx;
          S* dst = col + (Eigen::Index(ky) * k + kx) * C;
          if (iy < 0 || iy >= H || ix < 0 || ix >= W)
            std::fill(dst, dst + C, S(0));
          else
            std::memcpy(dst, x.data() + (Eigen::Index(iy) * W + ix) * C, sizeof(S) * C);
        }
      }
    }
  return cols;
}

template <class S>
Mat<S> col2im(const Mat<S>& cols, Eigen::Index C, int H, int W, int k, int stride, int pad, int Ho,
              int Wo) {
  const Eigen::Index K = C * k * k;
  Mat<S> x = Mat<S>::Zero(C, Eigen::Index(H) * W);
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      const S* col = cols.data() + (Eigen::Index(oy) * Wo + ox) * K;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= W) continue;
          const S* src = col + (Eigen::Index(ky) * k + kx) * C;
          S* dst = x.data() + (Eigen::Index(iy) * W + ix) * C;
          for (Eigen::Index c = 0; c < C; ++c) dst[c] += src[c];
        }
      }
    }
  return x;
}

struct BilinearTap {
  int i0, i1;
  double f;
};

inline std::vector<BilinearTap> bilinear_taps(int in, int out) {
  std::vector<BilinearTap> taps(out);
  const double scale = double(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, double(in - 1));
    int i0 = int(std::floor(src));
    int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::require_same(a, b, "add");
  return make_op<S>(a.value() + b.value(), a.height(), a.width(), {a, b}, [](Node<S>& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) p->accumulate(n.grad);
  });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::require_same(a, b, "sub");
  return make_op<S>(a.value() - b.value(), a.height(), a.width(), {a, b}, [](Node<S>& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate_expr(-n.grad);
  });
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::require_same(a, b, "mul");
  return make_op<S>(a.value().cwiseProduct(b.value()), a.height(), a.width(), {a, b},
                    [](Node<S>& n) {
                      auto& pa = *n.parents[0];
                      auto& pb = *n.parents[1];
                      if (pa.requires_grad) pa.accumulate_expr(n.grad.cwiseProduct(pb.value));
                      if (pb.requires_grad) pb.accumulate_expr(n.grad.cwiseProduct(pa.value));
                    });
}

template <class S>
Var<S> scale(const Var<S>& a, S s) {
  return make_op<S>(a.value() * s, a.height(), a.width(), {a},
                    [s](Node<S>& n) { n.parents[0]->accumulate_expr(n.grad * s); });
}

template <class S>
Var<S> add_scalar(const Var<S>& a, S s) {
  return make_op<S>((a.value().array() + s).matrix(), a.height(), a.width(), {a},
                    [](Node<S>& n) { n.parents[0]->accumulate(n.grad); });
}

/// a (C x N) times a single-row b (1 x N), broadcast over rows.
template <class S>
Var<S> mul_rows(const Var<S>& a, const Var<S>& row) {
  require_shape(row.rows() == 1 && row.cols() == a.cols(), "mul_rows: row shape mismatch");
  Mat<S> out = a.value();
  out.array().rowwise() *= row.value().row(0).array();
  return make_op<S>(std::move(out), a.height(), a.width(), {a, row}, [](Node<S>& n) {
    auto& pa = *n.parents[0];
    auto& pr = *n.parents[1];
    if (pa.requires_grad) {
      Mat<S> g = n.grad;
      g.array().rowwise() *= pr.value.row(0).array();
      pa.accumulate(g);
    }
    if (pr.requires_grad) pr.accumulate_expr(n.grad.cwiseProduct(pa.value).colwise().sum());
  });
}

/// theta (C x 1) * a + (1 - theta) * b, theta broadcast along columns.
template <class S>
Var<S> mix_channels(const Var<S>& theta, const Var<S>& a, const Var<S>& b) {
  detail::require_same(a, b, "mix_channels");
  require_shape(theta.rows() == a.rows() && theta.cols() == 1, "mix_channels: theta shape");
  // theta * a + (1 - theta) * b is exact at both endpoints
  const auto t = theta.value().col(0).array();
  Mat<S> out = (a.value().array().colwise() * t).matrix();
  out += (b.value().array().colwise() * (S(1) - t)).matrix();
  return make_op<S>(std::move(out), a.height(), a.width(), {theta, a, b}, [](Node<S>& n) {
    auto& pt = *n.parents[0];
    auto& pa = *n.parents[1];
    auto& pb = *n.parents[2];
    const auto t = pt.value.col(0).array();
    if (pt.requires_grad)
      pt.accumulate_expr(n.grad.cwiseProduct(pa.value - pb.value).rowwise().sum());
    if (pa.requires_grad) pa.accumulate_expr((n.grad.array().colwise() * t).matrix());
    if (pb.requires_grad) pb.accumulate_expr((n.grad.array().colwise() * (S(1) - t)).matrix());
  });
}

template <class S>
Var<S> clamp(const Var<S>& a, S lo, S hi) {
  if (detail::kink_slot())
    detail::record_pieces((a.value().array() >= lo).template cast<int>() + (a.value().array() > hi).template cast<int>());
  return make_op<S>(a.value().cwiseMax(lo).cwiseMin(hi), a.height(), a.width(), {a},
                    [lo, hi](Node<S>& n) {
                      auto& p = *n.parents[0];
                      p.accumulate_expr(
                          (p.value.array() >= lo && p.value.array() <= hi)
                              .select(n.grad.array(), S(0))
                              .matrix());
                    });
}

template <class S>
Var<S> leaky_relu(const Var<S>& a, S slope = S(0.2)) {
  if (detail::kink_slot()) detail::record_pieces((a.value().array() > 0).template cast<int>());
  Mat<S> out = (a.value().array() > 0).select(a.value().array(), a.value().array() * slope);
  return make_op<S>(std::move(out), a.height(), a.width(), {a}, [slope](Node<S>& n) {
    auto& p = *n.parents[0];
    p.accumulate_expr(
        (p.value.array() > 0).select(n.grad.array(), n.grad.array() * slope).matrix());
  });
}

template <class S>
Var<S> relu(const Var<S>& a) {
  return leaky_relu<S>(a, S(0));
}

template <class S>
Var<S> tanh(const Var<S>& a) {
  Mat<S> out = a.value().array().tanh().matrix();
  return make_op<S>(std::move(out), a.height(), a.width(), {a}, [](Node<S>& n) {
    n.parents[0]->accumulate_expr(
        (n.grad.array() * (S(1) - n.value.array().square())).matrix());
  });
}

template <class S>
Var<S> sigmoid(const Var<S>& a) {
  Mat<S> out = (S(1) / (S(1) + (-a.value().array()).exp())).matrix();
  return make_op<S>(std::move(out), a.height(), a.width(), {a}, [](Node<S>& n) {
    n.parents[0]->accumulate_expr(
        (n.grad.array() * n.value.array() * (S(1) - n.value.array())).matrix());
  });
}

// ---------------------------------------------------------------- structural

/// Relabels spatial dimensions without touching the values.
template <class S>
Var<S> with_dims(const Var<S>& a, int height, int width) {
  require_shape(Eigen::Index(height) * width == a.cols(), "with_dims: size mismatch");
  return make_op<S>(a.value(), height, width, {a},
                    [](Node<S>& n) { n.parents[0]->accumulate(n.grad); });
}

template <class S>
Var<S> slice_rows(const Var<S>& a, Eigen::Index start, Eigen::Index count) {
  require_shape(start >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  return make_op<S>(a.value().middleRows(start, count), a.height(), a.width(), {a},
                    [start, count](Node<S>& n) {
                      auto& p = *n.parents[0];
                      if (p.grad.size() == 0) p.grad = Mat<S>::Zero(p.value.rows(), p.value.cols());
                      p.grad.middleRows(start, count) += n.grad;
                    });
}

template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  require_shape(!parts.empty(), "concat_rows: empty");
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    require_shape(p.cols() == parts[0].cols(), "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat<S> out(rows, parts[0].cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_op<S>(std::move(out), parts[0].height(), parts[0].width(), parts, [](Node<S>& n) {
    Eigen::Index r = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) p->accumulate_expr(n.grad.middleRows(r, p->value.rows()));
      r += p->value.rows();
    }
  });
}

template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  require_shape(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Mat<S> out = a.value() * b.value();
  return make_op<S>(std::move(out), 1, int(b.cols()), {a, b}, [](Node<S>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) pa.accumulate_expr(n.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate_expr(pa.value.transpose() * n.grad);
  });
}

template <class S>
Var<S> transpose(const Var<S>& a) {
  Mat<S> out = a.value().transpose();
  return make_op<S>(std::move(out), 1, int(a.rows()), {a}, [](Node<S>& n) {
    n.parents[0]->accumulate_expr(n.grad.transpose());
  });
}

// ---------------------------------------------------------------- reductions

template <class S>
Var<S> mean(const Var<S>& a) {
  Mat<S> out(1, 1);
  out(0, 0) = a.value().mean();
  const S inv = S(1) / S(a.value().size());
  return make_op<S>(std::move(out), 1, 1, {a}, [inv](Node<S>& n) {
    auto& p = *n.parents[0];
    p.accumulate_expr(Mat<S>::Constant(p.value.rows(), p.value.cols(), n.grad(0, 0) * inv));
  });
}

/// Mean absolute difference; the subgradient at zero residual is zero.
template <class S>
Var<S> mean_abs_diff(const Var<S>& a, const Var<S>& b) {
  detail::require_same(a, b, "mean_abs_diff");
  if (detail::kink_slot()) detail::record_pieces((a.value().array() > b.value().array()).template cast<int>());
  Mat<S> out(1, 1);
  out(0, 0) = (a.value() - b.value()).cwiseAbs().mean();
  const S inv = S(1) / S(a.value().size());
  return make_op<S>(std::move(out), 1, 1, {a, b}, [inv](Node<S>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    Mat<S> g = ((pa.value - pb.value).array().sign() * (n.grad(0, 0) * inv)).matrix();
    if (pa.requires_grad) pa.accumulate(g);
    if (pb.requires_grad) pb.accumulate_expr(-g);
  });
}

template <class S>
Var<S> mean_sq_diff(const Var<S>& a, const Var<S>& b) {
  detail::require_same(a, b, "mean_sq_diff");
  Mat<S> out(1, 1);
  out(0, 0) = (a.value() - b.value()).squaredNorm() / S(a.value().size());
  const S k = S(2) / S(a.value().size());
  return make_op<S>(std::move(out), 1, 1, {a, b}, [k](Node<S>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    Mat<S> g = (pa.value - pb.value) * (n.grad(0, 0) * k);
    if (pa.requires_grad) pa.accumulate(g);
    if (pb.requires_grad) pb.accumulate_expr(-g);
  });
}

/// Sum of w_i * s_i over 1x1 scalars.
template <class S>
Var<S> weighted_sum(const std::vector<Var<S>>& terms, const std::vector<S>& weights) {
  require_shape(terms.size() == weights.size() && !terms.empty(), "weighted_sum: arity");
  Mat<S> out = Mat<S>::Zero(1, 1);
  for (std::size_t i = 0; i < terms.size(); ++i) out(0, 0) += weights[i] * terms[i].scalar();
  return make_op<S>(std::move(out), 1, 1, terms, [weights](Node<S>& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i)
      if (n.parents[i]->requires_grad)
        n.parents[i]->accumulate(Mat<S>::Constant(1, 1, n.grad(0, 0) * weights[i]));
  });
}

// ---------------------------------------------------------------- convolution

/// 2-D convolution. Weight is (Cout x k*k*Cin) in tap-major column order,
/// bias (Cout x 1) may be undefined.
template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int k, int stride,
              int pad) {
  const int H = x.height(), W = x.width();
  const Eigen::Index C = x.rows();
  require_shape(Eigen::Index(H) * W == x.cols(), "conv2d: input is not a spatial grid");
  require_shape(weight.cols() == C * k * k, "conv2d: weight does not match input channels");
  const int Ho = detail::conv_out(H, k, stride, pad);
  const int Wo = detail::conv_out(W, k, stride, pad);
  require_shape(Ho > 0 && Wo > 0, "conv2d: output would be empty");
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  Mat<S> out;
  if (pointwise) {
    out.noalias() = weight.value() * x.value();
  } else {
    Mat<S> cols = detail::im2col(x.value(), H, W, k, stride, pad, Ho, Wo);
    out.noalias() = weight.value() * cols;
  }
  const bool has_bias = bias.defined();
  if (has_bias) {
    require_shape(bias.rows() == weight.rows() && bias.cols() == 1, "conv2d: bias shape");
    out.colwise() += bias.value().col(0);
  }
  std::vector<Var<S>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_op<S>(std::move(out), Ho, Wo, std::move(parents),
                    [=](Node<S>& n) {
                      auto& px = *n.parents[0];
                      auto& pw = *n.parents[1];
                      if (pointwise) {
                        if (pw.requires_grad) pw.accumulate_expr(n.grad * px.value.transpose());
                        if (px.requires_grad) px.accumulate_expr(pw.value.transpose() * n.grad);
                      } else {
                        if (pw.requires_grad) {
                          Mat<S> cols = detail::im2col(px.value, H, W, k, stride, pad, Ho, Wo);
                          pw.accumulate_expr(n.grad * cols.transpose());
                        }
                        if (px.requires_grad) {
                          Mat<S> dcols = pw.value.transpose() * n.grad;
                          px.accumulate(detail::col2im(dcols, C, H, W, k, stride, pad, Ho, Wo));
                        }
                      }
                      if (has_bias && n.parents[2]->requires_grad)
                        n.parents[2]->accumulate_expr(n.grad.rowwise().sum());
                    });
}

/// W / sigma(W), sigma estimated as ||W^T u|| from the persistent vector u.
/// u and v are treated as constants, which makes the gradient exact for the
/// function W -> W / ||W^T u||.
template <class S>
Var<S> spectral_normalize(const Var<S>& weight, const Vec<S>& u) {
  require_shape(u.size() == weight.rows(), "spectral_normalize: u size");
  const Vec<S> wu = weight.value().transpose() * u;
  const S sigma = wu.norm();
  constexpr S tiny = S(1e-12);
  if (!(sigma > tiny)) {
    return make_op<S>(weight.value(), weight.height(), weight.width(), {weight},
                      [](Node<S>& n) { n.parents[0]->accumulate(n.grad); });
  }
  const Vec<S> v = wu / sigma;
  return make_op<S>(weight.value() / sigma, weight.height(), weight.width(), {weight},
                    [u, v, sigma](Node<S>& n) {
                      auto& p = *n.parents[0];
                      const S inner = n.grad.cwiseProduct(p.value).sum();
                      Mat<S> g = n.grad / sigma;
                      g.noalias() -= (inner / (sigma * sigma)) * u * v.transpose();
                      p.accumulate(g);
                    });
}

/// Folds a 3x3 kernel over a D-channel piecewise-constant map built as
/// style (D x R) times an R-channel one-hot assignment into an equivalent
/// kernel over the assignment itself: K_k = W_k * style for every tap k.
template <class S>
Var<S> fold_kernel(const Var<S>& weight, const Var<S>& style, int taps) {
  const Eigen::Index D = style.rows(), R = style.cols(), O = weight.rows();
  require_shape(weight.cols() == D * taps, "fold_kernel: weight does not match style rows");
  Mat<S> out(O, R * taps);
  for (int t = 0; t < taps; ++t)
    out.middleCols(t * R, R).noalias() = weight.value().middleCols(t * D, D) * style.value();
  return make_op<S>(std::move(out), 1, int(R * taps), {weight, style},
                    [D, R, taps](Node<S>& n) {
                      auto& pw = *n.parents[0];
                      auto& ps = *n.parents[1];
                      if (pw.requires_grad) {
                        Mat<S> g(pw.value.rows(), pw.value.cols());
                        for (int t = 0; t < taps; ++t)
                          g.middleCols(t * D, D).noalias() =
                              n.grad.middleCols(t * R, R) * ps.value.transpose();
                        pw.accumulate(g);
                      }
                      if (ps.requires_grad) {
                        Mat<S> g = Mat<S>::Zero(D, R);
                        for (int t = 0; t < taps; ++t)
                          g.noalias() += pw.value.middleCols(t * D, D).transpose() *
                                         n.grad.middleCols(t * R, R);
                        ps.accumulate(g);
                      }
                    });
}

// ---------------------------------------------------------------- normalization

/// Per-channel standardization over the spatial axis with population
/// variance: (x - mean) / sqrt(var + eps).
template <class S>
Var<S> instance_norm(const Var<S>& x, S eps = S(1e-5)) {
  const Eigen::Index N = x.cols();
  // shifted mean keeps constant channels exactly centered
  const Vec<S> pivot = x.value().col(0);
  Vec<S> mu = (x.value().colwise() - pivot).rowwise().sum() / S(N);
  mu += pivot;
  Mat<S> out = x.value().colwise() - mu;
  const Vec<S> inv_std =
      ((out.array().square().rowwise().sum() / S(N)) + eps).sqrt().inverse().matrix();
  out = inv_std.asDiagonal() * out;
  return make_op<S>(std::move(out), x.height(), x.width(), {x}, [inv_std](Node<S>& n) {
    const S inv_n = S(1) / S(n.value.cols());
    const Vec<S> mg = n.grad.rowwise().sum() * inv_n;
    const Vec<S> mgy = n.grad.cwiseProduct(n.value).rowwise().sum() * inv_n;
    Mat<S> g = n.grad;
    g.colwise() -= mg;
    g -= mgy.asDiagonal() * n.value;
    n.parents[0]->accumulate(inv_std.asDiagonal() * g);
  });
}

// ---------------------------------------------------------------- resampling

template <class S>
Var<S> upsample_nearest(const Var<S>& x, int factor = 2) {
  const int H = x.height(), W = x.width();
  const int Ho = H * factor, Wo = W * factor;
  Mat<S> out(x.rows(), Eigen::Index(Ho) * Wo);
  for (int y = 0; y < Ho; ++y)
    for (int xx = 0; xx < Wo; ++xx)
      out.col(Eigen::Index(y) * Wo + xx) = x.value().col(Eigen::Index(y / factor) * W + xx / factor);
  return make_op<S>(std::move(out), Ho, Wo, {x}, [=](Node<S>& n) {
    Mat<S> g = Mat<S>::Zero(n.value.rows(), Eigen::Index(H) * W);
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx)
        g.col(Eigen::Index(y / factor) * W + xx / factor) += n.grad.col(Eigen::Index(y) * Wo + xx);
    n.parents[0]->accumulate(g);
  });
}

/// 2x2 mean pooling with stride 2 (odd trailing rows/columns dropped).
template <class S>
Var<S> avg_pool2(const Var<S>& x) {
  const int H = x.height(), W = x.width();
  const int Ho = H / 2, Wo = W / 2;
  require_shape(Ho > 0 && Wo > 0, "avg_pool2: input too small");
  Mat<S> out(x.rows(), Eigen::Index(Ho) * Wo);
  const auto& v = x.value();
  for (int y = 0; y < Ho; ++y)
    for (int xx = 0; xx < Wo; ++xx) {
      const Eigen::Index a = Eigen::Index(2 * y) * W + 2 * xx;
      out.col(Eigen::Index(y) * Wo + xx) =
          (v.col(a) + v.col(a + 1) + v.col(a + W) + v.col(a + W + 1)) * S(0.25);
    }
  return make_op<S>(std::move(out), Ho, Wo, {x}, [=](Node<S>& n) {
    Mat<S> g = Mat<S>::Zero(n.value.rows(), Eigen::Index(H) * W);
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx) {
        const Eigen::Index a = Eigen::Index(2 * y) * W + 2 * xx;
        const auto q = n.grad.col(Eigen::Index(y) * Wo + xx) * S(0.25);
        g.col(a) += q;
        g.col(a + 1) += q;
        g.col(a + W) += q;
        g.col(a + W + 1) += q;
      }
    n.parents[0]->accumulate(g);
  });
}

/// Half-pixel-centered bilinear resampling. Interpolation is written as
/// a + f * (b - a) so constant grids are reproduced exactly.
template <class S>
Var<S> resize_bilinear(const Var<S>& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ArgumentError("resize: target size must be positive");
  const int H = x.height(), W = x.width();
  require_shape(Eigen::Index(H) * W == x.cols(), "resize: input is not a spatial grid");
  if (H == out_h && W == out_w) return with_dims(x, H, W);
  const auto ty = detail::bilinear_taps(H, out_h);
  const auto tx = detail::bilinear_taps(W, out_w);
  const auto& v = x.value();
  Mat<S> out(x.rows(), Eigen::Index(out_h) * out_w);
  for (int y = 0; y < out_h; ++y) {
    const S fy = S(ty[y].f);
    for (int xx = 0; xx < out_w; ++xx) {
      const S fx = S(tx[xx].f);
      const auto a = v.col(Eigen::Index(ty[y].i0) * W + tx[xx].i0);
      const auto b = v.col(Eigen::Index(ty[y].i0) * W + tx[xx].i1);
      const auto c = v.col(Eigen::Index(ty[y].i1) * W + tx[xx].i0);
      const auto d = v.col(Eigen::Index(ty[y].i1) * W + tx[xx].i1);
      const Vec<S> top = a + fx * (b - a);
      const Vec<S> bot = c + fx * (d - c);
      out.col(Eigen::Index(y) * out_w + xx) = top + fy * (bot - top);
    }
  }
  return make_op<S>(std::move(out), out_h, out_w, {x}, [=](Node<S>& n) {
    Mat<S> g = Mat<S>::Zero(n.value.rows(), Eigen::Index(H) * W);
    for (int y = 0; y < out_h; ++y) {
      const S fy = S(ty[y].f);
      for (int xx = 0; xx < out_w; ++xx) {
        const S fx = S(tx[xx].f);
        const auto q = n.grad.col(Eigen::Index(y) * out_w + xx);
        g.col(Eigen::Index(ty[y].i0) * W + tx[xx].i0) += q * ((1 - fy) * (1 - fx));
        g.col(Eigen::Index(ty[y].i0) * W + tx[xx].i1) += q * ((1 - fy) * fx);
        g.col(Eigen::Index(ty[y].i1) * W + tx[xx].i0) += q * (fy * (1 - fx));
        g.col(Eigen::Index(ty[y].i1) * W + tx[xx].i1) += q * (fy * fx);
      }
    }
    n.parents[0]->accumulate(g);
  });
}

// ---------------------------------------------------------------- correspondence

/// Row-wise softmax of sharpness * a.
template <class S>
Var<S> row_softmax(const Var<S>& a, S sharpness) {
  Mat<S> z = a.value() * sharpness;
  z.colwise() -= z.rowwise().maxCoeff();
  Mat<S> e = z.array().exp().matrix();
  const Vec<S> sums = e.rowwise().sum();
  e.array().colwise() /= sums.array();
  return make_op<S>(std::move(e), a.height(), a.width(), {a}, [sharpness](Node<S>& n) {
    const Vec<S> dot = n.grad.cwiseProduct(n.value).rowwise().sum();
    Mat<S> g = n.grad;
    g.colwise() -= dot;
    n.parents[0]->accumulate_expr(g.cwiseProduct(n.value) * sharpness);
  });
}

/// Cosine similarity between every column of fx (C x N) and every column of
/// fy (C x M) after subtracting each column's mean over channels; eps guards
/// the norms. Result is N x M.
template <class S>
Var<S> cosine_correspondence(const Var<S>& fx, const Var<S>& fy, S eps = S(1e-8)) {
  require_shape(fx.rows() == fy.rows(), "correspondence: channel counts differ");
  struct Side {
    Mat<S> unit;
    Vec<S> norm;
  };
  auto prepare = [eps](const Mat<S>& f) {
    Side s;
    s.unit = f;
    s.unit.rowwise() -= f.colwise().mean();
    s.norm = s.unit.colwise().norm().transpose();
    s.unit.array().rowwise() /= (s.norm.array() + eps).transpose();
    return s;
  };
  Side x = prepare(fx.value());
  Side y = prepare(fy.value());
  Mat<S> out;
  out.noalias() = x.unit.transpose() * y.unit;
  return make_op<S>(std::move(out), 1, int(fy.cols()), {fx, fy},
                    [x = std::move(x), y = std::move(y), eps](Node<S>& n) {
                      auto back = [eps](const Side& s, Mat<S> d_unit) {
                        // through the normalization
                        const auto denom = (s.norm.array() + eps).transpose();
                        Mat<S> centered = s.unit;
                        centered.array().rowwise() *= denom;
                        const Eigen::Array<S, 1, Eigen::Dynamic> proj =
                            centered.cwiseProduct(d_unit).colwise().sum().array();
                        Mat<S> d = d_unit;
                        d.array().rowwise() /= denom;
                        for (Eigen::Index j = 0; j < d.cols(); ++j) {
                          const S nj = s.norm(j);
                          if (nj > S(0))
                            d.col(j) -= centered.col(j) * (proj(j) / (denom(j) * denom(j) * nj));
                        }
                        // through the per-column centering
                        d.rowwise() -= d.colwise().mean();
                        return d;
                      };
                      auto& px = *n.parents[0];
                      auto& py = *n.parents[1];
                      if (px.requires_grad) px.accumulate(back(x, y.unit * n.grad.transpose()));
                      if (py.requires_grad) py.accumulate(back(y, x.unit * n.grad));
                    });
}

}  // namespace sara::ad
