#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "sara/ops.hpp"

using namespace sara;
using gradcheck::V;
using gradcheck::input_error;
using gradcheck::random_grid;
using gradcheck::random_matrix;

namespace {

constexpr double kTol = 1e-6;

// Keeps values at least `gap` away from zero so kinks are not straddled.
Grid<double> away_from_zero(Grid<double> g, double gap = 0.05) {
  for (Eigen::Index i = 0; i < g.data.size(); ++i) {
    double& v = g.data.data()[i];
    if (std::abs(v) < gap) v = v < 0 ? -gap : gap;
  }
  return g;
}

// Direct 4-loop convolution, tap-major weight columns: (ky*k + kx)*C + c.
Grid<double> naive_conv(const Grid<double>& x, const Mat<double>& w, const Vec<double>& b, int k, int stride,
                        int pad) {
  const int C = x.channels(), O = int(w.rows());
  const int Ho = (x.height + 2 * pad - k) / stride + 1, Wo = (x.width + 2 * pad - k) / stride + 1;
  Grid<double> out(O, Ho, Wo);
  for (int o = 0; o < O; ++o)
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx) {
        double acc = b(o);
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int iy = y * stride + ky - pad, ix = xx * stride + kx - pad;
            if (iy < 0 || ix < 0 || iy >= x.height || ix >= x.width) continue;
            for (int c = 0; c < C; ++c) acc += w(o, (ky * k + kx) * C + c) * x.at(c, iy, ix);
          }
        out.at(o, y, xx) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("elementwise ops") {
  std::mt19937_64 rng(1);
  const auto x = random_grid(rng, 3, 4, 5);
  const auto other = ad::constant(random_grid(rng, 3, 4, 5));
  const auto row = ad::constant<double>(random_matrix(rng, 1, 20));

  CHECK(input_error(x, [&](const V& a) { return ad::add(a, other); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::sub(other, a); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::mul(a, a); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::scale(a, -2.5); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::add_scalar(a, 3.0); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::mul_rows(a, row); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::tanh(a); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::sigmoid(a); }) < kTol);

  const auto safe = away_from_zero(x);
  CHECK(input_error(safe, [&](const V& a) { return ad::leaky_relu(a, 0.2); }) < kTol);
  CHECK(input_error(safe, [&](const V& a) { return ad::relu(a); }) < kTol);

  SUBCASE("mul_rows gradient reaches the row") {
    CHECK(input_error(Grid<double>(random_matrix(rng, 1, 20), 4, 5),
                      [&](const V& r) { return ad::mul_rows(ad::constant(x), r); }) < kTol);
  }
}

TEST_CASE("mix_channels blends per channel and differentiates all three inputs") {
  std::mt19937_64 rng(2);
  const auto a = random_grid(rng, 4, 3, 3), b = random_grid(rng, 4, 3, 3);
  const Grid<double> theta(random_matrix(rng, 4, 1, 0, 1), 1, 1);
  const auto out = ad::mix_channels(ad::constant(theta), ad::constant(a), ad::constant(b));
  for (int c = 0; c < 4; ++c)
    for (Eigen::Index j = 0; j < a.pixels(); ++j)
      CHECK(out.value()(c, j) == doctest::Approx(theta.data(c, 0) * a.data(c, j) + (1 - theta.data(c, 0)) * b.data(c, j)));

  CHECK(input_error(theta, [&](const V& t) { return ad::mix_channels(t, ad::constant(a), ad::constant(b)); }) < kTol);
  CHECK(input_error(a, [&](const V& v) { return ad::mix_channels(ad::constant(theta), v, ad::constant(b)); }) < kTol);
  CHECK(input_error(b, [&](const V& v) { return ad::mix_channels(ad::constant(theta), ad::constant(a), v); }) < kTol);
}

TEST_CASE("structural ops") {
  std::mt19937_64 rng(3);
  const auto x = random_grid(rng, 5, 3, 4);
  const auto y = ad::constant<double>(random_matrix(rng, 12, 7));
  CHECK(input_error(x, [&](const V& a) { return ad::matmul(a, y); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::transpose(a); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::slice_rows(a, 1, 3); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::concat_rows<double>({a, ad::scale(a, 2.0), a}); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::clamp(ad::scale(a, 0.5), -0.9, 0.9); }) < kTol);
}

TEST_CASE("reductions") {
  std::mt19937_64 rng(4);
  const auto x = random_grid(rng, 3, 4, 4);
  auto shifted = x;
  shifted.data.array() += 0.3;  // every difference is exactly 0.3 away from the kink
  const auto ref = ad::constant(shifted);
  CHECK(input_error(x, [&](const V& a) { return ad::mean(a); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::mean_abs_diff(a, ref); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::mean_sq_diff(a, ref); }) < kTol);
  CHECK(input_error(x, [&](const V& a) {
          return ad::weighted_sum<double>({ad::mean(a), ad::mean_sq_diff(a, ref)}, {0.7, 2.0});
        }) < kTol);

  CHECK(ad::mean_abs_diff(ad::constant(x), ref).scalar() == doctest::Approx(0.3));
  CHECK(ad::mean_sq_diff(ad::constant(x), ref).scalar() == doctest::Approx(0.09));
}

TEST_CASE("conv2d") {
  std::mt19937_64 rng(5);
  const auto x = random_grid(rng, 3, 7, 6);
  const Mat<double> w3 = random_matrix(rng, 4, 27);
  const Vec<double> b = random_matrix(rng, 4, 1).col(0);

  SUBCASE("matches the direct loop") {
    for (auto [stride, pad] : {std::pair{1, 1}, {2, 1}, {1, 0}}) {
      const auto got = ad::conv2d<double>(ad::constant(x), ad::constant(w3), ad::constant<double>(b), 3, stride, pad);
      const auto want = naive_conv(x, w3, b, 3, stride, pad);
      REQUIRE(got.height() == want.height);
      REQUIRE(got.width() == want.width);
      CHECK((got.value() - want.data).cwiseAbs().maxCoeff() < 1e-12);
    }
    const Mat<double> w1 = random_matrix(rng, 2, 3);
    const auto point = ad::conv2d<double>(ad::constant(x), ad::constant(w1), ad::constant<double>(b.head(2)), 1, 1, 0);
    CHECK((point.value() - naive_conv(x, w1, b.head(2), 1, 1, 0).data).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("input, weight and bias gradients") {
    for (auto [stride, pad] : {std::pair{1, 1}, {2, 1}}) {
      CHECK(input_error(x, [&](const V& a) {
              return ad::conv2d<double>(a, ad::constant(w3), ad::constant<double>(b), 3, stride, pad);
            }) < kTol);
      CHECK(input_error(Grid<double>(w3, 1, 27), [&](const V& w) {
              return ad::conv2d<double>(ad::constant(x), ad::with_dims(w, 1, 27), ad::constant<double>(b), 3, stride, pad);
            }) < kTol);
      CHECK(input_error(Grid<double>(Mat<double>(b), 1, 1), [&](const V& bb) {
              return ad::conv2d<double>(ad::constant(x), ad::constant(w3), bb, 3, stride, pad);
            }) < kTol);
    }
    const Mat<double> w1 = random_matrix(rng, 2, 3);
    CHECK(input_error(x, [&](const V& a) { return ad::conv2d<double>(a, ad::constant(w1), V{}, 1, 1, 0); }) < kTol);
    CHECK(input_error(Grid<double>(w1, 1, 3), [&](const V& w) {
            return ad::conv2d<double>(ad::constant(x), w, V{}, 1, 1, 0);
          }) < kTol);
  }
  SUBCASE("channel mismatch is a shape error") {
    CHECK_THROWS_AS(ad::conv2d<double>(ad::constant(x), ad::constant<double>(random_matrix(rng, 4, 18)), V{}, 3, 1, 1),
                    ShapeError);
  }
}

TEST_CASE("spectral_normalize") {
  std::mt19937_64 rng(6);
  const Mat<double> w = random_matrix(rng, 5, 8);
  // exact leading left singular vector, so sigma(W) = ||W^T u|| is the top singular value
  Eigen::JacobiSVD<Mat<double>> svd(w, Eigen::ComputeThinU);
  const Vec<double> u = svd.matrixU().col(0);
  const auto out = ad::spectral_normalize<double>(ad::constant(w), u);
  CHECK(Eigen::JacobiSVD<Mat<double>>(out.value()).singularValues()(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(input_error(Grid<double>(w, 1, 8), [&](const V& a) { return ad::spectral_normalize<double>(a, u); }) < kTol);

  const Vec<double> rough = random_matrix(rng, 5, 1).col(0).normalized();
  CHECK(input_error(Grid<double>(w, 1, 8), [&](const V& a) { return ad::spectral_normalize<double>(a, rough); }) < kTol);
}

TEST_CASE("fold_kernel equals convolving the expanded piecewise-constant map") {
  std::mt19937_64 rng(7);
  const int D = 4, R = 3, O = 2, H = 5, W = 5;
  const Mat<double> w = random_matrix(rng, O, 9 * D);
  const Mat<double> style = random_matrix(rng, D, R);
  Grid<double> assign(R, H, W);
  for (Eigen::Index j = 0; j < assign.pixels(); ++j) assign.data(rng() % R, j) = 1.0;

  const Grid<double> expanded(style * assign.data, H, W);
  const auto direct = ad::conv2d<double>(ad::constant(expanded), ad::constant(w), V{}, 3, 1, 1);
  const auto folded = ad::fold_kernel<double>(ad::constant(w), ad::constant(style), 9);
  const auto via = ad::conv2d<double>(ad::constant(assign), ad::with_dims(folded, 1, 9 * R), V{}, 3, 1, 1);
  CHECK((direct.value() - via.value()).cwiseAbs().maxCoeff() < 1e-12);

  CHECK(input_error(Grid<double>(w, 1, 9 * D), [&](const V& a) {
          return ad::fold_kernel<double>(a, ad::constant(style), 9);
        }) < kTol);
  CHECK(input_error(Grid<double>(style, 1, R), [&](const V& s) {
          return ad::fold_kernel<double>(ad::constant(w), s, 9);
        }) < kTol);
}

TEST_CASE("instance_norm") {
  std::mt19937_64 rng(8);
  const auto x = random_grid(rng, 4, 6, 5, -3, 5);
  const auto y = ad::instance_norm(ad::constant(x));
  for (int c = 0; c < 4; ++c) {
    const auto r = y.value().row(c), in = x.data.row(c);
    const double var = (in.array() - in.mean()).square().mean();
    CHECK(std::abs(r.mean()) < 1e-12);
    CHECK(std::sqrt(r.array().square().mean()) == doctest::Approx(std::sqrt(var / (var + 1e-5))).epsilon(1e-12));
  }
  CHECK(ad::instance_norm(ad::constant(Grid<double>::constant(2, 3, 3, 0.7))).value().isZero(0.0));
  CHECK(input_error(x, [&](const V& a) { return ad::instance_norm(a); }) < kTol);
}

TEST_CASE("resampling") {
  std::mt19937_64 rng(9);
  const auto x = random_grid(rng, 2, 6, 4);
  CHECK(input_error(x, [&](const V& a) { return ad::upsample_nearest(a, 2); }) < kTol);
  CHECK(input_error(x, [&](const V& a) { return ad::avg_pool2(a); }) < kTol);
  for (auto [h, w] : {std::pair{3, 2}, {9, 7}, {12, 8}, {4, 11}})
    CHECK(input_error(x, [&](const V& a) { return ad::resize_bilinear(a, h, w); }) < kTol);

  const auto up = ad::upsample_nearest(ad::constant(x), 2);
  CHECK(ad::avg_pool2(up).value() == x.data);
}

TEST_CASE("row_softmax") {
  std::mt19937_64 rng(10);
  const Grid<double> a(random_matrix(rng, 6, 9), 1, 9);
  const auto s = ad::row_softmax(ad::constant(a), 3.0);
  CHECK((s.value().rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(input_error(a, [&](const V& v) { return ad::row_softmax(v, 3.0); }) < kTol);
  // large sharpness does not overflow
  CHECK(ad::row_softmax(ad::constant(a), 1e4).value().allFinite());
}

TEST_CASE("cosine_correspondence") {
  std::mt19937_64 rng(11);
  const auto fx = random_grid(rng, 5, 3, 3), fy = random_grid(rng, 5, 2, 4);
  CHECK(input_error(fx, [&](const V& a) { return ad::cosine_correspondence(a, ad::constant(fy)); }) < kTol);
  CHECK(input_error(fy, [&](const V& b) { return ad::cosine_correspondence(ad::constant(fx), b); }) < kTol);
  CHECK(input_error(fx, [&](const V& a) { return ad::cosine_correspondence(a, a); }) < kTol);
  // flat columns stay finite
  CHECK(ad::cosine_correspondence(ad::constant(Grid<double>(5, 2, 2)), ad::constant(fy)).value().allFinite());
}

TEST_CASE("gradient accumulates over shared subgraphs and params") {
  ad::ParamStore<double> store;
  auto& p = store.add("p", Mat<double>::Constant(2, 2, 1.5));
  CHECK(gradcheck::param_error(p, [&] {
          const auto v = ad::leaf(p);
          return ad::mul(ad::add(v, v), ad::tanh(v));
        }) < kTol);

  SUBCASE("frozen params and buffers receive nothing") {
    p.frozen = true;
    p.zero_grad();
    const auto v = ad::leaf(p);
    CHECK_FALSE(v.requires_grad());
    auto& buf = store.add("b", Mat<double>::Ones(2, 2), ad::ParamKind::buffer);
    CHECK_FALSE(ad::leaf(buf).requires_grad());
  }
}

TEST_CASE("NoGradGuard suppresses graph construction and restores the mode") {
  const auto x = ad::watch(Grid<double>::constant(1, 2, 2, 0.5));
  {
    ad::NoGradGuard guard;
    CHECK_FALSE(ad::grad_enabled());
    const auto y = ad::tanh(x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
    {
      ad::NoGradGuard nested;
    }
    CHECK_FALSE(ad::grad_enabled());
  }
  CHECK(ad::grad_enabled());
  CHECK(ad::tanh(x).requires_grad());
}

TEST_CASE("kink trace separates linear pieces") {
  auto signature = [](double v) {
    ad::KinkTrace trace;
    ad::leaky_relu(ad::constant<double>(Mat<double>::Constant(1, 1, v)), 0.2);
    return trace.signature();
  };
  CHECK(signature(0.3) == signature(0.7));
  CHECK(signature(0.3) != signature(-0.3));
  // nothing is recorded outside a trace
  CHECK(ad::detail::kink_slot() == nullptr);
}

TEST_CASE("the checker flags a wrong gradient") {
  std::mt19937_64 rng(12);
  const auto x = random_grid(rng, 2, 3, 3);
  const auto wrong = [](const V& a) {
    // value 2a, gradient claimed as 3
    return ad::make_op<double>(2 * a.value(), a.height(), a.width(), {a},
                               [](ad::Node<double>& n) { n.parents[0]->accumulate(3 * n.grad); });
  };
  CHECK(input_error(x, wrong) > 0.3);
}

TEST_CASE("kinks are skipped rather than hidden") {
  std::mt19937_64 rng(13);
  Grid<double> x = random_grid(rng, 1, 4, 4);
  x.data(0, 0) = 2e-4;  // within one step of the leaky breakpoint
  const auto check = input_error(x, [](const V& a) { return ad::leaky_relu(a, 0.2); });
  CHECK(check.skipped == 1);
  CHECK(check.checked == 15);
  CHECK(check.error < kTol);
}
