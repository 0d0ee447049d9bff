#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sara/objectives.hpp"

using namespace sara;
using gradcheck::random_grid;
using gradcheck::random_matrix;
using V = ad::Var<double>;

namespace {

double loop_l1(const Mat<double>& a, const Mat<double>& b) {
  double s = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  return s / double(a.size());
}

double loop_l2(const Mat<double>& a, const Mat<double>& b) {
  double s = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  return s / double(a.size());
}

V c(const Grid<double>& g) { return ad::constant(g); }

LabelMap random_labels(std::mt19937_64& rng, int h, int w) {
  LabelMap m(h, w);
  for (auto& l : m.labels) l = std::uint8_t(rng() % 4);
  return m;
}

Image random_image(std::mt19937_64& rng, int h, int w) { return random_grid(rng, 3, h, w).cast<float>(); }

}  // namespace

TEST_CASE("loss weights and their total") {
  const loss::LossWeights w;
  CHECK(w.as_array() == std::array<double, 7>{1.0, 0.001, 0.1, 50.0, 1.0, 10.0, 1.0});
  std::array<double, 7> ones;
  ones.fill(1.0);
  CHECK(std::abs(loss::total_loss(ones, w) - 63.101) <= 1e-9);
  CHECK(loss::total_loss(std::array<double, 7>{}, w) == 0.0);

  // linear in each term
  std::array<double, 7> t{0.3, 2.0, 0.7, 0.01, 1.5, -0.2, 0.4};
  for (std::size_t k = 0; k < 7; ++k) {
    auto t2 = t;
    t2[k] += 1.0;
    CHECK(loss::total_loss(t2, w) - loss::total_loss(t, w) == doctest::Approx(w.as_array()[k]));
  }

  std::array<V, 7> vars;
  for (auto& v : vars) v = ad::constant<double>(Mat<double>::Ones(1, 1));
  CHECK(std::abs(loss::total_loss(vars, w).scalar() - 63.101) <= 1e-9);
}

TEST_CASE("elementwise terms against loop oracles") {
  std::mt19937_64 rng(1);
  const auto a = random_grid(rng, 3, 8, 8), b = random_grid(rng, 3, 8, 8);
  const auto p = random_grid(rng, 3, 8, 8), q = random_grid(rng, 3, 8, 8);

  CHECK(loss::domain_loss(c(a), c(a)).scalar() == 0.0);
  CHECK(loss::domain_loss(c(Grid<double>::constant(2, 3, 3, 1.0)), c(Grid<double>(2, 3, 3))).scalar() == 1.0);
  CHECK(std::abs(loss::domain_loss(c(a), c(b)).scalar() - loop_l1(a.data, b.data)) <= 1e-7);
  CHECK_THROWS_AS(loss::domain_loss(c(a), c(Grid<double>(3, 4, 4))), ShapeError);

  const Mat<double> hm1 = p.data, hm2 = q.data;
  CHECK(loss::makeup_loss<double>(c(p), c(q), hm1, hm2).scalar() == 0.0);
  CHECK(std::abs(loss::makeup_loss<double>(c(a), c(b), hm1, hm2).scalar() -
                 (loop_l2(a.data, hm1) + loop_l2(b.data, hm2))) <= 1e-7);

  CHECK(loss::cycle_loss(c(a), c(a), c(b), c(b)).scalar() == 0.0);
  CHECK(loss::cycle_loss(c(a), c(a), c(b), c(p)).scalar() == doctest::Approx(loop_l1(b.data, p.data)));
  CHECK(std::abs(loss::cycle_loss(c(a), c(b), c(p), c(q)).scalar() -
                 (loop_l1(a.data, b.data) + loop_l1(p.data, q.data))) <= 1e-7);

  CHECK(loss::identity_loss(c(a), c(a), c(b), c(b)).scalar() == 0.0);
  CHECK(loss::identity_loss(c(a), c(p), c(b), c(b)).scalar() == doctest::Approx(loop_l1(a.data, p.data)));
  CHECK(std::abs(loss::identity_loss(c(a), c(b), c(p), c(q)).scalar() -
                 (loop_l1(a.data, b.data) + loop_l1(p.data, q.data))) <= 1e-7);

  SUBCASE("sum reduction multiplies by the element count") {
    CHECK(loss::l1(c(a), c(b), loss::Reduction::sum).scalar() == doctest::Approx(192 * loop_l1(a.data, b.data)));
    CHECK(loss::l2(c(a), c(b), loss::Reduction::sum).scalar() == doctest::Approx(192 * loop_l2(a.data, b.data)));
    CHECK(loss::parse_reduction("sum") == loss::Reduction::sum);
    CHECK_THROWS_AS(loss::parse_reduction("max"), ArgumentError);
  }
  SUBCASE("makeup targets receive no gradient") {
    const auto ga = ad::watch(a);
    const auto l = loss::makeup_loss<double>(ga, c(b), hm1, hm2);
    ad::backward(l);
    CHECK(ga.grad().size() == a.data.size());
    CHECK(gradcheck::input_error(a, [&](const V& v) { return loss::makeup_loss<double>(v, c(b), hm1, hm2); }) < 1e-6);
  }
}

TEST_CASE("perceptual loss") {
  const loss::PerceptualNet<double> net;
  std::mt19937_64 rng(2);
  const auto a = random_grid(rng, 3, 16, 16), b = random_grid(rng, 3, 16, 16);
  CHECK(loss::perceptual_loss(c(a), c(a), net).scalar() == 0.0);
  const double ab = loss::perceptual_loss(c(a), c(b), net).scalar();
  CHECK(ab == loss::perceptual_loss(c(b), c(a), net).scalar());
  CHECK(ab > 0);
  ad::NoGradGuard guard;
  CHECK(std::abs(ab - loop_l2(net.features(c(a)).value(), net.features(c(b)).value())) <= 1e-7);
  CHECK(net.features(c(a)).rows() == 256);

  const loss::PerceptualNet<double> twin;
  CHECK(twin.fingerprint() == net.fingerprint());
  for (const auto& p : net.params().all()) CHECK_FALSE(p.trainable());
  CHECK_THROWS_AS(loss::perceptual_loss(c(a), c(Grid<double>(3, 8, 8)), net), ShapeError);
}

TEST_CASE("correspondence regularization") {
  std::mt19937_64 rng(3);
  const auto y = random_grid(rng, 3, 3, 1);
  const auto soft_of = [](const Mat<double>& raw) {
    ad::NoGradGuard g;
    return ad::row_softmax(ad::constant(raw), 100.0).value();
  };

  SUBCASE("identity correspondence on the reference itself costs nothing") {
    const Mat<double> eye = Mat<double>::Identity(3, 3);
    for (auto mode : {loss::CorrMode::as_written, loss::CorrMode::transpose})
      CHECK(loss::corr_regularization<double>(ad::constant(eye), ad::constant(eye), 100.0, c(y), c(y), mode).scalar() ==
            0.0);
  }
  SUBCASE("uniform rows compare the mean image with the reference") {
    const Mat<double> uni = Mat<double>::Constant(3, 3, 1.0 / 3);
    const auto w = random_grid(rng, 3, 3, 1);
    const double got =
        loss::corr_regularization<double>(ad::constant<double>(Mat<double>::Zero(3, 3)), ad::constant(uni), 100.0, c(w),
                                          c(y), loss::CorrMode::as_written)
            .scalar();
    Mat<double> mean_img(3, 3);
    for (int ch = 0; ch < 3; ++ch) mean_img.row(ch).setConstant(w.data.row(ch).mean());
    CHECK(got == doctest::Approx(loop_l1(mean_img, y.data)));
  }
  SUBCASE("the two readings differ on a cyclic permutation") {
    // pixel u looks at u+1; warping twice with it is not the inverse
    Mat<double> perm = Mat<double>::Zero(3, 3);
    perm(0, 1) = perm(1, 2) = perm(2, 0) = 1;
    const Mat<double> soft = soft_of(perm);
    const auto warped = align::warp<double>(ad::constant(soft), c(y));
    const double as_written = loss::corr_regularization<double>(ad::constant(perm), ad::constant(soft), 100.0, warped,
                                                                c(y), loss::CorrMode::as_written)
                                  .scalar();
    const double transposed = loss::corr_regularization<double>(ad::constant(perm), ad::constant(soft), 100.0, warped,
                                                                c(y), loss::CorrMode::transpose)
                                  .scalar();
    CHECK(transposed <= 1e-12);
    CHECK(as_written > 0.1);
    CHECK(loss::parse_corr_mode("transpose") == loss::CorrMode::transpose);
    CHECK_THROWS_AS(loss::parse_corr_mode("inverse"), ArgumentError);
  }
}

TEST_CASE("histogram matching") {
  SUBCASE("two-pixel example keeps the rank order") {
    CHECK(loss::match_values({0.4f, 0.2f}, {0.8f, 0.6f}) == std::vector<float>{0.8f, 0.6f});
    CHECK(loss::match_values({0.2f, 0.4f}, {0.6f, 0.8f}) == std::vector<float>{0.6f, 0.8f});
  }
  SUBCASE("interpolated quantiles") {
    // ranks 0..4 over 3 reference values: positions 0, 0.5, 1, 1.5, 2
    const auto m = loss::match_values({5, 1, 3, 2, 4}, {0.f, 1.f, 3.f});
    CHECK(m == std::vector<float>{3.f, 0.f, 1.f, 0.5f, 2.f});
  }

  std::mt19937_64 rng(4);
  const int h = 8, w = 8;
  const Image src = random_image(rng, h, w), ref = random_image(rng, h, w);
  const LabelMap sm = random_labels(rng, h, w), rm = random_labels(rng, h, w);
  const Image out = loss::histogram_match(src, ref, sm, rm);

  SUBCASE("equals the rank oracle and leaves background untouched") {
    CHECK(out.data == oracle::histogram_match(src, ref, sm, rm).data);
    for (std::size_t i = 0; i < sm.labels.size(); ++i)
      if (sm.labels[i] == 0)
        for (int ch = 0; ch < 3; ++ch) CHECK(out.data(ch, Eigen::Index(i)) == src.data(ch, Eigen::Index(i)));
  }
  SUBCASE("idempotent") { CHECK(loss::histogram_match(out, ref, sm, rm).data == out.data); }
  SUBCASE("a constant reference region forces that constant") {
    Image flat = ref;
    for (std::size_t i = 0; i < rm.labels.size(); ++i)
      if (rm.labels[i] == std::uint8_t(Region::lip)) flat.data.col(Eigen::Index(i)) << 0.25f, -0.5f, 0.75f;
    const Image o = loss::histogram_match(src, flat, sm, rm);
    for (std::size_t i = 0; i < sm.labels.size(); ++i)
      if (sm.labels[i] == std::uint8_t(Region::lip)) {
        CHECK(o.data(0, Eigen::Index(i)) == 0.25f);
        CHECK(o.data(1, Eigen::Index(i)) == -0.5f);
        CHECK(o.data(2, Eigen::Index(i)) == 0.75f);
      }
  }
  SUBCASE("an empty reference region copies the source region") {
    LabelMap no_eyes = rm;
    for (auto& l : no_eyes.labels)
      if (l == std::uint8_t(Region::eyes)) l = 0;
    const Image o = loss::histogram_match(src, ref, sm, no_eyes);
    for (std::size_t i = 0; i < sm.labels.size(); ++i)
      if (sm.labels[i] == std::uint8_t(Region::eyes))
        CHECK(o.data.col(Eigen::Index(i)) == src.data.col(Eigen::Index(i)));
  }
  SUBCASE("size mismatch is a shape error") {
    CHECK_THROWS_AS(loss::histogram_match(src, ref, LabelMap(4, 4), rm), ShapeError);
  }
}
