#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sara/generator.hpp"

using namespace sara;
using gradcheck::random_grid;
using gradcheck::random_matrix;

namespace {

template <class S>
gen::Conditioning<S> random_conditioning(std::mt19937_64& rng, int res, int style_dim) {
  const int h = res / 2;
  Grid<double> masks(3, h, h);
  for (Eigen::Index p = 0; p < masks.pixels(); ++p) {
    const auto r = rng() % 4;
    if (r < 3) masks.data(r, p) = 1;
  }
  gen::Conditioning<S> c;
  c.warped_image = ad::constant(random_grid(rng, 3, h, h).cast<S>());
  c.warped_out = ad::constant(random_grid(rng, 3, h, h).cast<S>());
  c.warped_masks = ad::constant(masks.cast<S>());
  c.style = ad::constant<S>(random_matrix(rng, style_dim, 3).cast<S>());
  return c;
}

gen::GeneratorConfig small(const std::string& layout) {
  auto cfg = gen::build_layout(layout);
  cfg.head_hidden = 8;
  cfg.style_dim = 8;
  return cfg;
}

}  // namespace

TEST_CASE("layouts follow the architecture tables") {
  CHECK(gen::layout_names().size() == oracle::layout_tables().size());
  for (const auto& [name, column] : oracle::layout_tables()) {
    INFO(name);
    const auto cfg = gen::build_layout(name);
    const auto want = oracle::parse_table(column);
    REQUIRE(cfg.steps.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      if (want[i].upsample) {
        CHECK(std::holds_alternative<gen::Upsample>(cfg.steps[i]));
      } else {
        REQUIRE(std::holds_alternative<gen::BlockSpec>(cfg.steps[i]));
        CHECK(std::get<gen::BlockSpec>(cfg.steps[i]) == gen::BlockSpec{want[i].in, want[i].out});
      }
    }
    CHECK_NOTHROW(gen::validate(cfg));
  }

  const auto sara = gen::build_layout("1-2-2").blocks();
  const std::vector<gen::BlockSpec> pairs{{256, 256}, {256, 128}, {128, 128}, {128, 64}, {64, 64}};
  CHECK(sara == pairs);
  CHECK(gen::build_layout("2-2-2").blocks().size() == 6);
  CHECK(gen::build_layout("0-1-2").blocks().size() == 3);
}

TEST_CASE("bad layouts are rejected") {
  CHECK_THROWS_AS(gen::build_layout("3-2-1"), ArgumentError);
  auto cfg = gen::build_layout("1-2-2");
  cfg.steps.erase(cfg.steps.begin() + 2);  // drops (256,128): chain breaks
  CHECK_THROWS_AS(gen::validate(cfg), ConfigError);
  cfg = gen::build_layout("1-2-2");
  cfg.steps.erase(cfg.steps.begin() + 1);  // one upsample only
  CHECK_THROWS_AS(gen::validate(cfg), ConfigError);
}

TEST_CASE("parameter count equals the shape walk") {
  for (const auto& [name, column] : oracle::layout_tables()) {
    INFO(name);
    Rng rng(1);
    ad::ParamStore<float> store;
    auto cfg = gen::build_layout(name);
    cfg.head_hidden = 16;
    gen::Generator<float> g(store, cfg, rng);
    CHECK(store.weight_count() == oracle::generator_weights(column, 256, 16));
  }
}

TEST_CASE("forward shape, range and determinism") {
  std::mt19937_64 rng(2);
  for (const auto& name : gen::layout_names()) {
    INFO(name);
    Rng init(3);
    ad::ParamStore<float> store;
    gen::Generator<float> g(store, small(name), init);
    const auto cond = random_conditioning<float>(rng, 16, 8);
    const auto x = ad::constant(random_grid(rng, 3, 16, 16).cast<float>());
    const auto a = g.forward(x, cond), b = g.forward(x, cond);
    CHECK(a.rows() == 3);
    CHECK(a.height() == 16);
    CHECK(a.width() == 16);
    CHECK(a.value().cwiseAbs().maxCoeff() <= 1.0f);
    CHECK(a.value() == b.value());
  }
}

TEST_CASE("identity encoder") {
  Rng init(4);
  ad::ParamStore<double> store;
  gen::Generator<double> g(store, small("1-2-2"), init);
  std::mt19937_64 rng(5);

  SUBCASE("64x64 gives 256x16x16") {
    const auto f = g.encode_identity(ad::constant(random_grid(rng, 3, 64, 64)));
    CHECK(f.rows() == 256);
    CHECK(f.height() == 16);
    CHECK(f.width() == 16);
  }
  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(g.encode_identity(ad::constant(Grid<double>(4, 8, 8))), ShapeError);
    CHECK_THROWS_AS(g.encode_identity(ad::constant(Grid<double>(3, 6, 6))), ShapeError);
  }
  SUBCASE("gradients on an 8x8 input") {
    const auto x = random_grid(rng, 3, 8, 8);
    const auto in = gradcheck::input_error(x, [&](const ad::Var<double>& v) { return g.encode_identity(v); });
    CHECK(in.error <= 1e-3);
    CHECK(in.checked >= 150);
    for (auto& p : store.all())
      if (p.name.rfind("gen.enc", 0) == 0) {
        INFO(p.name);
        const auto check = gradcheck::param_error(p, [&] { return g.encode_identity(ad::constant(x)); }, 6, 100);
        CHECK(check.error <= 1e-3);
        CHECK(check.checked > 0);
      }
  }
}

TEST_CASE("zeroed main path reduces a block to its shortcut") {
  std::mt19937_64 rng(6);
  Rng init(7);
  ad::ParamStore<double> store;
  auto cfg = small("1-2-2");
  gen::Generator<double> g(store, cfg, init);
  for (auto& p : store.all())
    if (p.name.find(".conv0.") != std::string::npos || p.name.find(".conv1.") != std::string::npos)
      if (p.kind == ad::ParamKind::weight) p.value.setZero();

  const auto cond = random_conditioning<double>(rng, 16, 8);
  gen::ModulationCache<double> cache(cond);
  const auto& same = g.blocks()[0];  // (256, 256)
  const auto x = random_grid(rng, 256, 4, 4);
  CHECK(oracle::max_abs(same.forward(ad::constant(x), cache, {}).value(), x.data) <= 1e-6);

  // channel-changing block equals its normalized 1x1 projection alone
  const auto& change = g.blocks()[1];  // (256, 128)
  const auto out = change.forward(ad::constant(x), cache, {}).value();
  for (auto& p : store.all())
    if (p.name.rfind("gen.block1.conv_s.", 0) == 0 && p.kind == ad::ParamKind::weight) p.value.setZero();
  CHECK(change.forward(ad::constant(x), cache, {}).value().cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(out.cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("spectral normalization bounds every block convolution") {
  Rng init(8);
  ad::ParamStore<double> store;
  gen::Generator<double> g(store, small("1-2-2"), init);
  CHECK(g.spectral_convolutions().size() == 5 * 2 + 2);
  for (const auto* c : g.spectral_convolutions()) {
    const Mat<double> w = c->effective_weight().value();
    CHECK(Eigen::JacobiSVD<Mat<double>>(w).singularValues()(0) <= 1 + 1e-2);
  }
}

TEST_CASE("modulation is built per resolution") {
  std::mt19937_64 rng(9);
  const auto cond = random_conditioning<float>(rng, 16, 8);
  gen::ModulationCache<float> cache(cond);
  const auto& a = cache.at(4, 4);
  const auto& b = cache.at(16, 16);
  CHECK(a.assignment.cols() == 16);
  CHECK(b.assignment.cols() == 256);
  CHECK(b.warped_out.height() == 16);
  CHECK(&cache.at(4, 4) == &a);
  // native resolution reuses the conditioning directly
  CHECK(cache.at(8, 8).warped_out.value() == cond.warped_out.value());
}
