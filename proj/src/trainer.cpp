#include "sara/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "sara/checkpoint.hpp"
#include "sara/runtime.hpp"

namespace sara {

Face load_face(const synth::Manifest& m, const synth::ManifestEntry& e, int resolution) {
  Face f;
  f.image = load_image(m.image_file(e), resolution);
  f.labels = load_label_map(m.mask_file(e));
  if (f.labels.height != resolution || f.labels.width != resolution)
    f.labels = resize(f.labels, resolution, resolution);
  return f;
}

void write_metrics_header(std::ostream& out) {
  for (std::size_t i = 0; i < kMetricColumns.size(); ++i) out << (i ? "\t" : "") << kMetricColumns[i];
  out << '\n';
}

void write_metrics_row(std::ostream& out, const StepReport& r) {
  char buf[32];
  out << r.step;
  for (double t : r.terms) {
    std::snprintf(buf, sizeof buf, "%.9g", t);
    out << '\t' << buf;
  }
  std::snprintf(buf, sizeof buf, "%.9g", r.d_loss);
  out << '\t' << buf << '\n';
}

namespace {

/// Gray rectangle over at most 15% of the canvas.
Image occlude(const Image& img, Rng& rng) {
  Image out = img;
  const int h = img.height, w = img.width;
  std::uniform_real_distribution<double> side(0.15, 0.38);
  const int rh = std::max(1, int(side(rng) * h)), rw = std::max(1, int(side(rng) * w));
  const int y0 = int(rng() % std::uint64_t(h - rh + 1)), x0 = int(rng() % std::uint64_t(w - rw + 1));
  for (int y = y0; y < y0 + rh; ++y)
    for (int x = x0; x < x0 + rw; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = 0.0f;
  return out;
}

using V = ad::Var<float>;

std::vector<V> score(const critic::Critic<float>& d, const V& img) { return d.score(img); }

}  // namespace

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg), aug_rng_(cfg.seed ^ 0x6a09e667f3bcc909ULL) {
  cfg_.validate();
  configure_allocator();
  model_ = std::make_unique<Model>(cfg_.model);
  perc_ = std::make_unique<loss::PerceptualNet<float>>();
  g_opt_ = Adam<float>(model_->generator_params().trainable(), cfg_.lr_g, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
  d_opt_ = Adam<float>(model_->critic_params().trainable(), cfg_.lr_d, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
}

StepReport Trainer::step(const Face& x, const Face& y, const StepControl& control) {
  Model& m = *model_;
  const auto fo = cfg_.forward_options();
  const auto w = cfg_.effective_weights();
  const auto red = cfg_.reduction;
  const bool no_sam = cfg_.no_sam;
  m.generator_params().zero_grad();
  m.critic_params().zero_grad();

  const V X = ad::constant(x.image), Y = ad::constant(y.image);
  const V RX = cfg_.occluder ? ad::constant(occlude(x.image, aug_rng_)) : X;
  const V RY = cfg_.occluder ? ad::constant(occlude(y.image, aug_rng_)) : Y;

  // transfer (x -> makeup of y) and removal (y -> look of x)
  auto s_xy = m.condition(x.labels, RY, y.labels, no_sam);
  auto fake_y = m.generate(X, s_xy.cond, fo);
  auto s_yx = m.condition(y.labels, RX, x.labels, no_sam);
  auto fake_x = m.generate(Y, s_yx.cond, fo);
  // self-conditioning is shared by the cycle and identity passes
  auto s_xx = m.condition(x.labels, X, x.labels, no_sam);
  auto s_yy = m.condition(y.labels, Y, y.labels, no_sam);
  auto rec_x = m.generate(fake_y, s_xx.cond, fo);
  auto rec_y = m.generate(fake_x, s_yy.cond, fo);

  std::array<V, loss::kTermCount> t;
  const V zero = ad::constant<float>(Mat<float>::Zero(1, 1));
  t[0] = ad::add(loss::domain_loss(s_xy.align.source_features, s_xy.align.reference_features, red),
                 loss::domain_loss(s_yx.align.source_features, s_yx.align.reference_features, red));
  t[1] = ad::add(loss::perceptual_loss(fake_y, X, *perc_, red), loss::perceptual_loss(fake_x, Y, *perc_, red));
  if (no_sam) {
    t[2] = zero;
  } else {
    const float sharp = float(cfg_.model.align.sharpness);
    auto corr = [&](const Styled<float>& s) {
      return loss::corr_regularization(s.align.corr_raw, s.align.corr_soft, sharp, s.align.bundle.image,
                                       s.align.reference_small, cfg_.corr_mode, red);
    };
    t[2] = ad::add(corr(s_xy), corr(s_yx));
  }
  const Image hm_xy = loss::histogram_match(x.image, y.image, x.labels, y.labels);
  const Image hm_yx = loss::histogram_match(y.image, x.image, y.labels, x.labels);
  t[3] = loss::makeup_loss(fake_y, fake_x, hm_xy.data, hm_yx.data, red);
  t[4] = loss::cycle_loss(rec_y, Y, rec_x, X, red);
  if (cfg_.no_identity) {
    t[6] = zero;
  } else {
    auto id_x = m.generate(X, s_xx.cond, fo);
    auto id_y = m.generate(Y, s_yy.cond, fo);
    t[6] = loss::identity_loss(id_x, X, id_y, Y, red);
  }

  // critic update on detached fakes, before the generator sees the critic
  StepReport r;
  {
    const V fy = ad::constant(fake_y.grid()), fx = ad::constant(fake_x.grid());
    auto d_loss = ad::add(critic::hinge_d_loss(score(m.critic_y(), Y), score(m.critic_y(), fy)),
                          critic::hinge_d_loss(score(m.critic_x(), X), score(m.critic_x(), fx)));
    r.d_loss = d_loss.scalar();
    if (!std::isfinite(r.d_loss)) throw TrainingError("non-finite critic loss at step " + std::to_string(step_));
    if (control.update_critic) {
      ad::backward(d_loss);
      d_opt_.step();
    }
  }

  m.critic_params().set_frozen(true);
  t[5] = ad::add(critic::hinge_g_loss(score(m.critic_y(), fake_y)), critic::hinge_g_loss(score(m.critic_x(), fake_x)));
  m.critic_params().set_frozen(false);

  auto total = loss::total_loss<float>(t, w);
  for (std::size_t k = 0; k < loss::kTermCount; ++k) r.terms[k] = t[k].scalar();
  r.total = total.scalar();
  bool finite = std::isfinite(r.total);
  for (double v : r.terms) finite = finite && std::isfinite(v);
  if (!finite) {
    std::ostringstream msg;
    msg << "non-finite generator loss at step " << step_ << ":";
    for (std::size_t k = 0; k < loss::kTermCount; ++k) msg << ' ' << loss::kTermNames[k] << '=' << r.terms[k];
    msg << " d_loss=" << r.d_loss;
    throw TrainingError(msg.str());
  }
  if (control.update_generator) {
    ad::backward(total);
    g_opt_.step();
  }
  m.refresh_spectral(cfg_.power_iterations);
  r.step = step_++;
  return r;
}

TrainData load_training_data(const synth::Manifest& m, int resolution, const std::string& split) {
  TrainData d;
  for (const auto* e : m.select(synth::Domain::x, split)) d.x.push_back(load_face(m, *e, resolution));
  for (const auto* e : m.select(synth::Domain::y, split)) d.y.push_back(load_face(m, *e, resolution));
  return d;
}

std::vector<std::pair<std::size_t, std::size_t>> epoch_pairs(std::size_t nx, std::size_t ny, std::uint64_t seed,
                                                             int epoch) {
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + std::uint64_t(epoch) + 1);
  auto shuffled = [&](std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    return idx;
  };
  const auto ix = shuffled(nx), iy = shuffled(ny);
  const std::size_t n = std::max(nx, ny);
  std::vector<std::pair<std::size_t, std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = {ix[i % nx], iy[i % ny]};
  return out;
}

std::unique_ptr<Trainer> train(const TrainData& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  if (data.x.empty() || data.y.empty()) throw ConfigError("training needs at least one sample per domain");
  auto trainer = std::make_unique<Trainer>(cfg);
  if (hooks.metrics) write_metrics_header(*hooks.metrics);
  if (!hooks.checkpoint_dir.empty()) std::filesystem::create_directories(hooks.checkpoint_dir);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (auto [i, j] : epoch_pairs(data.x.size(), data.y.size(), cfg.seed, epoch)) {
      if (cfg.max_steps > 0 && trainer->steps_done() >= cfg.max_steps) return trainer;
      const auto r = trainer->step(data.x[i], data.y[j]);
      if (hooks.metrics) {
        write_metrics_row(*hooks.metrics, r);
        hooks.metrics->flush();
      }
      if (hooks.on_step) hooks.on_step(r);
      if (cfg.checkpoint_interval > 0 && !hooks.checkpoint_dir.empty() &&
          trainer->steps_done() % cfg.checkpoint_interval == 0) {
        char name[32];
        std::snprintf(name, sizeof name, "step_%06lld.ckpt", static_cast<long long>(trainer->steps_done()));
        save_checkpoint(*trainer, hooks.checkpoint_dir / name);
      }
    }
  }
  return trainer;
}

std::unique_ptr<Trainer> train(const synth::Manifest& manifest, const TrainConfig& cfg, const TrainHooks& hooks) {
  return train(load_training_data(manifest, cfg.model.resolution), cfg, hooks);
}

}  // namespace sara
