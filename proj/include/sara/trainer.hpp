#pragma once

// Joint training of the transfer network and the two domain critics.

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <vector>

#include "sara/config.hpp"
#include "sara/synthfaces.hpp"

namespace sara {

/// One face with its exact label map.
struct Face {
  Image image;
  LabelMap labels;
};

Face load_face(const synth::Manifest& m, const synth::ManifestEntry& e, int resolution);

/// Adam over a fixed list of parameters.
template <class S>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<ad::Param<S>*> params, double lr, double beta1, double beta2, double eps)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    const S step_size = S(lr_ / c1);
    const S b1(b1_), b2(b2_), eps(eps_), inv_c2 = S(1.0 / c2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* p = params_[i];
      m_[i] = b1 * m_[i] + (S(1) - b1) * p->grad;
      v_[i] = b2 * v_[i] + (S(1) - b2) * p->grad.cwiseAbs2();
      p->value.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + eps);
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  const std::vector<ad::Param<S>*>& params() const { return params_; }
  std::vector<Mat<S>>& first_moments() { return m_; }
  std::vector<Mat<S>>& second_moments() { return v_; }
  const std::vector<Mat<S>>& first_moments() const { return m_; }
  const std::vector<Mat<S>>& second_moments() const { return v_; }

 private:
  std::vector<ad::Param<S>*> params_;
  std::vector<Mat<S>> m_, v_;
  double lr_ = 1e-4, b1_ = 0, b2_ = 0.9, eps_ = 1e-8;
  std::int64_t t_ = 0;
};

struct StepReport {
  std::int64_t step = 0;
  std::array<double, loss::kTermCount> terms{};  // unweighted, in term order
  double total = 0;                              // weighted generator objective
  double d_loss = 0;
};

constexpr std::array<const char*, 9> kMetricColumns{"step",  "domain", "perc", "corr",  "makeup",
                                                    "cycle", "adv",    "id",   "d_loss"};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const StepReport& r);

struct StepControl {
  bool update_critic = true;
  bool update_generator = true;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  const TrainConfig& config() const { return cfg_; }
  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  const loss::PerceptualNet<float>& perceptual() const { return *perc_; }
  Adam<float>& generator_optimizer() { return g_opt_; }
  Adam<float>& critic_optimizer() { return d_opt_; }
  const Adam<float>& generator_optimizer() const { return g_opt_; }
  const Adam<float>& critic_optimizer() const { return d_opt_; }
  std::int64_t steps_done() const { return step_; }
  void set_steps_done(std::int64_t s) { step_ = s; }

  /// One joint update on (x: non-makeup face, y: makeup face). Parameter
  /// gradients of the last update stay readable until the next call.
  StepReport step(const Face& x, const Face& y, const StepControl& control = {});

 private:
  TrainConfig cfg_;
  std::unique_ptr<Model> model_;
  std::unique_ptr<loss::PerceptualNet<float>> perc_;
  Adam<float> g_opt_, d_opt_;
  std::int64_t step_ = 0;
  Rng aug_rng_;
};

struct TrainData {
  std::vector<Face> x, y;
};

TrainData load_training_data(const synth::Manifest& m, int resolution, const std::string& split = "train");

/// Seeded epoch-wise pairing: each epoch shuffles both domains and pairs the
/// i-th entries (the shorter list wraps). Returns (x index, y index) pairs.
std::vector<std::pair<std::size_t, std::size_t>> epoch_pairs(std::size_t nx, std::size_t ny,
                                                             std::uint64_t seed, int epoch);

struct TrainHooks {
  std::ostream* metrics = nullptr;  // TSV log, header included
  std::function<void(const StepReport&)> on_step;
  std::filesystem::path checkpoint_dir;  // intermediate checkpoints when non-empty
};

/// Runs the configured epochs (or max_steps) and returns the trainer holding
/// the final state.
std::unique_ptr<Trainer> train(const TrainData& data, const TrainConfig& cfg, const TrainHooks& hooks = {});
std::unique_ptr<Trainer> train(const synth::Manifest& manifest, const TrainConfig& cfg,
                               const TrainHooks& hooks = {});

}  // namespace sara
