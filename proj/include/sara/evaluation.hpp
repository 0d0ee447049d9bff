#pragma once

// Post-training measurements on held-out pairs: lip color transfer, partial
// transfer locality, shade endpoints and removal routing.

#include <vector>

#include "json.hpp"
#include "sara/control.hpp"

namespace sara::eval {

/// Mean RGB (in [-1, 1]) over the pixels labeled `r`.
Eigen::Vector3d region_mean(const Image& img, const LabelMap& labels, Region r);

struct LipOutcome {
  double to_reference = 0;  // |lip mean(output) - lip mean(reference)|
  double to_source = 0;     // |lip mean(output) - lip mean(source)|
  bool closer() const { return to_reference < to_source; }
};

struct LocalityOutcome {
  double lip_change = 0;   // lip-only transfer vs. self-styled output, lip region
  double skin_change = 0;  // same, skin region
};

struct ShadeOutcome {
  bool alpha_one_exact = false;  // shade=1 output bit-equal to plain transfer
  double l1_alpha_one = 0;       // mean |output - source|, shade 1
  double l1_alpha_zero = 0;      // same, shade 0 with second=source
};

struct Report {
  std::vector<LipOutcome> lip;
  std::vector<LocalityOutcome> locality;
  std::vector<ShadeOutcome> shade;
  std::vector<bool> removal_exact;

  int lip_closer_count() const;
  double mean_lip_change() const;
  double mean_skin_change() const;
  bool locality_holds(double factor = 5.0) const;
  double mean_l1_alpha_one() const;
  double mean_l1_alpha_zero() const;
  bool shade_exact() const;
  bool removal_holds() const;
};

/// Runs every measurement on pairs (xs[i], ys[i]) for i < min(sizes, limit).
Report evaluate(const Model& model, const std::vector<Face>& xs, const std::vector<Face>& ys, std::size_t limit = 8);

nlohmann::json to_json(const Report& r);

}  // namespace sara::eval
