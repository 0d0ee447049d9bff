#pragma once

// Inference-time controls: full, partial, shade-interpolated and removal
// transfer on top of a trained model.

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <utility>
#include <vector>

#include "sara/trainer.hpp"

namespace sara::control {

enum class Second { source, ref2 };
enum class Mode { transfer, removal };

Second parse_second(const std::string& s);
Mode parse_mode(const std::string& s);

struct TransferRequest {
  Face source;
  std::vector<Face> references;  // 1 to 3
  /// Part -> reference index. Empty means every part from reference 0;
  /// parts left out of a non-empty map keep the source's own look.
  std::map<Region, int> parts;
  double shade = 1.0;  // weight of the selected style against `second`
  Second second = Second::source;
  Mode mode = Mode::transfer;
};

struct TransferResult {
  Image image;
  Image warped;              // warped reference at correspondence resolution
  Grid<float> warped_masks;  // 3 x h x w, rows (lip, skin, eyes)
};

using Cond = gen::Conditioning<float>;

/// Combines per-part conditionings. `parts[i]` supplies part i's warped mask
/// row, its masked warped image and style column; an omitted part contributes
/// a zero mask row and a zero style column. Duplicate parts throw.
Cond compose_partial(const std::vector<std::pair<Region, const Cond*>>& parts);

/// alpha * a + (1 - alpha) * b on the warped images and style matrices; the
/// warped masks (the target layout) are taken from `a`. Exact at both ends.
Cond interpolate_style(const Cond& a, const Cond& b, double alpha);

/// Validates the request; ArgumentError codes: shade_out_of_range,
/// missing_reference, missing_mask, bad_part_reference, missing_ref2.
void validate(const TransferRequest& req, int resolution);

TransferResult transfer(const Model& model, const TransferRequest& req);

/// Model plus a lock: concurrent callers are served one generator pass at a
/// time.
class Engine {
 public:
  explicit Engine(std::unique_ptr<Trainer> trained) : trained_(std::move(trained)) {}

  const Model& model() const { return trained_->model(); }
  TransferResult run(const TransferRequest& req) {
    std::lock_guard<std::mutex> lock(mu_);
    return transfer(trained_->model(), req);
  }

 private:
  std::unique_ptr<Trainer> trained_;
  std::mutex mu_;
};

}  // namespace sara::control
