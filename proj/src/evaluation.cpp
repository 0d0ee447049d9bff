#include "sara/evaluation.hpp"

#include <cstring>

namespace sara::eval {

Eigen::Vector3d region_mean(const Image& img, const LabelMap& labels, Region r) {
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.labels.size(); ++i)
    if (labels.labels[i] == std::uint8_t(r)) {
      sum += img.data.col(Eigen::Index(i)).cast<double>();
      ++n;
    }
  if (n == 0) throw ArgumentError(std::string("region '") + region_name(r) + "' is empty");
  return sum / double(n);
}

namespace {

bool bit_equal(const Image& a, const Image& b) {
  return a.height == b.height && a.width == b.width && a.data.size() == b.data.size() &&
         std::memcmp(a.data.data(), b.data.data(), sizeof(float) * std::size_t(a.data.size())) == 0;
}

Image plain_transfer(const Model& m, const Face& src, const Face& ref) {
  ad::NoGradGuard g;
  return m.transfer(ad::constant(src.image), src.labels, ad::constant(ref.image), ref.labels).grid();
}

double mean_abs(const Image& a, const Image& b) { return double((a.data - b.data).cwiseAbs().mean()); }

}  // namespace

Report evaluate(const Model& model, const std::vector<Face>& xs, const std::vector<Face>& ys, std::size_t limit) {
  Report rep;
  const std::size_t n = std::min({xs.size(), ys.size(), limit});
  for (std::size_t i = 0; i < n; ++i) {
    const Face& x = xs[i];
    const Face& y = ys[i];

    control::TransferRequest full;
    full.source = x;
    full.references = {y};
    const Image out = control::transfer(model, full).image;

    const auto lip_out = region_mean(out, x.labels, Region::lip);
    rep.lip.push_back({(lip_out - region_mean(y.image, y.labels, Region::lip)).norm(),
                       (lip_out - region_mean(x.image, x.labels, Region::lip)).norm()});

    // lip-only transfer against the source styled by itself
    control::TransferRequest lip_only = full;
    lip_only.parts = {{Region::lip, 0}};
    const Image partial = control::transfer(model, lip_only).image;
    const Image self = plain_transfer(model, x, x);
    rep.locality.push_back(
        {(region_mean(partial, x.labels, Region::lip) - region_mean(self, x.labels, Region::lip)).norm(),
         (region_mean(partial, x.labels, Region::skin) - region_mean(self, x.labels, Region::skin)).norm()});

    ShadeOutcome s;
    s.alpha_one_exact = bit_equal(out, plain_transfer(model, x, y));
    control::TransferRequest faded = full;
    faded.shade = 0.0;
    faded.second = control::Second::source;
    s.l1_alpha_one = mean_abs(out, x.image);
    s.l1_alpha_zero = mean_abs(control::transfer(model, faded).image, x.image);
    rep.shade.push_back(s);

    control::TransferRequest removal;
    removal.source = y;
    removal.references = {x};
    removal.mode = control::Mode::removal;
    rep.removal_exact.push_back(bit_equal(control::transfer(model, removal).image, plain_transfer(model, y, x)));
  }
  return rep;
}

int Report::lip_closer_count() const {
  int c = 0;
  for (const auto& l : lip) c += l.closer();
  return c;
}

double Report::mean_lip_change() const {
  double s = 0;
  for (const auto& l : locality) s += l.lip_change;
  return locality.empty() ? 0 : s / double(locality.size());
}

double Report::mean_skin_change() const {
  double s = 0;
  for (const auto& l : locality) s += l.skin_change;
  return locality.empty() ? 0 : s / double(locality.size());
}

bool Report::locality_holds(double factor) const {
  return !locality.empty() && mean_lip_change() > factor * mean_skin_change();
}

double Report::mean_l1_alpha_one() const {
  double s = 0;
  for (const auto& v : shade) s += v.l1_alpha_one;
  return shade.empty() ? 0 : s / double(shade.size());
}

double Report::mean_l1_alpha_zero() const {
  double s = 0;
  for (const auto& v : shade) s += v.l1_alpha_zero;
  return shade.empty() ? 0 : s / double(shade.size());
}

bool Report::shade_exact() const {
  bool ok = !shade.empty();
  for (const auto& v : shade) ok = ok && v.alpha_one_exact;
  return ok;
}

bool Report::removal_holds() const {
  bool ok = !removal_exact.empty();
  for (bool b : removal_exact) ok = ok && b;
  return ok;
}

nlohmann::json to_json(const Report& r) {
  nlohmann::json lip = nlohmann::json::array(), loc = nlohmann::json::array(), shade = nlohmann::json::array();
  for (const auto& l : r.lip)
    lip.push_back({{"to_reference", l.to_reference}, {"to_source", l.to_source}, {"closer", l.closer()}});
  for (const auto& l : r.locality) loc.push_back({{"lip_change", l.lip_change}, {"skin_change", l.skin_change}});
  for (const auto& s : r.shade)
    shade.push_back({{"alpha_one_exact", s.alpha_one_exact},
                     {"l1_alpha_one", s.l1_alpha_one},
                     {"l1_alpha_zero", s.l1_alpha_zero}});
  return {
      {"pairs", r.lip.size()},
      {"lip_color", {{"closer_count", r.lip_closer_count()}, {"per_pair", lip}}},
      {"locality",
       {{"mean_lip_change", r.mean_lip_change()},
        {"mean_skin_change", r.mean_skin_change()},
        {"holds_5x", r.locality_holds()},
        {"per_pair", loc}}},
      {"shade",
       {{"alpha_one_exact", r.shade_exact()},
        {"mean_l1_alpha_one", r.mean_l1_alpha_one()},
        {"mean_l1_alpha_zero", r.mean_l1_alpha_zero()},
        {"per_pair", shade}}},
      {"removal_exact", r.removal_holds()},
  };
}

}  // namespace sara::eval
