#include "sara/control.hpp"

#include <set>

namespace sara::control {

Second parse_second(const std::string& s) {
  if (s == "source") return Second::source;
  if (s == "ref2") return Second::ref2;
  throw ArgumentError("bad_second", "second interpolant must be 'source' or 'ref2', got '" + s + "'");
}

Mode parse_mode(const std::string& s) {
  if (s == "transfer") return Mode::transfer;
  if (s == "removal") return Mode::removal;
  throw ArgumentError("bad_mode", "mode must be 'transfer' or 'removal', got '" + s + "'");
}

namespace {

using V = ad::Var<float>;

V like(Mat<float> m, const V& shape) { return ad::constant<float>(std::move(m), shape.height(), shape.width()); }

}  // namespace

Cond compose_partial(const std::vector<std::pair<Region, const Cond*>>& parts) {
  if (parts.empty()) throw ArgumentError("missing_parts", "compose_partial needs at least one part");
  std::set<Region> seen;
  const Cond& first = *parts.front().second;
  Mat<float> masks = Mat<float>::Zero(3, first.warped_masks.cols());
  Mat<float> out = Mat<float>::Zero(3, first.warped_out.cols());
  Mat<float> style = Mat<float>::Zero(first.style.rows(), 3);
  for (const auto& [region, cond] : parts) {
    if (!seen.insert(region).second)
      throw ArgumentError("duplicate_part", std::string("part '") + region_name(region) + "' assigned twice");
    if (cond->warped_masks.cols() != masks.cols() || cond->style.rows() != style.rows())
      throw ShapeError("compose_partial: part conditionings differ in shape");
    const int i = style_column(region);
    masks.row(i) = cond->warped_masks.value().row(i);
    out += (cond->warped_image.value().array().rowwise() * masks.row(i).array()).matrix();
    style.col(i) = cond->style.value().col(i);
  }
  out = out.cwiseMax(-1.0f).cwiseMin(1.0f);
  Cond c;
  c.warped_masks = like(masks, first.warped_masks);
  c.warped_out = like(out, first.warped_out);
  c.warped_image = c.warped_out;
  c.style = ad::constant<float>(std::move(style));
  return c;
}

Cond interpolate_style(const Cond& a, const Cond& b, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ArgumentError("shade_out_of_range", "shade must lie in [0, 1], got " + std::to_string(alpha));
  auto same = [](const V& p, const V& q) { return p.rows() == q.rows() && p.cols() == q.cols(); };
  if (!same(a.warped_image, b.warped_image) || !same(a.warped_out, b.warped_out) || !same(a.style, b.style))
    throw ShapeError("interpolate_style: operands differ in shape");
  if (alpha == 1.0) return a;
  Cond c;
  c.warped_masks = a.warped_masks;
  if (alpha == 0.0) {
    c.warped_image = b.warped_image;
    c.warped_out = b.warped_out;
    c.style = b.style;
    return c;
  }
  const float w = float(alpha), v = 1.0f - float(alpha);
  auto mix = [&](const V& p, const V& q) { return like(w * p.value() + v * q.value(), p); };
  c.warped_image = mix(a.warped_image, b.warped_image);
  c.warped_out = mix(a.warped_out, b.warped_out);
  c.style = mix(a.style, b.style);
  return c;
}

void validate(const TransferRequest& req, int resolution) {
  if (!(req.shade >= 0.0 && req.shade <= 1.0))
    throw ArgumentError("shade_out_of_range", "shade must lie in [0, 1], got " + std::to_string(req.shade));
  if (req.references.empty() || req.references.size() > 3)
    throw ArgumentError("missing_reference", "between one and three references are required");
  auto check_face = [&](const Face& f, const std::string& what) {
    if (f.image.channels() != 3 || f.image.height != resolution || f.image.width != resolution)
      throw ArgumentError("bad_image", what + " image must be " + std::to_string(resolution) + "x" +
                                           std::to_string(resolution) + " RGB");
    if (f.labels.height != f.image.height || f.labels.width != f.image.width)
      throw ArgumentError("missing_mask", what + " has no label map of matching size");
  };
  check_face(req.source, "source");
  for (std::size_t k = 0; k < req.references.size(); ++k) check_face(req.references[k], "reference " + std::to_string(k));
  for (const auto& [region, idx] : req.parts) {
    if (region == Region::background)
      throw ArgumentError("bad_part_reference", "background is not a transferable part");
    if (idx < 0 || std::size_t(idx) >= req.references.size())
      throw ArgumentError("bad_part_reference", std::string("part '") + region_name(region) +
                                                    "' points to a missing reference");
  }
  if (req.shade < 1.0 && req.second == Second::ref2 && req.references.size() < 2)
    throw ArgumentError("missing_ref2", "second=ref2 needs a second reference");
}

TransferResult transfer(const Model& model, const TransferRequest& req) {
  validate(req, model.config().resolution);
  ad::NoGradGuard no_grad;
  const V src = ad::constant(req.source.image);
  const auto& src_labels = req.source.labels;

  std::map<int, Styled<float>> styled;  // reference index -> conditioning; -1 is the source itself
  auto cond_for = [&](int k) -> const Cond& {
    auto it = styled.find(k);
    if (it == styled.end()) {
      const Face& f = k < 0 ? req.source : req.references[std::size_t(k)];
      it = styled.emplace(k, model.condition(src_labels, ad::constant(f.image), f.labels)).first;
    }
    return it->second.cond;
  };

  std::array<int, 3> owner{0, 0, 0};  // style-column order
  if (!req.parts.empty()) {
    owner = {-1, -1, -1};
    for (const auto& [region, idx] : req.parts) owner[std::size_t(style_column(region))] = idx;
  }

  Cond selected;
  if (owner[0] == owner[1] && owner[1] == owner[2]) {
    selected = cond_for(owner[0]);
  } else {
    std::vector<std::pair<Region, const Cond*>> parts;
    for (int i = 0; i < 3; ++i) parts.emplace_back(kMakeupRegions[std::size_t(i)], &cond_for(owner[std::size_t(i)]));
    selected = compose_partial(parts);
  }

  const Cond cond = req.shade == 1.0
                        ? selected
                        : interpolate_style(selected, cond_for(req.second == Second::source ? -1 : 1), req.shade);

  TransferResult r;
  r.image = model.generate(src, cond).grid();
  r.warped = cond.warped_image.grid();
  r.warped_masks = cond.warped_masks.grid();
  return r;
}

}  // namespace sara::control
