#include "sara/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sara::loss {

Reduction parse_reduction(const std::string& s) {
  if (s == "mean") return Reduction::mean;
  if (s == "sum") return Reduction::sum;
  throw ArgumentError("unknown reduction '" + s + "' (expected mean|sum)");
}

const char* reduction_name(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }

CorrMode parse_corr_mode(const std::string& s) {
  if (s == "as_written") return CorrMode::as_written;
  if (s == "transpose") return CorrMode::transpose;
  throw ArgumentError("unknown corr mode '" + s + "' (expected as_written|transpose)");
}

const char* corr_mode_name(CorrMode m) { return m == CorrMode::as_written ? "as_written" : "transpose"; }

double total_loss(const std::array<double, kTermCount>& terms, const LossWeights& w) {
  const auto ws = w.as_array();
  double total = 0;
  for (std::size_t k = 0; k < kTermCount; ++k) total += ws[k] * terms[k];
  return total;
}

std::vector<float> match_values(const std::vector<float>& values, std::vector<float> reference) {
  const std::size_t n = values.size(), m = reference.size();
  if (m == 0) return values;
  std::sort(reference.begin(), reference.end());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  std::vector<float> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double t = n == 1 ? double(m - 1) / 2.0 : double(r) * double(m - 1) / double(n - 1);
    const std::size_t lo = std::min(std::size_t(std::floor(t)), m - 1);
    const double f = t - double(lo);
    double v = reference[lo];
    if (f > 0 && lo + 1 < m) v += f * (double(reference[lo + 1]) - double(reference[lo]));
    out[order[r]] = float(v);
  }
  return out;
}

Image histogram_match(const Image& source, const Image& reference, const LabelMap& source_map,
                      const LabelMap& reference_map) {
  if (source.height != source_map.height || source.width != source_map.width ||
      reference.height != reference_map.height || reference.width != reference_map.width)
    throw ShapeError("histogram_match: image and label map sizes differ");
  if (source.channels() != reference.channels()) throw ShapeError("histogram_match: channel mismatch");

  Image out = source;
  for (Region region : kMakeupRegions) {
    const auto id = std::uint8_t(region);
    std::vector<Eigen::Index> src_px, ref_px;
    for (std::size_t i = 0; i < source_map.labels.size(); ++i)
      if (source_map.labels[i] == id) src_px.push_back(Eigen::Index(i));
    for (std::size_t i = 0; i < reference_map.labels.size(); ++i)
      if (reference_map.labels[i] == id) ref_px.push_back(Eigen::Index(i));
    if (src_px.empty() || ref_px.empty()) continue;

    for (int c = 0; c < source.channels(); ++c) {
      std::vector<float> vals(src_px.size()), ref(ref_px.size());
      for (std::size_t k = 0; k < src_px.size(); ++k) vals[k] = source.data(c, src_px[k]);
      for (std::size_t k = 0; k < ref_px.size(); ++k) ref[k] = reference.data(c, ref_px[k]);
      const auto matched = match_values(vals, std::move(ref));
      for (std::size_t k = 0; k < src_px.size(); ++k) out.data(c, src_px[k]) = matched[k];
    }
  }
  return out;
}

}  // namespace sara::loss
