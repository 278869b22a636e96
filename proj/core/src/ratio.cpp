#include "mrb/ratio.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "mrb/error.hpp"

namespace mrb {

std::optional<double> RatioReport::ratio() const noexcept {
  const double t = total();
  if (!(t > 0.0)) return std::nullopt;
  return masked / t;
}

std::optional<double> RatioReport::unmasked_ratio() const noexcept {
  const double t = total();
  if (!(t > 0.0)) return std::nullopt;
  return unmasked / t;
}

std::string_view to_string(Condition c) noexcept { return c == Condition::Daytime ? "DT" : "NT"; }
std::string_view to_string(Period p) noexcept { return p == Period::Before ? "before" : "during"; }

std::optional<Condition> parse_condition(std::string_view text) noexcept {
  if (text == "DT") return Condition::Daytime;
  if (text == "NT") return Condition::Nighttime;
  return std::nullopt;
}

std::optional<Period> parse_period(std::string_view text) noexcept {
  if (text == "before") return Period::Before;
  if (text == "during") return Period::During;
  return std::nullopt;
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw Error("NMS IoU threshold must lie in (0, 1]");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence() > dets[b].confidence(); });

  std::vector<Detection> kept;
  for (std::size_t i : order) {
    const auto& d = dets[i];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.label() == d.label() && iou(k.box(), d.box()) >= iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

RatioReport detection_ratio(std::span<const Detection> dets, double confidence_threshold) {
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) throw Error("confidence threshold must lie in [0, 1]");
  RatioReport r;
  for (const auto& d : dets) {
    if (d.confidence() < confidence_threshold) continue;
    (d.label() == FaceLabel::Masked ? r.masked : r.unmasked) += 1.0;
  }
  return r;
}

RatioReport annotation_ratio(std::span<const Annotation> faces) {
  RatioReport r;
  for (const auto& f : faces) {
    if (f.label == FaceLabel::Masked) r.masked += 1.0;
    if (f.label == FaceLabel::Unmasked) r.unmasked += 1.0;
  }
  return r;
}

RatioReport density_ratio(double count_total, double count_unmasked) {
  if (!std::isfinite(count_total) || !std::isfinite(count_unmasked)) throw Error("density counts must be finite");
  const double total = std::max(count_total, 0.0);
  const double unmasked = std::clamp(count_unmasked, 0.0, total);
  return {total - unmasked, unmasked};
}

std::vector<VideoRatio> aggregate_by_video(std::span<const ImageMeta> meta, std::span<const RatioReport> reports) {
  if (meta.size() != reports.size()) throw Error("aggregate_by_video: metadata and reports differ in length");
  struct Acc {
    std::size_t images = 0;
    std::size_t defined = 0;
    double mean = 0.0;
  };
  std::map<std::string, Acc> acc;
  for (std::size_t i = 0; i < meta.size(); ++i) {
    auto& a = acc[meta[i].video_id];
    ++a.images;
    if (auto r = reports[i].ratio()) {
      // Running mean: identical inputs reproduce the input exactly.
      ++a.defined;
      a.mean += (*r - a.mean) / static_cast<double>(a.defined);
    }
  }
  std::vector<VideoRatio> out;
  out.reserve(acc.size());
  for (const auto& [id, a] : acc) {
    VideoRatio v{id, a.images, std::nullopt};
    if (a.defined > 0) v.mean_ratio = a.mean;
    out.push_back(std::move(v));
  }
  return out;
}

ConditionGroups group_by_condition(std::span<const ImageMeta> meta) {
  ConditionGroups g;
  for (std::size_t i = 0; i < meta.size(); ++i) {
    (meta[i].condition == Condition::Daytime ? g.daytime : g.nighttime).push_back(i);
  }
  return g;
}

}  // namespace mrb
