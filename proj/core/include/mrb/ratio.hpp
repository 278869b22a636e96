#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrb/geometry.hpp"

namespace mrb {

/// Face tallies of one image (or aggregate). The ratio is absent, never
/// zero, when there are no faces.
struct RatioReport {
  double masked = 0.0;
  double unmasked = 0.0;

  double total() const noexcept { return masked + unmasked; }
  std::optional<double> ratio() const noexcept;
  std::optional<double> unmasked_ratio() const noexcept;
};

enum class Condition { Daytime, Nighttime };
enum class Period { Before, During };

std::string_view to_string(Condition c) noexcept;
std::string_view to_string(Period p) noexcept;
std::optional<Condition> parse_condition(std::string_view text) noexcept;  // "DT" / "NT"
std::optional<Period> parse_period(std::string_view text) noexcept;        // "before" / "during"

struct ImageMeta {
  std::string video_id;
  Condition condition = Condition::Daytime;
  Period period = Period::During;
};

inline constexpr double kDefaultConfidenceThreshold = 0.5;
inline constexpr double kDefaultNmsIou = 0.4;

/// Greedy class-wise suppression. Detections are visited by descending
/// confidence (ties keep input order); one is kept iff its IoU with every
/// kept detection of the same class is below `iou_threshold`. The result
/// is in visiting order.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold = kDefaultNmsIou);

/// Counts detections with confidence >= `confidence_threshold` per label.
RatioReport detection_ratio(std::span<const Detection> dets, double confidence_threshold = kDefaultConfidenceThreshold);

/// Ground-truth tallies; Unknown faces are not counted.
RatioReport annotation_ratio(std::span<const Annotation> faces);

/// Report from a total and an unmasked count (e.g. two density-map
/// integrals). The unmasked count is clamped to [0, total] and
/// masked = total - unmasked.
RatioReport density_ratio(double count_total, double count_unmasked);

struct VideoRatio {
  std::string video_id;
  std::size_t n_images = 0;
  std::optional<double> mean_ratio;
};

/// Unweighted mean of the defined per-image ratios of each video, in
/// ascending video id order.
std::vector<VideoRatio> aggregate_by_video(std::span<const ImageMeta> meta, std::span<const RatioReport> reports);

struct ConditionGroups {
  std::vector<std::size_t> daytime;
  std::vector<std::size_t> nighttime;
};

/// Partitions image indices by capture condition, preserving input order.
ConditionGroups group_by_condition(std::span<const ImageMeta> meta);

}  // namespace mrb
