#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mrb/geometry.hpp"

namespace mrb {

struct AnchorLevel {
  int level = 3;               ///< pyramid level; stride is 2^level
  std::vector<double> scales;  ///< base sizes in pixels
};

struct AnchorConfig {
  std::vector<AnchorLevel> levels;
  /// Width:height ratios. A ratio r gives width = size*sqrt(r) and
  /// height = size/sqrt(r), so every ratio keeps the area size^2.
  std::vector<double> ratios{0.5, 1.0, 2.0};

  /// Levels 3..7 with one scale each: 16, 32, 64, 128, 256.
  static AnchorConfig defaults();
};

struct Anchor {
  BBox box;
  int level;
};

/// Anchors ordered by level, then grid row, grid column, scale and ratio.
struct AnchorSet {
  std::vector<Anchor> anchors;

  std::size_t size() const noexcept { return anchors.size(); }
};

/// One anchor per (grid cell, scale, ratio) per level. The grid at level l
/// is ceil(image / 2^l) cells and anchors are centred on cell centres.
AnchorSet generate_anchors(int image_width, int image_height, const AnchorConfig& config);

struct BoxDelta {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;
};

BoxDelta encode_box(const BBox& anchor, const BBox& gt);
BBox decode_box(const BBox& anchor, const BoxDelta& t);

enum class Assignment { Positive, Negative, Ignore };

struct AnchorTarget {
  Assignment assignment = Assignment::Negative;
  std::size_t gt_index = 0;  ///< valid for Positive
  double objectness = 0.0;   ///< 1 for Positive, else 0
  double masked = 0.0;       ///< 1 when matched to a masked face (Positive only)
  BoxDelta box;              ///< regression target (Positive only)
};

struct MatchResult {
  std::vector<AnchorTarget> targets;

  std::size_t positives() const noexcept;
};

struct MatchConfig {
  double positive_iou = 0.5;
  double negative_iou = 0.3;
};

/// Assigns each anchor from its best-overlapping face (ties go to the lower
/// face index). Unknown faces act as ignore regions. Every labelled face
/// additionally claims its best still-unclaimed anchor, if that overlap is
/// positive.
MatchResult match_anchors(const AnchorSet& anchors, std::span<const Annotation> gts, const MatchConfig& config = {});

inline constexpr double kProbabilityEpsilon = 1e-7;

/// Binary cross-entropy with the probability clamped to [eps, 1 - eps].
double binary_cross_entropy(double p, double target);

/// Focal loss on the masked probability: -alpha (1-p)^gamma ln p for a
/// masked target and -(1-alpha) p^gamma ln(1-p) otherwise.
double focal_loss(double p, double target, double alpha, double gamma);

double smooth_l1(double x);

struct AnchorPrediction {
  double objectness = 0.5;
  double masked = 0.5;
  BoxDelta box;
};

struct LossConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  bool normalize_by_positives = false;
};

struct LossBreakdown {
  double objectness = 0.0;
  double classification = 0.0;
  double box = 0.0;

  double total() const noexcept { return objectness + classification + box; }
};

/// Objectness BCE over non-ignored anchors plus focal classification and
/// smooth-L1 box terms over positive anchors.
LossBreakdown multitask_loss(std::span<const AnchorPrediction> preds, const MatchResult& match,
                             const LossConfig& config = {});

}  // namespace mrb
