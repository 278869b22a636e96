#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrb/geometry.hpp"
#include "mrb/ratio.hpp"

namespace mrb {

struct EvalConfig {
  double iou_threshold = 0.4;
  std::size_t min_faces = 5;  ///< images with fewer ground-truth faces are left out of ratio correlation

  void validate() const;
};

/// Ground truth and detections of one image.
struct ImageEval {
  std::vector<Annotation> gts;
  std::vector<Detection> dets;
};

/// All-point interpolated average precision for one class, optionally
/// restricted to one size bucket. Faces of the class outside the bucket,
/// Excluded faces and Unknown faces act as ignore regions: detections that
/// only match them count as neither TP nor FP. Returns nullopt when no
/// face is in scope.
std::optional<double> average_precision(std::span<const ImageEval> images, const EvalConfig& cfg, FaceLabel cls,
                                        std::optional<SizeBucket> bucket = std::nullopt);

/// Unweighted mean over the defined cells. Throws if none is defined.
double mean_ap(std::span<const std::optional<double>> cells);

double mae(std::span<const double> estimate, std::span<const double> truth);

/// Pearson correlation; nullopt when either series has zero variance.
std::optional<double> pearson(std::span<const double> estimate, std::span<const double> truth);

struct RatioPair {
  std::size_t image = 0;  ///< index into the input sequence
  double truth = 0.0;
  double estimate = 0.0;
};

/// Per-image (truth, estimate) ratios that survive the face-count filter:
/// images with fewer than `min_faces` ground-truth faces, or with an
/// undefined ratio on either side, are dropped.
std::vector<RatioPair> ratio_pairs(std::span<const RatioReport> estimate, std::span<const RatioReport> truth,
                                   const EvalConfig& cfg);

/// Pearson correlation over ratio_pairs. Independent of image order.
std::optional<double> ratio_correlation(std::span<const RatioReport> estimate, std::span<const RatioReport> truth,
                                        const EvalConfig& cfg);

struct ApCell {
  FaceLabel cls;
  SizeBucket bucket;
  std::optional<double> ap;
};

/// The six {masked, unmasked} x {L, M, S} cells and their mean.
struct DetectionReport {
  std::vector<ApCell> cells;
  std::optional<double> overall_masked;
  std::optional<double> overall_unmasked;
  std::optional<double> map;
};

DetectionReport evaluate_detections(std::span<const ImageEval> images, const EvalConfig& cfg);

struct CountMetric {
  std::string quantity;
  std::optional<double> mae;
  std::optional<double> gamma;
  std::size_t n = 0;
};

/// MAE and correlation for masked, unmasked and total counts over all
/// images, plus the filtered ratio correlation.
std::vector<CountMetric> evaluate_counts(std::span<const RatioReport> estimate, std::span<const RatioReport> truth,
                                         const EvalConfig& cfg);

}  // namespace mrb
