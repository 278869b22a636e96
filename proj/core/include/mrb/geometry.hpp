#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace mrb {

/// Axis-aligned box in continuous image coordinates. Construction enforces
/// finite coordinates and strictly positive width and height.
class BBox {
 public:
  BBox(double left, double top, double right, double bottom);

  /// Returns nullopt instead of throwing when the coordinates are invalid.
  static std::optional<BBox> try_make(double left, double top, double right, double bottom) noexcept;
  static BBox from_center(double cx, double cy, double width, double height);

  double left() const noexcept { return left_; }
  double top() const noexcept { return top_; }
  double right() const noexcept { return right_; }
  double bottom() const noexcept { return bottom_; }

  double width() const noexcept { return right_ - left_; }
  double height() const noexcept { return bottom_ - top_; }
  double area() const noexcept { return width() * height(); }
  double center_x() const noexcept { return 0.5 * (left_ + right_); }
  double center_y() const noexcept { return 0.5 * (top_ + bottom_); }

  BBox translated(double dx, double dy) const { return {left_ + dx, top_ + dy, right_ + dx, bottom_ + dy}; }

  friend bool operator==(const BBox&, const BBox&) = default;

 private:
  double left_;
  double top_;
  double right_;
  double bottom_;
};

enum class FaceLabel { Masked, Unmasked, Unknown };

std::string_view to_string(FaceLabel label) noexcept;
std::optional<FaceLabel> parse_face_label(std::string_view text) noexcept;

struct Annotation {
  BBox box;
  FaceLabel label;
};

/// Detector output. The label is Masked or Unmasked and the confidence lies
/// in [0, 1]; both are checked on construction.
class Detection {
 public:
  Detection(BBox box, FaceLabel label, double confidence);

  const BBox& box() const noexcept { return box_; }
  FaceLabel label() const noexcept { return label_; }
  double confidence() const noexcept { return confidence_; }

  friend bool operator==(const Detection&, const Detection&) = default;

 private:
  BBox box_;
  FaceLabel label_;
  double confidence_;
};

enum class SizeBucket { S, M, L, Excluded };

std::string_view to_string(SizeBucket bucket) noexcept;

/// Intersection over union; 0 for disjoint boxes.
double iou(const BBox& a, const BBox& b) noexcept;

/// S: both sides in [8, 16]. L: both sides > 32. Excluded: any side < 8.
/// Everything else is M.
SizeBucket size_bucket(const BBox& box) noexcept;

}  // namespace mrb
