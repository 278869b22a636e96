#include "mrb/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mrb/error.hpp"

namespace mrb {

ParseError::ParseError(std::string source, std::size_t line, std::size_t column, const std::string& what)
    : Error([&] {
        std::ostringstream os;
        os << source << ':' << line;
        if (column > 0) os << ':' << column;
        os << ": " << what;
        return os.str();
      }()),
      source_(std::move(source)),
      line_(line),
      column_(column) {}

namespace {

bool valid_box(double l, double t, double r, double b) noexcept {
  return std::isfinite(l) && std::isfinite(t) && std::isfinite(r) && std::isfinite(b) && r > l && b > t;
}

}  // namespace

BBox::BBox(double left, double top, double right, double bottom)
    : left_(left), top_(top), right_(right), bottom_(bottom) {
  if (!valid_box(left, top, right, bottom)) {
    std::ostringstream os;
    os << "invalid box (" << left << ", " << top << ", " << right << ", " << bottom
       << "): need finite coordinates with right > left and bottom > top";
    throw Error(os.str());
  }
}

std::optional<BBox> BBox::try_make(double left, double top, double right, double bottom) noexcept {
  if (!valid_box(left, top, right, bottom)) return std::nullopt;
  return BBox(left, top, right, bottom);
}

BBox BBox::from_center(double cx, double cy, double width, double height) {
  return BBox(cx - 0.5 * width, cy - 0.5 * height, cx + 0.5 * width, cy + 0.5 * height);
}

std::string_view to_string(FaceLabel label) noexcept {
  switch (label) {
    case FaceLabel::Masked: return "masked";
    case FaceLabel::Unmasked: return "unmasked";
    case FaceLabel::Unknown: return "unknown";
  }
  return "unknown";
}

std::optional<FaceLabel> parse_face_label(std::string_view text) noexcept {
  if (text == "masked") return FaceLabel::Masked;
  if (text == "unmasked") return FaceLabel::Unmasked;
  if (text == "unknown") return FaceLabel::Unknown;
  return std::nullopt;
}

Detection::Detection(BBox box, FaceLabel label, double confidence)
    : box_(box), label_(label), confidence_(confidence) {
  if (label == FaceLabel::Unknown) throw Error("a detection must be labelled masked or unmasked");
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    std::ostringstream os;
    os << "detection confidence " << confidence << " outside [0, 1]";
    throw Error(os.str());
  }
}

std::string_view to_string(SizeBucket bucket) noexcept {
  switch (bucket) {
    case SizeBucket::S: return "S";
    case SizeBucket::M: return "M";
    case SizeBucket::L: return "L";
    case SizeBucket::Excluded: return "excluded";
  }
  return "excluded";
}

double iou(const BBox& a, const BBox& b) noexcept {
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

SizeBucket size_bucket(const BBox& box) noexcept {
  const double w = box.width();
  const double h = box.height();
  if (w < 8.0 || h < 8.0) return SizeBucket::Excluded;
  if (w <= 16.0 && h <= 16.0) return SizeBucket::S;
  if (w > 32.0 && h > 32.0) return SizeBucket::L;
  return SizeBucket::M;
}

}  // namespace mrb
