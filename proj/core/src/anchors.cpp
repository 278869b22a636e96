#include "mrb/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mrb/error.hpp"

namespace mrb {

AnchorConfig AnchorConfig::defaults() {
  AnchorConfig cfg;
  double size = 16.0;
  for (int level = 3; level <= 7; ++level, size *= 2.0) cfg.levels.push_back({level, {size}});
  return cfg;
}

AnchorSet generate_anchors(int image_width, int image_height, const AnchorConfig& config) {
  if (image_width <= 0 || image_height <= 0) throw Error("anchor generation needs positive image dimensions");
  if (config.levels.empty()) throw Error("anchor generation needs at least one level");
  if (config.ratios.empty()) throw Error("anchor generation needs at least one aspect ratio");
  for (double r : config.ratios) {
    if (!(r > 0.0) || !std::isfinite(r)) throw Error("aspect ratios must be positive");
  }

  AnchorSet set;
  for (const auto& lvl : config.levels) {
    if (lvl.level < 0 || lvl.level > 30) throw Error("anchor level out of range");
    if (lvl.scales.empty()) throw Error("every anchor level needs at least one scale");
    for (double s : lvl.scales) {
      if (!(s > 0.0) || !std::isfinite(s)) throw Error("anchor scales must be positive");
    }
    const long stride = 1L << lvl.level;
    const long gw = (image_width + stride - 1) / stride;
    const long gh = (image_height + stride - 1) / stride;
    for (long gy = 0; gy < gh; ++gy) {
      const double cy = (static_cast<double>(gy) + 0.5) * static_cast<double>(stride);
      for (long gx = 0; gx < gw; ++gx) {
        const double cx = (static_cast<double>(gx) + 0.5) * static_cast<double>(stride);
        for (double size : lvl.scales) {
          for (double r : config.ratios) {
            const double root = std::sqrt(r);
            set.anchors.push_back({BBox::from_center(cx, cy, size * root, size / root), lvl.level});
          }
        }
      }
    }
  }
  return set;
}

BoxDelta encode_box(const BBox& anchor, const BBox& gt) {
  return {(gt.center_x() - anchor.center_x()) / anchor.width(), (gt.center_y() - anchor.center_y()) / anchor.height(),
          std::log(gt.width() / anchor.width()), std::log(gt.height() / anchor.height())};
}

BBox decode_box(const BBox& anchor, const BoxDelta& t) {
  if (!std::isfinite(t.dx) || !std::isfinite(t.dy) || !std::isfinite(t.dw) || !std::isfinite(t.dh)) {
    throw Error("cannot decode a non-finite box delta");
  }
  const double cx = anchor.center_x() + t.dx * anchor.width();
  const double cy = anchor.center_y() + t.dy * anchor.height();
  return BBox::from_center(cx, cy, anchor.width() * std::exp(t.dw), anchor.height() * std::exp(t.dh));
}

std::size_t MatchResult::positives() const noexcept {
  return static_cast<std::size_t>(std::count_if(targets.begin(), targets.end(), [](const AnchorTarget& t) {
    return t.assignment == Assignment::Positive;
  }));
}

MatchResult match_anchors(const AnchorSet& anchors, std::span<const Annotation> gts, const MatchConfig& config) {
  if (!(config.positive_iou >= config.negative_iou)) throw Error("positive IoU threshold must not be below the negative one");

  const std::size_t na = anchors.size();
  const std::size_t ng = gts.size();
  MatchResult result;
  result.targets.resize(na);
  if (ng == 0) return result;

  // overlaps[a * ng + g]
  std::vector<double> overlaps(na * ng);
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t g = 0; g < ng; ++g) overlaps[a * ng + g] = iou(anchors.anchors[a].box, gts[g].box);
  }

  auto make_positive = [&](std::size_t a, std::size_t g) {
    auto& t = result.targets[a];
    t.assignment = Assignment::Positive;
    t.gt_index = g;
    t.objectness = 1.0;
    t.masked = gts[g].label == FaceLabel::Masked ? 1.0 : 0.0;
    t.box = encode_box(anchors.anchors[a].box, gts[g].box);
  };

  for (std::size_t a = 0; a < na; ++a) {
    std::size_t best = 0;
    for (std::size_t g = 1; g < ng; ++g) {
      if (overlaps[a * ng + g] > overlaps[a * ng + best]) best = g;
    }
    const double best_iou = overlaps[a * ng + best];
    auto& t = result.targets[a];
    if (gts[best].label == FaceLabel::Unknown && best_iou >= config.negative_iou) {
      t.assignment = Assignment::Ignore;
    } else if (best_iou >= config.positive_iou) {
      make_positive(a, best);
    } else if (best_iou < config.negative_iou) {
      t.assignment = Assignment::Negative;
    } else {
      t.assignment = Assignment::Ignore;
    }
  }

  // Forced matches: each labelled face claims its best anchor not already
  // claimed by an earlier face.
  std::vector<bool> claimed(na, false);
  for (std::size_t g = 0; g < ng; ++g) {
    if (gts[g].label == FaceLabel::Unknown) continue;
    std::size_t best = na;
    double best_iou = 0.0;
    for (std::size_t a = 0; a < na; ++a) {
      if (claimed[a]) continue;
      if (overlaps[a * ng + g] > best_iou) {
        best_iou = overlaps[a * ng + g];
        best = a;
      }
    }
    if (best == na) continue;
    claimed[best] = true;
    make_positive(best, g);
  }
  return result;
}

namespace {

double clamp_probability(double p) { return std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon); }

}  // namespace

double binary_cross_entropy(double p, double target) {
  p = clamp_probability(p);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

double focal_loss(double p, double target, double alpha, double gamma) {
  p = clamp_probability(p);
  if (target >= 0.5) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

LossBreakdown multitask_loss(std::span<const AnchorPrediction> preds, const MatchResult& match,
                             const LossConfig& config) {
  if (preds.size() != match.targets.size()) {
    std::ostringstream os;
    os << "multitask loss: " << preds.size() << " predictions for " << match.targets.size() << " anchors";
    throw Error(os.str());
  }
  LossBreakdown loss;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& t = match.targets[i];
    if (t.assignment == Assignment::Ignore) continue;
    const auto& p = preds[i];
    loss.objectness += binary_cross_entropy(p.objectness, t.objectness);
    if (t.assignment != Assignment::Positive) continue;
    ++positives;
    loss.classification += focal_loss(p.masked, t.masked, config.alpha, config.gamma);
    loss.box += smooth_l1(p.box.dx - t.box.dx) + smooth_l1(p.box.dy - t.box.dy) + smooth_l1(p.box.dw - t.box.dw) +
                smooth_l1(p.box.dh - t.box.dh);
  }
  if (config.normalize_by_positives && positives > 0) {
    const double n = static_cast<double>(positives);
    loss.objectness /= n;
    loss.classification /= n;
    loss.box /= n;
  }
  return loss;
}

}  // namespace mrb
