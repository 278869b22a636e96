#include "mrb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mrb/error.hpp"

namespace mrb {

void EvalConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw Error("evaluation IoU threshold must lie in (0, 1]");
}

namespace {

enum class GtRole { InScope, Ignore, OtherClass };

GtRole classify(const Annotation& gt, FaceLabel cls, std::optional<SizeBucket> bucket) {
  if (gt.label == FaceLabel::Unknown) return GtRole::Ignore;
  if (gt.label != cls) return GtRole::OtherClass;
  const SizeBucket b = size_bucket(gt.box);
  if (b == SizeBucket::Excluded) return GtRole::Ignore;
  if (bucket && b != *bucket) return GtRole::Ignore;
  return GtRole::InScope;
}

}  // namespace

std::optional<double> average_precision(std::span<const ImageEval> images, const EvalConfig& cfg, FaceLabel cls,
                                        std::optional<SizeBucket> bucket) {
  cfg.validate();
  if (cls == FaceLabel::Unknown) throw Error("average precision is defined for masked and unmasked faces only");

  std::vector<std::vector<GtRole>> roles(images.size());
  std::size_t positives = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (const auto& gt : images[i].gts) {
      roles[i].push_back(classify(gt, cls, bucket));
      if (roles[i].back() == GtRole::InScope) ++positives;
    }
  }
  if (positives == 0) return std::nullopt;

  struct Scored {
    double confidence;
    std::size_t image;
    std::size_t det;
  };
  std::vector<Scored> order;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t d = 0; d < images[i].dets.size(); ++d) {
      if (images[i].dets[d].label() == cls) order.push_back({images[i].dets[d].confidence(), i, d});
    }
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const Scored& a, const Scored& b) { return a.confidence > b.confidence; });

  std::vector<std::vector<bool>> matched(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) matched[i].assign(images[i].gts.size(), false);

  std::vector<double> precision;
  std::vector<double> recall;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (const auto& s : order) {
    const auto& img = images[s.image];
    const auto& box = img.dets[s.det].box();
    std::size_t best = img.gts.size();
    double best_iou = -1.0;
    bool hits_ignore = false;
    for (std::size_t g = 0; g < img.gts.size(); ++g) {
      const double o = iou(box, img.gts[g].box);
      if (o < cfg.iou_threshold) continue;
      const GtRole role = roles[s.image][g];
      if (role == GtRole::Ignore) hits_ignore = true;
      if (role == GtRole::InScope && !matched[s.image][g] && o > best_iou) {
        best_iou = o;
        best = g;
      }
    }
    if (best < img.gts.size()) {
      matched[s.image][best] = true;
      ++tp;
    } else if (hits_ignore) {
      continue;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
  }

  // Precision envelope, then area under the stepwise curve.
  std::vector<double> mrec{0.0};
  std::vector<double> mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) {
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  }
  return ap;
}

double mean_ap(std::span<const std::optional<double>> cells) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : cells) {
    if (!c) continue;
    sum += *c;
    ++n;
  }
  if (n == 0) throw Error("mAP needs at least one defined AP cell");
  return sum / static_cast<double>(n);
}

namespace {

void check_series(std::span<const double> a, std::span<const double> b, std::size_t min_len, const char* what) {
  if (a.size() != b.size()) {
    std::ostringstream os;
    os << what << ": series lengths differ (" << a.size() << " vs " << b.size() << ")";
    throw Error(os.str());
  }
  if (a.size() < min_len) {
    std::ostringstream os;
    os << what << ": needs at least " << min_len << " values";
    throw Error(os.str());
  }
}

}  // namespace

double mae(std::span<const double> estimate, std::span<const double> truth) {
  check_series(estimate, truth, 1, "MAE");
  double sum = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) sum += std::abs(estimate[i] - truth[i]);
  return sum / static_cast<double>(estimate.size());
}

std::optional<double> pearson(std::span<const double> estimate, std::span<const double> truth) {
  check_series(estimate, truth, 2, "Pearson correlation");
  const double n = static_cast<double>(estimate.size());
  const double mean_e = std::accumulate(estimate.begin(), estimate.end(), 0.0) / n;
  const double mean_t = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double de = estimate[i] - mean_e;
    const double dt = truth[i] - mean_t;
    sxy += de * dt;
    sxx += de * de;
    syy += dt * dt;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<RatioPair> ratio_pairs(std::span<const RatioReport> estimate, std::span<const RatioReport> truth,
                                   const EvalConfig& cfg) {
  if (estimate.size() != truth.size()) throw Error("ratio correlation: estimate and truth differ in length");
  std::vector<RatioPair> pairs;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].total() < static_cast<double>(cfg.min_faces)) continue;
    const auto t = truth[i].ratio();
    const auto e = estimate[i].ratio();
    if (!t || !e) continue;
    pairs.push_back({i, *t, *e});
  }
  return pairs;
}

std::optional<double> ratio_correlation(std::span<const RatioReport> estimate, std::span<const RatioReport> truth,
                                        const EvalConfig& cfg) {
  auto pairs = ratio_pairs(estimate, truth, cfg);
  if (pairs.size() < 2) return std::nullopt;
  // Sum in value order so the result does not depend on image order.
  std::sort(pairs.begin(), pairs.end(), [](const RatioPair& a, const RatioPair& b) {
    return a.truth != b.truth ? a.truth < b.truth : a.estimate < b.estimate;
  });
  std::vector<double> e;
  std::vector<double> t;
  for (const auto& p : pairs) {
    e.push_back(p.estimate);
    t.push_back(p.truth);
  }
  return pearson(e, t);
}

DetectionReport evaluate_detections(std::span<const ImageEval> images, const EvalConfig& cfg) {
  DetectionReport report;
  std::vector<std::optional<double>> values;
  for (FaceLabel cls : {FaceLabel::Masked, FaceLabel::Unmasked}) {
    for (SizeBucket b : {SizeBucket::L, SizeBucket::M, SizeBucket::S}) {
      const auto ap = average_precision(images, cfg, cls, b);
      report.cells.push_back({cls, b, ap});
      values.push_back(ap);
    }
  }
  report.overall_masked = average_precision(images, cfg, FaceLabel::Masked);
  report.overall_unmasked = average_precision(images, cfg, FaceLabel::Unmasked);
  if (std::any_of(values.begin(), values.end(), [](const auto& v) { return v.has_value(); })) {
    report.map = mean_ap(values);
  }
  return report;
}

std::vector<CountMetric> evaluate_counts(std::span<const RatioReport> estimate, std::span<const RatioReport> truth,
                                         const EvalConfig& cfg) {
  if (estimate.size() != truth.size()) throw Error("count evaluation: estimate and truth differ in length");
  if (estimate.empty()) throw Error("count evaluation needs at least one image");

  std::vector<CountMetric> out;
  auto series = [&](auto get, const char* name) {
    std::vector<double> e;
    std::vector<double> t;
    for (std::size_t i = 0; i < estimate.size(); ++i) {
      e.push_back(get(estimate[i]));
      t.push_back(get(truth[i]));
    }
    CountMetric m{name, mae(e, t), std::nullopt, e.size()};
    if (e.size() >= 2) m.gamma = pearson(e, t);
    out.push_back(std::move(m));
  };
  series([](const RatioReport& r) { return r.masked; }, "masked");
  series([](const RatioReport& r) { return r.unmasked; }, "unmasked");
  series([](const RatioReport& r) { return r.total(); }, "total");

  CountMetric ratio{"ratio", std::nullopt, ratio_correlation(estimate, truth, cfg), ratio_pairs(estimate, truth, cfg).size()};
  out.push_back(std::move(ratio));
  return out;
}

}  // namespace mrb
