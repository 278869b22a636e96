#include "mrb/density.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mrb/error.hpp"

namespace mrb {

PointSet::PointSet(std::vector<Point> points, int width, int height)
    : points_(std::move(points)), width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw Error("point set needs positive image dimensions");
  for (const auto& p : points_) {
    if (!(p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height)) {
      std::ostringstream os;
      os << "point (" << p.x << ", " << p.y << ") outside " << width << "x" << height << " image";
      throw Error(os.str());
    }
  }
}

void KernelSpec::validate() const {
  if (!(beta > 0.0)) throw Error("kernel beta must be positive");
  if (k < 1) throw Error("kernel k must be at least 1");
  if (!(sigma_default > 0.0)) throw Error("kernel sigma_default must be positive");
  if (!(truncation_radius > 0.0)) throw Error("kernel truncation radius must be positive");
}

DensityMap::DensityMap(int width, int height, std::uint32_t downscale)
    : DensityMap(width, height, downscale,
                 std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) *
                                     static_cast<std::size_t>(std::max(height, 0)))) {}

DensityMap::DensityMap(int width, int height, std::uint32_t downscale, std::vector<double> values)
    : width_(width), height_(height), downscale_(downscale), values_(std::move(values)) {
  if (width <= 0 || height <= 0) throw Error("density map needs positive dimensions");
  if (downscale == 0) throw Error("density map downscale factor must be at least 1");
  if (values_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw Error("density map value count does not match its dimensions");
  }
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0) throw Error("density values must be finite and non-negative");
  }
}

std::vector<double> adaptive_sigmas(const PointSet& pts, const KernelSpec& spec) {
  spec.validate();
  if (pts.empty()) throw Error("adaptive sigmas need at least one point");
  const auto points = pts.points();
  const std::size_t n = points.size();
  std::vector<double> sigmas(n, spec.sigma_default);
  if (n == 1) return sigmas;

  const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(spec.k), n - 1);
  std::vector<double> dist;
  dist.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      dist.push_back(std::hypot(points[i].x - points[j].x, points[i].y - points[j].y));
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(m), dist.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) sum += dist[j];
    sigmas[i] = spec.beta * (sum / static_cast<double>(m));
  }
  return sigmas;
}

namespace {

struct Tap {
  std::size_t index;
  double weight;
};

// Unit mass at the cell containing p. Used when the kernel degenerates
// (coincident faces give sigma = 0).
void deposit_point(DensityMap& map, const Point& p) {
  const int x = std::clamp(static_cast<int>(std::floor(p.x)), 0, map.width() - 1);
  const int y = std::clamp(static_cast<int>(std::floor(p.y)), 0, map.height() - 1);
  map.at(x, y) += 1.0;
}

}  // namespace

DensityMap render_density(const PointSet& pts, const KernelSpec& spec) {
  spec.validate();
  DensityMap map(pts.width(), pts.height());
  if (pts.empty()) return map;

  const auto sigmas = adaptive_sigmas(pts, spec);
  const auto points = pts.points();
  auto cells = map.values();
  std::vector<Tap> taps;

  for (std::size_t i = 0; i < points.size(); ++i) {
    const Point p = points[i];
    const double sigma = sigmas[i];
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      deposit_point(map, p);
      continue;
    }
    const double radius = spec.truncation_radius * sigma;
    const double r2 = radius * radius;
    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
    const int x0 = std::max(0, static_cast<int>(std::ceil(p.x - 0.5 - radius)));
    const int x1 = std::min(map.width() - 1, static_cast<int>(std::floor(p.x - 0.5 + radius)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(p.y - 0.5 - radius)));
    const int y1 = std::min(map.height() - 1, static_cast<int>(std::floor(p.y - 0.5 + radius)));

    taps.clear();
    double total = 0.0;
    for (int y = y0; y <= y1; ++y) {
      const double dy = (y + 0.5) - p.y;
      for (int x = x0; x <= x1; ++x) {
        const double dx = (x + 0.5) - p.x;
        const double d2 = dx * dx + dy * dy;
        if (d2 > r2) continue;
        const double w = std::exp(-d2 * inv_two_var);
        taps.push_back({static_cast<std::size_t>(y) * static_cast<std::size_t>(map.width()) +
                            static_cast<std::size_t>(x),
                        w});
        total += w;
      }
    }
    if (!(total > 0.0)) {
      deposit_point(map, p);
      continue;
    }
    for (const auto& t : taps) cells[t.index] += t.weight / total;
  }
  return map;
}

double integrate_count(const DensityMap& map) {
  // Neumaier summation keeps the integral stable for large maps.
  double sum = 0.0;
  double carry = 0.0;
  for (double v : map.values()) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      carry += (sum - t) + v;
    } else {
      carry += (v - t) + sum;
    }
    sum = t;
  }
  return sum + carry;
}

DensityMap downsample_sum_preserving(const DensityMap& map, int factor) {
  if (factor <= 0) throw Error("downsampling factor must be positive");
  if (factor == 1) return map;
  const int ow = (map.width() + factor - 1) / factor;
  const int oh = (map.height() + factor - 1) / factor;
  DensityMap out(ow, oh, map.downscale() * static_cast<std::uint32_t>(factor));
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      out.at(x / factor, y / factor) += map.at(x, y);
    }
  }
  return out;
}

double euclidean_loss(std::span<const DensityMap> pred, std::span<const DensityMap> gt) {
  if (pred.size() != gt.size()) throw Error("euclidean loss: prediction and ground-truth counts differ");
  if (pred.empty()) throw Error("euclidean loss needs at least one map pair");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].width() != gt[i].width() || pred[i].height() != gt[i].height()) {
      std::ostringstream os;
      os << "euclidean loss: map " << i << " is " << pred[i].width() << "x" << pred[i].height()
         << " but ground truth is " << gt[i].width() << "x" << gt[i].height();
      throw Error(os.str());
    }
    const auto a = pred[i].values();
    const auto b = gt[i].values();
    for (std::size_t c = 0; c < a.size(); ++c) {
      const double d = a[c] - b[c];
      sum += d * d;
    }
  }
  return sum / (2.0 * static_cast<double>(pred.size()));
}

DensitySet render_density_set(std::span<const Annotation> faces, int width, int height, const KernelSpec& spec,
                              int downscale) {
  auto render = [&](auto keep) {
    return downsample_sum_preserving(render_density(PointSet::from_annotations(faces, width, height, keep), spec),
                                     downscale);
  };
  return {render([](FaceLabel l) { return l == FaceLabel::Masked; }),
          render([](FaceLabel l) { return l == FaceLabel::Unmasked; }),
          render([](FaceLabel l) { return l != FaceLabel::Unknown; })};
}

}  // namespace mrb
