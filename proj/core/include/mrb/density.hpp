#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mrb/geometry.hpp"

namespace mrb {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Face centres of one image. Every point lies in [0, width) x [0, height).
class PointSet {
 public:
  PointSet(std::vector<Point> points, int width, int height);

  /// Centres of the given annotations whose label passes `keep`.
  template <typename Pred>
  static PointSet from_annotations(std::span<const Annotation> faces, int width, int height, Pred keep);

  std::span<const Point> points() const noexcept { return points_; }
  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

 private:
  std::vector<Point> points_;
  int width_;
  int height_;
};

/// Geometry-adaptive kernel parameters: sigma_i = beta * (mean distance to
/// the k nearest other faces), with `sigma_default` for an isolated face.
/// The Gaussian is cut at `truncation_radius` standard deviations.
struct KernelSpec {
  double beta = 0.3;
  int k = 3;
  double sigma_default = 4.0;
  double truncation_radius = 3.0;

  void validate() const;
};

/// Row-major grid of non-negative densities. `downscale` is the number of
/// image pixels per cell along each axis (1 at full resolution).
class DensityMap {
 public:
  DensityMap(int width, int height, std::uint32_t downscale = 1);
  DensityMap(int width, int height, std::uint32_t downscale, std::vector<double> values);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::uint32_t downscale() const noexcept { return downscale_; }
  /// Cells per image pixel.
  double scale() const noexcept { return 1.0 / static_cast<double>(downscale_); }

  double at(int x, int y) const { return values_[index(x, y)]; }
  double& at(int x, int y) { return values_[index(x, y)]; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  friend bool operator==(const DensityMap&, const DensityMap&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_;
  int height_;
  std::uint32_t downscale_;
  std::vector<double> values_;
};

/// Per-face standard deviations. Faces with fewer than k neighbours average
/// over the neighbours they have.
std::vector<double> adaptive_sigmas(const PointSet& pts, const KernelSpec& spec);

/// Full-resolution map: each face adds a cell-centre-sampled Gaussian,
/// truncated and renormalised so that it contributes exactly unit mass.
/// Faces are accumulated in input order.
DensityMap render_density(const PointSet& pts, const KernelSpec& spec);

/// Sum of all cells (compensated summation).
double integrate_count(const DensityMap& map);

/// Block-sums `factor` x `factor` tiles. Dimensions that are not a multiple
/// of `factor` are zero-padded on the right/bottom.
DensityMap downsample_sum_preserving(const DensityMap& map, int factor);

/// (1 / 2N) * sum_i ||pred_i - gt_i||^2.
double euclidean_loss(std::span<const DensityMap> pred, std::span<const DensityMap> gt);

/// Masked, unmasked and total (masked + unmasked) maps for one image. Each
/// map is rendered from its own label-filtered point subset, then
/// block-summed by `downscale`. Unknown faces are not rendered.
struct DensitySet {
  DensityMap masked;
  DensityMap unmasked;
  DensityMap total;
};

DensitySet render_density_set(std::span<const Annotation> faces, int width, int height, const KernelSpec& spec,
                              int downscale);

// NFMD binary format: "NFMD", u32 width, u32 height, u32 downscale, then
// width*height little-endian f32 values in row-major order.
void write_nfmd(std::ostream& out, const DensityMap& map);
void write_nfmd(const std::filesystem::path& path, const DensityMap& map);
DensityMap read_nfmd(std::istream& in, const std::string& source = "<stream>");
DensityMap read_nfmd(const std::filesystem::path& path);

template <typename Pred>
PointSet PointSet::from_annotations(std::span<const Annotation> faces, int width, int height, Pred keep) {
  std::vector<Point> pts;
  pts.reserve(faces.size());
  for (const auto& f : faces) {
    if (!keep(f.label)) continue;
    pts.push_back({f.box.center_x(), f.box.center_y()});
  }
  return PointSet(std::move(pts), width, height);
}

}  // namespace mrb
