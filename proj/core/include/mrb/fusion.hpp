#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mrb {

/// Dense feature map at pyramid level `level` (resolution 1/2^level of the
/// input image). Values are stored channel-major: [channel][row][column].
class FeatureLevel {
 public:
  FeatureLevel(int level, int width, int height, int channels);
  FeatureLevel(int level, int width, int height, int channels, std::vector<double> values);

  /// Level sized for an image of the given dimensions: ceil(dim / 2^level).
  static FeatureLevel for_image(int image_width, int image_height, int level, int channels, double fill = 0.0);

  int level() const noexcept { return level_; }
  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_); }

  double at(int c, int y, int x) const { return values_[index(c, y, x)]; }
  double& at(int c, int y, int x) { return values_[index(c, y, x)]; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  bool same_shape(const FeatureLevel& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
  }

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(height_) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int level_;
  int width_;
  int height_;
  int channels_;
  std::vector<double> values_;
};

/// Contiguous levels bottom..top with a shared channel count and
/// dimensions halving (rounded up) from one level to the next.
class Pyramid {
 public:
  explicit Pyramid(std::vector<FeatureLevel> levels);

  static Pyramid for_image(int image_width, int image_height, int bottom, int top, int channels, double fill = 0.0);

  int bottom() const noexcept { return levels_.front().level(); }
  int top() const noexcept { return levels_.back().level(); }
  int channels() const noexcept { return levels_.front().channels(); }
  std::size_t size() const noexcept { return levels_.size(); }

  const FeatureLevel& level(int l) const;
  FeatureLevel& level(int l);
  std::span<const FeatureLevel> levels() const noexcept { return levels_; }
  std::span<FeatureLevel> levels() noexcept { return levels_; }

 private:
  std::vector<FeatureLevel> levels_;
};

/// Nearest-neighbour 2x upsampling per step up the resolution ladder and
/// 2x2 average pooling (odd edges zero-padded) per step down.
FeatureLevel resize_level(const FeatureLevel& f, int target_level);

/// resize_level to `reference`'s level, then crop or zero-pad to its shape.
FeatureLevel resize_like(const FeatureLevel& f, const FeatureLevel& reference);

/// Adjoint of resize_like: maps a cotangent shaped like `reference` back to
/// the shape of `source`.
FeatureLevel resize_like_adjoint(const FeatureLevel& cotangent, const FeatureLevel& source);

/// Per-level 1x1 convolution (channel mixing). An empty matrix is the
/// identity.
class LinearConv {
 public:
  LinearConv() = default;
  static LinearConv identity() { return {}; }
  static LinearConv scaled(int channels, double s);
  static LinearConv matrix(int channels, std::vector<double> row_major);

  bool is_identity() const noexcept { return weights_.empty(); }
  FeatureLevel apply(const FeatureLevel& f) const;
  FeatureLevel apply_transpose(const FeatureLevel& f) const;

 private:
  int channels_ = 0;
  std::vector<double> weights_;  // [out][in]
};

/// Convolutions indexed by level - bottom; missing entries are identity.
struct PyramidConv {
  std::vector<LinearConv> per_level;

  const LinearConv& at(int level, int bottom) const;
};

/// Levels every fusion network operates on.
inline constexpr int kFusionBottom = 3;
inline constexpr int kFusionTop = 7;

/// Classic top-down FPN over levels 3..7: out_7 = Conv(in_7);
/// out_i = Conv(in_i + Resize(out_{i+1})).
Pyramid fpn_topdown(const Pyramid& in, const PyramidConv& conv = {});

/// Raw learnable weights for one bidirectional fusion pass. Effective weights
/// are max(raw, 0).
///
/// Node layout for levels bottom..top:
///  - top_down[l - bottom] (2 weights) for bottom < l < top:
///      td_l = Conv((w0 in_l + w1 Resize(td_{l+1})) / (w0 + w1 + eps)), td_top = in_top
///  - bottom_up[0] (2 weights): out_bottom from in_bottom and Resize(td_{bottom+1})
///  - bottom_up[l - bottom] (3 weights) for bottom < l < top:
///      out_l from in_l, td_l and Resize(out_{l-1})
///  - bottom_up[top - bottom] (2 weights): out_top from in_top and Resize(out_{top-1})
struct FusionWeights {
  int bottom = 3;
  int top = 7;
  std::vector<std::vector<double>> top_down;
  std::vector<std::vector<double>> bottom_up;
  double epsilon = 1e-4;

  static FusionWeights uniform(int bottom, int top, double value = 1.0, double epsilon = 1e-4);

  /// Every raw weight in a fixed order: top_down nodes bottom..top, then
  /// bottom_up nodes bottom..top.
  std::vector<double*> flat();
  void validate() const;
};

/// Same layout as FusionWeights; holds d<upstream, out>/d(raw weight).
using FusionGradients = FusionWeights;

/// Normalised weighted sum of same-shaped inputs followed by `conv`.
FeatureLevel fuse_node(std::span<const FeatureLevel> inputs, std::span<const double> raw_weights, double epsilon,
                       const LinearConv& conv = {});

struct BiFpnResult {
  std::vector<FeatureLevel> top_down;  ///< td_l for bottom < l < top, ascending
  Pyramid out;
};

BiFpnResult bifpn_forward(const Pyramid& in, const FusionWeights& weights, const PyramidConv& conv = {});
Pyramid bifpn_fuse(const Pyramid& in, const FusionWeights& weights, const PyramidConv& conv = {});

/// Analytic gradient of sum_l <upstream_l, out_l> with respect to every raw
/// weight. Weights clamped to zero get a zero (sub)gradient.
FusionGradients fusion_weight_gradients(const Pyramid& in, const FusionWeights& weights, const PyramidConv& conv,
                                        const Pyramid& upstream);

/// Central finite differences of the same objective, using only the
/// forward pass. Intended as a check on fusion_weight_gradients.
FusionGradients numeric_fusion_gradients(const Pyramid& in, const FusionWeights& weights, const PyramidConv& conv,
                                         const Pyramid& upstream, double step);

/// |a - b| / max(|a|, |b|), and 0 when both are exactly zero.
double relative_error(double a, double b) noexcept;

}  // namespace mrb
