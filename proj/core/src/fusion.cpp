#include "mrb/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mrb/error.hpp"

namespace mrb {

namespace {

int ceil_div_pow2(int dim, int level) {
  const long d = 1L << level;
  return static_cast<int>((dim + d - 1) / d);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void add_into(FeatureLevel& acc, const FeatureLevel& x, double scale = 1.0) {
  auto a = acc.values();
  const auto b = x.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
}

FeatureLevel upsample2(const FeatureLevel& f) {
  FeatureLevel out(f.level() - 1, f.width() * 2, f.height() * 2, f.channels());
  for (int c = 0; c < f.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) out.at(c, y, x) = f.at(c, y / 2, x / 2);
  return out;
}

// Adjoint of upsample2: sum each 2x2 block.
FeatureLevel upsample2_adjoint(const FeatureLevel& g, int src_width, int src_height) {
  FeatureLevel out(g.level() + 1, src_width, src_height, g.channels());
  for (int c = 0; c < g.channels(); ++c)
    for (int y = 0; y < g.height(); ++y)
      for (int x = 0; x < g.width(); ++x) out.at(c, y / 2, x / 2) += g.at(c, y, x);
  return out;
}

FeatureLevel downsample2(const FeatureLevel& f) {
  FeatureLevel out(f.level() + 1, (f.width() + 1) / 2, (f.height() + 1) / 2, f.channels());
  for (int c = 0; c < f.channels(); ++c)
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x) out.at(c, y / 2, x / 2) += 0.25 * f.at(c, y, x);
  return out;
}

// Adjoint of downsample2: spread a quarter of each cell over its block.
FeatureLevel downsample2_adjoint(const FeatureLevel& g, int src_width, int src_height) {
  FeatureLevel out(g.level() - 1, src_width, src_height, g.channels());
  for (int c = 0; c < g.channels(); ++c)
    for (int y = 0; y < src_height; ++y)
      for (int x = 0; x < src_width; ++x) out.at(c, y, x) = 0.25 * g.at(c, y / 2, x / 2);
  return out;
}

FeatureLevel crop_or_pad(const FeatureLevel& f, int width, int height) {
  if (f.width() == width && f.height() == height) return f;
  FeatureLevel out(f.level(), width, height, f.channels());
  const int w = std::min(width, f.width());
  const int h = std::min(height, f.height());
  for (int c = 0; c < f.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = f.at(c, y, x);
  return out;
}

}  // namespace

FeatureLevel::FeatureLevel(int level, int width, int height, int channels)
    : FeatureLevel(level, width, height, channels,
                   std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) *
                                       static_cast<std::size_t>(std::max(height, 0)) *
                                       static_cast<std::size_t>(std::max(channels, 0)))) {}

FeatureLevel::FeatureLevel(int level, int width, int height, int channels, std::vector<double> values)
    : level_(level), width_(width), height_(height), channels_(channels), values_(std::move(values)) {
  if (width <= 0 || height <= 0 || channels <= 0) throw Error("feature level needs positive dimensions");
  if (values_.size() != plane_size() * static_cast<std::size_t>(channels)) {
    throw Error("feature level value count does not match its shape");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw Error("feature values must be finite");
  }
}

FeatureLevel FeatureLevel::for_image(int image_width, int image_height, int level, int channels, double fill) {
  if (level < 0 || level > 30) throw Error("pyramid level out of range");
  const int w = ceil_div_pow2(image_width, level);
  const int h = ceil_div_pow2(image_height, level);
  return FeatureLevel(level, w, h, channels,
                      std::vector<double>(static_cast<std::size_t>(w) * h * static_cast<std::size_t>(channels), fill));
}

Pyramid::Pyramid(std::vector<FeatureLevel> levels) : levels_(std::move(levels)) {
  if (levels_.empty()) throw Error("pyramid needs at least one level");
  std::sort(levels_.begin(), levels_.end(), [](const auto& a, const auto& b) { return a.level() < b.level(); });
  for (std::size_t i = 1; i < levels_.size(); ++i) {
    const auto& lo = levels_[i - 1];
    const auto& hi = levels_[i];
    if (hi.level() != lo.level() + 1) {
      std::ostringstream os;
      os << "pyramid is missing level " << lo.level() + 1;
      throw Error(os.str());
    }
    if (hi.channels() != lo.channels()) throw Error("pyramid levels disagree on channel count");
    if (hi.width() != (lo.width() + 1) / 2 || hi.height() != (lo.height() + 1) / 2) {
      std::ostringstream os;
      os << "pyramid level " << hi.level() << " is " << hi.width() << "x" << hi.height() << ", expected "
         << (lo.width() + 1) / 2 << "x" << (lo.height() + 1) / 2;
      throw Error(os.str());
    }
  }
}

Pyramid Pyramid::for_image(int image_width, int image_height, int bottom, int top, int channels, double fill) {
  if (top < bottom) throw Error("pyramid top level below bottom level");
  std::vector<FeatureLevel> levels;
  for (int l = bottom; l <= top; ++l) levels.push_back(FeatureLevel::for_image(image_width, image_height, l, channels, fill));
  return Pyramid(std::move(levels));
}

const FeatureLevel& Pyramid::level(int l) const {
  if (l < bottom() || l > top()) throw Error("pyramid level out of range");
  return levels_[static_cast<std::size_t>(l - bottom())];
}

FeatureLevel& Pyramid::level(int l) {
  if (l < bottom() || l > top()) throw Error("pyramid level out of range");
  return levels_[static_cast<std::size_t>(l - bottom())];
}

FeatureLevel resize_level(const FeatureLevel& f, int target_level) {
  FeatureLevel cur = f;
  while (cur.level() > target_level) cur = upsample2(cur);
  while (cur.level() < target_level) cur = downsample2(cur);
  return cur;
}

FeatureLevel resize_like(const FeatureLevel& f, const FeatureLevel& reference) {
  if (f.channels() != reference.channels()) throw Error("resize: channel counts differ");
  return crop_or_pad(resize_level(f, reference.level()), reference.width(), reference.height());
}

FeatureLevel resize_like_adjoint(const FeatureLevel& cotangent, const FeatureLevel& source) {
  // Replay the forward shapes, then walk them backwards.
  struct Shape {
    int level, width, height;
  };
  std::vector<Shape> shapes{{source.level(), source.width(), source.height()}};
  while (shapes.back().level != cotangent.level()) {
    const auto s = shapes.back();
    if (s.level > cotangent.level()) {
      shapes.push_back({s.level - 1, s.width * 2, s.height * 2});
    } else {
      shapes.push_back({s.level + 1, (s.width + 1) / 2, (s.height + 1) / 2});
    }
  }
  FeatureLevel g = crop_or_pad(cotangent, shapes.back().width, shapes.back().height);
  for (std::size_t i = shapes.size() - 1; i > 0; --i) {
    const auto& src = shapes[i - 1];
    g = src.level > shapes[i].level ? upsample2_adjoint(g, src.width, src.height)
                                    : downsample2_adjoint(g, src.width, src.height);
  }
  return g;
}

LinearConv LinearConv::scaled(int channels, double s) {
  std::vector<double> m(static_cast<std::size_t>(channels) * channels, 0.0);
  for (int c = 0; c < channels; ++c) m[static_cast<std::size_t>(c) * channels + c] = s;
  return matrix(channels, std::move(m));
}

LinearConv LinearConv::matrix(int channels, std::vector<double> row_major) {
  if (channels <= 0) throw Error("conv needs a positive channel count");
  if (row_major.size() != static_cast<std::size_t>(channels) * channels) throw Error("conv matrix must be channels x channels");
  LinearConv conv;
  conv.channels_ = channels;
  conv.weights_ = std::move(row_major);
  return conv;
}

namespace {

FeatureLevel mix_channels(const FeatureLevel& f, int n, std::span<const double> w, bool transpose) {
  if (f.channels() != n) throw Error("conv channel count does not match the feature map");
  FeatureLevel out(f.level(), f.width(), f.height(), n);
  const std::size_t plane = f.plane_size();
  const auto in = f.values();
  auto dst = out.values();
  for (int o = 0; o < n; ++o) {
    for (int i = 0; i < n; ++i) {
      const double k = transpose ? w[static_cast<std::size_t>(i) * n + o] : w[static_cast<std::size_t>(o) * n + i];
      if (k == 0.0) continue;
      for (std::size_t p = 0; p < plane; ++p) dst[o * plane + p] += k * in[i * plane + p];
    }
  }
  return out;
}

}  // namespace

FeatureLevel LinearConv::apply(const FeatureLevel& f) const {
  if (is_identity()) return f;
  return mix_channels(f, channels_, weights_, false);
}

FeatureLevel LinearConv::apply_transpose(const FeatureLevel& f) const {
  if (is_identity()) return f;
  return mix_channels(f, channels_, weights_, true);
}

const LinearConv& PyramidConv::at(int level, int bottom) const {
  static const LinearConv kIdentity;
  const long i = static_cast<long>(level) - bottom;
  if (i < 0 || static_cast<std::size_t>(i) >= per_level.size()) return kIdentity;
  return per_level[static_cast<std::size_t>(i)];
}

namespace {

void require_fusion_levels(const Pyramid& p) {
  if (p.bottom() != kFusionBottom || p.top() != kFusionTop) {
    std::ostringstream os;
    os << "fusion needs pyramid levels " << kFusionBottom << ".." << kFusionTop << ", got " << p.bottom() << ".."
       << p.top();
    throw Error(os.str());
  }
}

}  // namespace

Pyramid fpn_topdown(const Pyramid& in, const PyramidConv& conv) {
  require_fusion_levels(in);
  std::vector<FeatureLevel> out(in.levels().begin(), in.levels().end());
  const int b = in.bottom();
  out.back() = conv.at(in.top(), b).apply(in.level(in.top()));
  for (int l = in.top() - 1; l >= b; --l) {
    const auto idx = static_cast<std::size_t>(l - b);
    FeatureLevel sum = in.level(l);
    add_into(sum, resize_like(out[idx + 1], sum));
    out[idx] = conv.at(l, b).apply(sum);
  }
  return Pyramid(std::move(out));
}

FusionWeights FusionWeights::uniform(int bottom, int top, double value, double epsilon) {
  if (top <= bottom) throw Error("fusion needs at least two pyramid levels");
  FusionWeights w;
  w.bottom = bottom;
  w.top = top;
  w.epsilon = epsilon;
  const auto n = static_cast<std::size_t>(top - bottom + 1);
  w.top_down.resize(n);
  w.bottom_up.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool edge = i == 0 || i + 1 == n;
    if (!edge) w.top_down[i].assign(2, value);
    w.bottom_up[i].assign(edge ? 2 : 3, value);
  }
  return w;
}

std::vector<double*> FusionWeights::flat() {
  std::vector<double*> out;
  for (auto& node : top_down)
    for (auto& v : node) out.push_back(&v);
  for (auto& node : bottom_up)
    for (auto& v : node) out.push_back(&v);
  return out;
}

void FusionWeights::validate() const {
  if (top <= bottom) throw Error("fusion needs at least two pyramid levels");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw Error("fusion epsilon must be finite and non-negative");
  const auto n = static_cast<std::size_t>(top - bottom + 1);
  if (top_down.size() != n || bottom_up.size() != n) throw Error("fusion weights do not cover every level");
  for (std::size_t i = 0; i < n; ++i) {
    const bool edge = i == 0 || i + 1 == n;
    if (top_down[i].size() != (edge ? 0u : 2u) || bottom_up[i].size() != (edge ? 2u : 3u)) {
      std::ostringstream os;
      os << "fusion weights for level " << bottom + static_cast<int>(i) << " have the wrong arity";
      throw Error(os.str());
    }
    for (double v : top_down[i]) {
      if (!std::isfinite(v)) throw Error("fusion weights must be finite");
    }
    for (double v : bottom_up[i]) {
      if (!std::isfinite(v)) throw Error("fusion weights must be finite");
    }
  }
}

namespace {

struct NodeCache {
  std::vector<FeatureLevel> inputs;  // resized to the node's shape
  FeatureLevel normalized;           // weighted sum / denominator, before conv
  double denominator;
};

NodeCache fuse_cached(std::vector<FeatureLevel> inputs, std::span<const double> raw, double epsilon) {
  if (inputs.empty() || inputs.size() != raw.size()) throw Error("fusion node: one weight per input required");
  double denom = epsilon;
  for (double w : raw) denom += std::max(w, 0.0);
  if (!(denom > 0.0)) throw Error("fusion node: all effective weights are zero and epsilon is zero");
  FeatureLevel sum(inputs.front().level(), inputs.front().width(), inputs.front().height(), inputs.front().channels());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].same_shape(sum)) throw Error("fusion node: input shapes differ");
    const double w = std::max(raw[k], 0.0);
    if (w != 0.0) add_into(sum, inputs[k], w);
  }
  for (double& v : sum.values()) v /= denom;
  return {std::move(inputs), std::move(sum), denom};
}

// Back-propagates the cotangent of a node's pre-conv output. Writes weight
// gradients and returns the cotangent of every (resized) input.
std::vector<FeatureLevel> node_backward(const NodeCache& node, std::span<const double> raw, const FeatureLevel& g_norm,
                                        std::span<double> grad_out) {
  const double gn_dot_n = dot(g_norm.values(), node.normalized.values());
  std::vector<FeatureLevel> g_inputs;
  g_inputs.reserve(node.inputs.size());
  for (std::size_t k = 0; k < node.inputs.size(); ++k) {
    const bool live = raw[k] > 0.0;
    grad_out[k] = live ? (dot(g_norm.values(), node.inputs[k].values()) - gn_dot_n) / node.denominator : 0.0;
    FeatureLevel gk = g_norm;
    const double scale = live ? raw[k] / node.denominator : 0.0;
    for (double& v : gk.values()) v *= scale;
    g_inputs.push_back(std::move(gk));
  }
  return g_inputs;
}

struct BiFpnTrace {
  std::vector<NodeCache> td;  // index level - bottom, used for bottom < l < top
  std::vector<NodeCache> bu;  // index level - bottom
  std::vector<FeatureLevel> td_out;
  std::vector<FeatureLevel> out;
};

BiFpnTrace bifpn_trace(const Pyramid& in, const FusionWeights& w, const PyramidConv& conv) {
  require_fusion_levels(in);
  w.validate();
  if (in.bottom() != w.bottom || in.top() != w.top) throw Error("fusion weights and pyramid cover different levels");
  const int b = in.bottom();
  const int t = in.top();
  const auto n = static_cast<std::size_t>(t - b + 1);
  auto idx = [b](int l) { return static_cast<std::size_t>(l - b); };

  BiFpnTrace tr;
  tr.td.resize(n, NodeCache{{}, in.level(b), 0.0});
  tr.bu.resize(n, NodeCache{{}, in.level(b), 0.0});
  tr.td_out.assign(in.levels().begin(), in.levels().end());
  tr.out.assign(in.levels().begin(), in.levels().end());

  // Top-down pass; td_top is the input itself.
  for (int l = t - 1; l > b; --l) {
    const auto& x = in.level(l);
    tr.td[idx(l)] = fuse_cached({x, resize_like(tr.td_out[idx(l + 1)], x)}, w.top_down[idx(l)], w.epsilon);
    tr.td_out[idx(l)] = conv.at(l, b).apply(tr.td[idx(l)].normalized);
  }
  // Bottom-up pass.
  {
    const auto& x = in.level(b);
    tr.bu[0] = fuse_cached({x, resize_like(tr.td_out[idx(b + 1)], x)}, w.bottom_up[0], w.epsilon);
    tr.out[0] = conv.at(b, b).apply(tr.bu[0].normalized);
  }
  for (int l = b + 1; l <= t; ++l) {
    const auto& x = in.level(l);
    std::vector<FeatureLevel> inputs{x};
    if (l < t) inputs.push_back(tr.td_out[idx(l)]);
    inputs.push_back(resize_like(tr.out[idx(l - 1)], x));
    tr.bu[idx(l)] = fuse_cached(std::move(inputs), w.bottom_up[idx(l)], w.epsilon);
    tr.out[idx(l)] = conv.at(l, b).apply(tr.bu[idx(l)].normalized);
  }
  return tr;
}

}  // namespace

FeatureLevel fuse_node(std::span<const FeatureLevel> inputs, std::span<const double> raw_weights, double epsilon,
                       const LinearConv& conv) {
  auto node = fuse_cached(std::vector<FeatureLevel>(inputs.begin(), inputs.end()), raw_weights, epsilon);
  return conv.apply(node.normalized);
}

BiFpnResult bifpn_forward(const Pyramid& in, const FusionWeights& weights, const PyramidConv& conv) {
  auto tr = bifpn_trace(in, weights, conv);
  std::vector<FeatureLevel> td;
  for (std::size_t i = 1; i + 1 < tr.td_out.size(); ++i) td.push_back(std::move(tr.td_out[i]));
  return {std::move(td), Pyramid(std::move(tr.out))};
}

Pyramid bifpn_fuse(const Pyramid& in, const FusionWeights& weights, const PyramidConv& conv) {
  return bifpn_forward(in, weights, conv).out;
}

FusionGradients fusion_weight_gradients(const Pyramid& in, const FusionWeights& weights, const PyramidConv& conv,
                                        const Pyramid& upstream) {
  const auto tr = bifpn_trace(in, weights, conv);
  if (upstream.bottom() != in.bottom() || upstream.top() != in.top()) throw Error("upstream pyramid covers different levels");
  for (int l = in.bottom(); l <= in.top(); ++l) {
    if (!upstream.level(l).same_shape(tr.out[static_cast<std::size_t>(l - in.bottom())])) {
      throw Error("upstream cotangent shape does not match the fused output");
    }
  }

  const int b = in.bottom();
  const int t = in.top();
  auto idx = [b](int l) { return static_cast<std::size_t>(l - b); };

  FusionGradients grads = weights;
  for (auto& node : grads.top_down) std::fill(node.begin(), node.end(), 0.0);
  for (auto& node : grads.bottom_up) std::fill(node.begin(), node.end(), 0.0);

  std::vector<FeatureLevel> g_out(upstream.levels().begin(), upstream.levels().end());
  std::vector<FeatureLevel> g_td;
  for (const auto& f : tr.td_out) g_td.emplace_back(f.level(), f.width(), f.height(), f.channels());

  // Output nodes, top to bottom: each feeds the one above through Resize.
  for (int l = t; l >= b; --l) {
    const auto i = idx(l);
    const FeatureLevel g_norm = conv.at(l, b).apply_transpose(g_out[i]);
    auto g_in = node_backward(tr.bu[i], weights.bottom_up[i], g_norm, grads.bottom_up[i]);
    if (l == b) {
      if (b + 1 < t) add_into(g_td[idx(b + 1)], resize_like_adjoint(g_in[1], tr.td_out[idx(b + 1)]));
    } else {
      if (l < t) add_into(g_td[i], g_in[1]);
      add_into(g_out[i - 1], resize_like_adjoint(g_in.back(), tr.out[i - 1]));
    }
  }
  // Top-down nodes, bottom to top: td_l feeds td_{l-1}, so its cotangent is
  // complete once every lower node has been processed.
  for (int l = b + 1; l < t; ++l) {
    const auto i = idx(l);
    const FeatureLevel g_norm = conv.at(l, b).apply_transpose(g_td[i]);
    auto g_in = node_backward(tr.td[i], weights.top_down[i], g_norm, grads.top_down[i]);
    if (l + 1 < t) add_into(g_td[i + 1], resize_like_adjoint(g_in[1], tr.td_out[i + 1]));
  }
  return grads;
}

FusionGradients numeric_fusion_gradients(const Pyramid& in, const FusionWeights& weights, const PyramidConv& conv,
                                         const Pyramid& upstream, double step) {
  if (!(step > 0.0)) throw Error("finite-difference step must be positive");
  auto objective = [&](const FusionWeights& w) {
    const Pyramid out = bifpn_fuse(in, w, conv);
    double j = 0.0;
    for (int l = in.bottom(); l <= in.top(); ++l) j += dot(upstream.level(l).values(), out.level(l).values());
    return j;
  };
  FusionWeights probe = weights;
  FusionGradients grads = weights;
  auto params = probe.flat();
  auto slots = grads.flat();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = *params[i];
    *params[i] = saved + step;
    const double plus = objective(probe);
    *params[i] = saved - step;
    const double minus = objective(probe);
    *params[i] = saved;
    *slots[i] = (plus - minus) / (2.0 * step);
  }
  return grads;
}

double relative_error(double a, double b) noexcept {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale == 0.0) return 0.0;
  return std::abs(a - b) / scale;
}

}  // namespace mrb
