#include <gtest/gtest.h>

#include "mrb/error.hpp"
#include "mrb/fusion.hpp"
#include "mrb/random.hpp"

#include <cmath>

namespace {

using mrb::FeatureLevel;
using mrb::FusionWeights;
using mrb::LinearConv;
using mrb::Pyramid;
using mrb::PyramidConv;

Pyramid constant_pyramid(int image, const std::vector<double>& c) {
  auto p = Pyramid::for_image(image, image, 3, 7, 1);
  for (int l = 3; l <= 7; ++l)
    for (double& v : p.level(l).values()) v = c[l - 3];
  return p;
}

Pyramid random_pyramid(mrb::Rng& rng, int w, int h, int channels) {
  auto p = Pyramid::for_image(w, h, 3, 7, channels);
  for (auto& level : p.levels())
    for (double& v : level.values()) v = rng.uniform(-1, 1);
  return p;
}

double objective(const Pyramid& out, const Pyramid& upstream) {
  double s = 0.0;
  for (int l = out.bottom(); l <= out.top(); ++l) {
    const auto a = out.level(l).values();
    const auto b = upstream.level(l).values();
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  }
  return s;
}

TEST(Pyramid, ShapesFollowTheImage) {
  const auto p = Pyramid::for_image(100, 60, 3, 7, 2);
  EXPECT_EQ(p.level(3).width(), 13);
  EXPECT_EQ(p.level(3).height(), 8);
  EXPECT_EQ(p.level(4).width(), 7);
  EXPECT_EQ(p.level(5).width(), 4);
  EXPECT_EQ(p.level(7).width(), 1);
  EXPECT_EQ(p.level(7).height(), 1);
}

TEST(Pyramid, RejectsGapsAndMismatches) {
  std::vector<FeatureLevel> levels{FeatureLevel(3, 4, 4, 1), FeatureLevel(5, 1, 1, 1)};
  EXPECT_THROW(Pyramid{levels}, mrb::Error);
  levels = {FeatureLevel(3, 4, 4, 1), FeatureLevel(4, 2, 2, 2)};
  EXPECT_THROW(Pyramid{levels}, mrb::Error);
  levels = {FeatureLevel(3, 4, 4, 1), FeatureLevel(4, 3, 2, 1)};
  EXPECT_THROW(Pyramid{levels}, mrb::Error);
  EXPECT_THROW(FeatureLevel(3, 1, 1, 1, {std::nan("")}), mrb::Error);
}

TEST(Resize, Examples) {
  const FeatureLevel f(5, 2, 2, 1, {1, 2, 3, 4});
  const auto same = mrb::resize_level(f, 5);
  EXPECT_TRUE(std::equal(same.values().begin(), same.values().end(), f.values().begin()));

  const auto up = mrb::resize_level(FeatureLevel(7, 1, 1, 1, {5}), 6);
  ASSERT_EQ(up.width(), 2);
  ASSERT_EQ(up.height(), 2);
  for (double v : up.values()) EXPECT_EQ(v, 5.0);

  const auto down = mrb::resize_level(f, 6);
  ASSERT_EQ(down.width(), 1);
  EXPECT_DOUBLE_EQ(down.at(0, 0, 0), 2.5);

  // Odd dims pad with zeros before pooling.
  const auto odd = mrb::resize_level(FeatureLevel(3, 3, 1, 1, {4, 4, 4}), 4);
  ASSERT_EQ(odd.width(), 2);
  EXPECT_DOUBLE_EQ(odd.at(0, 0, 0), 2.0);
  EXPECT_DOUBLE_EQ(odd.at(0, 0, 1), 1.0);
}

TEST(Resize, AdjointIdentity) {
  mrb::Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const int w = static_cast<int>(rng.uniform_int(1, 9));
    const int h = static_cast<int>(rng.uniform_int(1, 9));
    FeatureLevel src(4, w, h, 2);
    for (double& v : src.values()) v = rng.uniform(-1, 1);
    const int rw = static_cast<int>(rng.uniform_int(1, 9));
    const int rh = static_cast<int>(rng.uniform_int(1, 9));
    const int rl = static_cast<int>(rng.uniform_int(2, 6));
    FeatureLevel ref(rl, rw, rh, 2);
    FeatureLevel cot(rl, rw, rh, 2);
    for (double& v : cot.values()) v = rng.uniform(-1, 1);
    const auto fwd = mrb::resize_like(src, ref);
    const auto adj = mrb::resize_like_adjoint(cot, src);
    double lhs = 0.0;
    double rhs = 0.0;
    for (std::size_t i = 0; i < fwd.values().size(); ++i) lhs += fwd.values()[i] * cot.values()[i];
    for (std::size_t i = 0; i < adj.values().size(); ++i) rhs += adj.values()[i] * src.values()[i];
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}

TEST(FpnTopdown, Examples) {
  const auto zero = mrb::fpn_topdown(constant_pyramid(128, {0, 0, 0, 0, 0}));
  for (const auto& l : zero.levels())
    for (double v : l.values()) EXPECT_EQ(v, 0.0);

  const std::vector<double> c{1, 2, 3, 4, 5};
  const auto out = mrb::fpn_topdown(constant_pyramid(128, c));
  for (int l = 3; l <= 7; ++l) {
    double expected = 0.0;
    for (int j = l; j <= 7; ++j) expected += c[j - 3];
    for (double v : out.level(l).values()) EXPECT_DOUBLE_EQ(v, expected);
  }

  PyramidConv kill;
  for (int l = 3; l <= 7; ++l) kill.per_level.push_back(LinearConv::scaled(1, 0.0));
  const auto killed = mrb::fpn_topdown(constant_pyramid(128, c), kill);
  for (const auto& l : killed.levels())
    for (double v : l.values()) EXPECT_EQ(v, 0.0);
}

TEST(FpnTopdown, MissingLevel) {
  auto p = Pyramid::for_image(64, 64, 3, 6, 1);
  EXPECT_THROW(mrb::fpn_topdown(p), mrb::Error);
}

TEST(FpnTopdown, SingleLevelPathIsTheResizeChain) {
  mrb::Rng rng(8);
  for (int k = 3; k <= 7; ++k) {
    auto p = Pyramid::for_image(128, 128, 3, 7, 2);
    for (double& v : p.level(k).values()) v = rng.uniform(-1, 1);
    const auto out = mrb::fpn_topdown(p);
    for (int l = 3; l <= 7; ++l) {
      if (l > k) {
        for (double v : out.level(l).values()) EXPECT_EQ(v, 0.0);
        continue;
      }
      FeatureLevel chain = p.level(k);
      for (int step = k - 1; step >= l; --step) chain = mrb::resize_level(chain, step);
      const auto got = out.level(l).values();
      ASSERT_EQ(got.size(), chain.values().size());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], chain.values()[i]);
    }
  }
}

TEST(FuseNode, Examples) {
  const std::vector<FeatureLevel> in{FeatureLevel(6, 1, 1, 1, {2}), FeatureLevel(6, 1, 1, 1, {4})};
  EXPECT_DOUBLE_EQ(mrb::fuse_node(in, std::vector{1.0, 1.0}, 0.0).at(0, 0, 0), 3.0);
  EXPECT_DOUBLE_EQ(mrb::fuse_node(in, std::vector{2.0, 0.0}, 0.0).at(0, 0, 0), 2.0);
  EXPECT_DOUBLE_EQ(mrb::fuse_node(in, std::vector{2.0, -5.0}, 0.0).at(0, 0, 0), 2.0);
  EXPECT_THROW(mrb::fuse_node(in, std::vector{0.0, -1.0}, 0.0), mrb::Error);
  EXPECT_NO_THROW(mrb::fuse_node(in, std::vector{0.0, 0.0}, 1e-4));
  EXPECT_THROW(mrb::fuse_node(in, std::vector{1.0}, 0.0), mrb::Error);
}

TEST(FuseNode, ScalarGradientClosedForm) {
  mrb::Rng rng(2);
  for (int t = 0; t < 1000; ++t) {
    const double a = rng.uniform(-3, 3);
    const double b = rng.uniform(-3, 3);
    const double w1 = rng.uniform(0.1, 2);
    const double w2 = rng.uniform(0.1, 2);
    const double eps = rng.uniform(0, 0.1);
    const std::vector<FeatureLevel> in{FeatureLevel(6, 1, 1, 1, {a}), FeatureLevel(6, 1, 1, 1, {b})};
    auto f = [&](double x) { return mrb::fuse_node(in, std::vector{x, w2}, eps).at(0, 0, 0); };
    const double h = 1e-5;
    const double numeric = (f(w1 + h) - f(w1 - h)) / (2 * h);
    const double d = w1 + w2 + eps;
    const double analytic = (a * (w2 + eps) - w2 * b) / (d * d);
    EXPECT_LE(mrb::relative_error(analytic, numeric), 1e-5) << a << " " << b << " " << w1 << " " << w2;
  }
}

// Constant maps on a power-of-two image stay constant through every resize,
// so one BiFPN pass reduces to scalar recursions on per-level values.
std::vector<double> scalar_bifpn(const std::vector<double>& c, FusionWeights w) {
  auto fuse = [&](std::vector<double> xs, const std::vector<double>& ws) {
    double num = 0.0;
    double den = w.epsilon;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double e = std::max(ws[i], 0.0);
      num += e * xs[i];
      den += e;
    }
    return num / den;
  };
  std::vector<double> td(5);
  td[4] = c[4];
  for (int i = 3; i >= 1; --i) td[i] = fuse({c[i], td[i + 1]}, w.top_down[i]);
  std::vector<double> out(5);
  out[0] = fuse({c[0], td[1]}, w.bottom_up[0]);
  for (int i = 1; i <= 3; ++i) out[i] = fuse({c[i], td[i], out[i - 1]}, w.bottom_up[i]);
  out[4] = fuse({c[4], out[3]}, w.bottom_up[4]);
  return out;
}

TEST(Bifpn, ConstantInputsMatchScalarRecursion) {
  mrb::Rng rng(19);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> c(5);
    for (auto& v : c) v = rng.uniform(-2, 2);
    auto w = FusionWeights::uniform(3, 7, 1.0, rng.uniform(0, 1e-3));
    for (double* v : w.flat()) *v = rng.uniform(-0.5, 2);
    for (auto& node : w.bottom_up) node[0] = std::max(node[0], 0.1);
    for (auto& node : w.top_down)
      if (!node.empty()) node[0] = std::max(node[0], 0.1);
    const auto expected = scalar_bifpn(c, w);
    const auto out = mrb::bifpn_fuse(constant_pyramid(128, c), w);
    for (int l = 3; l <= 7; ++l)
      for (double v : out.level(l).values()) ASSERT_NEAR(v, expected[l - 3], 1e-12);
  }
}

TEST(Bifpn, ConstantInputsConvexCombination) {
  const auto in = constant_pyramid(128, {1.5, 1.5, 1.5, 1.5, 1.5});
  mrb::Rng rng(3);
  auto w = FusionWeights::uniform(3, 7, 1.0, 0.0);
  for (double* v : w.flat()) *v = rng.uniform(0.1, 3);
  const auto exact = mrb::bifpn_fuse(in, w);
  for (const auto& l : exact.levels())
    for (double v : l.values()) EXPECT_NEAR(v, 1.5, 1e-15);
  w.epsilon = 1e-4;
  const auto out = mrb::bifpn_fuse(in, w);
  for (const auto& l : out.levels())
    for (double v : l.values()) {
      EXPECT_LT(v, 1.5);
      EXPECT_GT(v, 1.5 * 0.999);
    }
}

TEST(Bifpn, HomogeneousInInputs) {
  mrb::Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    const auto in = random_pyramid(rng, 50, 37, 3);
    auto w = FusionWeights::uniform(3, 7);
    for (double* v : w.flat()) *v = rng.uniform(0.1, 2);
    const auto base = mrb::bifpn_fuse(in, w);
    for (double s : {2.0, 0.25, -4.0}) {
      auto scaled = in;
      for (auto& l : scaled.levels())
        for (double& v : l.values()) v *= s;
      const auto out = mrb::bifpn_fuse(scaled, w);
      for (int l = 3; l <= 7; ++l) {
        const auto a = out.level(l).values();
        const auto b = base.level(l).values();
        for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], s * b[i]);
      }
    }
  }
}

TEST(Bifpn, WeightScaleInvarianceAtZeroEpsilon) {
  mrb::Rng rng(6);
  for (int t = 0; t < 30; ++t) {
    const auto in = random_pyramid(rng, 64, 64, 2);
    auto w = FusionWeights::uniform(3, 7, 1.0, 0.0);
    for (double* v : w.flat()) *v = rng.uniform(0.1, 2);
    const auto base = mrb::bifpn_fuse(in, w);
    auto scaled = w;
    for (double* v : scaled.flat()) *v *= 4.0;  // power of two: exact
    const auto out = mrb::bifpn_fuse(in, scaled);
    for (int l = 3; l <= 7; ++l) {
      const auto a = out.level(l).values();
      const auto b = base.level(l).values();
      for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
    }
    auto odd = w;
    for (double* v : odd.flat()) *v *= 2.7;
    const auto out2 = mrb::bifpn_fuse(in, odd);
    for (int l = 3; l <= 7; ++l) {
      const auto a = out2.level(l).values();
      const auto b = base.level(l).values();
      for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-12);
    }
  }
}

TEST(Bifpn, Validation) {
  auto w = FusionWeights::uniform(3, 7);
  w.epsilon = -1;
  EXPECT_THROW(w.validate(), mrb::Error);
  w = FusionWeights::uniform(3, 7);
  w.bottom_up[2].pop_back();
  EXPECT_THROW(mrb::bifpn_fuse(Pyramid::for_image(64, 64, 3, 7, 1), w), mrb::Error);
}

TEST(FusionGradients, ZeroUpstreamAndDeadUnits) {
  mrb::Rng rng(9);
  const auto in = random_pyramid(rng, 40, 40, 2);
  auto w = FusionWeights::uniform(3, 7);
  for (double* v : w.flat()) *v = rng.uniform(0.1, 2);
  const auto zero_up = Pyramid::for_image(40, 40, 3, 7, 2);
  auto g = mrb::fusion_weight_gradients(in, w, {}, zero_up);
  for (double* v : g.flat()) EXPECT_EQ(*v, 0.0);

  w.bottom_up[2][1] = -0.3;
  w.top_down[2][0] = -1.0;
  const auto up = random_pyramid(rng, 40, 40, 2);
  g = mrb::fusion_weight_gradients(in, w, {}, up);
  EXPECT_EQ(g.bottom_up[2][1], 0.0);
  EXPECT_EQ(g.top_down[2][0], 0.0);
  EXPECT_NE(g.bottom_up[2][0], 0.0);
}

TEST(FusionGradients, MatchCentralDifferences) {
  mrb::Rng rng(77);
  const double h = 1e-5;
  for (int t = 0; t < 40; ++t) {
    const int w_img = static_cast<int>(rng.uniform_int(1, 64));
    const int h_img = static_cast<int>(rng.uniform_int(1, 64));
    const int ch = static_cast<int>(rng.uniform_int(1, 4));
    const auto in = random_pyramid(rng, w_img, h_img, ch);
    const auto up = random_pyramid(rng, w_img, h_img, ch);
    auto w = FusionWeights::uniform(3, 7, 1.0, 1e-4);
    for (double* v : w.flat()) *v = rng.uniform(0.1, 2);
    PyramidConv conv;
    for (int l = 3; l <= 7; ++l) {
      std::vector<double> m(static_cast<std::size_t>(ch * ch));
      for (double& v : m) v = rng.uniform(-1, 1);
      conv.per_level.push_back(LinearConv::matrix(ch, m));
    }
    auto g = mrb::fusion_weight_gradients(in, w, conv, up);
    const auto gs = g.flat();
    const auto ws = w.flat();
    for (std::size_t i = 0; i < ws.size(); ++i) {
      const double keep = *ws[i];
      *ws[i] = keep + h;
      const double fp = objective(mrb::bifpn_fuse(in, w, conv), up);
      *ws[i] = keep - h;
      const double fm = objective(mrb::bifpn_fuse(in, w, conv), up);
      *ws[i] = keep;
      const double numeric = (fp - fm) / (2 * h);
      EXPECT_LE(mrb::relative_error(*gs[i], numeric), 1e-5) << "case " << t << " weight " << i;
    }
    // The library's own difference helper agrees with this oracle.
    auto n = mrb::numeric_fusion_gradients(in, w, conv, up, h);
    const auto ns = n.flat();
    for (std::size_t i = 0; i < ns.size(); ++i) EXPECT_LE(mrb::relative_error(*gs[i], *ns[i]), 1e-5);
  }
}

TEST(RelativeError, Definition) {
  EXPECT_EQ(mrb::relative_error(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(mrb::relative_error(1, 2), 0.5);
  EXPECT_DOUBLE_EQ(mrb::relative_error(-1, 1), 2.0);
}

}  // namespace
