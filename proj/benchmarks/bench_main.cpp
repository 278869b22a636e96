#include <benchmark/benchmark.h>

#include "mrb/anchors.hpp"
#include "mrb/density.hpp"
#include "mrb/fusion.hpp"
#include "mrb/metrics.hpp"
#include "mrb/random.hpp"
#include "mrb/synth.hpp"

#include <vector>

namespace {

void BM_RenderDensity(benchmark::State& state) {
  const auto n = static_cast<int>(state.range(0));
  mrb::Rng rng(1);
  std::vector<mrb::Point> pts;
  for (int i = 0; i < n; ++i) pts.push_back({rng.uniform(0, 512), rng.uniform(0, 512)});
  const mrb::PointSet set(pts, 512, 512);
  for (auto _ : state) benchmark::DoNotOptimize(mrb::render_density(set, mrb::KernelSpec{}));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_RenderDensity)->Arg(10)->Arg(100)->Arg(500);

void BM_AveragePrecision(benchmark::State& state) {
  mrb::SynthParams p;
  p.n_images = static_cast<int>(state.range(0));
  p.jitter_sigma = 2.0;
  p.drop_rate = 0.1;
  p.false_positives_per_image = 2.0;
  const auto scene = mrb::synth_scene(p);
  std::vector<mrb::ImageEval> images;
  for (std::size_t i = 0; i < scene.manifest.images.size(); ++i)
    images.push_back({scene.manifest.images[i].faces, scene.detections[i].detections});
  for (auto _ : state)
    benchmark::DoNotOptimize(mrb::average_precision(images, mrb::EvalConfig{}, mrb::FaceLabel::Masked, std::nullopt));
}
BENCHMARK(BM_AveragePrecision)->Arg(50)->Arg(200);

void BM_BifpnFuse(benchmark::State& state) {
  const auto size = static_cast<int>(state.range(0));
  mrb::Rng rng(2);
  auto in = mrb::Pyramid::for_image(size, size, mrb::kFusionBottom, mrb::kFusionTop, 4);
  for (auto& l : in.levels())
    for (double& v : l.values()) v = rng.uniform(-1, 1);
  const auto w = mrb::FusionWeights::uniform(mrb::kFusionBottom, mrb::kFusionTop);
  for (auto _ : state) benchmark::DoNotOptimize(mrb::bifpn_fuse(in, w));
}
BENCHMARK(BM_BifpnFuse)->Arg(128)->Arg(512);

void BM_MatchAnchors(benchmark::State& state) {
  mrb::SynthParams p;
  p.n_images = 1;
  p.width = 640;
  p.height = 640;
  p.min_faces = p.max_faces = static_cast<int>(state.range(0));
  const auto scene = mrb::synth_scene(p);
  const auto anchors = mrb::generate_anchors(640, 640, mrb::AnchorConfig::defaults());
  const auto& faces = scene.manifest.images.front().faces;
  for (auto _ : state) benchmark::DoNotOptimize(mrb::match_anchors(anchors, faces));
  state.counters["anchors"] = static_cast<double>(anchors.size());
}
BENCHMARK(BM_MatchAnchors)->Arg(10)->Arg(80);

}  // namespace

BENCHMARK_MAIN();
