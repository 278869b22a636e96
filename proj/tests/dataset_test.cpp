#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "mrb/dataset.hpp"
#include "mrb/error.hpp"
#include "mrb/random.hpp"
#include "mrb/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace {

using mrb::DatasetManifest;
using mrb::FaceLabel;

mrb::LoadedManifest parse(const std::string& text) {
  std::istringstream in(text);
  return mrb::parse_annotations(in, "fixture.jsonl");
}

const char* kTwoImages =
    R"({"image_id":"a","video_id":"v1","condition":"DT","period":"before","width":100,"height":80,"faces":[{"box":[10,10,30,30],"label":"masked"},{"box":[40,10,60,35],"label":"unknown"}]})"
    "\n\n"
    R"({"image_id":7,"video_id":"v2","condition":"NT","width":64,"height":64,"faces":[]})"
    "\n";

TEST(LoadAnnotations, WellFormed) {
  const auto r = parse(kTwoImages);
  ASSERT_EQ(r.manifest.images.size(), 2u);
  EXPECT_TRUE(r.warnings.empty());
  const auto& a = r.manifest.images[0];
  EXPECT_EQ(a.image_id, "a");
  EXPECT_EQ(a.meta.video_id, "v1");
  EXPECT_EQ(a.meta.condition, mrb::Condition::Daytime);
  EXPECT_EQ(a.meta.period, mrb::Period::Before);
  ASSERT_EQ(a.faces.size(), 2u);
  EXPECT_EQ(a.faces[1].label, FaceLabel::Unknown);
  EXPECT_EQ(a.faces[0].box, mrb::BBox(10, 10, 30, 30));
  const auto& b = r.manifest.images[1];
  EXPECT_EQ(b.image_id, "7");
  EXPECT_EQ(b.meta.condition, mrb::Condition::Nighttime);
  EXPECT_EQ(b.meta.period, mrb::Period::During);
}

void expect_error_at(const std::string& text, std::size_t line) {
  try {
    parse(text);
    FAIL() << "expected a parse error";
  } catch (const mrb::ParseError& e) {
    EXPECT_EQ(e.line(), line) << e.what();
    EXPECT_NE(std::string(e.what()).find("fixture.jsonl:" + std::to_string(line)), std::string::npos) << e.what();
  }
}

TEST(LoadAnnotations, ErrorsNameTheLine) {
  const std::string good =
      R"({"image_id":"a","video_id":"v","condition":"DT","width":50,"height":50,"faces":[]})"
      "\n";
  expect_error_at(good + R"({"image_id":"b","video_id":"v","condition":"DT","width":50,"height":50,"faces":[{"box":[20,5,10,15],"label":"masked"}]})",
                  2);
  expect_error_at(good + good, 2);  // duplicate id
  expect_error_at(good + "{not json", 2);
  expect_error_at(R"({"image_id":"a","video_id":"v","condition":"XX","width":50,"height":50,"faces":[]})", 1);
  expect_error_at(R"({"image_id":"a","video_id":"v","condition":"DT","width":50,"faces":[]})", 1);
  expect_error_at(R"({"image_id":"a","video_id":"v","condition":"DT","width":50,"height":50,"faces":[{"box":[1,1,20,20],"label":"maybe"}]})", 1);
  expect_error_at(R"({"image_id":"a","video_id":"v","condition":"DT","width":50,"height":50,"faces":[{"box":[1,1,20],"label":"masked"}]})", 1);
  expect_error_at(R"({"image_id":"a","video_id":"v","condition":"DT","width":0,"height":50,"faces":[]})", 1);
  // Entirely outside the image: degenerate once clamped.
  expect_error_at(R"({"image_id":"a","video_id":"v","condition":"DT","width":50,"height":50,"faces":[{"box":[60,1,80,20],"label":"masked"}]})", 1);
}

TEST(LoadAnnotations, MalformedJsonReportsColumn) {
  try {
    parse(R"({"image_id": "a", oops})");
    FAIL();
  } catch (const mrb::ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
    EXPECT_GT(e.column(), 0u);
  }
}

TEST(LoadAnnotations, SmallFaceWarns) {
  const auto r = parse(
      R"({"image_id":"a","video_id":"v","condition":"DT","width":50,"height":50,"faces":[{"box":[1,1,10,10],"label":"masked"},{"box":[1,20,11,30],"label":"masked"}]})");
  ASSERT_EQ(r.manifest.images[0].faces.size(), 2u);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.warnings[0].line, 1u);
  EXPECT_NE(r.warnings[0].message.find("9x9"), std::string::npos) << r.warnings[0].message;
}

TEST(LoadAnnotations, ClampsToImage) {
  const auto r = parse(
      R"({"image_id":"a","video_id":"v","condition":"DT","width":50,"height":40,"faces":[{"box":[-5,30,20,60],"label":"unmasked"}]})");
  EXPECT_EQ(r.manifest.images[0].faces[0].box, mrb::BBox(0, 30, 20, 40));
}

TEST(LoadAnnotations, MissingFile) {
  EXPECT_THROW(mrb::load_annotations("/nonexistent/annotations.jsonl"), mrb::Error);
}

void expect_same_manifest(const DatasetManifest& a, const DatasetManifest& b) {
  ASSERT_EQ(a.images.size(), b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    const auto& x = a.images[i];
    const auto& y = b.images[i];
    EXPECT_EQ(x.image_id, y.image_id);
    EXPECT_EQ(x.meta.video_id, y.meta.video_id);
    EXPECT_EQ(x.meta.condition, y.meta.condition);
    EXPECT_EQ(x.meta.period, y.meta.period);
    EXPECT_EQ(x.width, y.width);
    EXPECT_EQ(x.height, y.height);
    ASSERT_EQ(x.faces.size(), y.faces.size());
    for (std::size_t f = 0; f < x.faces.size(); ++f) {
      EXPECT_EQ(x.faces[f].box, y.faces[f].box);
      EXPECT_EQ(x.faces[f].label, y.faces[f].label);
    }
  }
}

TEST(SaveAnnotations, RoundTrip) {
  mrb::SynthParams p;
  p.seed = 3;
  p.n_images = 20;
  p.unknown_probability = 0.1;
  const auto scene = mrb::synth_scene(p);
  std::stringstream ss;
  mrb::write_annotations(ss, scene.manifest);
  const auto back = mrb::parse_annotations(ss, "rt");
  expect_same_manifest(scene.manifest, back.manifest);

  fixtures::TempDir dir;
  mrb::save_annotations(dir / "a.jsonl", scene.manifest);
  expect_same_manifest(scene.manifest, mrb::load_annotations(dir / "a.jsonl").manifest);
}

TEST(Detections, RoundTripAndErrors) {
  mrb::SynthParams p;
  p.seed = 4;
  p.n_images = 10;
  p.jitter_sigma = 1.3;
  p.false_positives_per_image = 2;
  const auto scene = mrb::synth_scene(p);
  std::stringstream ss;
  mrb::write_detections(ss, scene.detections);
  const auto back = mrb::parse_detections(ss, "d");
  ASSERT_EQ(back.size(), scene.detections.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].image_id, scene.detections[i].image_id);
    EXPECT_EQ(back[i].detections, scene.detections[i].detections);
  }

  std::istringstream bad(
      R"({"image_id":"a","video_id":"v","condition":"DT","detections":[{"box":[0,0,5,5],"label":"unknown","conf":0.5}]})");
  EXPECT_THROW(mrb::parse_detections(bad, "d"), mrb::ParseError);
  std::istringstream conf(
      R"({"image_id":"a","video_id":"v","condition":"DT","detections":[{"box":[0,0,5,5],"label":"masked","conf":1.5}]})");
  EXPECT_THROW(mrb::parse_detections(conf, "d"), mrb::ParseError);
}

TEST(DatasetStats, PublishedTablesAsGoldens) {
  const std::vector<DatasetManifest> splits{
      fixtures::manifest_with_counts(fixtures::kTraining, mrb::Split::Training, "tr"),
      fixtures::manifest_with_counts(fixtures::kTesting, mrb::Split::Testing, "te")};
  const auto stats = mrb::dataset_stats(splits);
  ASSERT_EQ(stats.splits.size(), 2u);
  EXPECT_EQ(stats.splits[0].name, "training");
  EXPECT_EQ(stats.splits[0].counts.masked, 48736u);
  EXPECT_EQ(stats.splits[1].counts.masked, 23971u);
  EXPECT_EQ(stats.total.counts.images, 18088u);
  EXPECT_EQ(stats.total.counts.masked, 72707u);
  EXPECT_EQ(stats.total.counts.unmasked, 472500u);
  EXPECT_EQ(stats.total.counts.unknown, 35901u);
  EXPECT_EQ(stats.total.counts.faces(), 581108u);

  EXPECT_EQ(stats.splits[0].avg_masked, 4.0);
  EXPECT_EQ(stats.splits[0].avg_unmasked, 26.3);
  EXPECT_EQ(stats.splits[0].avg_unknown, 2.0);
  EXPECT_EQ(stats.splits[1].avg_masked, 4.0);
  EXPECT_EQ(stats.splits[1].avg_unmasked, 25.7);
  EXPECT_EQ(stats.splits[1].avg_unknown, 1.9);
}

TEST(DatasetStats, SplitTotalsAndRoundedAverages) {
  mrb::Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<DatasetManifest> splits;
    for (int s = 0; s < 2; ++s) {
      const fixtures::SplitCounts c{static_cast<std::size_t>(rng.uniform_int(1, 60)),
                                    static_cast<std::size_t>(rng.uniform_int(0, 300)),
                                    static_cast<std::size_t>(rng.uniform_int(0, 300)),
                                    static_cast<std::size_t>(rng.uniform_int(0, 50))};
      splits.push_back(fixtures::manifest_with_counts(c, s == 0 ? mrb::Split::Training : mrb::Split::Testing, "x"));
    }
    const auto st = mrb::dataset_stats(splits);
    mrb::LabelCounts sum;
    for (const auto& s : st.splits) {
      sum += s.counts;
      const double expected = std::round(10.0 * static_cast<double>(s.counts.unmasked) / static_cast<double>(s.counts.images)) / 10.0;
      EXPECT_NEAR(s.avg_unmasked, expected, 1e-12);
    }
    EXPECT_EQ(sum.images, st.total.counts.images);
    EXPECT_EQ(sum.masked, st.total.counts.masked);
    EXPECT_EQ(sum.unmasked, st.total.counts.unmasked);
    EXPECT_EQ(sum.unknown, st.total.counts.unknown);
  }
}

TEST(DatasetStats, EmptyManifest) {
  const std::vector<DatasetManifest> splits{DatasetManifest{}};
  const auto st = mrb::dataset_stats(splits);
  EXPECT_EQ(st.total.counts.images, 0u);
  EXPECT_EQ(st.total.counts.faces(), 0u);
  EXPECT_EQ(st.splits[0].avg_masked, 0.0);
  for (const auto& h : st.histograms)
    for (const auto& b : h.bins) EXPECT_EQ(b.count, 0u);
}

TEST(DatasetStats, Histograms) {
  DatasetManifest m;
  m.images.push_back({"a", {"v", mrb::Condition::Daytime, mrb::Period::During}, 200, 200, {}});
  auto& faces = m.images[0].faces;
  faces.push_back({{0, 0, 12, 12}, FaceLabel::Masked});    // sqrt(area) 12 -> [8, 16)
  faces.push_back({{0, 0, 40, 40}, FaceLabel::Unmasked});  // 40 -> [32, 64)
  faces.push_back({{0, 0, 16, 16}, FaceLabel::Unmasked});  // 16 -> [16, 32)
  const std::vector<DatasetManifest> splits{m};
  const auto st = mrb::dataset_stats(splits);
  std::map<std::string, const mrb::Histogram*> by;
  for (const auto& h : st.histograms) by[h.quantity] = &h;
  ASSERT_EQ(by.size(), 3u);
  const auto& size = *by.at("face_size");
  std::size_t total = 0;
  for (const auto& b : size.bins) {
    total += b.count;
    if (b.lo == 8) EXPECT_EQ(b.count, 1u);
    if (b.lo == 16) EXPECT_EQ(b.count, 1u);
    if (b.lo == 32) EXPECT_EQ(b.count, 1u);
  }
  EXPECT_EQ(total, 3u);
  const auto& ratio = *by.at("mask_ratio");
  std::size_t hits = 0;
  for (const auto& b : ratio.bins) {
    if (b.count > 0) {
      EXPECT_LE(b.lo, 1.0 / 3.0);
      EXPECT_GT(b.hi, 1.0 / 3.0);
      hits += b.count;
    }
  }
  EXPECT_EQ(hits, 1u);
}

TEST(SelectFrames, Examples) {
  const std::vector<mrb::FrameCount> f{{"f1", 0}, {"f2", 1}, {"f3", 3}};
  EXPECT_EQ(mrb::select_frames(f), (std::vector<std::string>{"f2", "f3"}));
  EXPECT_EQ(mrb::select_frames(f, 0).size(), 3u);
  EXPECT_TRUE(mrb::select_frames(f, 4).empty());
}

TEST(SelectFrames, MonotoneInThreshold) {
  mrb::Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    std::vector<mrb::FrameCount> f;
    for (int i = 0; i < 30; ++i) f.push_back({"f" + std::to_string(i), static_cast<std::size_t>(rng.uniform_int(0, 10))});
    auto prev = mrb::select_frames(f, 0);
    for (std::size_t k = 1; k <= 11; ++k) {
      const auto cur = mrb::select_frames(f, k);
      EXPECT_TRUE(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end(),
                                [&](const std::string& a, const std::string& b) {
                                  return std::stoi(a.substr(1)) < std::stoi(b.substr(1));
                                }));
      EXPECT_LE(cur.size(), prev.size());
      prev = cur;
    }
  }
}

TEST(Synth, ZeroNoiseDetectionsEqualAnnotations) {
  mrb::SynthParams p;
  p.seed = 11;
  p.n_images = 30;
  ASSERT_TRUE(p.detector_is_noiseless());
  const auto scene = mrb::synth_scene(p);
  ASSERT_EQ(scene.detections.size(), scene.manifest.images.size());
  for (std::size_t i = 0; i < scene.detections.size(); ++i) {
    const auto& img = scene.manifest.images[i];
    const auto& d = scene.detections[i];
    EXPECT_EQ(d.image_id, img.image_id);
    ASSERT_EQ(d.detections.size(), img.faces.size());
    EXPECT_GE(img.faces.size(), p.min_faces);
    EXPECT_LE(img.faces.size(), p.max_faces);
    for (std::size_t f = 0; f < img.faces.size(); ++f) {
      EXPECT_EQ(d.detections[f].box(), img.faces[f].box);
      EXPECT_EQ(d.detections[f].label(), img.faces[f].label);
      EXPECT_EQ(d.detections[f].confidence(), 1.0);
    }
  }
}

TEST(Synth, DropRateOneMeansNoDetections) {
  mrb::SynthParams p;
  p.seed = 12;
  p.n_images = 20;
  p.drop_rate = 1.0;
  for (const auto& d : mrb::synth_scene(p).detections) EXPECT_TRUE(d.detections.empty());
}

TEST(Synth, SameSeedSameBytes) {
  mrb::SynthParams p;
  p.seed = 7;
  p.n_images = 12;
  p.jitter_sigma = 2;
  p.flip_rate = 0.1;
  p.density_noise = 0.05;
  fixtures::TempDir a;
  fixtures::TempDir b;
  mrb::write_synth(p, a.path(), 1);
  mrb::write_synth(p, b.path(), 4);
  EXPECT_TRUE(fixtures::same_tree(a.path(), b.path()));
  p.seed = 8;
  fixtures::TempDir c;
  mrb::write_synth(p, c.path(), 1);
  EXPECT_FALSE(fixtures::same_tree(a.path(), c.path()));
}

TEST(Synth, InfeasibleParams) {
  mrb::SynthParams p;
  p.min_faces = 10;
  p.max_faces = 5;
  EXPECT_THROW(mrb::synth_scene(p), mrb::Error);
  p = {};
  p.flip_rate = 1.5;
  EXPECT_THROW(mrb::synth_scene(p), mrb::Error);
  p = {};
  p.min_face_size = 0;
  EXPECT_THROW(mrb::synth_scene(p), mrb::Error);
}

TEST(Synth, DensityPredictionsIntegrateToCounts) {
  mrb::SynthParams p;
  p.seed = 13;
  p.n_images = 5;
  const auto scene = mrb::synth_scene(p);
  for (std::size_t i = 0; i < scene.manifest.images.size(); ++i) {
    const auto& img = scene.manifest.images[i];
    const auto set = mrb::synth_density_prediction(img, i, p);
    const auto truth = mrb::annotation_ratio(img.faces);
    EXPECT_NEAR(mrb::integrate_count(set.masked), truth.masked, 1e-6);
    EXPECT_NEAR(mrb::integrate_count(set.total), truth.total(), 1e-6);
  }
}

}  // namespace
