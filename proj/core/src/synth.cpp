#include "mrb/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mrb/error.hpp"
#include "mrb/parallel.hpp"
#include "mrb/random.hpp"

namespace mrb {

namespace {

enum Stream : std::uint64_t { kSceneStream = 0, kDetectorStream = 1, kDensityStream = 2 };

void require_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(std::string(name) + " must lie in [0, 1]");
}

void require_non_negative(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw Error(std::string(name) + " must be finite and non-negative");
}

double round_centi(double v) { return std::round(v * 100.0) / 100.0; }
double ceil_centi(double v) { return std::ceil(v * 100.0 - 1e-9) / 100.0; }

std::string video_name(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "v%02zu", v + 1);
  return buf;
}

std::string image_name(const std::string& video, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%05zu", i);
  return video + buf;
}

BBox random_box(Rng& rng, const SynthParams& p) {
  const double w = std::exp(rng.uniform(std::log(p.min_face_size), std::log(p.max_face_size)));
  const double h = std::min(w * rng.uniform(1.0, 1.3), static_cast<double>(p.height));
  const double left = round_centi(rng.uniform(0.0, p.width - w));
  const double top = round_centi(rng.uniform(0.0, p.height - h));
  return {left, top, std::min(ceil_centi(left + w), static_cast<double>(p.width)),
          std::min(ceil_centi(top + h), static_cast<double>(p.height))};
}

double clamp_unit(double v) { return std::clamp(v, 0.0, 1.0); }

FaceLabel flip(FaceLabel l) { return l == FaceLabel::Masked ? FaceLabel::Unmasked : FaceLabel::Masked; }

}  // namespace

void SynthParams::validate() const {
  if (min_faces > max_faces) throw Error("synth: min faces exceeds max faces");
  if (width <= 0 || height <= 0) throw Error("synth: image dimensions must be positive");
  if (!(min_face_size > 0.0) || !(max_face_size >= min_face_size)) throw Error("synth: need 0 < min face size <= max face size");
  if (max_face_size > std::min(width, height)) throw Error("synth: max face size exceeds the image");
  if (n_videos == 0) throw Error("synth: need at least one video");
  require_probability(masked_probability, "masked probability");
  require_probability(unknown_probability, "unknown probability");
  require_probability(drop_rate, "drop rate");
  require_probability(flip_rate, "flip rate");
  require_non_negative(masked_spread, "masked spread");
  require_non_negative(jitter_sigma, "jitter sigma");
  require_non_negative(false_positives_per_image, "false positives per image");
  require_non_negative(tp_conf_sd, "true-positive confidence sd");
  require_non_negative(fp_conf_sd, "false-positive confidence sd");
  require_non_negative(density_noise, "density noise");
  if (density_downscale < 1) throw Error("synth: density downscale must be at least 1");
  kernel.validate();
}

bool SynthParams::detector_is_noiseless() const noexcept {
  return jitter_sigma == 0.0 && drop_rate == 0.0 && flip_rate == 0.0 && false_positives_per_image == 0.0;
}

SynthScene synth_scene(const SynthParams& params) {
  params.validate();
  Rng scene(mix_seed(params.seed, kSceneStream));
  Rng detector(mix_seed(params.seed, kDetectorStream));
  const bool perfect = params.detector_is_noiseless();

  SynthScene out;
  out.manifest.split = Split::Testing;
  for (std::size_t i = 0; i < params.n_images; ++i) {
    const std::size_t v = i % params.n_videos;
    ImageRecord img;
    img.meta.video_id = video_name(v);
    img.meta.condition = v % 2 == 0 ? Condition::Daytime : Condition::Nighttime;
    img.meta.period = 2 * v < params.n_videos ? Period::Before : Period::During;
    img.image_id = image_name(img.meta.video_id, i);
    img.width = params.width;
    img.height = params.height;

    const auto n_faces = static_cast<std::size_t>(
        scene.uniform_int(static_cast<std::int64_t>(params.min_faces), static_cast<std::int64_t>(params.max_faces)));
    const double p_masked = clamp_unit(
        scene.uniform(params.masked_probability - params.masked_spread, params.masked_probability + params.masked_spread));
    for (std::size_t f = 0; f < n_faces; ++f) {
      // Rejection sampling keeps faces mostly apart; after 30 tries the last
      // candidate is accepted.
      BBox box = random_box(scene, params);
      for (int attempt = 0; attempt < 30; ++attempt) {
        const bool clear = std::none_of(img.faces.begin(), img.faces.end(),
                                        [&](const Annotation& a) { return iou(a.box, box) >= 0.2; });
        if (clear) break;
        box = random_box(scene, params);
      }
      const double u_unknown = scene.uniform();
      const double u_masked = scene.uniform();
      FaceLabel label = u_masked < p_masked ? FaceLabel::Masked : FaceLabel::Unmasked;
      if (u_unknown < params.unknown_probability) label = FaceLabel::Unknown;
      img.faces.push_back({box, label});
    }

    DetectionRecord rec{img.image_id, img.meta.video_id, img.meta.condition, {}};
    for (const auto& face : img.faces) {
      if (face.label == FaceLabel::Unknown) continue;
      // Always draw every variate so the stream stays aligned across rates.
      const double u_drop = detector.uniform();
      const double u_flip = detector.uniform();
      const double jl = detector.normal();
      const double jt = detector.normal();
      const double jr = detector.normal();
      const double jb = detector.normal();
      const double conf_draw = detector.normal(params.tp_conf_mean, params.tp_conf_sd);
      if (u_drop < params.drop_rate) continue;

      BBox box = face.box;
      if (params.jitter_sigma > 0.0) {
        const double s = params.jitter_sigma;
        if (auto j = BBox::try_make(round_centi(box.left() + s * jl), round_centi(box.top() + s * jt),
                                    round_centi(box.right() + s * jr), round_centi(box.bottom() + s * jb))) {
          box = *j;
        }
      }
      const FaceLabel label = u_flip < params.flip_rate ? flip(face.label) : face.label;
      rec.detections.emplace_back(box, label, perfect ? 1.0 : clamp_unit(conf_draw));
    }

    const double fp_whole = std::floor(params.false_positives_per_image);
    const bool fp_extra = detector.uniform() < params.false_positives_per_image - fp_whole;
    const auto n_fp = static_cast<std::size_t>(fp_whole) + (fp_extra ? 1u : 0u);
    for (std::size_t k = 0; k < n_fp; ++k) {
      const BBox box = random_box(detector, params);
      const FaceLabel label = detector.bernoulli(0.5) ? FaceLabel::Masked : FaceLabel::Unmasked;
      rec.detections.emplace_back(box, label, clamp_unit(detector.normal(params.fp_conf_mean, params.fp_conf_sd)));
    }

    out.manifest.images.push_back(std::move(img));
    out.detections.push_back(std::move(rec));
  }
  return out;
}

DensitySet synth_density_prediction(const ImageRecord& image, std::size_t index, const SynthParams& params) {
  DensitySet set = render_density_set(image.faces, image.width, image.height, params.kernel, params.density_downscale);
  if (params.density_noise > 0.0) {
    Rng rng(mix_seed(mix_seed(params.seed, kDensityStream), index));
    for (DensityMap* map : {&set.masked, &set.unmasked, &set.total}) {
      for (double& v : map->values()) v *= std::max(0.0, 1.0 + rng.normal(0.0, params.density_noise));
    }
  }
  return set;
}

std::filesystem::path density_file(const std::filesystem::path& dir, const std::string& image_id, const char* quantity) {
  return dir / (image_id + "." + quantity + ".nfmd");
}

void write_synth(const SynthParams& params, const std::filesystem::path& dir, unsigned threads) {
  const auto scene = synth_scene(params);
  std::error_code ec;
  std::filesystem::create_directories(dir / "density", ec);
  if (ec) throw Error("cannot create " + (dir / "density").string() + ": " + ec.message());
  save_annotations(dir / "annotations.jsonl", scene.manifest);
  save_detections(dir / "detections.jsonl", scene.detections);

  const auto& images = scene.manifest.images;
  parallel_for(images.size(), threads, [&](std::size_t i) {
    const auto set = synth_density_prediction(images[i], i, params);
    const auto density_dir = dir / "density";
    write_nfmd(density_file(density_dir, images[i].image_id, "masked"), set.masked);
    write_nfmd(density_file(density_dir, images[i].image_id, "unmasked"), set.unmasked);
    write_nfmd(density_file(density_dir, images[i].image_id, "total"), set.total);
  });
}

}  // namespace mrb
