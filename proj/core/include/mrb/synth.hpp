#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mrb/dataset.hpp"
#include "mrb/density.hpp"

namespace mrb {

/// Parameters of the synthetic benchmark. The seed determines every output.
struct SynthParams {
  std::uint64_t seed = 0;
  std::size_t n_images = 200;
  std::size_t min_faces = 5;
  std::size_t max_faces = 80;
  int width = 640;
  int height = 480;
  double min_face_size = 10.0;  ///< face widths are log-uniform in [min, max]
  double max_face_size = 64.0;
  std::size_t n_videos = 4;

  /// Per-image masked probability is uniform in
  /// [masked_probability - spread, masked_probability + spread], clamped.
  double masked_probability = 0.5;
  double masked_spread = 0.4;
  double unknown_probability = 0.0;

  // Simulated detector.
  double jitter_sigma = 0.0;  ///< pixels, per box coordinate
  double drop_rate = 0.0;
  double flip_rate = 0.0;
  double false_positives_per_image = 0.0;
  double tp_conf_mean = 0.9;
  double tp_conf_sd = 0.05;
  double fp_conf_mean = 0.3;
  double fp_conf_sd = 0.1;

  // Simulated density regressor.
  double density_noise = 0.0;  ///< per-cell relative Gaussian noise
  int density_downscale = 8;
  KernelSpec kernel;

  void validate() const;
  /// Without jitter, drops, flips or false positives the detector returns
  /// every labelled face with confidence 1.
  bool detector_is_noiseless() const noexcept;
};

struct SynthScene {
  DatasetManifest manifest;
  std::vector<DetectionRecord> detections;
};

/// Faces, labels and simulated detections. Scene layout and detector noise
/// draw from separate streams, so changing a noise rate leaves the faces
/// unchanged and the noise decisions nested.
SynthScene synth_scene(const SynthParams& params);

/// Ground-truth density set of image `index` plus per-cell multiplicative
/// noise max(0, 1 + N(0, density_noise)).
DensitySet synth_density_prediction(const ImageRecord& image, std::size_t index, const SynthParams& params);

/// Writes annotations.jsonl, detections.jsonl and
/// density/<image_id>.{masked,unmasked,total}.nfmd under `dir`.
void write_synth(const SynthParams& params, const std::filesystem::path& dir, unsigned threads = 1);

/// File name of a density map for one image and quantity.
std::filesystem::path density_file(const std::filesystem::path& dir, const std::string& image_id, const char* quantity);

}  // namespace mrb
