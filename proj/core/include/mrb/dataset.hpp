#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mrb/geometry.hpp"
#include "mrb/ratio.hpp"

namespace mrb {

struct ImageRecord {
  std::string image_id;
  ImageMeta meta;
  int width = 0;
  int height = 0;
  std::vector<Annotation> faces;
};

enum class Split { Training, Testing };

struct DatasetManifest {
  std::vector<ImageRecord> images;
  Split split = Split::Training;
};

struct LoadWarning {
  std::size_t line;
  std::string message;
};

struct LoadedManifest {
  DatasetManifest manifest;
  std::vector<LoadWarning> warnings;
};

/// Faces smaller than this on either side are loaded with a warning.
inline constexpr double kMinAnnotatedFaceSize = 10.0;

/// Annotation JSONL, one image per line:
///   {"image_id":..., "video_id":..., "condition":"DT"|"NT", "period":"before"|"during",
///    "width":..., "height":..., "faces":[{"box":[l,t,r,b], "label":"masked"|"unmasked"|"unknown"}]}
/// Boxes are clamped to the image; a box that is empty after clamping is an
/// error naming its line. Blank lines are skipped.
LoadedManifest parse_annotations(std::istream& in, const std::string& source = "<stream>");
LoadedManifest load_annotations(const std::filesystem::path& path);

void write_annotations(std::ostream& out, const DatasetManifest& manifest);
void save_annotations(const std::filesystem::path& path, const DatasetManifest& manifest);

struct DetectionRecord {
  std::string image_id;
  std::string video_id;
  Condition condition = Condition::Daytime;
  std::vector<Detection> detections;
};

/// Detection JSONL, one image per line:
///   {"image_id":..., "video_id":..., "condition":"DT"|"NT",
///    "detections":[{"box":[l,t,r,b], "label":"masked"|"unmasked", "conf":...}]}
std::vector<DetectionRecord> parse_detections(std::istream& in, const std::string& source = "<stream>");
std::vector<DetectionRecord> load_detections(const std::filesystem::path& path);

void write_detections(std::ostream& out, std::span<const DetectionRecord> records);
void save_detections(const std::filesystem::path& path, std::span<const DetectionRecord> records);

struct LabelCounts {
  std::size_t images = 0;
  std::size_t masked = 0;
  std::size_t unmasked = 0;
  std::size_t unknown = 0;

  std::size_t faces() const noexcept { return masked + unmasked + unknown; }
  LabelCounts& operator+=(const LabelCounts& o) noexcept;
};

struct SplitStats {
  std::string name;
  LabelCounts counts;
  // Per-image averages rounded to one decimal.
  double avg_masked = 0.0;
  double avg_unmasked = 0.0;
  double avg_unknown = 0.0;
};

struct HistogramBin {
  double lo;
  double hi;
  std::size_t count;
};

struct Histogram {
  std::string split;
  std::string quantity;  ///< "face_size", "mask_ratio" or "faces_per_image"
  std::vector<HistogramBin> bins;
};

struct HistogramConfig {
  int face_size_log2_bins = 10;  ///< [2^i, 2^(i+1)) on sqrt(area), last bin open-ended
  double ratio_bin_width = 0.1;
  double faces_bin_width = 10.0;
  int faces_bins = 20;  ///< last bin open-ended
};

struct DatasetStats {
  std::vector<SplitStats> splits;
  SplitStats total;
  std::vector<Histogram> histograms;
};

double round_to_tenth(double x) noexcept;

SplitStats split_stats(std::string name, const LabelCounts& counts);
LabelCounts count_labels(const DatasetManifest& m);
DatasetStats dataset_stats(std::span<const DatasetManifest> splits, const HistogramConfig& hist = {});

struct FrameCount {
  std::string frame_id;
  std::size_t faces = 0;
};

/// Frames with at least `min_faces` faces, in input order.
std::vector<std::string> select_frames(std::span<const FrameCount> frames, std::size_t min_faces = 1);

std::string_view to_string(Split s) noexcept;

}  // namespace mrb
