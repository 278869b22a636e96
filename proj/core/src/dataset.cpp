#include "mrb/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mrb/error.hpp"

namespace mrb {

using nlohmann::json;

namespace {

// Per-line parsing context; every failure names the source and line.
struct LineContext {
  const std::string& source;
  std::size_t line;

  [[noreturn]] void fail(const std::string& what, std::size_t column = 0) const {
    throw ParseError(source, line, column, what);
  }
};

json parse_line(const std::string& text, const LineContext& ctx) {
  try {
    json j = json::parse(text);
    if (!j.is_object()) ctx.fail("expected a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    ctx.fail(std::string("malformed JSON: ") + e.what(), e.byte);
  }
}

const json& require(const json& obj, const char* key, const LineContext& ctx) {
  auto it = obj.find(key);
  if (it == obj.end()) ctx.fail(std::string("missing field \"") + key + "\"");
  return *it;
}

std::string require_string(const json& obj, const char* key, const LineContext& ctx) {
  const json& v = require(obj, key, ctx);
  if (!v.is_string()) ctx.fail(std::string("field \"") + key + "\" must be a string");
  auto s = v.get<std::string>();
  if (s.empty()) ctx.fail(std::string("field \"") + key + "\" must not be empty");
  return s;
}

// image_id may be written as a string or an integer.
std::string require_id(const json& obj, const char* key, const LineContext& ctx) {
  const json& v = require(obj, key, ctx);
  if (v.is_number_integer()) return v.dump();
  return require_string(obj, key, ctx);
}

double require_number(const json& v, const char* what, const LineContext& ctx) {
  if (!v.is_number()) ctx.fail(std::string(what) + " must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) ctx.fail(std::string(what) + " must be finite");
  return d;
}

int require_dimension(const json& obj, const char* key, const LineContext& ctx) {
  const json& v = require(obj, key, ctx);
  if (!v.is_number_integer() || v.get<long long>() <= 0 || v.get<long long>() > (1LL << 20)) {
    ctx.fail(std::string("field \"") + key + "\" must be a positive integer");
  }
  return static_cast<int>(v.get<long long>());
}

std::array<double, 4> parse_box_array(const json& face, const LineContext& ctx) {
  const json& b = require(face, "box", ctx);
  if (!b.is_array() || b.size() != 4) ctx.fail("\"box\" must be an array [left, top, right, bottom]");
  return {require_number(b[0], "box left", ctx), require_number(b[1], "box top", ctx),
          require_number(b[2], "box right", ctx), require_number(b[3], "box bottom", ctx)};
}

BBox make_box(const std::array<double, 4>& c, const LineContext& ctx) {
  auto box = BBox::try_make(c[0], c[1], c[2], c[3]);
  if (!box) {
    std::ostringstream os;
    os << "invalid box [" << c[0] << ", " << c[1] << ", " << c[2] << ", " << c[3]
       << "]: need right > left and bottom > top";
    ctx.fail(os.str());
  }
  return *box;
}

Condition parse_condition_field(const json& obj, const LineContext& ctx) {
  const auto text = require_string(obj, "condition", ctx);
  auto c = parse_condition(text);
  if (!c) ctx.fail("condition must be \"DT\" or \"NT\", got \"" + text + "\"");
  return *c;
}

template <typename Fn>
void for_each_line(std::istream& in, const std::string& source, Fn&& fn) {
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    const LineContext ctx{source, line};
    fn(parse_line(text, ctx), ctx);
  }
  if (in.bad()) throw Error(source + ": read error");
}

json box_json(const BBox& b) { return json::array({b.left(), b.top(), b.right(), b.bottom()}); }

}  // namespace

LoadedManifest parse_annotations(std::istream& in, const std::string& source) {
  LoadedManifest out;
  std::unordered_set<std::string> seen;
  for_each_line(in, source, [&](const json& j, const LineContext& ctx) {
    ImageRecord rec;
    rec.image_id = require_id(j, "image_id", ctx);
    if (!seen.insert(rec.image_id).second) ctx.fail("duplicate image_id \"" + rec.image_id + "\"");
    rec.meta.video_id = require_string(j, "video_id", ctx);
    rec.meta.condition = parse_condition_field(j, ctx);
    if (auto it = j.find("period"); it != j.end()) {
      if (!it->is_string() || !parse_period(it->get<std::string>())) ctx.fail("period must be \"before\" or \"during\"");
      rec.meta.period = *parse_period(it->get<std::string>());
    }
    rec.width = require_dimension(j, "width", ctx);
    rec.height = require_dimension(j, "height", ctx);

    const json& faces = require(j, "faces", ctx);
    if (!faces.is_array()) ctx.fail("\"faces\" must be an array");
    for (std::size_t f = 0; f < faces.size(); ++f) {
      const json& face = faces[f];
      if (!face.is_object()) ctx.fail("each face must be an object");
      auto c = parse_box_array(face, ctx);
      make_box(c, ctx);  // reject degenerate boxes before clamping
      c[0] = std::clamp(c[0], 0.0, static_cast<double>(rec.width));
      c[2] = std::clamp(c[2], 0.0, static_cast<double>(rec.width));
      c[1] = std::clamp(c[1], 0.0, static_cast<double>(rec.height));
      c[3] = std::clamp(c[3], 0.0, static_cast<double>(rec.height));
      const BBox box = make_box(c, ctx);
      const auto label_text = require_string(face, "label", ctx);
      const auto label = parse_face_label(label_text);
      if (!label) ctx.fail("unknown face label \"" + label_text + "\"");
      if (box.width() < kMinAnnotatedFaceSize || box.height() < kMinAnnotatedFaceSize) {
        std::ostringstream os;
        os << "image " << rec.image_id << " face " << f << " is " << box.width() << "x" << box.height()
           << ", below the 10x10 annotation minimum";
        out.warnings.push_back({ctx.line, os.str()});
      }
      rec.faces.push_back({box, *label});
    }
    out.manifest.images.push_back(std::move(rec));
  });
  return out;
}

LoadedManifest load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_annotations(in, path.string());
}

void write_annotations(std::ostream& out, const DatasetManifest& manifest) {
  for (const auto& rec : manifest.images) {
    json j = json::object();
    j["image_id"] = rec.image_id;
    j["video_id"] = rec.meta.video_id;
    j["condition"] = std::string(to_string(rec.meta.condition));
    j["period"] = std::string(to_string(rec.meta.period));
    j["width"] = rec.width;
    j["height"] = rec.height;
    json faces = json::array();
    for (const auto& f : rec.faces) faces.push_back({{"box", box_json(f.box)}, {"label", std::string(to_string(f.label))}});
    j["faces"] = std::move(faces);
    out << j.dump() << '\n';
  }
  if (!out) throw Error("failed writing annotations");
}

void save_annotations(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_annotations(out, manifest);
}

std::vector<DetectionRecord> parse_detections(std::istream& in, const std::string& source) {
  std::vector<DetectionRecord> out;
  std::unordered_set<std::string> seen;
  for_each_line(in, source, [&](const json& j, const LineContext& ctx) {
    DetectionRecord rec;
    rec.image_id = require_id(j, "image_id", ctx);
    if (!seen.insert(rec.image_id).second) ctx.fail("duplicate image_id \"" + rec.image_id + "\"");
    rec.video_id = require_string(j, "video_id", ctx);
    rec.condition = parse_condition_field(j, ctx);
    const json& dets = require(j, "detections", ctx);
    if (!dets.is_array()) ctx.fail("\"detections\" must be an array");
    for (const json& d : dets) {
      if (!d.is_object()) ctx.fail("each detection must be an object");
      const BBox box = make_box(parse_box_array(d, ctx), ctx);
      const auto label_text = require_string(d, "label", ctx);
      const auto label = parse_face_label(label_text);
      if (!label || *label == FaceLabel::Unknown) ctx.fail("detection label must be \"masked\" or \"unmasked\"");
      const double conf = require_number(require(d, "conf", ctx), "conf", ctx);
      if (conf < 0.0 || conf > 1.0) ctx.fail("conf must lie in [0, 1]");
      rec.detections.emplace_back(box, *label, conf);
    }
    out.push_back(std::move(rec));
  });
  return out;
}

std::vector<DetectionRecord> load_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_detections(in, path.string());
}

void write_detections(std::ostream& out, std::span<const DetectionRecord> records) {
  for (const auto& rec : records) {
    json j = json::object();
    j["image_id"] = rec.image_id;
    j["video_id"] = rec.video_id;
    j["condition"] = std::string(to_string(rec.condition));
    json dets = json::array();
    for (const auto& d : rec.detections) {
      dets.push_back({{"box", box_json(d.box())}, {"label", std::string(to_string(d.label()))}, {"conf", d.confidence()}});
    }
    j["detections"] = std::move(dets);
    out << j.dump() << '\n';
  }
  if (!out) throw Error("failed writing detections");
}

void save_detections(const std::filesystem::path& path, std::span<const DetectionRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_detections(out, records);
}

LabelCounts& LabelCounts::operator+=(const LabelCounts& o) noexcept {
  images += o.images;
  masked += o.masked;
  unmasked += o.unmasked;
  unknown += o.unknown;
  return *this;
}

double round_to_tenth(double x) noexcept { return std::round(x * 10.0) / 10.0; }

SplitStats split_stats(std::string name, const LabelCounts& counts) {
  SplitStats s{std::move(name), counts, 0.0, 0.0, 0.0};
  if (counts.images > 0) {
    const double n = static_cast<double>(counts.images);
    s.avg_masked = round_to_tenth(static_cast<double>(counts.masked) / n);
    s.avg_unmasked = round_to_tenth(static_cast<double>(counts.unmasked) / n);
    s.avg_unknown = round_to_tenth(static_cast<double>(counts.unknown) / n);
  }
  return s;
}

LabelCounts count_labels(const DatasetManifest& m) {
  LabelCounts c;
  c.images = m.images.size();
  for (const auto& img : m.images) {
    for (const auto& f : img.faces) {
      switch (f.label) {
        case FaceLabel::Masked: ++c.masked; break;
        case FaceLabel::Unmasked: ++c.unmasked; break;
        case FaceLabel::Unknown: ++c.unknown; break;
      }
    }
  }
  return c;
}

std::string_view to_string(Split s) noexcept { return s == Split::Training ? "training" : "testing"; }

namespace {

std::vector<HistogramBin> make_bins(double width, int n, double first = 0.0) {
  std::vector<HistogramBin> bins;
  for (int i = 0; i < n; ++i) bins.push_back({first + width * i, first + width * (i + 1), 0});
  return bins;
}

void bump(std::vector<HistogramBin>& bins, double v) {
  for (std::size_t i = 0; i < bins.size(); ++i) {
    if (v < bins[i].hi || i + 1 == bins.size()) {
      ++bins[i].count;
      return;
    }
  }
}

}  // namespace

DatasetStats dataset_stats(std::span<const DatasetManifest> splits, const HistogramConfig& hist) {
  if (hist.face_size_log2_bins < 1 || hist.faces_bins < 1 || !(hist.ratio_bin_width > 0.0) ||
      !(hist.faces_bin_width > 0.0)) {
    throw Error("invalid histogram configuration");
  }
  DatasetStats stats;
  LabelCounts total;
  for (const auto& m : splits) {
    const auto counts = count_labels(m);
    total += counts;
    const std::string name(to_string(m.split));
    stats.splits.push_back(split_stats(name, counts));

    Histogram sizes{name, "face_size", {}};
    for (int i = 0; i < hist.face_size_log2_bins; ++i) sizes.bins.push_back({std::ldexp(1.0, i), std::ldexp(1.0, i + 1), 0});
    const int ratio_bins = static_cast<int>(std::ceil(1.0 / hist.ratio_bin_width - 1e-9));
    Histogram ratios{name, "mask_ratio", make_bins(hist.ratio_bin_width, ratio_bins)};
    Histogram per_image{name, "faces_per_image", make_bins(hist.faces_bin_width, hist.faces_bins)};

    for (const auto& img : m.images) {
      for (const auto& f : img.faces) bump(sizes.bins, std::sqrt(f.box.area()));
      bump(per_image.bins, static_cast<double>(img.faces.size()));
      if (auto r = annotation_ratio(img.faces).ratio()) bump(ratios.bins, *r);
    }
    stats.histograms.push_back(std::move(sizes));
    stats.histograms.push_back(std::move(ratios));
    stats.histograms.push_back(std::move(per_image));
  }
  stats.total = split_stats("total", total);
  return stats;
}

std::vector<std::string> select_frames(std::span<const FrameCount> frames, std::size_t min_faces) {
  std::vector<std::string> kept;
  for (const auto& f : frames) {
    if (f.faces >= min_faces) kept.push_back(f.frame_id);
  }
  return kept;
}

}  // namespace mrb
