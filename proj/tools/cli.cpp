#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "mrb/anchors.hpp"
#include "mrb/dataset.hpp"
#include "mrb/density.hpp"
#include "mrb/error.hpp"
#include "mrb/fusion.hpp"
#include "mrb/metrics.hpp"
#include "mrb/parallel.hpp"
#include "mrb/random.hpp"
#include "mrb/ratio.hpp"
#include "mrb/report.hpp"
#include "mrb/synth.hpp"

namespace mrb::cli {

namespace {

namespace fs = std::filesystem;

// Help-text tags: values taken from the published method versus defaults
// picked for this tool.
constexpr const char* kPublished = " [published setting]";
constexpr const char* kChosen = " [tool default]";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  unsigned threads = 0;
  std::string format = "csv";
  std::string out;
};

void add_threads(CLI::App* sub, Common& c) {
  sub->add_option("--threads", c.threads, "Worker threads (falls back to $MRB_THREADS, then 1)")
      ->check(CLI::Range(1u, 1024u));
}

void add_report_flags(CLI::App* sub, Common& c) {
  sub->add_option("--format", c.format, "Report format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
  sub->add_option("--out", c.out, "Write the report here instead of standard output");
  add_threads(sub, c);
}

unsigned resolve_threads(const Common& c) {
  if (c.threads > 0) return c.threads;
  if (const char* env = std::getenv("MRB_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1 || v > 1024) throw UsageError(std::string("invalid MRB_THREADS value \"") + env + "\"");
    return static_cast<unsigned>(v);
  }
  return 1;
}

void emit(const Report& report, const Common& c, std::ostream& out) {
  const auto format = c.format == "json" ? ReportFormat::Json : ReportFormat::Csv;
  if (c.out.empty()) {
    write_report(out, report, format);
  } else {
    write_report(fs::path(c.out), report, format);
  }
}

void print_warnings(const std::vector<LoadWarning>& warnings, const std::string& source, std::ostream& err) {
  constexpr std::size_t kShown = 5;
  for (std::size_t i = 0; i < std::min(kShown, warnings.size()); ++i) {
    err << "warning: " << source << ':' << warnings[i].line << ": " << warnings[i].message << '\n';
  }
  if (warnings.size() > kShown) err << "warning: " << warnings.size() - kShown << " more warnings in " << source << '\n';
}

DatasetManifest load_manifest(const std::string& path, Split split, std::ostream& err) {
  auto loaded = load_annotations(path);
  print_warnings(loaded.warnings, path, err);
  loaded.manifest.split = split;
  return std::move(loaded.manifest);
}

// Detections aligned with the manifest's image order. Images without a
// detection line get none; detection lines for unknown images are an error.
std::vector<std::vector<Detection>> align_detections(const DatasetManifest& m, const std::string& path,
                                                     std::ostream& err) {
  auto records = load_detections(path);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < m.images.size(); ++i) index.emplace(m.images[i].image_id, i);
  std::vector<std::vector<Detection>> out(m.images.size());
  std::vector<bool> seen(m.images.size(), false);
  for (auto& rec : records) {
    auto it = index.find(rec.image_id);
    if (it == index.end()) throw Error(path + ": detections for unknown image \"" + rec.image_id + "\"");
    out[it->second] = std::move(rec.detections);
    seen[it->second] = true;
  }
  const auto missing = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), false));
  if (missing > 0) err << "warning: " << missing << " images have no detection record; treating them as empty\n";
  return out;
}

struct DensityCounts {
  double masked = 0.0;
  double unmasked = 0.0;
  double total = 0.0;
};

DensityCounts read_density_counts(const fs::path& dir, const std::string& image_id) {
  DensityCounts c;
  c.total = integrate_count(read_nfmd(density_file(dir, image_id, "total")));
  c.unmasked = integrate_count(read_nfmd(density_file(dir, image_id, "unmasked")));
  const auto masked_path = density_file(dir, image_id, "masked");
  c.masked = fs::exists(masked_path) ? integrate_count(read_nfmd(masked_path)) : c.total - c.unmasked;
  return c;
}

RatioReport swap_if(const RatioReport& r, bool unmasked_convention) {
  return unmasked_convention ? RatioReport{r.unmasked, r.masked} : r;
}

std::vector<RatioReport> truth_reports(const DatasetManifest& m, bool unmasked_convention) {
  std::vector<RatioReport> out;
  for (const auto& img : m.images) out.push_back(swap_if(annotation_ratio(img.faces), unmasked_convention));
  return out;
}

struct EstimateSource {
  std::string detections;
  std::string density_dir;
  double conf = kDefaultConfidenceThreshold;
  double nms_iou = 0.0;
};

void add_source_flags(CLI::App* sub, EstimateSource& s) {
  auto* det = sub->add_option("--detections", s.detections, "Detection JSONL (detection-based estimates)");
  auto* den = sub->add_option("--density-dir", s.density_dir,
                              "Directory of <image_id>.{total,unmasked}.nfmd predictions (regression-based estimates)");
  det->excludes(den);
  sub->add_option("--conf", s.conf, std::string("Confidence threshold for counting detections") + kPublished)
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sub->add_option("--nms-iou", s.nms_iou, std::string("Apply class-wise NMS at this IoU first; 0 disables") + kChosen)
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
}

void require_source(const EstimateSource& s) {
  if (s.detections.empty() && s.density_dir.empty())
    throw UsageError("one of --detections or --density-dir is required");
}

std::vector<RatioReport> estimate_reports(const DatasetManifest& m, const EstimateSource& s, unsigned threads,
                                          bool unmasked_convention, std::ostream& err) {
  std::vector<RatioReport> est(m.images.size());
  if (!s.detections.empty()) {
    const auto dets = align_detections(m, s.detections, err);
    parallel_for(m.images.size(), threads, [&](std::size_t i) {
      const auto kept = s.nms_iou > 0.0 ? nms(dets[i], s.nms_iou) : dets[i];
      est[i] = swap_if(detection_ratio(kept, s.conf), unmasked_convention);
    });
  } else if (!s.density_dir.empty()) {
    parallel_for(m.images.size(), threads, [&](std::size_t i) {
      const auto c = read_density_counts(s.density_dir, m.images[i].image_id);
      est[i] = swap_if(density_ratio(c.total, c.unmasked), unmasked_convention);
    });
  } else {
    throw UsageError("one of --detections or --density-dir is required");
  }
  return est;
}

Table count_table(const std::vector<CountMetric>& metrics) {
  Table t{"counts", {"quantity", "mae", "gamma", "n"}, {}};
  for (const auto& m : metrics) {
    t.add_row({m.quantity, cell(m.mae), cell(m.gamma), static_cast<std::int64_t>(m.n)});
  }
  return t;
}

// ---------------------------------------------------------------- stats

struct StatsArgs {
  Common common;
  std::string train;
  std::string test;
  HistogramConfig hist;
};

int cmd_stats(const StatsArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<DatasetManifest> splits;
  splits.push_back(load_manifest(a.train, Split::Training, err));
  if (!a.test.empty()) splits.push_back(load_manifest(a.test, Split::Testing, err));
  const auto stats = dataset_stats(splits, a.hist);

  Report report;
  Table counts{"counts", {"split", "images", "masked", "unmasked", "unknown", "faces"}, {}};
  auto count_row = [&](const SplitStats& s) {
    counts.add_row({s.name, static_cast<std::int64_t>(s.counts.images), static_cast<std::int64_t>(s.counts.masked),
                    static_cast<std::int64_t>(s.counts.unmasked), static_cast<std::int64_t>(s.counts.unknown),
                    static_cast<std::int64_t>(s.counts.faces())});
  };
  for (const auto& s : stats.splits) count_row(s);
  count_row(stats.total);

  Table averages{"averages", {"split", "masked", "unmasked", "unknown"}, {}};
  for (const auto& s : stats.splits) averages.add_row({s.name, s.avg_masked, s.avg_unmasked, s.avg_unknown});

  Table hist{"histograms", {"split", "quantity", "lo", "hi", "count"}, {}};
  for (const auto& h : stats.histograms) {
    for (const auto& b : h.bins) hist.add_row({h.split, h.quantity, b.lo, b.hi, static_cast<std::int64_t>(b.count)});
  }
  report.tables = {std::move(counts), std::move(averages), std::move(hist)};
  emit(report, a.common, out);
  return kExitOk;
}

// ---------------------------------------------------------------- gen-density

struct GenDensityArgs {
  Common common;
  std::string annotations;
  std::string out_dir;
  KernelSpec kernel;
  int downscale = 8;
};

int cmd_gen_density(const GenDensityArgs& a, std::ostream& out, std::ostream& err) {
  a.kernel.validate();
  const auto m = load_manifest(a.annotations, Split::Training, err);
  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  if (ec) throw Error("cannot create " + a.out_dir + ": " + ec.message());

  std::vector<std::array<double, 3>> integrals(m.images.size());
  parallel_for(m.images.size(), resolve_threads(a.common), [&](std::size_t i) {
    const auto& img = m.images[i];
    const auto set = render_density_set(img.faces, img.width, img.height, a.kernel, a.downscale);
    write_nfmd(density_file(a.out_dir, img.image_id, "masked"), set.masked);
    write_nfmd(density_file(a.out_dir, img.image_id, "unmasked"), set.unmasked);
    write_nfmd(density_file(a.out_dir, img.image_id, "total"), set.total);
    integrals[i] = {integrate_count(set.masked), integrate_count(set.unmasked), integrate_count(set.total)};
  });

  Table t{"density", {"image_id", "masked", "unmasked", "total"}, {}};
  for (std::size_t i = 0; i < m.images.size(); ++i) {
    t.add_row({m.images[i].image_id, integrals[i][0], integrals[i][1], integrals[i][2]});
  }
  emit(Report{{std::move(t)}}, a.common, out);
  return kExitOk;
}

// ---------------------------------------------------------------- eval-det

struct EvalDetArgs {
  Common common;
  std::string annotations;
  std::string detections;
  EvalConfig cfg;
  double nms_iou = 0.0;
};

int cmd_eval_det(const EvalDetArgs& a, std::ostream& out, std::ostream& err) {
  const auto m = load_manifest(a.annotations, Split::Testing, err);
  const auto dets = align_detections(m, a.detections, err);
  std::vector<ImageEval> images(m.images.size());
  parallel_for(m.images.size(), resolve_threads(a.common), [&](std::size_t i) {
    images[i].gts = m.images[i].faces;
    images[i].dets = a.nms_iou > 0.0 ? nms(dets[i], a.nms_iou) : dets[i];
  });
  const auto r = evaluate_detections(images, a.cfg);

  Table t{"ap", {"class", "bucket", "ap"}, {}};
  for (const auto& c : r.cells) t.add_row({std::string(to_string(c.cls)), std::string(to_string(c.bucket)), cell(c.ap)});
  t.add_row({std::string("masked"), std::string("all"), cell(r.overall_masked)});
  t.add_row({std::string("unmasked"), std::string("all"), cell(r.overall_unmasked)});
  t.add_row({std::string("all"), std::string("mAP"), cell(r.map)});
  emit(Report{{std::move(t)}}, a.common, out);
  return kExitOk;
}

// ---------------------------------------------------------------- eval-count

struct EvalCountArgs {
  Common common;
  std::string annotations;
  std::string density_dir;
  std::string gt_density_dir;
  EvalConfig cfg;
  bool unmasked_convention = false;
};

int cmd_eval_count(const EvalCountArgs& a, std::ostream& out, std::ostream& err) {
  const auto m = load_manifest(a.annotations, Split::Testing, err);
  const unsigned threads = resolve_threads(a.common);
  const auto truth = truth_reports(m, a.unmasked_convention);

  std::vector<DensityCounts> counts(m.images.size());
  parallel_for(m.images.size(), threads,
               [&](std::size_t i) { counts[i] = read_density_counts(a.density_dir, m.images[i].image_id); });

  // Count metrics use the masked map directly when present; the ratio row
  // uses the two-count rule (total and unmasked).
  std::vector<RatioReport> direct;
  std::vector<RatioReport> two_count;
  for (const auto& c : counts) {
    direct.push_back(swap_if({c.masked, c.unmasked}, a.unmasked_convention));
    two_count.push_back(swap_if(density_ratio(c.total, c.unmasked), a.unmasked_convention));
  }
  auto metrics = evaluate_counts(direct, truth, a.cfg);
  std::vector<double> est_total;
  std::vector<double> gt_total;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    est_total.push_back(counts[i].total);
    gt_total.push_back(truth[i].total());
  }
  for (auto& mtr : metrics) {
    if (mtr.quantity == "total") {
      mtr.mae = mae(est_total, gt_total);
      mtr.gamma = est_total.size() >= 2 ? pearson(est_total, gt_total) : std::nullopt;
    }
    if (mtr.quantity == "ratio") {
      mtr.gamma = ratio_correlation(two_count, truth, a.cfg);
      mtr.n = ratio_pairs(two_count, truth, a.cfg).size();
    }
  }

  Report report{{count_table(metrics)}};
  if (!a.gt_density_dir.empty()) {
    Table loss{"loss", {"quantity", "euclidean_loss"}, {}};
    for (const char* q : {"masked", "unmasked", "total"}) {
      std::vector<DensityMap> pred;
      std::vector<DensityMap> gt;
      for (const auto& img : m.images) {
        pred.push_back(read_nfmd(density_file(a.density_dir, img.image_id, q)));
        gt.push_back(read_nfmd(density_file(a.gt_density_dir, img.image_id, q)));
      }
      loss.add_row({std::string(q), euclidean_loss(pred, gt)});
    }
    report.tables.push_back(std::move(loss));
  }
  emit(report, a.common, out);
  return kExitOk;
}

// ---------------------------------------------------------------- eval-ratio

struct EvalRatioArgs {
  Common common;
  std::string annotations;
  EstimateSource source;
  EvalConfig cfg;
  std::string scatter;
  bool unmasked_convention = false;
};

int cmd_eval_ratio(const EvalRatioArgs& a, std::ostream& out, std::ostream& err) {
  require_source(a.source);
  const auto m = load_manifest(a.annotations, Split::Testing, err);
  const auto truth = truth_reports(m, a.unmasked_convention);
  const auto est = estimate_reports(m, a.source, resolve_threads(a.common), a.unmasked_convention, err);

  Report report{{count_table(evaluate_counts(est, truth, a.cfg))}};

  std::vector<ImageMeta> meta;
  for (const auto& img : m.images) meta.push_back(img.meta);
  const auto groups = group_by_condition(meta);
  Table cond{"conditions", {"condition", "n_images", "gamma"}, {}};
  for (const auto& [name, idx] : {std::pair{"DT", &groups.daytime}, std::pair{"NT", &groups.nighttime}}) {
    std::vector<RatioReport> e;
    std::vector<RatioReport> t;
    for (std::size_t i : *idx) {
      e.push_back(est[i]);
      t.push_back(truth[i]);
    }
    cond.add_row({std::string(name), static_cast<std::int64_t>(idx->size()), cell(ratio_correlation(e, t, a.cfg))});
  }
  report.tables.push_back(std::move(cond));

  if (!a.scatter.empty()) {
    Table sc{"scatter", {"image_id", "gt_ratio", "est_ratio"}, {}};
    for (const auto& p : ratio_pairs(est, truth, a.cfg)) sc.add_row({m.images[p.image].image_id, p.truth, p.estimate});
    write_report(fs::path(a.scatter), Report{{std::move(sc)}}, ReportFormat::Csv);
  }
  emit(report, a.common, out);
  return kExitOk;
}

// ---------------------------------------------------------------- report-video

struct ReportVideoArgs {
  Common common;
  std::string annotations;
  EstimateSource source;
  bool unmasked_convention = false;
};

int cmd_report_video(const ReportVideoArgs& a, std::ostream& out, std::ostream& err) {
  require_source(a.source);
  const auto m = load_manifest(a.annotations, Split::Testing, err);
  const auto truth = truth_reports(m, a.unmasked_convention);
  const auto est = estimate_reports(m, a.source, resolve_threads(a.common), a.unmasked_convention, err);
  std::vector<ImageMeta> meta;
  for (const auto& img : m.images) meta.push_back(img.meta);
  const auto gt_rows = aggregate_by_video(meta, truth);
  const auto est_rows = aggregate_by_video(meta, est);

  Table t{"videos", {"video_id", "n_images", "gt_ratio", "est_ratio"}, {}};
  for (std::size_t i = 0; i < gt_rows.size(); ++i) {
    t.add_row({gt_rows[i].video_id, static_cast<std::int64_t>(gt_rows[i].n_images), cell(gt_rows[i].mean_ratio),
               cell(est_rows[i].mean_ratio)});
  }
  emit(Report{{std::move(t)}}, a.common, out);
  return kExitOk;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  Common common;
  SynthParams params;
  std::string out_dir;
};

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream&) {
  write_synth(a.params, a.out_dir, resolve_threads(a.common));
  out << "wrote " << a.params.n_images << " synthetic images to " << a.out_dir << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  Common common;
  std::uint64_t seed = 0;
  std::size_t pyramids = 100;
  double step = 1e-5;
  double tolerance = 1e-5;
  double epsilon = 1e-4;
  int max_cells = 8;
  int max_channels = 4;
};

struct GradcheckCase {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::size_t weights = 0;
  double max_error = 0.0;
};

Pyramid random_pyramid(Rng& rng, int image_w, int image_h, int channels) {
  auto p = Pyramid::for_image(image_w, image_h, 3, 7, channels);
  for (auto& level : p.levels())
    for (double& v : level.values()) v = rng.uniform(-1.0, 1.0);
  return p;
}

GradcheckCase run_gradcheck_case(const GradcheckArgs& a, std::size_t index) {
  Rng rng(mix_seed(a.seed, index));
  const int cells_w = static_cast<int>(rng.uniform_int(1, a.max_cells));
  const int cells_h = static_cast<int>(rng.uniform_int(1, a.max_cells));
  const int channels = static_cast<int>(rng.uniform_int(1, a.max_channels));
  // Level 3 is ceil(image / 8) cells wide.
  const int image_w = static_cast<int>(rng.uniform_int(8 * (cells_w - 1) + 1, 8 * cells_w));
  const int image_h = static_cast<int>(rng.uniform_int(8 * (cells_h - 1) + 1, 8 * cells_h));

  const Pyramid in = random_pyramid(rng, image_w, image_h, channels);
  const Pyramid upstream = random_pyramid(rng, image_w, image_h, channels);
  FusionWeights w = FusionWeights::uniform(3, 7, 1.0, a.epsilon);
  for (double* v : w.flat()) *v = rng.uniform(0.1, 2.0);
  PyramidConv conv;
  for (int l = 3; l <= 7; ++l) {
    std::vector<double> m(static_cast<std::size_t>(channels) * channels);
    for (double& v : m) v = rng.uniform(-1.0, 1.0);
    conv.per_level.push_back(LinearConv::matrix(channels, std::move(m)));
  }

  auto analytic = fusion_weight_gradients(in, w, conv, upstream);
  auto numeric = numeric_fusion_gradients(in, w, conv, upstream, a.step);
  const auto ga = analytic.flat();
  const auto gn = numeric.flat();
  GradcheckCase c{image_w, image_h, channels, ga.size(), 0.0};
  for (std::size_t i = 0; i < ga.size(); ++i) c.max_error = std::max(c.max_error, relative_error(*ga[i], *gn[i]));
  return c;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<GradcheckCase> cases(a.pyramids);
  parallel_for(a.pyramids, resolve_threads(a.common), [&](std::size_t i) { cases[i] = run_gradcheck_case(a, i); });

  Table t{"gradcheck", {"pyramid", "image_width", "image_height", "channels", "weights", "max_rel_error"}, {}};
  double worst = 0.0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    worst = std::max(worst, c.max_error);
    t.add_row({static_cast<std::int64_t>(i), static_cast<std::int64_t>(c.width), static_cast<std::int64_t>(c.height),
               static_cast<std::int64_t>(c.channels), static_cast<std::int64_t>(c.weights), c.max_error});
  }
  const bool pass = worst <= a.tolerance;
  Table summary{"summary", {"metric", "value"}, {}};
  summary.add_row({std::string("max_rel_error"), worst});
  summary.add_row({std::string("tolerance"), a.tolerance});
  summary.add_row({std::string("passed"), std::string(pass ? "true" : "false")});
  emit(Report{{std::move(t), std::move(summary)}}, a.common, out);
  if (!pass) {
    err << "gradient check failed: max relative error " << worst << " exceeds " << a.tolerance << '\n';
    return kExitData;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- loss-eval

struct LossEvalArgs {
  Common common;
  std::string annotations;
  std::string predictions;
  std::vector<int> levels{3, 4, 5, 6, 7};
  std::vector<double> scales{16, 32, 64, 128, 256};
  std::vector<double> ratios{0.5, 1.0, 2.0};
  MatchConfig match;
  LossConfig loss;
  double objectness = 0.5;
  double masked = 0.5;
};

// {"image_id":..., "predictions":[[p, p_masked, tx, ty, tw, th], ...]}
std::map<std::string, std::vector<AnchorPrediction>> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::map<std::string, std::vector<AnchorPrediction>> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path, line, e.byte, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("image_id") || !j.contains("predictions") || !j["predictions"].is_array()) {
      throw ParseError(path, line, 0, "expected {\"image_id\":..., \"predictions\":[...]}");
    }
    const auto id = j["image_id"].is_string() ? j["image_id"].get<std::string>() : j["image_id"].dump();
    std::vector<AnchorPrediction> preds;
    for (const auto& p : j["predictions"]) {
      if (!p.is_array() || p.size() != 6 ||
          !std::all_of(p.begin(), p.end(), [](const nlohmann::json& v) { return v.is_number(); })) {
        throw ParseError(path, line, 0, "each prediction must be [p, p_masked, tx, ty, tw, th]");
      }
      preds.push_back({p[0].get<double>(), p[1].get<double>(),
                       {p[2].get<double>(), p[3].get<double>(), p[4].get<double>(), p[5].get<double>()}});
    }
    if (!out.emplace(id, std::move(preds)).second) throw ParseError(path, line, 0, "duplicate image_id \"" + id + "\"");
  }
  return out;
}

int cmd_loss_eval(const LossEvalArgs& a, std::ostream& out, std::ostream& err) {
  if (a.levels.size() != a.scales.size()) throw UsageError("--levels and --scales need the same number of entries");
  AnchorConfig cfg;
  for (std::size_t i = 0; i < a.levels.size(); ++i) cfg.levels.push_back({a.levels[i], {a.scales[i]}});
  cfg.ratios = a.ratios;

  const auto m = load_manifest(a.annotations, Split::Training, err);
  std::map<std::string, std::vector<AnchorPrediction>> preds;
  if (!a.predictions.empty()) preds = load_predictions(a.predictions);

  struct Row {
    std::size_t anchors = 0;
    std::size_t positives = 0;
    LossBreakdown loss;
  };
  std::vector<Row> rows(m.images.size());
  parallel_for(m.images.size(), resolve_threads(a.common), [&](std::size_t i) {
    const auto& img = m.images[i];
    const auto anchors = generate_anchors(img.width, img.height, cfg);
    const auto match = match_anchors(anchors, img.faces, a.match);
    std::vector<AnchorPrediction> p;
    if (a.predictions.empty()) {
      p.assign(anchors.size(), AnchorPrediction{a.objectness, a.masked, {}});
    } else {
      auto it = preds.find(img.image_id);
      if (it == preds.end()) throw Error("no predictions for image \"" + img.image_id + "\"");
      p = it->second;
    }
    rows[i] = {anchors.size(), match.positives(), multitask_loss(p, match, a.loss)};
  });

  Table t{"loss", {"image_id", "anchors", "positives", "objectness", "classification", "box", "total"}, {}};
  LossBreakdown sum;
  std::size_t anchors = 0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    t.add_row({m.images[i].image_id, static_cast<std::int64_t>(r.anchors), static_cast<std::int64_t>(r.positives),
               r.loss.objectness, r.loss.classification, r.loss.box, r.loss.total()});
    sum.objectness += r.loss.objectness;
    sum.classification += r.loss.classification;
    sum.box += r.loss.box;
    anchors += r.anchors;
    positives += r.positives;
  }
  t.add_row({std::string("all"), static_cast<std::int64_t>(anchors), static_cast<std::int64_t>(positives), sum.objectness,
             sum.classification, sum.box, sum.total()});
  emit(Report{{std::move(t)}}, a.common, out);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mask-wearing ratio estimation toolkit: density maps, anchor losses, pyramid fusion and evaluation",
               "mrb"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(44);

  StatsArgs stats;
  auto* s_stats = app.add_subcommand("stats", "Label counts, per-image averages and histograms of annotation splits");
  s_stats->add_option("--train", stats.train, "Training-split annotation JSONL")->required();
  s_stats->add_option("--test", stats.test, "Testing-split annotation JSONL");
  s_stats->add_option("--size-bins", stats.hist.face_size_log2_bins, std::string("Log2 face-size bins") + kChosen)
      ->check(CLI::Range(1, 30))
      ->capture_default_str();
  s_stats->add_option("--ratio-bin-width", stats.hist.ratio_bin_width, std::string("Mask-ratio bin width") + kChosen)
      ->check(CLI::Range(1e-3, 1.0))
      ->capture_default_str();
  s_stats->add_option("--faces-bin-width", stats.hist.faces_bin_width,
                      std::string("Faces-per-image bin width") + kChosen)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  add_report_flags(s_stats, stats.common);

  GenDensityArgs gen;
  auto* s_gen = app.add_subcommand("gen-density", "Render ground-truth density maps (NFMD) from annotations");
  s_gen->add_option("--annotations", gen.annotations, "Annotation JSONL")->required();
  s_gen->add_option("--out-dir", gen.out_dir, "Output directory for <image_id>.{masked,unmasked,total}.nfmd")->required();
  s_gen->add_option("--beta", gen.kernel.beta, std::string("Kernel width per unit neighbour distance") + kPublished)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  s_gen->add_option("--k", gen.kernel.k, std::string("Nearest neighbours averaged for the kernel width") + kPublished)
      ->check(CLI::Range(1, 1000))
      ->capture_default_str();
  s_gen->add_option("--sigma-default", gen.kernel.sigma_default,
                    std::string("Kernel width of an isolated face, pixels") + kChosen)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  s_gen->add_option("--truncation", gen.kernel.truncation_radius,
                    std::string("Kernel truncation radius in standard deviations") + kChosen)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  s_gen->add_option("--downscale", gen.downscale, std::string("Output cells per image pixel, inverted") + kPublished)
      ->check(CLI::Range(1, 1024))
      ->capture_default_str();
  add_report_flags(s_gen, gen.common);

  EvalDetArgs det;
  auto* s_det = app.add_subcommand("eval-det", "Average precision per class and size bucket, and mAP");
  s_det->add_option("--annotations", det.annotations, "Ground-truth annotation JSONL")->required();
  s_det->add_option("--detections", det.detections, "Detection JSONL")->required();
  s_det->add_option("--iou", det.cfg.iou_threshold, std::string("IoU needed for a true positive") + kPublished)
      ->check(CLI::Range(1e-9, 1.0))
      ->capture_default_str();
  s_det->add_option("--nms-iou", det.nms_iou, std::string("Apply class-wise NMS at this IoU first; 0 disables") + kChosen)
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  add_report_flags(s_det, det.common);

  EvalCountArgs cnt;
  auto* s_cnt = app.add_subcommand("eval-count", "MAE and correlation of density-map counts against annotations");
  s_cnt->add_option("--annotations", cnt.annotations, "Ground-truth annotation JSONL")->required();
  s_cnt->add_option("--density-dir", cnt.density_dir, "Predicted <image_id>.{masked,unmasked,total}.nfmd directory")
      ->required();
  s_cnt->add_option("--gt-density-dir", cnt.gt_density_dir, "Ground-truth maps; adds the Euclidean map loss");
  s_cnt->add_option("--k", cnt.cfg.min_faces, std::string("Minimum faces per image for ratio correlation") + kPublished)
      ->capture_default_str();
  s_cnt->add_flag("--unmasked-ratio", cnt.unmasked_convention, "Report unmasked/total instead of masked/total");
  add_report_flags(s_cnt, cnt.common);

  EvalRatioArgs rat;
  auto* s_rat = app.add_subcommand("eval-ratio", "Count MAE/correlation and mask-ratio correlation, overall and by condition");
  s_rat->add_option("--annotations", rat.annotations, "Ground-truth annotation JSONL")->required();
  add_source_flags(s_rat, rat.source);
  s_rat->add_option("--k", rat.cfg.min_faces, std::string("Minimum faces per image for ratio correlation") + kPublished)
      ->capture_default_str();
  s_rat->add_option("--scatter", rat.scatter, "Also write image_id,gt_ratio,est_ratio CSV here");
  s_rat->add_flag("--unmasked-ratio", rat.unmasked_convention, "Report unmasked/total instead of masked/total");
  add_report_flags(s_rat, rat.common);

  ReportVideoArgs vid;
  auto* s_vid = app.add_subcommand("report-video", "Average ground-truth and estimated ratio per video");
  s_vid->add_option("--annotations", vid.annotations, "Ground-truth annotation JSONL")->required();
  add_source_flags(s_vid, vid.source);
  s_vid->add_flag("--unmasked-ratio", vid.unmasked_convention, "Report unmasked/total instead of masked/total");
  add_report_flags(s_vid, vid.common);

  SynthArgs syn;
  auto& sp = syn.params;
  auto* s_syn = app.add_subcommand("synth", "Generate a seeded synthetic benchmark (annotations, detections, density maps)");
  s_syn->add_option("--out-dir", syn.out_dir, "Output directory")->required();
  s_syn->add_option("--seed", sp.seed, "Random seed")->capture_default_str();
  s_syn->add_option("--images", sp.n_images, "Number of images")->capture_default_str();
  s_syn->add_option("--min-faces", sp.min_faces, "Minimum faces per image")->capture_default_str();
  s_syn->add_option("--max-faces", sp.max_faces, "Maximum faces per image")->capture_default_str();
  s_syn->add_option("--width", sp.width, "Image width")->check(CLI::Range(1, 1 << 16))->capture_default_str();
  s_syn->add_option("--height", sp.height, "Image height")->check(CLI::Range(1, 1 << 16))->capture_default_str();
  s_syn->add_option("--min-face-size", sp.min_face_size, "Smallest face width, pixels")->capture_default_str();
  s_syn->add_option("--max-face-size", sp.max_face_size, "Largest face width, pixels")->capture_default_str();
  s_syn->add_option("--videos", sp.n_videos, "Number of videos images are spread over")->capture_default_str();
  s_syn->add_option("--masked-prob", sp.masked_probability, "Mean per-image masked probability")->capture_default_str();
  s_syn->add_option("--masked-spread", sp.masked_spread, "Half-width of the per-image masked probability range")
      ->capture_default_str();
  s_syn->add_option("--unknown-prob", sp.unknown_probability, "Probability a face is labelled unknown")
      ->capture_default_str();
  s_syn->add_option("--jitter", sp.jitter_sigma, "Detector box jitter, pixels")->capture_default_str();
  s_syn->add_option("--drop-rate", sp.drop_rate, "Detector miss rate")->capture_default_str();
  s_syn->add_option("--flip-rate", sp.flip_rate, "Detector label flip rate")->capture_default_str();
  s_syn->add_option("--fp-rate", sp.false_positives_per_image, "Detector false positives per image")
      ->capture_default_str();
  s_syn->add_option("--density-noise", sp.density_noise, "Relative per-cell noise on density predictions")
      ->capture_default_str();
  s_syn->add_option("--downscale", sp.density_downscale, std::string("Density map downscale factor") + kPublished)
      ->capture_default_str();
  s_syn->add_option("--beta", sp.kernel.beta, std::string("Kernel width per unit neighbour distance") + kPublished)
      ->capture_default_str();
  s_syn->add_option("--k", sp.kernel.k, std::string("Nearest neighbours averaged for the kernel width") + kPublished)
      ->capture_default_str();
  add_threads(s_syn, syn.common);

  GradcheckArgs gc;
  auto* s_gc = app.add_subcommand("gradcheck", "Check analytic fusion-weight gradients against central differences");
  s_gc->add_option("--seed", gc.seed, "Random seed")->capture_default_str();
  s_gc->add_option("--pyramids", gc.pyramids, "Number of random pyramids")->capture_default_str();
  s_gc->add_option("--step", gc.step, std::string("Finite-difference step") + kChosen)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  s_gc->add_option("--tolerance", gc.tolerance, std::string("Maximum relative error") + kChosen)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  s_gc->add_option("--epsilon", gc.epsilon, std::string("Fusion denominator epsilon") + kChosen)
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  s_gc->add_option("--max-cells", gc.max_cells, "Largest level-3 side, cells")->check(CLI::Range(1, 64))->capture_default_str();
  s_gc->add_option("--max-channels", gc.max_channels, "Largest channel count")->check(CLI::Range(1, 64))->capture_default_str();
  add_report_flags(s_gc, gc.common);

  LossEvalArgs le;
  auto* s_le = app.add_subcommand("loss-eval", "Evaluate the anchor multi-task loss on annotations and predictions");
  s_le->add_option("--annotations", le.annotations, "Annotation JSONL")->required();
  s_le->add_option("--predictions", le.predictions,
                   "Prediction JSONL {\"image_id\", \"predictions\":[[p, p_masked, tx, ty, tw, th], ...]}; "
                   "without it every anchor predicts the constants below");
  s_le->add_option("--levels", le.levels, std::string("Pyramid levels carrying anchors") + kPublished)
      ->delimiter(',')
      ->capture_default_str();
  s_le->add_option("--scales", le.scales, std::string("Anchor size per level, pixels") + kChosen)
      ->delimiter(',')
      ->capture_default_str();
  s_le->add_option("--ratios", le.ratios, std::string("Anchor width:height ratios") + kPublished)
      ->delimiter(',')
      ->capture_default_str();
  s_le->add_option("--pos-iou", le.match.positive_iou, std::string("IoU for a positive anchor") + kChosen)
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  s_le->add_option("--neg-iou", le.match.negative_iou, std::string("IoU below which an anchor is negative") + kChosen)
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  s_le->add_option("--alpha", le.loss.alpha, std::string("Focal loss alpha") + kChosen)->capture_default_str();
  s_le->add_option("--gamma", le.loss.gamma, std::string("Focal loss gamma") + kChosen)->capture_default_str();
  s_le->add_flag("--normalize", le.loss.normalize_by_positives,
                 std::string("Divide each term by the positive-anchor count") + kChosen);
  s_le->add_option("--objectness", le.objectness, "Constant face probability when no predictions are given")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  s_le->add_option("--masked-prob", le.masked, "Constant masked probability when no predictions are given")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  add_report_flags(s_le, le.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*s_stats) return cmd_stats(stats, out, err);
    if (*s_gen) return cmd_gen_density(gen, out, err);
    if (*s_det) return cmd_eval_det(det, out, err);
    if (*s_cnt) return cmd_eval_count(cnt, out, err);
    if (*s_rat) return cmd_eval_ratio(rat, out, err);
    if (*s_vid) return cmd_report_video(vid, out, err);
    if (*s_syn) return cmd_synth(syn, out, err);
    if (*s_gc) return cmd_gradcheck(gc, out, err);
    if (*s_le) return cmd_loss_eval(le, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"mrb"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace mrb::cli
