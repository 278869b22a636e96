#pragma once

#include "mrb/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

namespace fixtures {

// Published per-split label counts of the face-mask video dataset.
struct SplitCounts {
  std::size_t images;
  std::size_t masked;
  std::size_t unmasked;
  std::size_t unknown;
};

inline constexpr SplitCounts kTraining{12058, 48736, 317527, 24594};
inline constexpr SplitCounts kTesting{6030, 23971, 154973, 11307};

// A manifest whose label counts equal `c`, spread as evenly as possible
// over the images.
inline mrb::DatasetManifest manifest_with_counts(const SplitCounts& c, mrb::Split split, const std::string& prefix) {
  mrb::DatasetManifest m;
  m.split = split;
  m.images.resize(c.images);
  for (std::size_t i = 0; i < c.images; ++i) {
    auto& img = m.images[i];
    img.image_id = prefix + std::to_string(i);
    img.meta = {"video" + std::to_string(i % 40), i % 3 == 0 ? mrb::Condition::Nighttime : mrb::Condition::Daytime,
                mrb::Period::During};
    img.width = 1920;
    img.height = 1080;
  }
  auto spread = [&](std::size_t count, mrb::FaceLabel label) {
    for (std::size_t k = 0; k < count; ++k) {
      auto& img = m.images[k % c.images];
      const double x = static_cast<double>((img.faces.size() * 24) % 1880);
      const double y = static_cast<double>(((img.faces.size() * 24) / 1880) * 24 % 1040);
      img.faces.push_back({mrb::BBox(x, y, x + 20, y + 20), label});
    }
  };
  spread(c.masked, mrb::FaceLabel::Masked);
  spread(c.unmasked, mrb::FaceLabel::Unmasked);
  spread(c.unknown, mrb::FaceLabel::Unknown);
  return m;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("mrb-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Byte-for-byte comparison of two directory trees.
inline bool same_tree(const std::filesystem::path& a, const std::filesystem::path& b) {
  namespace fs = std::filesystem;
  std::size_t na = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++na;
    const auto rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) return false;
  }
  std::size_t nb = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) nb += e.is_regular_file() ? 1 : 0;
  return na == nb;
}

}  // namespace fixtures
