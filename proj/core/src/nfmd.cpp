#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "mrb/density.hpp"
#include "mrb/error.hpp"

namespace mrb {

namespace {

constexpr std::array<char, 4> kMagic{'N', 'F', 'M', 'D'};
constexpr std::uint64_t kMaxCells = std::uint64_t{1} << 28;

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xffu), static_cast<char>((v >> 8) & 0xffu),
                              static_cast<char>((v >> 16) & 0xffu), static_cast<char>((v >> 24) & 0xffu)};
  out.write(b.data(), b.size());
}

std::uint32_t get_u32(std::istream& in, const std::string& source) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), b.size())) throw Error(source + ": truncated NFMD file");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

}  // namespace

void write_nfmd(std::ostream& out, const DensityMap& map) {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<std::uint32_t>(map.width()));
  put_u32(out, static_cast<std::uint32_t>(map.height()));
  put_u32(out, map.downscale());
  for (double v : map.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw Error("failed writing NFMD stream");
}

void write_nfmd(const std::filesystem::path& path, const DensityMap& map) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_nfmd(out, map);
}

DensityMap read_nfmd(std::istream& in, const std::string& source) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw Error(source + ": not an NFMD file");
  const std::uint32_t w = get_u32(in, source);
  const std::uint32_t h = get_u32(in, source);
  const std::uint32_t factor = get_u32(in, source);
  if (w == 0 || h == 0 || factor == 0) throw Error(source + ": NFMD header has a zero dimension");
  if (std::uint64_t{w} * h > kMaxCells) throw Error(source + ": NFMD dimensions too large");

  std::vector<double> values(static_cast<std::size_t>(w) * h);
  for (auto& v : values) {
    const float f = std::bit_cast<float>(get_u32(in, source));
    if (!std::isfinite(f) || f < 0.0f) throw Error(source + ": NFMD contains a negative or non-finite value");
    v = f;
  }
  return DensityMap(static_cast<int>(w), static_cast<int>(h), factor, std::move(values));
}

DensityMap read_nfmd(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_nfmd(in, path.string());
}

}  // namespace mrb
