#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace cpn {

/// Single-channel raster, row-major.
template <typename P>
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<P> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, P fill = P{}) : width(w), height(h), pixels(w * h, fill) {}

  P& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  const P& at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  bool empty() const noexcept { return pixels.empty(); }
  friend bool operator==(const Image&, const Image&) = default;
};

using GrayImage = Image<std::uint8_t>;
using ImageF = Image<float>;

/// Binary (P5) 8-bit PGM.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

/// Float planes file: width u32 LE, height u32 LE, then every plane as
/// width*height float32 LE, row-major. Used for dense flow sidecars (u then v)
/// and for probability maps (one plane).
void write_float_planes(const std::filesystem::path& path, std::size_t width, std::size_t height,
                        const std::vector<const std::vector<float>*>& planes);
std::vector<std::vector<float>> read_float_planes(const std::filesystem::path& path, std::size_t expected_planes,
                                                  std::size_t* width, std::size_t* height);

}  // namespace cpn
