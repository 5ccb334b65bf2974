#include "cpn/image.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "cpn/error.hpp"

namespace cpn {
namespace {

void skip_ws_and_comments(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
  return v;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  v = to_le(v);
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw DataError("truncated float-plane file: " + path.string());
  return to_le(v);
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw DataError("not a binary PGM (P5): " + path.string());
  std::size_t w = 0, h = 0, maxval = 0;
  skip_ws_and_comments(in);
  in >> w;
  skip_ws_and_comments(in);
  in >> h;
  skip_ws_and_comments(in);
  in >> maxval;
  if (!in || w == 0 || h == 0 || maxval == 0 || maxval > 255)
    throw DataError("malformed PGM header (8-bit only): " + path.string());
  in.get();
  GrayImage img(w, h);
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(w * h)))
    throw DataError("truncated PGM data: " + path.string());
  if (maxval != 255)
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>((static_cast<unsigned>(p) * 255 + maxval / 2) / maxval);
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image: " + path.string());
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw DataError("failed writing image: " + path.string());
}

void write_float_planes(const std::filesystem::path& path, std::size_t width, std::size_t height,
                        const std::vector<const std::vector<float>*>& planes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write: " + path.string());
  put_u32(out, static_cast<std::uint32_t>(width));
  put_u32(out, static_cast<std::uint32_t>(height));
  for (const auto* plane : planes) {
    if (plane->size() != width * height) throw ShapeError("float plane size does not match header");
    for (float f : *plane) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  if (!out) throw DataError("failed writing: " + path.string());
}

std::vector<std::vector<float>> read_float_planes(const std::filesystem::path& path, std::size_t expected_planes,
                                                  std::size_t* width, std::size_t* height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  const std::size_t w = get_u32(in, path);
  const std::size_t h = get_u32(in, path);
  if (w == 0 || h == 0) throw DataError("empty float-plane file: " + path.string());
  std::vector<std::vector<float>> planes(expected_planes, std::vector<float>(w * h));
  for (auto& plane : planes)
    for (auto& f : plane) f = std::bit_cast<float>(get_u32(in, path));
  if (width) *width = w;
  if (height) *height = h;
  return planes;
}

}  // namespace cpn
