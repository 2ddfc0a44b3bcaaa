#include "duet/image_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace duet {

namespace {

constexpr char kMagic[8] = {'D', 'U', 'E', 'T', 'I', 'M', 'G', '1'};

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated image header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_image(const std::filesystem::path& path, const Image& image) {
  if (image.pixels.size() != image.height * image.width * image.channels)
    throw std::invalid_argument("image pixel count does not match its dimensions");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(image.height));
  put_u32(out, static_cast<std::uint32_t>(image.width));
  put_u32(out, static_cast<std::uint32_t>(image.channels));
  for (double p : image.pixels) {
    const auto bits = std::bit_cast<std::uint64_t>(p);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
  if (!out) throw std::runtime_error("short write to " + path.string());
}

Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path.string() + " is not a DUETIMG1 file");
  Image img;
  img.height = get_u32(in);
  img.width = get_u32(in);
  img.channels = get_u32(in);
  img.pixels.resize(img.height * img.width * img.channels);
  for (double& p : img.pixels) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("truncated image data in " + path.string());
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    p = std::bit_cast<double>(bits);
  }
  return img;
}

std::vector<double> downsample(const std::vector<double>& pixels, std::size_t size, std::size_t factor) {
  if (factor == 0 || size % factor != 0) throw std::invalid_argument("downsample factor must divide the image size");
  const std::size_t out_size = size / factor;
  std::vector<double> out(out_size * out_size, 0.0);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t r = 0; r < out_size; ++r)
    for (std::size_t c = 0; c < out_size; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < factor; ++i)
        for (std::size_t j = 0; j < factor; ++j) acc += pixels[(r * factor + i) * size + c * factor + j];
      out[r * out_size + c] = acc * inv;
    }
  return out;
}

}  // namespace duet
