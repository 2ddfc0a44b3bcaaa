#pragma once

// Float image container, layout in docs/image-format.md:
//   "DUETIMG1" | u32 height | u32 width | u32 channels | f64 LE pixels,
// row-major over (row, column, channel).

#include <cstddef>
#include <filesystem>
#include <vector>

namespace duet {

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;
};

void save_image(const std::filesystem::path& path, const Image& image);
Image load_image(const std::filesystem::path& path);

// Box-averages non-overlapping factor x factor windows (single channel).
std::vector<double> downsample(const std::vector<double>& pixels, std::size_t size, std::size_t factor);

}  // namespace duet
