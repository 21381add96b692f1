#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "gft/tensor.hpp"

namespace gft::io {

/// 8-bit raster, interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

/// Binary PGM (P5) for one channel, binary PPM (P6) for three.
void write_pnm(const std::filesystem::path& path, const Image8& image);

/// Decodes any format OpenCV understands, converting to `channels` (1 or 3)
/// and resizing bilinearly to size². Returns [C, size, size] in [0, 1].
/// Throws std::runtime_error if the file cannot be decoded.
Tensor read_image(const std::filesystem::path& path, std::size_t size, std::size_t channels);

/// [C, H, W] in [0, 1] -> 8-bit raster (values clamped, rounded).
Image8 to_image8(const Tensor& chw);

}  // namespace gft::io
