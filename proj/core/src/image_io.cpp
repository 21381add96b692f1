#include "gft/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <stdexcept>

namespace gft::io {

void write_pnm(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("write_pnm: 1 or 3 channels required");
  if (image.pixels.size() != image.width * image.height * image.channels)
    throw std::invalid_argument("write_pnm: pixel buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pnm: cannot open " + path.string());
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("write_pnm: write failed for " + path.string());
}

Tensor read_image(const std::filesystem::path& path, std::size_t size, std::size_t channels) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("read_image: 1 or 3 channels supported");
  cv::Mat img = cv::imread(path.string(), channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  if (img.empty()) throw std::runtime_error("read_image: cannot decode " + path.string());
  if (channels == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
  cv::Mat resized;
  const int s = static_cast<int>(size);
  cv::resize(img, resized, cv::Size(s, s), 0, 0, cv::INTER_LINEAR);
  cv::Mat unit;
  resized.convertTo(unit, channels == 1 ? CV_32FC1 : CV_32FC3, 1.0 / 255.0);

  Tensor out(Shape{channels, size, size});
  for (std::size_t y = 0; y < size; ++y) {
    const float* row = unit.ptr<float>(static_cast<int>(y));
    for (std::size_t x = 0; x < size; ++x)
      for (std::size_t c = 0; c < channels; ++c) out[(c * size + y) * size + x] = row[x * channels + c];
  }
  return out;
}

Image8 to_image8(const Tensor& chw) {
  if (chw.rank() != 3) throw std::invalid_argument("to_image8: expected [C, H, W]");
  Image8 img;
  img.channels = chw.dim(0);
  img.height = chw.dim(1);
  img.width = chw.dim(2);
  img.pixels.resize(img.width * img.height * img.channels);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        const double v = std::clamp(static_cast<double>(chw[(c * img.height + y) * img.width + x]), 0.0, 1.0);
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

}  // namespace gft::io
