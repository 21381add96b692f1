#include "gft/synth.hpp"

#include <algorithm>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gft/image_io.hpp"
#include "gft/random.hpp"

namespace gft::data {

namespace fs = std::filesystem;

void BoundaryTask::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("boundary task: " + what); };
  if (grid < 2 || patch_size < 2) fail("grid and patch_size must be at least 2");
  if (num_classes < 1 || num_classes > 2 * grid) fail("num_classes must lie in [1, 2·grid]");
  if (!(noise >= 0.0)) fail("noise must be non-negative");
  if (!(low_level >= 0.0 && high_level <= 1.0 && low_level < high_level)) fail("levels must satisfy 0 ≤ low < high ≤ 1");
}

BoundarySignature BoundaryTask::signature(std::size_t label) const {
  if (label >= num_classes) throw std::invalid_argument("boundary task: label out of range");
  const std::size_t half = patch_size / 2;
  if (label < grid) return {SplitOrientation::vertical, label * patch_size + half};
  return {SplitOrientation::horizontal, (label - grid) * patch_size + half};
}

std::vector<std::size_t> boundary_patches(const BoundaryTask& task, std::size_t label) {
  const BoundarySignature sig = task.signature(label);
  std::vector<std::size_t> ids;
  for (std::size_t gy = 0; gy < task.grid; ++gy)
    for (std::size_t gx = 0; gx < task.grid; ++gx) {
      const std::size_t start = (sig.orientation == SplitOrientation::vertical ? gx : gy) * task.patch_size;
      if (start < sig.line && sig.line < start + task.patch_size) ids.push_back(gy * task.grid + gx);
    }
  return ids;
}

std::vector<LabeledImage> generate(const BoundaryTask& task, std::size_t n) {
  task.validate();
  if (n == 0) throw std::invalid_argument("generate: n must be at least 1");
  Rng rng(task.seed);
  const std::size_t s = task.image_size();
  std::vector<LabeledImage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    LabeledImage img;
    img.label = i % task.num_classes;
    img.boundary_ids = boundary_patches(task, img.label);
    const BoundarySignature sig = task.signature(img.label);
    const bool flip = task.random_polarity && (rng.next() & 1u);
    const double first = flip ? task.high_level : task.low_level;
    const double second = flip ? task.low_level : task.high_level;
    img.pixels = Tensor(Shape{1, s, s});
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const std::size_t coord = sig.orientation == SplitOrientation::vertical ? x : y;
        double v = coord < sig.line ? first : second;
        if (task.noise > 0.0) v = std::clamp(v + task.noise * rng.normal(), 0.0, 1.0);
        img.pixels[y * s + x] = static_cast<float>(v);
      }
    out.push_back(std::move(img));
  }
  return out;
}

double boundary_recall(std::span<const std::size_t> kept, std::span<const std::size_t> truth) {
  if (truth.empty()) throw std::invalid_argument("boundary_recall: empty truth set");
  std::size_t hits = 0;
  for (std::size_t id : truth)
    if (std::find(kept.begin(), kept.end(), id) != kept.end()) ++hits;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double random_recall_baseline(std::size_t num_patches, std::size_t keep, std::size_t truth_count, std::size_t trials,
                              std::uint64_t seed) {
  if (keep > num_patches || truth_count == 0 || truth_count > num_patches || trials == 0)
    throw std::invalid_argument("random_recall_baseline: inconsistent sizes");
  Rng rng(seed);
  std::vector<std::size_t> ids(num_patches);
  std::vector<std::size_t> truth(truth_count);
  std::iota(truth.begin(), truth.end(), std::size_t{0});
  double total = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    rng.shuffle(ids.begin(), ids.end());
    total += boundary_recall(std::span<const std::size_t>(ids.data(), keep), truth);
  }
  return total / static_cast<double>(trials);
}

Tensor standardize(const Tensor& unit_pixels) {
  Tensor out(unit_pixels.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (unit_pixels[i] - ChannelStats::mean) / ChannelStats::std;
  return out;
}

Sample to_sample(const LabeledImage& image) { return Sample{standardize(image.pixels), image.label, image.boundary_ids}; }

std::vector<Sample> to_samples(const std::vector<LabeledImage>& images) {
  std::vector<Sample> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(to_sample(img));
  return out;
}

Corpus load_image_dir(const fs::path& root, std::size_t image_size, std::size_t channels) {
  if (!fs::is_directory(root)) throw std::runtime_error("load_image_dir: not a directory: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw std::runtime_error("load_image_dir: no class directories under " + root.string());

  Corpus corpus;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[label]))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::size_t loaded = 0;
    for (const auto& file : files) {
      try {
        corpus.samples.push_back(Sample{standardize(io::read_image(file, image_size, channels)), label, {}});
        ++loaded;
      } catch (const std::exception& e) {
        std::cerr << "warning: skipping " << file.string() << ": " << e.what() << '\n';
        ++corpus.skipped;
      }
    }
    if (loaded == 0)
      throw std::runtime_error("load_image_dir: class directory has no readable images: " + class_dirs[label].string());
    corpus.class_names.push_back(class_dirs[label].filename().string());
  }
  return corpus;
}

void export_corpus(const fs::path& root, const std::vector<LabeledImage>& images) {
  fs::create_directories(root);
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::ostringstream dir, file;
    dir << "class_" << std::setw(3) << std::setfill('0') << images[i].label;
    file << "img_" << std::setw(6) << std::setfill('0') << i << ".pgm";
    fs::create_directories(root / dir.str());
    io::write_pnm(root / dir.str() / file.str(), io::to_image8(images[i].pixels));
  }
}

Tensor make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices,
                  std::vector<std::size_t>* labels) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const Shape& item = samples.at(indices[0]).pixels.shape();
  std::vector<std::size_t> dims{indices.size()};
  dims.insert(dims.end(), item.dims().begin(), item.dims().end());
  Tensor batch{Shape(dims)};
  if (labels) labels->clear();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Sample& s = samples.at(indices[k]);
    if (!(s.pixels.shape() == item)) throw std::invalid_argument("make_batch: samples differ in shape");
    std::copy(s.pixels.data().begin(), s.pixels.data().end(), batch.ptr() + k * item.numel());
    if (labels) labels->push_back(s.label);
  }
  return batch;
}

}  // namespace gft::data
