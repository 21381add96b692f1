#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gft/tensor.hpp"

namespace gft::data {

enum class SplitOrientation { vertical, horizontal };

/// A straight split line. Pixels with coordinate < `line` along the split
/// axis belong to the first region.
struct BoundarySignature {
  SplitOrientation orientation = SplitOrientation::vertical;
  std::size_t line = 0;
};

/// Planted-boundary classification task. Every image holds two flat regions,
/// one at `low_level` and one at `high_level`; the class is the position of
/// the line separating them. Classes 0..grid-1 split vertically through the
/// middle of patch column c, classes grid..2·grid-1 horizontally through
/// patch row c - grid. With random polarity each image flips a coin for which
/// side is bright, so intensity alone does not reveal the class.
struct BoundaryTask {
  std::size_t grid = 4;
  std::size_t patch_size = 8;
  std::size_t num_classes = 4;
  double noise = 0.05;  ///< std of additive Gaussian pixel noise, clamped to [0, 1]
  double low_level = 0.25;
  double high_level = 0.75;
  bool random_polarity = true;
  std::uint64_t seed = 1;

  std::size_t image_size() const { return grid * patch_size; }
  std::size_t num_patches() const { return grid * grid; }
  BoundarySignature signature(std::size_t label) const;
  void validate() const;
};

struct LabeledImage {
  Tensor pixels;  ///< [1, S, S], values in [0, 1]
  std::size_t label = 0;
  std::vector<std::size_t> boundary_ids;  ///< patches crossed by the split line
};

/// Patches whose pixel footprint contains pixels on both sides of the line.
std::vector<std::size_t> boundary_patches(const BoundaryTask& task, std::size_t label);

/// Image i has label i mod num_classes. Pure function of (task, n).
std::vector<LabeledImage> generate(const BoundaryTask& task, std::size_t n);

/// |kept ∩ truth| / |truth|
double boundary_recall(std::span<const std::size_t> kept, std::span<const std::size_t> truth);

/// Mean recall of uniformly random `keep`-subsets of `num_patches` patches
/// against a fixed truth set of size `truth_count`.
double random_recall_baseline(std::size_t num_patches, std::size_t keep, std::size_t truth_count, std::size_t trials,
                              std::uint64_t seed);

/// Model input: pixel values mapped by (x - mean) / std per channel.
struct ChannelStats {
  static constexpr float mean = 0.5f;
  static constexpr float std = 0.5f;
};

struct Sample {
  Tensor pixels;  ///< [C, S, S], standardized
  std::size_t label = 0;
  std::vector<std::size_t> boundary_ids;  ///< empty when unknown
};

Tensor standardize(const Tensor& unit_pixels);
Sample to_sample(const LabeledImage& image);
std::vector<Sample> to_samples(const std::vector<LabeledImage>& images);

struct Corpus {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;
  std::size_t skipped = 0;
};

/// Reads `root/<class>/<image>`; class index = lexicographic rank of the
/// directory name, files visited in sorted order. Images are decoded,
/// bilinearly resized to image_size², scaled to [0, 1] and standardized.
/// Unreadable files are skipped with a warning; a class directory without any
/// readable image is an error.
Corpus load_image_dir(const std::filesystem::path& root, std::size_t image_size, std::size_t channels);

/// Writes images as 8-bit PGM under `root/class_<label>/`, in the layout
/// load_image_dir reads.
void export_corpus(const std::filesystem::path& root, const std::vector<LabeledImage>& images);

/// Stacks samples into images[B, C, S, S] and labels.
Tensor make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices,
                  std::vector<std::size_t>* labels);

}  // namespace gft::data
