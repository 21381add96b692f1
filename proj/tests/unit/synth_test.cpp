#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "gft/synth.hpp"
#include "oracles.hpp"

using namespace gft;
namespace fs = std::filesystem;

namespace {

data::BoundaryTask clean_task(std::size_t classes) {
  data::BoundaryTask t;
  t.num_classes = classes;
  t.noise = 0.0;
  return t;
}

// Patches whose pixels are not all the same level, read off a noiseless image.
std::vector<std::size_t> mixed_patches(const data::BoundaryTask& task, const Tensor& pixels) {
  const std::size_t p = task.patch_size, s = task.image_size();
  std::vector<std::size_t> out;
  for (std::size_t pr = 0; pr < task.grid; ++pr)
    for (std::size_t pc = 0; pc < task.grid; ++pc) {
      std::set<float> levels;
      for (std::size_t y = pr * p; y < (pr + 1) * p; ++y)
        for (std::size_t x = pc * p; x < (pc + 1) * p; ++x) levels.insert(pixels[y * s + x]);
      if (levels.size() > 1) out.push_back(pr * task.grid + pc);
    }
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(BoundaryTaskTest, BoundaryIdsMatchPixelContent) {
  const auto task = clean_task(8);
  const auto images = data::generate(task, 8);
  for (const auto& img : images) {
    EXPECT_EQ(img.boundary_ids, mixed_patches(task, img.pixels)) << "label " << img.label;
    EXPECT_EQ(img.boundary_ids.size(), task.grid);
  }
}

TEST(BoundaryTaskTest, VerticalAndHorizontalLines) {
  const auto task = clean_task(8);
  EXPECT_EQ(data::boundary_patches(task, 1), (std::vector<std::size_t>{1, 5, 9, 13}));
  EXPECT_EQ(data::boundary_patches(task, 6), (std::vector<std::size_t>{8, 9, 10, 11}));
}

TEST(BoundaryTaskTest, LabelsCycleAndValuesStayInUnitRange) {
  data::BoundaryTask task;
  task.noise = 0.5;
  const auto images = data::generate(task, 10);
  for (std::size_t i = 0; i < images.size(); ++i) {
    EXPECT_EQ(images[i].label, i % task.num_classes);
    EXPECT_EQ(images[i].pixels.shape(), (Shape{1, 32, 32}));
    for (float v : images[i].pixels.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(BoundaryTaskTest, GenerationIsDeterministicInSeed) {
  data::BoundaryTask a, b;
  b.seed = 2;
  const auto x = data::generate(a, 6), y = data::generate(a, 6), z = data::generate(b, 6);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_TRUE(oracle::bit_equal(x[i].pixels, y[i].pixels));
  EXPECT_FALSE(oracle::bit_equal(x[0].pixels, z[0].pixels));
}

TEST(BoundaryTaskTest, RejectsBadParameters) {
  data::BoundaryTask t;
  t.num_classes = 9;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = {};
  t.num_classes = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  EXPECT_THROW(data::generate(data::BoundaryTask{}, 0), std::invalid_argument);
}

TEST(RecallTest, Fraction) {
  const std::vector<std::size_t> truth{1, 5, 9, 13};
  EXPECT_DOUBLE_EQ(data::boundary_recall(std::vector<std::size_t>{0, 1, 5, 7}, truth), 0.5);
  EXPECT_DOUBLE_EQ(data::boundary_recall(std::vector<std::size_t>{}, truth), 0.0);
  EXPECT_THROW(data::boundary_recall(truth, std::vector<std::size_t>{}), std::invalid_argument);
}

TEST(RecallTest, RandomBaselineIsKeepFraction) {
  // Expected recall of a uniform k-subset is k / N regardless of the truth size.
  EXPECT_NEAR(data::random_recall_baseline(16, 4, 4, 20000, 3), 0.25, 0.01);
  EXPECT_NEAR(data::random_recall_baseline(16, 12, 4, 20000, 3), 0.75, 0.01);
  EXPECT_DOUBLE_EQ(data::random_recall_baseline(16, 16, 4, 10, 3), 1.0);
}

TEST(SampleTest, StandardizeMapsUnitRangeToSymmetric) {
  Tensor px(Shape{1, 1, 3}, {0.0f, 0.5f, 1.0f});
  const Tensor z = data::standardize(px);
  EXPECT_EQ(std::vector<float>(z.data().begin(), z.data().end()), (std::vector<float>{-1.0f, 0.0f, 1.0f}));
}

TEST(SampleTest, MakeBatchStacksInIndexOrder) {
  const auto samples = data::to_samples(data::generate(clean_task(4), 4));
  std::vector<std::size_t> labels;
  const std::vector<std::size_t> idx{3, 1};
  const Tensor batch = data::make_batch(samples, idx, &labels);
  EXPECT_EQ(batch.shape(), (Shape{2, 1, 32, 32}));
  EXPECT_EQ(labels, (std::vector<std::size_t>{3, 1}));
  EXPECT_TRUE(std::equal(samples[3].pixels.data().begin(), samples[3].pixels.data().end(), batch.ptr()));
  EXPECT_THROW(data::make_batch(samples, {}, &labels), std::invalid_argument);
}

TEST(ImageDirTest, ExportedCorpusLoadsBack) {
  TempDir dir("gft_synth_roundtrip");
  const auto images = data::generate(data::BoundaryTask{}, 8);
  data::export_corpus(dir.path, images);
  const auto corpus = data::load_image_dir(dir.path, 32, 1);
  ASSERT_EQ(corpus.samples.size(), 8u);
  EXPECT_EQ(corpus.class_names.size(), 4u);
  EXPECT_EQ(corpus.skipped, 0u);
  std::vector<std::size_t> counts(4, 0);
  for (const auto& s : corpus.samples) {
    ++counts[s.label];
    EXPECT_TRUE(s.boundary_ids.empty());
  }
  EXPECT_EQ(counts, (std::vector<std::size_t>{2, 2, 2, 2}));
  // 8-bit quantization bounds the error after standardization by 1/255 / 0.5
  const auto expected = data::to_sample(images[0]);
  const auto& got = corpus.samples.front();
  ASSERT_EQ(got.label, 0u);
  for (std::size_t i = 0; i < got.pixels.numel(); ++i) EXPECT_NEAR(got.pixels[i], expected.pixels[i], 2.0 / 255 + 1e-6);
}

TEST(ImageDirTest, UnreadableFilesAreSkipped) {
  TempDir dir("gft_synth_skip");
  data::export_corpus(dir.path, data::generate(data::BoundaryTask{}, 4));
  std::ofstream(dir.path / "class_000" / "zz_broken.png") << "not an image";
  const auto corpus = data::load_image_dir(dir.path, 32, 1);
  EXPECT_EQ(corpus.samples.size(), 4u);
  EXPECT_EQ(corpus.skipped, 1u);
}

TEST(ImageDirTest, ClassWithoutImagesIsAnError) {
  TempDir dir("gft_synth_empty");
  data::export_corpus(dir.path, data::generate(data::BoundaryTask{}, 4));
  fs::create_directories(dir.path / "class_9");
  EXPECT_THROW(data::load_image_dir(dir.path, 32, 1), std::runtime_error);
  EXPECT_THROW(data::load_image_dir(dir.path / "missing", 32, 1), std::runtime_error);
}
