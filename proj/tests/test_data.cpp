#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "enf/data.hpp"
#include "enf/error.hpp"
#include "enf/metrics.hpp"
#include "test_util.hpp"

namespace enf {
namespace {

using testing::TempDir;

std::vector<std::uint8_t> bytes_of(const std::string& header, std::initializer_list<int> payload) {
  std::vector<std::uint8_t> b(header.begin(), header.end());
  for (int v : payload) b.push_back(static_cast<std::uint8_t>(v));
  return b;
}

TEST(Ppm, SingleRedPixel) {
  const auto img = decode_ppm(bytes_of("P6\n1 1\n255\n", {255, 0, 0}));
  EXPECT_EQ(img.channels, 3u);
  EXPECT_EQ(img.values, (std::vector<double>{1.0, 0.0, 0.0}));
}

TEST(Ppm, GrayGradient) {
  const auto img = decode_ppm(bytes_of("P5\n2 2\n255\n", {0, 85, 170, 255}));
  EXPECT_EQ(img.channels, 1u);
  EXPECT_DOUBLE_EQ(img.at(0, 1), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(img.at(1, 0), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(img.at(1, 1), 1.0);
}

TEST(Ppm, CommentsInHeaderAreSkipped) {
  const auto img = decode_ppm(bytes_of("P5\n# made by hand\n2 1\n255\n", {10, 20}));
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 1u);
}

TEST(Ppm, SaveLoadPreservesBytes) {
  TempDir dir("ppm");
  const auto bytes = bytes_of("P6\n2 1\n255\n", {1, 2, 3, 250, 128, 0});
  const auto img = decode_ppm(bytes);
  EXPECT_EQ(encode_ppm(img), bytes);
  save_ppm(img, dir / "a.ppm");
  EXPECT_EQ(load_ppm(dir / "a.ppm"), img);
}

TEST(Ppm, MalformedInputsAreRejected) {
  EXPECT_THROW(decode_ppm(bytes_of("P3\n1 1\n255\n", {0, 0, 0})), FormatError);
  EXPECT_THROW(decode_ppm(bytes_of("P6\n1 1\n65535\n", {0, 0, 0})), FormatError);
  EXPECT_THROW(decode_ppm(bytes_of("P6\n2 2\n255\n", {0, 0, 0})), FormatError);
  EXPECT_THROW(decode_ppm(bytes_of("P6\n", {})), FormatError);
}

TEST(Grid, Examples) {
  EXPECT_EQ(make_grid(1, 1), Tensor::from_rows({{0, 0}}));
  EXPECT_EQ(make_grid(1, 2), Tensor::from_rows({{-0.5, 0}, {0.5, 0}}));
  EXPECT_EQ(make_grid(2, 2), Tensor::from_rows({{-0.5, -0.5}, {0.5, -0.5}, {-0.5, 0.5}, {0.5, 0.5}}));
}

TEST(Grid, NearestPixelInvertsPixelCoordinate) {
  for (std::size_t r = 0; r < 7; ++r) {
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_EQ(nearest_pixel(pixel_coordinate(r, c, 7, 5), 7, 5), std::make_pair(r, c));
    }
  }
  EXPECT_EQ(nearest_pixel({5.0, -5.0}, 4, 4), std::make_pair(std::size_t{0}, std::size_t{3}));
}

TEST(SampleCoords, FullDrawIsAPermutation) {
  const Tensor grid = make_grid(4, 4);
  const ImageField img(4, 4, 1, 0.5);
  std::mt19937_64 rng(1);
  const auto s = sample_coords(grid, img.value_tensor(), 16, rng);
  auto idx = s.index;
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(idx[i], i);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(s.coords.at(i, 0), grid.at(s.index[i], 0));
    EXPECT_EQ(s.coords.at(i, 1), grid.at(s.index[i], 1));
  }
}

TEST(SampleCoords, SeededSingleDrawIsReproducible) {
  const Tensor grid = make_grid(4, 4);
  const Tensor values = ImageField(4, 4, 1).value_tensor();
  std::mt19937_64 a(42), b(42);
  EXPECT_EQ(sample_coords(grid, values, 1, a).index, sample_coords(grid, values, 1, b).index);
  std::mt19937_64 c(1);
  EXPECT_THROW(sample_coords(grid, values, 17, c), ContractError);
}

TEST(SampleCoords, FrequenciesAreUniform) {
  const Tensor grid = make_grid(4, 4);
  const Tensor values = ImageField(4, 4, 1).value_tensor();
  std::mt19937_64 rng(7);
  std::vector<int> hits(16, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++hits[sample_coords(grid, values, 1, rng).index[0]];
  const double p = 1.0 / 16.0, mean = draws * p, sd = std::sqrt(draws * p * (1 - p));
  for (int h : hits) EXPECT_LT(std::abs(h - mean), 3.5 * sd);
}

TEST(Shapes, DiskAtIdentityHasForegroundCentreAndBackgroundCorners) {
  SyntheticShapeSpec spec;
  spec.cls = ShapeClass::Disk;
  spec.scale = 0.5;
  spec.resolution = 16;
  const auto img = rasterize(spec);
  EXPECT_DOUBLE_EQ(img.at(7, 7), 1.0);
  EXPECT_DOUBLE_EQ(img.at(8, 8), 1.0);
  EXPECT_DOUBLE_EQ(img.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(img.at(15, 15), 0.0);
  EXPECT_DOUBLE_EQ(img.at(0, 15), 0.0);
}

TEST(Shapes, OnePixelTranslationShiftsTheImage) {
  SyntheticShapeSpec spec;
  spec.cls = ShapeClass::Cross;
  spec.scale = 0.4;
  spec.resolution = 16;
  spec.pose = GroupElement::roto_translation(0.0, 0.0, 0.3);
  const auto a = rasterize(spec);
  spec.pose = GroupElement::roto_translation(2.0 / 16.0, 0.0, 0.3);
  const auto b = rasterize(spec);
  for (std::size_t r = 1; r < 15; ++r) {
    for (std::size_t c = 1; c < 15; ++c) EXPECT_NEAR(b.at(r, c + 1), a.at(r, c), 1e-12) << r << "," << c;
  }
}

TEST(Shapes, CorpusIsDeterministicBalancedAndInRange) {
  const auto a = synth_shapes(30, 16, 5), b = synth_shapes(30, 16, 5);
  std::array<int, 3> counts{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].label, static_cast<int>(i % 3));
    EXPECT_TRUE(a[i].spec.fits());
    ++counts[static_cast<std::size_t>(a[i].label)];
    for (double v : a[i].image.values) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(counts, (std::array<int, 3>{10, 10, 10}));
  EXPECT_NE(synth_shapes(3, 16, 6)[0].image, a[0].image);
}

TEST(Shapes, RgbCorpusHasThreeChannels) {
  SynthOptions o;
  o.channels = 3;
  const auto s = synth_shapes(3, 8, 1, o);
  EXPECT_EQ(s[0].image.channels, 3u);
  EXPECT_EQ(s[0].image.values.size(), 8u * 8u * 3u);
}

TEST(Corpus, WriteThenLoad) {
  TempDir dir("corpus");
  const auto samples = synth_shapes(6, 8, 2);
  const Manifest m = write_corpus(dir.path(), samples);
  EXPECT_EQ(read_manifest(dir / "manifest.json"), m);
  const auto loaded = load_corpus(dir / "manifest.json");
  ASSERT_EQ(loaded.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(loaded[i].label, samples[i].label);
    EXPECT_LT(mean_abs_difference(loaded[i].image, samples[i].image), 1.0 / 255.0);
    EXPECT_EQ(loaded[i].pose.kind, GroupKind::RotoTranslation2);
  }
  EXPECT_EQ(loaded[0].id, "sample_00000");
}

TEST(Corpus, ManifestJsonRoundTrip) {
  Manifest m;
  m.height = m.width = 16;
  m.classes = {"disk", "square", "cross"};
  m.samples.push_back({"a.pgm", 2, GroupElement::roto_translation(0.1, -0.2, 1.5)});
  EXPECT_EQ(Manifest::from_json(m.to_json()), m);
  EXPECT_THROW(Manifest::from_json("{"), FormatError);
}

TEST(Signal, CoordinatesAndValuesFollowTheGrid) {
  ImageField img(2, 3, 1);
  for (std::size_t i = 0; i < 6; ++i) img.values[i] = static_cast<double>(i) / 10.0;
  const Signal s = to_signal(img, "x");
  EXPECT_EQ(s.coords, make_grid(2, 3));
  EXPECT_EQ(s.values.shape(), (Shape{6, 1}));
  EXPECT_DOUBLE_EQ(s.values.at(4, 0), 0.4);
}

TEST(Metrics, PsnrExamples) {
  const ImageField zeros(4, 4, 1, 0.0), ones(4, 4, 1, 1.0);
  EXPECT_EQ(format_psnr(eval_psnr(zeros, zeros)), "inf");
  EXPECT_DOUBLE_EQ(eval_psnr(zeros, ones), 0.0);
  EXPECT_NEAR(psnr_from_mse(0.01), 20.0, 1e-12);
  EXPECT_THROW(eval_psnr(zeros, ImageField(4, 5, 1)), DimensionError);
}

TEST(Metrics, MseIsAMean) {
  ImageField a(1, 2, 1, 0.0), b(1, 2, 1, 0.0);
  b.values = {1.0, 0.0};
  EXPECT_DOUBLE_EQ(mean_squared_error(a, b), 0.5);
  EXPECT_DOUBLE_EQ(mean_abs_difference(a, b), 0.5);
}

TEST(Metrics, DownsampleAveragesBlocks) {
  ImageField img(2, 4, 1);
  img.values = {0, 1, 2, 3, 4, 5, 6, 7};
  const auto d = downsample2(img);
  EXPECT_EQ(d.height, 1u);
  EXPECT_EQ(d.width, 2u);
  EXPECT_DOUBLE_EQ(d.at(0, 0), 2.5);
  EXPECT_DOUBLE_EQ(d.at(0, 1), 4.5);
}

}  // namespace
}  // namespace enf
