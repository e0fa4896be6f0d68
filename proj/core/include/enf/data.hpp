#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "enf/geometry.hpp"
#include "enf/tensor.hpp"

namespace enf {

/// Discretized field on [-1,1]^2. Pixel (r, c) sits at
/// (-1 + (2c+1)/W, -1 + (2r+1)/H); values are row-major [H][W][C] in [0,1].
struct ImageField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> values;

  ImageField() = default;
  ImageField(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0);

  double at(std::size_t r, std::size_t c, std::size_t ch = 0) const { return values[(r * width + c) * channels + ch]; }
  double& at(std::size_t r, std::size_t c, std::size_t ch = 0) { return values[(r * width + c) * channels + ch]; }

  std::size_t pixels() const { return height * width; }
  /// [H*W x C] view of the values, in grid order.
  Tensor value_tensor(DType dtype = DType::F64) const;
  /// Image from [H*W x C] values, clamped to [0,1].
  static ImageField from_tensor(std::size_t height, std::size_t width, const Tensor& values);
  void clamp();

  bool operator==(const ImageField&) const = default;
};

/// P5 (gray) or P6 (RGB) binary image, maxval 255. Values map as v/255.
ImageField decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const ImageField& image);
ImageField load_ppm(const std::filesystem::path& path);
void save_ppm(const ImageField& image, const std::filesystem::path& path);

/// Pixel-centre coordinates, row-major, as [H*W x 2].
Tensor make_grid(std::size_t height, std::size_t width);
Vec2 pixel_coordinate(std::size_t row, std::size_t col, std::size_t height, std::size_t width);
/// Pixel whose centre is nearest to x (clamped to the image).
std::pair<std::size_t, std::size_t> nearest_pixel(const Vec2& x, std::size_t height, std::size_t width);

/// A field sample ready for fitting: coordinates [P x 2] and targets [P x C].
struct Signal {
  std::string id;
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor coords;
  Tensor values;
};

Signal to_signal(const ImageField& image, std::string id, DType dtype = DType::F64);

struct CoordSample {
  std::vector<std::size_t> index;
  Tensor coords;
  Tensor values;
};

/// m rows of (grid, values) drawn uniformly without replacement.
CoordSample sample_coords(const Tensor& grid, const Tensor& values, std::size_t m, std::mt19937_64& rng);

enum class ShapeClass : int { Disk = 0, Square = 1, Cross = 2 };
inline constexpr std::size_t kNumShapeClasses = 3;
const char* to_string(ShapeClass cls);

struct SyntheticShapeSpec {
  ShapeClass cls = ShapeClass::Disk;
  GroupElement pose = GroupElement::identity(GroupKind::RotoTranslation2);
  double scale = 0.5;
  std::vector<double> foreground{1.0};
  std::vector<double> background{0.0};
  std::size_t resolution = 16;

  /// True when the posed shape lies inside [-1,1]^2.
  bool fits() const;
  /// Whether the point lies on the shape.
  bool covers(const Vec2& x) const;
};

/// Anti-aliased rasterization with 4x4 supersampling per pixel.
ImageField rasterize(const SyntheticShapeSpec& spec);

struct SynthOptions {
  std::size_t channels = 1;
  double min_scale = 0.3;
  double max_scale = 0.55;
  double max_translation = 0.4;
  double fg_low = 0.7, fg_high = 1.0;
  double bg_low = 0.0, bg_high = 0.25;
};

struct ShapeSample {
  SyntheticShapeSpec spec;
  ImageField image;
  int label = 0;
};

/// Class-balanced corpus (label = i mod 3) with poses uniform over
/// translations in [-t,t]^2 and rotations in [0, 2*pi).
std::vector<ShapeSample> synth_shapes(std::size_t n_samples, std::size_t resolution, std::uint64_t seed,
                                      const SynthOptions& options = {});

struct ManifestEntry {
  std::string path;
  int label = 0;
  GroupElement pose = GroupElement::identity(GroupKind::RotoTranslation2);

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::vector<ManifestEntry> samples;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::string> classes;

  std::string to_json() const;
  static Manifest from_json(const std::string& text);

  bool operator==(const Manifest&) const = default;
};

/// Writes one PPM per sample plus manifest.json into `dir`.
Manifest write_corpus(const std::filesystem::path& dir, const std::vector<ShapeSample>& samples);
Manifest read_manifest(const std::filesystem::path& manifest_path);

struct LabeledImage {
  std::string id;
  ImageField image;
  int label = 0;
  GroupElement pose;
};

/// Loads every image referenced by a manifest; relative paths resolve against
/// the manifest's directory.
std::vector<LabeledImage> load_corpus(const std::filesystem::path& manifest_path);

}  // namespace enf
