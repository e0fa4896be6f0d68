#include "enf/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "enf/error.hpp"

namespace enf {
namespace {

using nlohmann::json;

constexpr int kSupersample = 4;
constexpr double kSquareHalfSide = 0.8;
constexpr double kCrossHalfWidth = 0.3;

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string token;
  while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') token.push_back(static_cast<char>(bytes[pos++]));
  if (token.empty()) throw FormatError("PPM: malformed header (unexpected end of data)");
  return token;
}

std::size_t header_number(std::span<const std::uint8_t> bytes, std::size_t& pos, const char* what) {
  const std::string token = header_token(bytes, pos);
  if (!std::all_of(token.begin(), token.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw FormatError(std::string("PPM: malformed header: ") + what + " '" + token + "' is not a number");
  }
  return static_cast<std::size_t>(std::stoull(token));
}

std::string class_name(int label) { return to_string(static_cast<ShapeClass>(label)); }

}  // namespace

ImageField::ImageField(std::size_t h, std::size_t w, std::size_t c, double fill)
    : height(h), width(w), channels(c), values(h * w * c, fill) {}

Tensor ImageField::value_tensor(DType dtype) const {
  return Tensor({pixels(), channels}, values, dtype);
}

ImageField ImageField::from_tensor(std::size_t height, std::size_t width, const Tensor& values) {
  if (values.rank() != 2 || values.rows() != height * width) {
    throw DimensionError("image from tensor: " + shape_string(values.shape()) + " is not [" +
                         std::to_string(height * width) + " x C]");
  }
  ImageField image;
  image.height = height;
  image.width = width;
  image.channels = values.cols();
  image.values = values.vec();
  image.clamp();
  return image;
}

void ImageField::clamp() {
  for (auto& v : values) v = std::clamp(v, 0.0, 1.0);
}

ImageField decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("PPM: malformed header (expected P5 or P6 magic)");
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  std::size_t pos = 2;
  const std::size_t width = header_number(bytes, pos, "width");
  const std::size_t height = header_number(bytes, pos, "height");
  const std::size_t maxval = header_number(bytes, pos, "maxval");
  if (width == 0 || height == 0) throw FormatError("PPM: malformed header (zero extent)");
  if (maxval != 255) throw FormatError("PPM: unsupported maxval " + std::to_string(maxval) + " (only 255)");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("PPM: malformed header terminator");
  ++pos;
  const std::size_t expected = width * height * channels;
  if (bytes.size() - pos < expected) {
    throw FormatError("PPM: truncated payload: " + std::to_string(bytes.size() - pos) + " of " +
                      std::to_string(expected) + " bytes");
  }
  ImageField image(height, width, channels);
  for (std::size_t i = 0; i < expected; ++i) image.values[i] = bytes[pos + i] / 255.0;
  return image;
}

std::vector<std::uint8_t> encode_ppm(const ImageField& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ContractError("PPM: only 1 or 3 channels, got " + std::to_string(image.channels));
  }
  const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(image.width) +
                             " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + image.values.size());
  for (double v : image.values) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  return out;
}

ImageField load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

void save_ppm(const ImageField& image, const std::filesystem::path& path) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Vec2 pixel_coordinate(std::size_t row, std::size_t col, std::size_t height, std::size_t width) {
  return {-1.0 + (2.0 * static_cast<double>(col) + 1.0) / static_cast<double>(width),
          -1.0 + (2.0 * static_cast<double>(row) + 1.0) / static_cast<double>(height)};
}

std::pair<std::size_t, std::size_t> nearest_pixel(const Vec2& x, std::size_t height, std::size_t width) {
  auto index = [](double v, std::size_t n) {
    const double f = std::floor((v + 1.0) * static_cast<double>(n) / 2.0);
    return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(n - 1)));
  };
  return {index(x[1], height), index(x[0], width)};
}

Tensor make_grid(std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ContractError("make_grid: extents must be positive");
  std::vector<double> data;
  data.reserve(height * width * 2);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const Vec2 x = pixel_coordinate(r, c, height, width);
      data.push_back(x[0]);
      data.push_back(x[1]);
    }
  }
  return Tensor({height * width, 2}, std::move(data));
}

Signal to_signal(const ImageField& image, std::string id, DType dtype) {
  return {std::move(id), image.height, image.width, make_grid(image.height, image.width).as_dtype(dtype),
          image.value_tensor(dtype)};
}

CoordSample sample_coords(const Tensor& grid, const Tensor& values, std::size_t m, std::mt19937_64& rng) {
  const std::size_t total = grid.rows();
  if (values.rows() != total) throw DimensionError("sample_coords: grid and values disagree in length");
  if (m == 0 || m > total) {
    throw ContractError("sample_coords: cannot draw " + std::to_string(m) + " of " + std::to_string(total) +
                        " coordinates");
  }
  // Partial Fisher-Yates; uses only rng() so the draw is portable.
  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (total - i));
    std::swap(perm[i], perm[j]);
  }
  perm.resize(m);
  const std::size_t c = values.cols();
  std::vector<double> xs, vs;
  xs.reserve(m * 2);
  vs.reserve(m * c);
  for (std::size_t idx : perm) {
    xs.push_back(grid.at(idx, 0));
    xs.push_back(grid.at(idx, 1));
    for (std::size_t ch = 0; ch < c; ++ch) vs.push_back(values.at(idx, ch));
  }
  return {std::move(perm), Tensor({m, 2}, std::move(xs), grid.dtype()), Tensor({m, c}, std::move(vs), values.dtype())};
}

const char* to_string(ShapeClass cls) {
  switch (cls) {
    case ShapeClass::Disk: return "disk";
    case ShapeClass::Square: return "square";
    case ShapeClass::Cross: return "cross";
  }
  return "?";
}

bool SyntheticShapeSpec::covers(const Vec2& x) const {
  const double dx = x[0] - pose.t[0], dy = x[1] - pose.t[1];
  const double c = std::cos(pose.theta), s = std::sin(pose.theta);
  const double u = (c * dx + s * dy) / scale;
  const double v = (-s * dx + c * dy) / scale;
  switch (cls) {
    case ShapeClass::Disk: return u * u + v * v <= 1.0;
    case ShapeClass::Square: return std::abs(u) <= kSquareHalfSide && std::abs(v) <= kSquareHalfSide;
    case ShapeClass::Cross:
      return (std::abs(u) <= 1.0 && std::abs(v) <= kCrossHalfWidth) ||
             (std::abs(v) <= 1.0 && std::abs(u) <= kCrossHalfWidth);
  }
  return false;
}

bool SyntheticShapeSpec::fits() const {
  double radius = 1.0;
  if (cls == ShapeClass::Square) radius = kSquareHalfSide * std::sqrt(2.0);
  if (cls == ShapeClass::Cross) radius = std::hypot(1.0, kCrossHalfWidth);
  radius *= scale;
  return std::abs(pose.t[0]) + radius <= 1.0 && std::abs(pose.t[1]) + radius <= 1.0;
}

ImageField rasterize(const SyntheticShapeSpec& spec) {
  if (spec.foreground.size() != spec.background.size() || spec.foreground.empty()) {
    throw ContractError("rasterize: foreground/background colour sizes differ");
  }
  const std::size_t n = spec.resolution;
  const std::size_t channels = spec.foreground.size();
  ImageField image(n, n, channels);
  const double pitch = 2.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      int hits = 0;
      for (int a = 0; a < kSupersample; ++a) {
        for (int b = 0; b < kSupersample; ++b) {
          const double x = -1.0 + pitch * (static_cast<double>(c) + (b + 0.5) / kSupersample);
          const double y = -1.0 + pitch * (static_cast<double>(r) + (a + 0.5) / kSupersample);
          hits += spec.covers({x, y}) ? 1 : 0;
        }
      }
      const double coverage = hits / static_cast<double>(kSupersample * kSupersample);
      for (std::size_t ch = 0; ch < channels; ++ch) {
        image.at(r, c, ch) = spec.background[ch] + coverage * (spec.foreground[ch] - spec.background[ch]);
      }
    }
  }
  return image;
}

std::vector<ShapeSample> synth_shapes(std::size_t n_samples, std::size_t resolution, std::uint64_t seed,
                                      const SynthOptions& options) {
  if (n_samples == 0) throw ContractError("synth_shapes: n_samples must be >= 1");
  if (resolution == 0) throw ContractError("synth_shapes: resolution must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::vector<ShapeSample> out;
  out.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    ShapeSample sample;
    sample.label = static_cast<int>(i % kNumShapeClasses);
    SyntheticShapeSpec& spec = sample.spec;
    spec.cls = static_cast<ShapeClass>(sample.label);
    spec.resolution = resolution;
    do {
      spec.pose = GroupElement::roto_translation(uniform(-options.max_translation, options.max_translation),
                                                 uniform(-options.max_translation, options.max_translation),
                                                 uniform(0.0, kTwoPi));
      spec.scale = uniform(options.min_scale, options.max_scale);
    } while (!spec.fits());
    spec.foreground.resize(options.channels);
    spec.background.resize(options.channels);
    for (std::size_t ch = 0; ch < options.channels; ++ch) {
      spec.foreground[ch] = uniform(options.fg_low, options.fg_high);
      spec.background[ch] = uniform(options.bg_low, options.bg_high);
    }
    sample.image = rasterize(spec);
    out.push_back(std::move(sample));
  }
  return out;
}

std::string Manifest::to_json() const {
  json samples_json = json::array();
  for (const auto& e : samples) {
    samples_json.push_back({{"path", e.path},
                            {"label", e.label},
                            {"pose", {{"tx", e.pose.t[0]}, {"ty", e.pose.t[1]}, {"theta", e.pose.theta}}}});
  }
  return json{{"samples", samples_json}, {"resolution", {height, width}}, {"classes", classes}}.dump(2);
}

Manifest Manifest::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    Manifest m;
    const auto& res = j.at("resolution");
    m.height = res.at(0).get<std::size_t>();
    m.width = res.at(1).get<std::size_t>();
    m.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& s : j.at("samples")) {
      ManifestEntry e;
      e.path = s.at("path").get<std::string>();
      e.label = s.at("label").get<int>();
      const auto& p = s.at("pose");
      e.pose = GroupElement::roto_translation(p.at("tx").get<double>(), p.at("ty").get<double>(),
                                              p.at("theta").get<double>());
      m.samples.push_back(std::move(e));
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

Manifest write_corpus(const std::filesystem::path& dir, const std::vector<ShapeSample>& samples) {
  if (samples.empty()) throw ContractError("write_corpus: no samples");
  std::filesystem::create_directories(dir);
  Manifest manifest;
  manifest.height = samples.front().image.height;
  manifest.width = samples.front().image.width;
  for (std::size_t c = 0; c < kNumShapeClasses; ++c) manifest.classes.push_back(class_name(static_cast<int>(c)));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::ostringstream name;
    name << "sample_" << std::setw(5) << std::setfill('0') << i << (samples[i].image.channels == 3 ? ".ppm" : ".pgm");
    save_ppm(samples[i].image, dir / name.str());
    manifest.samples.push_back({name.str(), samples[i].label, samples[i].spec.pose});
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.to_json() << '\n';
  if (!out) throw FormatError("cannot write manifest in '" + dir.string() + "'");
  return manifest;
}

Manifest read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open manifest '" + manifest_path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return Manifest::from_json(buffer.str());
}

std::vector<LabeledImage> load_corpus(const std::filesystem::path& manifest_path) {
  const Manifest manifest = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  std::vector<LabeledImage> out;
  for (const auto& e : manifest.samples) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base / p;
    out.push_back({std::filesystem::path(e.path).stem().string(), load_ppm(p), e.label, e.pose});
  }
  return out;
}

}  // namespace enf
