#include "enf/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "enf/error.hpp"

namespace enf {
namespace {

void check_same(const ImageField& a, const ImageField& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    std::ostringstream msg;
    msg << "image shapes differ: " << a.height << "x" << a.width << "x" << a.channels << " vs " << b.height << "x"
        << b.width << "x" << b.channels;
    throw DimensionError(msg.str());
  }
}

}  // namespace

double mean_squared_error(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.numel());
}

double mean_squared_error(const ImageField& a, const ImageField& b) {
  check_same(a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) acc += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
  return acc / static_cast<double>(a.values.size());
}

double mean_abs_difference(const ImageField& a, const ImageField& b) {
  check_same(a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) acc += std::abs(a.values[i] - b.values[i]);
  return acc / static_cast<double>(a.values.size());
}

double psnr_from_mse(double mse) {
  if (mse < 0.0 || !std::isfinite(mse)) throw NumericError("psnr: invalid mse " + std::to_string(mse));
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double eval_psnr(const ImageField& reconstruction, const ImageField& target) {
  return psnr_from_mse(mean_squared_error(reconstruction, target));
}

std::string format_psnr(double db) {
  if (std::isinf(db) && db > 0) return "inf";
  std::ostringstream out;
  out.precision(4);
  out << std::fixed << db;
  return out.str();
}

ImageField downsample2(const ImageField& image) {
  if (image.height % 2 != 0 || image.width % 2 != 0) {
    throw DimensionError("downsample2: extents must be even");
  }
  ImageField out(image.height / 2, image.width / 2, image.channels);
  for (std::size_t r = 0; r < out.height; ++r) {
    for (std::size_t c = 0; c < out.width; ++c) {
      for (std::size_t ch = 0; ch < image.channels; ++ch) {
        out.at(r, c, ch) = 0.25 * (image.at(2 * r, 2 * c, ch) + image.at(2 * r, 2 * c + 1, ch) +
                                   image.at(2 * r + 1, 2 * c, ch) + image.at(2 * r + 1, 2 * c + 1, ch));
      }
    }
  }
  return out;
}

}  // namespace enf
