#pragma once

#include <string>

#include "enf/data.hpp"
#include "enf/tensor.hpp"

namespace enf {

/// Mean squared error over all entries; shapes must match.
double mean_squared_error(const Tensor& a, const Tensor& b);
double mean_squared_error(const ImageField& a, const ImageField& b);
double mean_abs_difference(const ImageField& a, const ImageField& b);

/// 10*log10(1/mse) for signals in [0,1]; +inf when mse == 0.
double psnr_from_mse(double mse);
/// PSNR of `reconstruction` against `target`; throws DimensionError on shape mismatch.
double eval_psnr(const ImageField& reconstruction, const ImageField& target);
/// Decimal dB string, "inf" for identical signals.
std::string format_psnr(double db);

/// 2x2 block average of an image with even extents.
ImageField downsample2(const ImageField& image);

}  // namespace enf
