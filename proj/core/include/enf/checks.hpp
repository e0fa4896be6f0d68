#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "enf/field.hpp"
#include "enf/gradcheck.hpp"
#include "enf/latents.hpp"

namespace enf {

/// Random latent set: contexts and positions uniform in [-1,1], angles in [0, 2*pi).
LatentSet random_latents(BiInvariantKind kind, std::size_t n, std::size_t d_latent, std::uint64_t seed,
                         DType dtype = DType::F64);

/// Finite-difference check of the full reconstruction loss on a random 4x4
/// image with N=2, d_latent=8, d_hidden=16, 2 heads at 64-bit, covering every
/// trainable weight, context and pose entry (h = 1e-5, tolerance 1e-4).
GradCheckReport enf_gradcheck(std::uint64_t seed, BiInvariantKind kind = BiInvariantKind::RotoTranslation);

/// max |f(g^-1 x; z) - f(x; g z)| over random (g, x, z) with the window active, 64-bit.
double steerability_deviation(BiInvariantKind kind, std::size_t trials, std::uint64_t seed);

/// max |a(g x, g p) - a(x, p)| over random draws, 64-bit.
double bi_invariance_deviation(BiInvariantKind kind, std::size_t trials, std::uint64_t seed);

/// max |f_{k=N}(x; z) - f_{all}(x; z)| over random evaluations, 32-bit.
double knn_equivalence_deviation(std::size_t trials, std::uint64_t seed);

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  /// True when the check requires value < threshold, false for value > threshold.
  bool below = true;
  bool passed() const { return below ? value < threshold : value > threshold; }
};

/// Steerability, bi-invariance (with kind None negative controls), kNN
/// equivalence and the gradient check.
std::vector<CheckResult> run_property_suite(std::uint64_t seed);

}  // namespace enf
