#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "enf/field.hpp"
#include "enf/latents.hpp"

namespace enf::testing {

/// Scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("enf_test_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Scalar-loop field evaluation written directly from the attention formula.
/// Shares nothing with the tape implementation.
inline std::vector<double> naive_field(const Vec2& x, const LatentSet& z, const EnfParams& p, const EnfConfig& cfg) {
  const std::size_t n = z.size();
  const std::size_t k = cfg.k_nearest ? *cfg.k_nearest : n;
  const std::size_t dh = cfg.d_hidden, heads = cfg.num_heads, dk = dh / heads;
  const double sigma = cfg.sigma_att ? *cfg.sigma_att : 2.0 * static_cast<double>(n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto d2 = [&](std::size_t j) {
    const double dx = z.points[j].pose.t[0] - x[0], dy = z.points[j].pose.t[1] - x[1];
    return dx * dx + dy * dy;
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d2(a) < d2(b); });
  order.resize(k);

  auto attribute = [&](const Pose& pose) -> std::vector<double> {
    const double dx = x[0] - pose.t[0], dy = x[1] - pose.t[1];
    switch (cfg.kind) {
      case BiInvariantKind::Translation:
        return {dx, dy};
      case BiInvariantKind::RotoTranslation: {
        const double c = std::cos(pose.theta), s = std::sin(pose.theta);
        return {c * dx + s * dy, -s * dx + c * dy};
      }
      case BiInvariantKind::None:
        return {pose.t[0], pose.t[1], x[0], x[1]};
    }
    return {};
  };
  auto embed = [](const std::vector<double>& a, const Tensor& b) {
    const std::size_t half = b.rows();
    std::vector<double> e(2 * half);
    for (std::size_t f = 0; f < half; ++f) {
      double ph = 0.0;
      for (std::size_t j = 0; j < a.size(); ++j) ph += b.at(f, j) * a[j];
      e[f] = std::cos(2.0 * M_PI * ph);
      e[half + f] = std::sin(2.0 * M_PI * ph);
    }
    return e;
  };
  auto matvec = [](const Tensor& w, const std::vector<double>& v) {
    std::vector<double> out(w.rows(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      for (std::size_t c = 0; c < w.cols(); ++c) out[r] += w.at(r, c) * v[c];
    }
    return out;
  };

  std::vector<std::vector<double>> logits(heads, std::vector<double>(k)), values(k);
  for (std::size_t jj = 0; jj < k; ++jj) {
    const auto& pt = z.points[order[jj]];
    const auto a = attribute(pt.pose);
    const auto q = matvec(p.W_q, embed(a, p.B_q));
    const auto key = matvec(p.W_k, pt.context);
    const auto ev = embed(a, p.B_v);
    const auto v = matvec(p.W_v, pt.context), g = matvec(p.W_ag, ev), b = matvec(p.W_ab, ev);
    values[jj].resize(dh);
    for (std::size_t r = 0; r < dh; ++r) values[jj][r] = v[r] * g[r] + b[r];
    for (std::size_t h = 0; h < heads; ++h) {
      double dot = 0.0;
      for (std::size_t r = h * dk; r < (h + 1) * dk; ++r) dot += q[r] * key[r];
      logits[h][jj] = dot / std::sqrt(static_cast<double>(dk)) - sigma * d2(order[jj]);
    }
  }
  std::vector<double> pooled(dh, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const double mx = *std::max_element(logits[h].begin(), logits[h].end());
    double total = 0.0;
    for (double l : logits[h]) total += std::exp(l - mx);
    for (std::size_t jj = 0; jj < k; ++jj) {
      const double w = std::exp(logits[h][jj] - mx) / total;
      for (std::size_t r = h * dk; r < (h + 1) * dk; ++r) pooled[r] += w * values[jj][r];
    }
  }
  return matvec(p.W_o, pooled);
}

inline EnfConfig small_config(BiInvariantKind kind) {
  EnfConfig c;
  c.kind = kind;
  c.d_latent = 4;
  c.d_hidden = 8;
  c.num_heads = 2;
  c.rff_dim = 6;
  return c;
}

}  // namespace enf::testing
