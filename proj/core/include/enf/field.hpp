#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "enf/geometry.hpp"
#include "enf/latents.hpp"
#include "enf/tape.hpp"
#include "enf/tensor.hpp"

namespace enf {

/// Hyperparameters of the cross-attention field.
struct EnfConfig {
  BiInvariantKind kind = BiInvariantKind::Translation;
  std::size_t d_latent = 16;
  std::size_t d_hidden = 32;
  std::size_t num_heads = 2;
  /// Length of each RFF embedding (cos and sin halves); must be even.
  std::size_t rff_dim = 16;
  double sigma_q = 1.0;
  double sigma_v = 3.0;
  /// Gaussian window strength; 0 disables it. Unset means 2 * N.
  std::optional<double> sigma_att;
  /// Latents attended per coordinate. Unset means all.
  std::optional<std::size_t> k_nearest;
  std::size_t out_channels = 1;

  /// Throws ConfigError naming the offending key.
  void validate() const;
  /// Window strength for a latent set of size n.
  double window_strength(std::size_t n) const;
  /// Neighbour count for a latent set of size n; throws if k_nearest > n.
  std::size_t neighbours(std::size_t n) const;
  std::size_t head_dim() const { return d_hidden / num_heads; }

  std::string to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static EnfConfig from_json(const std::string& text);

  bool operator==(const EnfConfig&) const = default;
};

/// All field weights. B_q and B_v are frozen RFF frequencies.
struct EnfParams {
  Tensor B_q;   // [rff_dim/2 x a_dim]
  Tensor B_v;   // [rff_dim/2 x a_dim]
  Tensor W_q;   // [d_hidden x rff_dim]
  Tensor W_k;   // [d_hidden x d_latent]
  Tensor W_v;   // [d_hidden x d_latent]
  Tensor W_ag;  // [d_hidden x rff_dim]
  Tensor W_ab;  // [d_hidden x rff_dim]
  Tensor W_o;   // [out_channels x d_hidden]

  /// W matrices uniform in +-sqrt(1/fan_in); B from N(0, sigma^2).
  static EnfParams init(const EnfConfig& config, std::uint64_t seed, DType dtype = DType::F32);

  static constexpr std::size_t kTrainable = 6;
  static const std::array<const char*, kTrainable>& trainable_names();
  std::array<Tensor*, kTrainable> trainable();
  std::array<const Tensor*, kTrainable> trainable() const;

  DType dtype() const { return W_q.dtype(); }
  EnfParams as_dtype(DType dtype) const;
  /// Throws ConfigError when tensor shapes disagree with `config`.
  void check_shapes(const EnfConfig& config) const;
};

void save_checkpoint(const std::filesystem::path& path, const EnfConfig& config, const EnfParams& params);
std::pair<EnfConfig, EnfParams> load_checkpoint(const std::filesystem::path& path);

/// Field weights bound to a tape.
struct ParamVars {
  Var W_q, W_k, W_v, W_ag, W_ab, W_o;
  Var B_q, B_v;

  std::array<Var, EnfParams::kTrainable> trainable() const { return {W_q, W_k, W_v, W_ag, W_ab, W_o}; }
};

/// Binds params as trainable leaves (or constants) on `tape`. B matrices are
/// always constants.
ParamVars bind_params(Tape& tape, const EnfParams& params, bool trainable);

/// concat(cos(2 pi B u), sin(2 pi B u)).
std::vector<double> rff_embed(std::span<const double> u, const Tensor& frequencies);

/// FiLM value (W_v c) * (W_ag a_emb) + W_ab a_emb.
std::vector<double> value_transform(std::span<const double> a_emb, std::span<const double> context,
                                    const EnfParams& params);

/// Indices of the k latents nearest to each coordinate, ascending index order
/// within each coordinate (ties in distance go to the lower index).
/// Row-major [M x k].
std::vector<std::size_t> select_neighbours(const Tensor& coords, const Tensor& poses, std::size_t k);

struct AttentionWeights {
  std::vector<std::size_t> indices;          // k selected latents
  std::vector<std::vector<double>> weights;  // [head][k], each row on the simplex
};

AttentionWeights attention_weights(const Vec2& x, const LatentSet& z, const EnfParams& params,
                                   const EnfConfig& config);

/// Differentiable field evaluation on `tape`: contexts [N x d_latent], poses
/// [N x pose_dim], coords [M x 2] -> [M x out_channels]. If `attention` is
/// given it receives the attention matrix [M*k x H].
Var field_graph(const EnfConfig& config, const ParamVars& params, const Var& contexts, const Var& poses,
                const Tensor& coords, Var* attention = nullptr);

/// Value-only field evaluation f(x; z) at every coordinate. Evaluated in
/// fixed-size coordinate chunks; the result does not depend on the chunking.
Tensor field_forward(const Tensor& coords, const LatentSet& z, const EnfParams& params, const EnfConfig& config);

}  // namespace enf
