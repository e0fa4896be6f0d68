#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "enf/data.hpp"
#include "enf/field.hpp"
#include "enf/latents.hpp"
#include "enf/tensor.hpp"

namespace enf {

/// Meta-learning (MAML/CAVIA style) hyperparameters.
struct MetaLearnConfig {
  std::size_t num_latents = 9;
  std::size_t n_inner = 3;
  double eps_context = 30.0;
  double eps_pose = 1.0;
  double outer_lr = 1e-4;
  bool second_order = true;
  std::size_t batch_size = 8;
  /// Coordinates drawn per inner step and for the outer loss; 0 means the full grid.
  std::size_t coords_per_step = 64;
  double pose_noise = 1e-3;
  std::size_t steps = 2000;

  void validate() const;
  std::string to_json() const;
  static MetaLearnConfig from_json(const std::string& text);
  bool operator==(const MetaLearnConfig&) const = default;
};

/// Autodecoding hyperparameters.
struct AutodecodeConfig {
  std::size_t num_latents = 9;
  double latent_lr = 1e-2;
  double param_lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  std::size_t coords_per_step = 0;
  double pose_noise = 1e-3;

  void validate() const;
  std::string to_json() const;
  static AutodecodeConfig from_json(const std::string& text);
  bool operator==(const AutodecodeConfig&) const = default;
};

/// Adam over the trainable field weights.
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  /// Moments shaped like `params`, zero-initialized.
  void init(std::span<const Tensor* const> params);
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);
};

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double psnr = 0.0;
};

struct TrainState {
  EnfParams params;
  Adam adam;
  std::size_t step = 0;
  std::mt19937_64 rng;
  std::vector<LossRecord> history;

  static TrainState create(const EnfConfig& config, std::uint64_t seed, DType dtype = DType::F32);
};

/// Grid-initialized latents with zero contexts and N(0, noise^2) pose jitter.
LatentSet fresh_latents(const EnfConfig& config, std::size_t num_latents, double pose_noise, std::uint64_t seed,
                        DType dtype = DType::F32);

/// Plain-SGD latent adaptation with frozen weights. Coordinates per step follow
/// `cfg.coords_per_step` (the full grid, in order, when 0). NaN losses raise a
/// NumericError naming the step and sample id.
std::vector<LatentSet> inner_adapt(std::span<const Signal> signals, std::span<const LatentSet> z0,
                                   const EnfParams& params, const EnfConfig& config, const MetaLearnConfig& cfg,
                                   std::uint64_t seed);

struct MetaGradients {
  double loss = 0.0;  // mean outer loss over the batch
  std::array<Tensor, EnfParams::kTrainable> grads;
};

/// Outer-loss gradients w.r.t. the trainable weights, summed over samples in
/// batch order and divided by the batch size. With second_order the gradient
/// flows through the inner SGD steps.
MetaGradients compute_meta_gradients(std::span<const Signal> batch, const EnfParams& params, const EnfConfig& config,
                                     const MetaLearnConfig& cfg, std::uint64_t seed);

/// One outer step: meta-gradients then Adam with cfg.outer_lr. Returns the
/// mean outer loss. Throws NumericError when the loss exceeds 1e6.
double meta_train_step(std::span<const Signal> batch, TrainState& state, const EnfConfig& config,
                       const MetaLearnConfig& cfg);

/// Per-sample latent table for autodecoding, keyed by signal id.
using LatentTable = std::map<std::string, LatentSet>;

LatentTable init_latent_table(std::span<const Signal> signals, const EnfConfig& config, const AutodecodeConfig& cfg,
                              std::uint64_t seed, DType dtype = DType::F32);

/// Joint latent SGD step and weight Adam step on the batch's mean MSE. Only
/// the batch's latents change. Returns the mean loss.
double autodecode_step(std::span<const Signal> batch, LatentTable& latents, TrainState& state,
                       const EnfConfig& config, const AutodecodeConfig& cfg);

struct InferenceConfig {
  std::size_t num_latents = 9;
  std::size_t n_steps = 3;
  double eps_context = 30.0;
  double eps_pose = 1.0;
  /// Use Adam on the latents (with `adam_lr`) instead of plain SGD.
  bool adam = false;
  double adam_lr = 1e-2;
  std::size_t coords_per_step = 0;
  double pose_noise = 1e-3;
};

struct FitResult {
  LatentSet latents;
  double psnr = 0.0;
};

/// Fits a freshly initialized latent set to one signal with frozen weights.
FitResult fit_latents_inference(const Signal& signal, const EnfParams& params, const EnfConfig& config,
                                const InferenceConfig& cfg, std::uint64_t seed);

/// Decodes `z` on the signal's own grid, clamped to [0,1].
ImageField reconstruct(const Signal& signal, const LatentSet& z, const EnfParams& params, const EnfConfig& config);
double reconstruction_psnr(const Signal& signal, const LatentSet& z, const EnfParams& params,
                           const EnfConfig& config);

struct TrainHooks {
  std::size_t log_every = 0;
  /// Receives each logged record.
  std::function<void(const LossRecord&)> on_log;
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
};

/// Runs cfg.steps outer steps over shuffled mini-batches of `signals`.
TrainState train_meta(std::span<const Signal> signals, const EnfConfig& config, const MetaLearnConfig& cfg,
                      std::uint64_t seed, const TrainHooks& hooks = {}, DType dtype = DType::F32);

/// Runs cfg.epochs epochs of autodecoding; returns the state and final latents.
std::pair<TrainState, LatentTable> train_autodecode(std::span<const Signal> signals, const EnfConfig& config,
                                                    const AutodecodeConfig& cfg, std::uint64_t seed,
                                                    const TrainHooks& hooks = {}, DType dtype = DType::F32);

struct MetaEvaluation {
  std::vector<LatentSet> latents;
  std::vector<double> psnr;
  double mean_psnr = 0.0;
  double mean_mse_before = 0.0;  // zero-step latents
  double mean_mse_after = 0.0;   // after the inner loop
};

/// Meta-learned encoding of held-out signals: n_inner full-grid SGD steps from
/// fresh latents, then PSNR of the clamped reconstruction.
MetaEvaluation evaluate_meta(std::span<const Signal> signals, const EnfParams& params, const EnfConfig& config,
                             const MetaLearnConfig& cfg, std::uint64_t seed);

/// Writes `step,loss,psnr` rows.
void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history);

}  // namespace enf
