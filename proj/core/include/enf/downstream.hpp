#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "enf/geometry.hpp"
#include "enf/latents.hpp"
#include "enf/tape.hpp"
#include "enf/tensor.hpp"

namespace enf {

/// Relative pose p_j^-1 p_i flattened to an edge feature:
/// Translation -> t_i - t_j; RotoTranslation -> (R(-theta_j)(t_i - t_j),
/// cos(theta_i - theta_j), sin(theta_i - theta_j)); None -> (p_i^pos, p_j^pos).
std::vector<double> relative_pose_invariant(BiInvariantKind kind, const Pose& p_i, const Pose& p_j);
std::size_t edge_feature_dim(BiInvariantKind kind);

enum class ClassifierKind : std::uint8_t {
  /// Message passing over latents with relative-pose edge features.
  Mpnn = 0,
  /// Pose-blind baseline: MLP on the mean context.
  MeanContext = 1,
};

const char* to_string(ClassifierKind kind);

struct MpnnConfig {
  ClassifierKind model = ClassifierKind::Mpnn;
  BiInvariantKind kind = BiInvariantKind::RotoTranslation;
  std::size_t d_latent = 16;
  std::size_t n_layers = 2;
  std::size_t d_node_hidden = 32;
  std::size_t n_classes = 3;

  void validate() const;
  std::string to_json() const;
  static MpnnConfig from_json(const std::string& text);
  bool operator==(const MpnnConfig&) const = default;
};

/// Classifier weights. For Mpnn: input embedding, per layer message and update
/// layers, linear head. For MeanContext: one hidden layer and a linear head.
/// `ctx_mean`/`ctx_scale` standardize contexts and are not trained.
struct MpnnParams {
  std::vector<std::string> names;
  std::vector<Tensor> weights;
  Tensor ctx_mean;   // [d_latent]
  Tensor ctx_scale;  // [d_latent]

  static MpnnParams init(const MpnnConfig& config, std::uint64_t seed, DType dtype = DType::F64);
  const Tensor& get(const std::string& name) const;
};

/// Logits [1 x n_classes] on `tape` with the given bound weights.
Var classifier_graph(Tape& tape, std::span<const Var> weights, const MpnnParams& params, const MpnnConfig& config,
                     const LatentSet& z);

/// Class logits for one latent set.
std::vector<double> mpnn_forward(const LatentSet& z, const MpnnParams& params, const MpnnConfig& config);
int predict(const LatentSet& z, const MpnnParams& params, const MpnnConfig& config);

struct ClassifierTrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  std::uint64_t seed = 0;
};

struct ClassifierReport {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double final_loss = 0.0;
};

struct TrainedClassifier {
  MpnnParams params;
  ClassifierReport report;
};

/// Adam on mean cross-entropy over the training sets. Contexts are
/// standardized with training-set statistics.
TrainedClassifier train_classifier(std::span<const LatentSet> train, std::span<const int> train_labels,
                                   std::span<const LatentSet> test, std::span<const int> test_labels,
                                   const MpnnConfig& config, const ClassifierTrainConfig& train_config);

double accuracy(std::span<const LatentSet> sets, std::span<const int> labels, const MpnnParams& params,
                const MpnnConfig& config);

void save_classifier(const std::filesystem::path& path, const MpnnConfig& config, const MpnnParams& params);
std::pair<MpnnConfig, MpnnParams> load_classifier(const std::filesystem::path& path);

/// Writes `sample_id,label,pred,logit_0,...`; label is -1 when unknown.
void write_predictions_csv(const std::filesystem::path& path, std::span<const LatentSet> sets,
                           std::span<const int> labels, const MpnnParams& params, const MpnnConfig& config);

}  // namespace enf
