#include "enf/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "enf/enft.hpp"
#include "enf/error.hpp"
#include "enf/fitting.hpp"
#include "enf/ops.hpp"

namespace enf {
namespace {

using nlohmann::json;

struct LayerSpec {
  std::string name;
  std::size_t out, in;
};

std::vector<LayerSpec> layer_specs(const MpnnConfig& c) {
  const std::size_t dh = c.d_node_hidden;
  std::vector<LayerSpec> specs;
  if (c.model == ClassifierKind::MeanContext) {
    specs.push_back({"hidden", dh, c.d_latent});
  } else {
    specs.push_back({"in", dh, c.d_latent});
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      specs.push_back({"l" + std::to_string(l) + ".msg", dh, 2 * dh + edge_feature_dim(c.kind)});
      specs.push_back({"l" + std::to_string(l) + ".upd", dh, 2 * dh});
    }
  }
  specs.push_back({"head", c.n_classes, dh});
  return specs;
}

Tensor standardized_contexts(const LatentSet& z, const MpnnParams& p, DType dtype) {
  const std::size_t n = z.size(), d = z.d_latent;
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (z.points[i].context[j] - p.ctx_mean[j]) / p.ctx_scale[j];
  }
  return Tensor({n, d}, std::move(out), dtype);
}

Var dense(const Var& x, const Var& w, const Var& b) { return add_bcast(matmul(x, w, false, true), b); }

void check_latents(const LatentSet& z, const MpnnConfig& config) {
  if (z.kind != config.kind) {
    throw KindMismatchError(std::string("classifier expects ") + to_string(config.kind) + " latents, got " +
                            to_string(z.kind));
  }
  if (z.d_latent != config.d_latent) {
    throw DimensionError("classifier expects d_latent " + std::to_string(config.d_latent) + ", got " +
                         std::to_string(z.d_latent));
  }
}

std::vector<Var> bind(Tape& tape, const MpnnParams& params, bool trainable) {
  std::vector<Var> out;
  for (const auto& w : params.weights) out.push_back(trainable ? tape.param(w) : tape.constant(w));
  return out;
}

}  // namespace

std::size_t edge_feature_dim(BiInvariantKind kind) {
  switch (kind) {
    case BiInvariantKind::Translation: return 2;
    case BiInvariantKind::RotoTranslation: return 4;
    case BiInvariantKind::None: return 4;
  }
  throw ContractError("edge_feature_dim: unknown kind");
}

std::vector<double> relative_pose_invariant(BiInvariantKind kind, const Pose& p_i, const Pose& p_j) {
  if (p_i.kind != p_j.kind) throw KindMismatchError("relative_pose_invariant: poses of different kinds");
  if (p_i.kind != pose_kind(kind)) {
    throw KindMismatchError(std::string("relative_pose_invariant: poses do not match kind ") + to_string(kind));
  }
  const double dx = p_i.t[0] - p_j.t[0], dy = p_i.t[1] - p_j.t[1];
  switch (kind) {
    case BiInvariantKind::Translation: return {dx, dy};
    case BiInvariantKind::RotoTranslation: {
      const double c = std::cos(p_j.theta), s = std::sin(p_j.theta);
      const double dtheta = p_i.theta - p_j.theta;
      return {c * dx + s * dy, -s * dx + c * dy, std::cos(dtheta), std::sin(dtheta)};
    }
    case BiInvariantKind::None: return {p_i.t[0], p_i.t[1], p_j.t[0], p_j.t[1]};
  }
  throw ContractError("relative_pose_invariant: unknown kind");
}

const char* to_string(ClassifierKind kind) { return kind == ClassifierKind::Mpnn ? "mpnn" : "mean_context"; }

void MpnnConfig::validate() const {
  if (n_layers == 0) throw ConfigError("n_layers must be >= 1");
  if (d_node_hidden == 0) throw ConfigError("d_node_hidden must be >= 1");
  if (n_classes == 0) throw ConfigError("n_classes must be >= 1");
  if (d_latent == 0) throw ConfigError("d_latent must be >= 1");
}

std::string MpnnConfig::to_json() const {
  return json{{"model", to_string(model)},        {"kind", to_string(kind)},     {"d_latent", d_latent},
              {"n_layers", n_layers},             {"d_node_hidden", d_node_hidden}, {"n_classes", n_classes}}
      .dump(2);
}

MpnnConfig MpnnConfig::from_json(const std::string& text) {
  static const std::set<std::string> keys{"model", "kind", "d_latent", "n_layers", "d_node_hidden", "n_classes"};
  MpnnConfig c;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("classifier config: expected a JSON object");
    for (const auto& [key, _] : j.items()) {
      if (!keys.contains(key)) throw ConfigError("classifier config: unknown key '" + key + "'");
    }
    if (j.contains("model")) {
      const auto m = j["model"].get<std::string>();
      if (m == "mpnn") {
        c.model = ClassifierKind::Mpnn;
      } else if (m == "mean_context") {
        c.model = ClassifierKind::MeanContext;
      } else {
        throw ConfigError("classifier config: bad value for 'model': " + m);
      }
    }
    if (j.contains("kind")) c.kind = parse_bi_invariant_kind(j["kind"].get<std::string>());
    if (j.contains("d_latent")) c.d_latent = j["d_latent"].get<std::size_t>();
    if (j.contains("n_layers")) c.n_layers = j["n_layers"].get<std::size_t>();
    if (j.contains("d_node_hidden")) c.d_node_hidden = j["d_node_hidden"].get<std::size_t>();
    if (j.contains("n_classes")) c.n_classes = j["n_classes"].get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("classifier config: ") + e.what());
  }
  c.validate();
  return c;
}

MpnnParams MpnnParams::init(const MpnnConfig& config, std::uint64_t seed, DType dtype) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  MpnnParams p;
  for (const auto& spec : layer_specs(config)) {
    const double bound = std::sqrt(1.0 / static_cast<double>(spec.in));
    std::vector<double> w(spec.out * spec.in);
    for (auto& v : w) v = bound * unit(rng);
    p.names.push_back(spec.name + ".W");
    p.weights.emplace_back(Shape{spec.out, spec.in}, std::move(w), dtype);
    p.names.push_back(spec.name + ".b");
    p.weights.push_back(Tensor::zeros({spec.out}, dtype));
  }
  p.ctx_mean = Tensor::zeros({config.d_latent}, DType::F64);
  p.ctx_scale = Tensor::full({config.d_latent}, 1.0, DType::F64);
  return p;
}

const Tensor& MpnnParams::get(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return weights[i];
  }
  throw ContractError("classifier has no weight '" + name + "'");
}

Var classifier_graph(Tape& tape, std::span<const Var> w, const MpnnParams& params, const MpnnConfig& config,
                     const LatentSet& z) {
  check_latents(z, config);
  if (w.size() != params.weights.size()) throw ContractError("classifier_graph: weight count mismatch");
  const std::size_t n = z.size();
  Var contexts = tape.constant(standardized_contexts(z, params, tape.dtype()));
  std::size_t next = 0;
  auto layer = [&](const Var& x) {
    Var out = dense(x, w[next], w[next + 1]);
    next += 2;
    return out;
  };
  if (config.model == ClassifierKind::MeanContext) {
    Var mean_ctx = scale(group_sum_rows(contexts, n), 1.0 / static_cast<double>(n));
    return layer(silu(layer(mean_ctx)));
  }

  std::vector<std::size_t> src, dst;
  std::vector<double> edges;
  const std::size_t e = edge_feature_dim(config.kind);
  edges.reserve(n * n * e);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      src.push_back(i);
      dst.push_back(j);
      const auto r = relative_pose_invariant(config.kind, z.points[i].pose, z.points[j].pose);
      edges.insert(edges.end(), r.begin(), r.end());
    }
  }
  Var edge_features = tape.constant(Tensor({n * n, e}, std::move(edges), tape.dtype()));
  Var h = silu(layer(contexts));
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const Var msg_in[] = {gather_rows(h, src), gather_rows(h, dst), edge_features};
    Var messages = silu(layer(concat_cols(msg_in)));
    Var aggregated = scale(group_sum_rows(messages, n), inv_n);
    const Var upd_in[] = {h, aggregated};
    h = add(h, silu(layer(concat_cols(upd_in))));
  }
  Var pooled = scale(group_sum_rows(h, n), inv_n);
  return layer(pooled);
}

std::vector<double> mpnn_forward(const LatentSet& z, const MpnnParams& params, const MpnnConfig& config) {
  const DType dtype = params.weights.empty() ? DType::F64 : params.weights.front().dtype();
  Tape tape(dtype);
  Tape::NoGradGuard guard(tape);
  const auto w = bind(tape, params, false);
  return classifier_graph(tape, w, params, config, z).value().vec();
}

int predict(const LatentSet& z, const MpnnParams& params, const MpnnConfig& config) {
  const auto logits = mpnn_forward(z, params, config);
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double accuracy(std::span<const LatentSet> sets, std::span<const int> labels, const MpnnParams& params,
                const MpnnConfig& config) {
  if (sets.size() != labels.size()) throw ContractError("accuracy: label/latent count mismatch");
  if (sets.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) correct += predict(sets[i], params, config) == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(sets.size());
}

TrainedClassifier train_classifier(std::span<const LatentSet> train, std::span<const int> train_labels,
                                   std::span<const LatentSet> test, std::span<const int> test_labels,
                                   const MpnnConfig& config, const ClassifierTrainConfig& tc) {
  config.validate();
  if (train.size() != train_labels.size() || test.size() != test_labels.size()) {
    throw ContractError("train_classifier: " + std::to_string(train.size()) + " train latents for " +
                        std::to_string(train_labels.size()) + " labels, " + std::to_string(test.size()) +
                        " test latents for " + std::to_string(test_labels.size()) + " labels");
  }
  if (train.empty()) throw ContractError("train_classifier: no training data");
  for (int label : train_labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= config.n_classes) {
      throw ContractError("train_classifier: label " + std::to_string(label) + " out of range");
    }
  }
  for (const auto& z : train) check_latents(z, config);

  TrainedClassifier out;
  MpnnParams& params = out.params;
  params = MpnnParams::init(config, tc.seed);
  // Context standardization statistics from the training split.
  const std::size_t d = config.d_latent;
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  std::size_t count = 0;
  for (const auto& z : train) {
    for (const auto& p : z.points) {
      for (std::size_t j = 0; j < d; ++j) mean[j] += p.context[j];
      ++count;
    }
  }
  for (auto& m : mean) m /= static_cast<double>(count);
  for (const auto& z : train) {
    for (const auto& p : z.points) {
      for (std::size_t j = 0; j < d; ++j) var[j] += (p.context[j] - mean[j]) * (p.context[j] - mean[j]);
    }
  }
  std::vector<double> scale_v(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double s = std::sqrt(var[j] / static_cast<double>(count));
    scale_v[j] = s > 1e-8 ? s : 1.0;
  }
  params.ctx_mean = Tensor({d}, mean);
  params.ctx_scale = Tensor({d}, scale_v);

  Adam adam;
  std::vector<const Tensor*> ptrs;
  for (const auto& w : params.weights) ptrs.push_back(&w);
  adam.init(ptrs);
  std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::max<std::size_t>(1, std::min(tc.batch_size, train.size()));
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      std::vector<Tensor> grads;
      for (const auto& w : params.weights) grads.push_back(Tensor::zeros(w.shape(), DType::F64));
      for (std::size_t b = start; b < end; ++b) {
        Tape tape(DType::F64);
        const auto w = bind(tape, params, true);
        const int label[] = {train_labels[order[b]]};
        Var loss = cross_entropy(classifier_graph(tape, w, params, config, train[order[b]]), label);
        epoch_loss += loss.value().item();
        const auto g = tape.gradients(loss, w);
        for (std::size_t k = 0; k < g.size(); ++k) {
          auto acc = grads[k].mutable_data();
          for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += inv * g[k][j];
        }
      }
      std::vector<Tensor*> targets;
      for (auto& w : params.weights) targets.push_back(&w);
      adam.step(targets, grads, tc.lr);
    }
    out.report.final_loss = epoch_loss / static_cast<double>(train.size());
  }
  out.report.train_accuracy = accuracy(train, train_labels, params, config);
  out.report.test_accuracy = accuracy(test, test_labels, params, config);
  return out;
}

void save_classifier(const std::filesystem::path& path, const MpnnConfig& config, const MpnnParams& params) {
  TensorArchive archive;
  archive.put_blob("config", config.to_json());
  archive.put("ctx_mean", params.ctx_mean);
  archive.put("ctx_scale", params.ctx_scale);
  for (std::size_t i = 0; i < params.weights.size(); ++i) archive.put(params.names[i], params.weights[i]);
  archive.save(path);
}

std::pair<MpnnConfig, MpnnParams> load_classifier(const std::filesystem::path& path) {
  const TensorArchive archive = TensorArchive::load(path);
  const MpnnConfig config = MpnnConfig::from_json(archive.blob("config"));
  MpnnParams params = MpnnParams::init(config, 0);
  params.ctx_mean = archive.tensor("ctx_mean");
  params.ctx_scale = archive.tensor("ctx_scale");
  for (std::size_t i = 0; i < params.names.size(); ++i) {
    const Tensor& t = archive.tensor(params.names[i]);
    if (t.shape() != params.weights[i].shape()) {
      throw FormatError("classifier checkpoint: '" + params.names[i] + "' has shape " + shape_string(t.shape()) +
                        ", expected " + shape_string(params.weights[i].shape()));
    }
    params.weights[i] = t;
  }
  if (params.ctx_mean.shape() != Shape{config.d_latent} || params.ctx_scale.shape() != Shape{config.d_latent}) {
    throw FormatError("classifier checkpoint: standardization statistics do not match d_latent");
  }
  return {config, params};
}

void write_predictions_csv(const std::filesystem::path& path, std::span<const LatentSet> sets,
                           std::span<const int> labels, const MpnnParams& params, const MpnnConfig& config) {
  if (!labels.empty() && labels.size() != sets.size()) throw ContractError("predictions: label/latent count mismatch");
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out << "sample_id,label,pred";
  for (std::size_t c = 0; c < config.n_classes; ++c) out << ",logit_" << c;
  out << '\n';
  out.precision(8);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto logits = mpnn_forward(sets[i], params, config);
    const int pred = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    out << sets[i].sample_id.value_or(std::to_string(i)) << ',' << (labels.empty() ? -1 : labels[i]) << ',' << pred;
    for (double l : logits) out << ',' << l;
    out << '\n';
  }
}

}  // namespace enf
