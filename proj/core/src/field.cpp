#include "enf/field.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "enf/enft.hpp"
#include "enf/error.hpp"
#include "enf/ops.hpp"

namespace enf {
namespace {

using nlohmann::json;

constexpr std::size_t kForwardChunk = 512;

Tensor uniform_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, DType dtype) {
  const double bound = std::sqrt(1.0 / static_cast<double>(cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(rows * cols);
  for (auto& v : data) v = dist(rng);
  return Tensor({rows, cols}, std::move(data), dtype);
}

Tensor normal_matrix(std::size_t rows, std::size_t cols, double sigma, std::mt19937_64& rng, DType dtype) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<double> data(rows * cols);
  for (auto& v : data) v = dist(rng);
  return Tensor({rows, cols}, std::move(data), dtype);
}

void expect_shape(const char* name, const Tensor& t, std::size_t rows, std::size_t cols) {
  if (t.rank() != 2 || t.shape()[0] != rows || t.shape()[1] != cols) {
    throw ConfigError(std::string("checkpoint tensor ") + name + " has shape " + shape_string(t.shape()) +
                      ", config expects [" + std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
}

// a(x, p) for every (coordinate, selected latent) row.
Var attribute_graph(BiInvariantKind kind, const Var& coords, const Var& poses) {
  Var position = slice_cols(poses, 0, 2);
  switch (kind) {
    case BiInvariantKind::Translation: return sub(coords, position);
    case BiInvariantKind::RotoTranslation: {
      Var d = sub(coords, position);
      Var theta = slice_cols(poses, 2, 3);
      Var c = cos(theta);
      Var s = sin(theta);
      Var dx = slice_cols(d, 0, 1);
      Var dy = slice_cols(d, 1, 2);
      // R(-theta) d
      const std::array<Var, 2> parts{add(mul(c, dx), mul(s, dy)), sub(mul(c, dy), mul(s, dx))};
      return concat_cols(parts);
    }
    case BiInvariantKind::None: {
      const std::array<Var, 2> parts{position, coords};
      return concat_cols(parts);
    }
  }
  throw ContractError("attribute_graph: unknown kind");
}

Var rff_graph(const Var& attributes, const Var& frequencies) {
  Var phase = scale(matmul(attributes, frequencies, false, true), kTwoPi);
  const std::array<Var, 2> parts{cos(phase), sin(phase)};
  return concat_cols(parts);
}

// [M*k x H] -> [M*H x k] and back, so the softmax runs over each
// (coordinate, head) row of k latents.
Var heads_to_rows(const Var& a, std::size_t m, std::size_t k, std::size_t h) {
  return reshape(swap_last2(reshape(a, {m, k, h})), {m * h, k});
}

Var rows_to_heads(const Var& a, std::size_t m, std::size_t k, std::size_t h) {
  return reshape(swap_last2(reshape(a, {m, h, k})), {m * k, h});
}

}  // namespace

void EnfConfig::validate() const {
  if (d_latent == 0) throw ConfigError("d_latent must be positive");
  if (d_hidden == 0) throw ConfigError("d_hidden must be positive");
  if (num_heads == 0) throw ConfigError("num_heads must be positive");
  if (d_hidden % num_heads != 0) throw ConfigError("d_hidden must be divisible by num_heads");
  if (rff_dim == 0 || rff_dim % 2 != 0) throw ConfigError("rff_dim must be positive and even");
  if (!(sigma_q > 0.0)) throw ConfigError("sigma_q must be positive");
  if (!(sigma_v > 0.0)) throw ConfigError("sigma_v must be positive");
  if (sigma_att && !(*sigma_att >= 0.0)) throw ConfigError("sigma_att must be non-negative");
  if (k_nearest && *k_nearest == 0) throw ConfigError("k_nearest must be >= 1 or \"all\"");
  if (out_channels == 0) throw ConfigError("out_channels must be positive");
}

double EnfConfig::window_strength(std::size_t n) const {
  return sigma_att ? *sigma_att : 2.0 * static_cast<double>(n);
}

std::size_t EnfConfig::neighbours(std::size_t n) const {
  if (!k_nearest) return n;
  if (*k_nearest > n) {
    throw ConfigError("k_nearest " + std::to_string(*k_nearest) + " exceeds the " + std::to_string(n) + " latents");
  }
  return *k_nearest;
}

std::string EnfConfig::to_json() const {
  json j{{"kind", enf::to_string(kind)}, {"d_latent", d_latent},         {"d_hidden", d_hidden},
         {"num_heads", num_heads},      {"rff_dim", rff_dim},           {"sigma_q", sigma_q},
         {"sigma_v", sigma_v},          {"out_channels", out_channels}};
  j["sigma_att"] = sigma_att ? json(*sigma_att) : json(nullptr);
  j["k_nearest"] = k_nearest ? json(*k_nearest) : json("all");
  return j.dump();
}

EnfConfig EnfConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("enf config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("enf config: expected an object");
  EnfConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "kind") c.kind = parse_bi_invariant_kind(value.get<std::string>());
      else if (key == "d_latent") c.d_latent = value.get<std::size_t>();
      else if (key == "d_hidden") c.d_hidden = value.get<std::size_t>();
      else if (key == "num_heads") c.num_heads = value.get<std::size_t>();
      else if (key == "rff_dim") c.rff_dim = value.get<std::size_t>();
      else if (key == "sigma_q") c.sigma_q = value.get<double>();
      else if (key == "sigma_v") c.sigma_v = value.get<double>();
      else if (key == "out_channels") c.out_channels = value.get<std::size_t>();
      else if (key == "sigma_att") {
        c.sigma_att = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
      } else if (key == "k_nearest") {
        if (value.is_string()) {
          if (value.get<std::string>() != "all") throw ConfigError("k_nearest: expected an integer or \"all\"");
          c.k_nearest.reset();
        } else {
          c.k_nearest = value.get<std::size_t>();
        }
      } else {
        throw ConfigError("enf config: unknown key '" + key + "'");
      }
    } catch (const json::exception&) {
      throw ConfigError("enf config: bad value for key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

EnfParams EnfParams::init(const EnfConfig& config, std::uint64_t seed, DType dtype) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t a_dim = attribute_dim(config.kind);
  const std::size_t half = config.rff_dim / 2;
  EnfParams p;
  p.B_q = normal_matrix(half, a_dim, config.sigma_q, rng, dtype);
  p.B_v = normal_matrix(half, a_dim, config.sigma_v, rng, dtype);
  p.W_q = uniform_matrix(config.d_hidden, config.rff_dim, rng, dtype);
  p.W_k = uniform_matrix(config.d_hidden, config.d_latent, rng, dtype);
  p.W_v = uniform_matrix(config.d_hidden, config.d_latent, rng, dtype);
  p.W_ag = uniform_matrix(config.d_hidden, config.rff_dim, rng, dtype);
  p.W_ab = uniform_matrix(config.d_hidden, config.rff_dim, rng, dtype);
  p.W_o = uniform_matrix(config.out_channels, config.d_hidden, rng, dtype);
  return p;
}

const std::array<const char*, EnfParams::kTrainable>& EnfParams::trainable_names() {
  static const std::array<const char*, kTrainable> names{"W_q", "W_k", "W_v", "W_ag", "W_ab", "W_o"};
  return names;
}

std::array<Tensor*, EnfParams::kTrainable> EnfParams::trainable() {
  return {&W_q, &W_k, &W_v, &W_ag, &W_ab, &W_o};
}

std::array<const Tensor*, EnfParams::kTrainable> EnfParams::trainable() const {
  return {&W_q, &W_k, &W_v, &W_ag, &W_ab, &W_o};
}

EnfParams EnfParams::as_dtype(DType dtype) const {
  EnfParams p = *this;
  p.B_q = B_q.as_dtype(dtype);
  p.B_v = B_v.as_dtype(dtype);
  for (auto* t : p.trainable()) *t = t->as_dtype(dtype);
  return p;
}

void EnfParams::check_shapes(const EnfConfig& config) const {
  const std::size_t a_dim = attribute_dim(config.kind);
  expect_shape("B_q", B_q, config.rff_dim / 2, a_dim);
  expect_shape("B_v", B_v, config.rff_dim / 2, a_dim);
  expect_shape("W_q", W_q, config.d_hidden, config.rff_dim);
  expect_shape("W_k", W_k, config.d_hidden, config.d_latent);
  expect_shape("W_v", W_v, config.d_hidden, config.d_latent);
  expect_shape("W_ag", W_ag, config.d_hidden, config.rff_dim);
  expect_shape("W_ab", W_ab, config.d_hidden, config.rff_dim);
  expect_shape("W_o", W_o, config.out_channels, config.d_hidden);
}

void save_checkpoint(const std::filesystem::path& path, const EnfConfig& config, const EnfParams& params) {
  params.check_shapes(config);
  TensorArchive archive;
  archive.put_blob("config", config.to_json());
  archive.put("B_q", params.B_q);
  archive.put("B_v", params.B_v);
  const auto& names = EnfParams::trainable_names();
  const auto tensors = params.trainable();
  for (std::size_t i = 0; i < names.size(); ++i) archive.put(names[i], *tensors[i]);
  archive.save(path);
}

std::pair<EnfConfig, EnfParams> load_checkpoint(const std::filesystem::path& path) {
  const TensorArchive archive = TensorArchive::load(path);
  EnfConfig config = EnfConfig::from_json(archive.blob("config"));
  EnfParams params;
  params.B_q = archive.tensor("B_q");
  params.B_v = archive.tensor("B_v");
  const auto& names = EnfParams::trainable_names();
  auto tensors = params.trainable();
  for (std::size_t i = 0; i < names.size(); ++i) *tensors[i] = archive.tensor(names[i]);
  params.check_shapes(config);
  return {config, params};
}

ParamVars bind_params(Tape& tape, const EnfParams& params, bool trainable) {
  auto bind = [&](const Tensor& t) { return trainable ? tape.param(t) : tape.constant(t); };
  ParamVars v;
  v.W_q = bind(params.W_q);
  v.W_k = bind(params.W_k);
  v.W_v = bind(params.W_v);
  v.W_ag = bind(params.W_ag);
  v.W_ab = bind(params.W_ab);
  v.W_o = bind(params.W_o);
  v.B_q = tape.constant(params.B_q);
  v.B_v = tape.constant(params.B_v);
  return v;
}

std::vector<double> rff_embed(std::span<const double> u, const Tensor& frequencies) {
  if (frequencies.rank() != 2 || frequencies.cols() != u.size()) {
    throw DimensionError("rff_embed: frequency matrix " + shape_string(frequencies.shape()) +
                         " does not match input of length " + std::to_string(u.size()));
  }
  const std::size_t half = frequencies.rows();
  std::vector<double> out(2 * half);
  for (std::size_t f = 0; f < half; ++f) {
    double phase = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) phase += frequencies.at(f, j) * u[j];
    phase *= kTwoPi;
    out[f] = std::cos(phase);
    out[half + f] = std::sin(phase);
  }
  return out;
}

std::vector<double> value_transform(std::span<const double> a_emb, std::span<const double> context,
                                    const EnfParams& params) {
  const std::size_t dh = params.W_v.rows();
  if (params.W_v.cols() != context.size() || params.W_ag.cols() != a_emb.size() ||
      params.W_ab.cols() != a_emb.size()) {
    throw DimensionError("value_transform: context of length " + std::to_string(context.size()) +
                         " / embedding of length " + std::to_string(a_emb.size()) + " do not match W_v " +
                         shape_string(params.W_v.shape()) + ", W_ag " + shape_string(params.W_ag.shape()));
  }
  std::vector<double> out(dh);
  for (std::size_t r = 0; r < dh; ++r) {
    double v = 0.0, gamma = 0.0, beta = 0.0;
    for (std::size_t j = 0; j < context.size(); ++j) v += params.W_v.at(r, j) * context[j];
    for (std::size_t j = 0; j < a_emb.size(); ++j) {
      gamma += params.W_ag.at(r, j) * a_emb[j];
      beta += params.W_ab.at(r, j) * a_emb[j];
    }
    out[r] = v * gamma + beta;
  }
  return out;
}

std::vector<std::size_t> select_neighbours(const Tensor& coords, const Tensor& poses, std::size_t k) {
  const std::size_t m = coords.rows();
  const std::size_t n = poses.rows();
  if (k == 0 || k > n) throw ContractError("select_neighbours: k must be in [1, N]");
  std::vector<std::size_t> out;
  out.reserve(m * k);
  if (k == n) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out.push_back(j);
    }
    return out;
  }
  std::vector<std::size_t> order(n);
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < m; ++i) {
    const double x = coords.at(i, 0), y = coords.at(i, 1);
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = poses.at(j, 0) - x, dy = poses.at(j, 1) - y;
      dist[j] = dx * dx + dy * dy;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
    std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    out.insert(out.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

Var field_graph(const EnfConfig& config, const ParamVars& params, const Var& contexts, const Var& poses,
                const Tensor& coords, Var* attention) {
  Tape& tape = contexts.tape();
  const std::size_t n = contexts.shape()[0];
  if (contexts.value().rank() != 2 || contexts.shape()[1] != config.d_latent) {
    throw DimensionError("field: contexts " + shape_string(contexts.shape()) + " do not match d_latent " +
                         std::to_string(config.d_latent));
  }
  if (poses.value().rank() != 2 || poses.shape()[0] != n || poses.shape()[1] != pose_dim(config.kind)) {
    throw DimensionError("field: poses " + shape_string(poses.shape()) + " do not match a " +
                         to_string(config.kind) + " set of " + std::to_string(n) + " latents");
  }
  if (coords.rank() != 2 || coords.cols() != 2) {
    throw DimensionError("field: coordinates must be [M x 2], got " + shape_string(coords.shape()));
  }
  const std::size_t m = coords.rows();
  const std::size_t k = config.neighbours(n);
  const std::size_t heads = config.num_heads;
  const std::size_t dk = config.head_dim();

  const std::vector<std::size_t> index = select_neighbours(coords, poses.value(), k);
  std::vector<double> rep(m * k * 2);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      rep[(i * k + j) * 2] = coords.at(i, 0);
      rep[(i * k + j) * 2 + 1] = coords.at(i, 1);
    }
  }
  Var x = tape.constant(Tensor({m * k, 2}, std::move(rep), coords.dtype()));
  Var pose_rows = gather_rows(poses, index);

  Var attributes = attribute_graph(config.kind, x, pose_rows);
  Var emb_q = rff_graph(attributes, params.B_q);
  Var emb_v = rff_graph(attributes, params.B_v);

  Var queries = matmul(emb_q, params.W_q, false, true);
  Var keys = gather_rows(matmul(contexts, params.W_k, false, true), index);
  Var logits = scale(block_sum_cols(mul(queries, keys), dk), 1.0 / std::sqrt(static_cast<double>(dk)));

  Var bias;
  const double sigma = config.window_strength(n);
  if (sigma > 0.0) {
    Var offset = sub(slice_cols(pose_rows, 0, 2), x);
    Var dist2 = block_sum_cols(square(offset), 2);
    bias = heads_to_rows(repeat_cols(scale(dist2, -sigma), heads), m, k, heads);
  }
  Var att = rows_to_heads(softmax_with_bias(heads_to_rows(logits, m, k, heads), bias), m, k, heads);
  if (attention) *attention = att;

  Var gamma = matmul(emb_v, params.W_ag, false, true);
  Var beta = matmul(emb_v, params.W_ab, false, true);
  Var values = add(mul(gather_rows(matmul(contexts, params.W_v, false, true), index), gamma), beta);
  Var pooled = group_sum_rows(mul(repeat_cols(att, dk), values), k);
  return matmul(pooled, params.W_o, false, true);
}

AttentionWeights attention_weights(const Vec2& x, const LatentSet& z, const EnfParams& params,
                                   const EnfConfig& config) {
  if (z.kind != config.kind) throw KindMismatchError("attention_weights: latent kind differs from the field's");
  Tape tape(params.dtype());
  Tape::NoGradGuard guard(tape);
  const ParamVars pv = bind_params(tape, params, false);
  const Tensor coords({1, 2}, {x[0], x[1]}, params.dtype());
  Var att;
  field_graph(config, pv, tape.constant(z.context_tensor()), tape.constant(z.pose_tensor()), coords, &att);
  AttentionWeights out;
  out.indices = select_neighbours(coords, z.pose_tensor().as_dtype(params.dtype()), config.neighbours(z.size()));
  const std::size_t k = out.indices.size();
  out.weights.assign(config.num_heads, std::vector<double>(k));
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t h = 0; h < config.num_heads; ++h) out.weights[h][j] = att.value().at(j, h);
  }
  return out;
}

Tensor field_forward(const Tensor& coords, const LatentSet& z, const EnfParams& params, const EnfConfig& config) {
  if (z.kind != config.kind) {
    throw KindMismatchError(std::string("field_forward: latent kind ") + to_string(z.kind) +
                            " differs from field kind " + to_string(config.kind));
  }
  if (z.d_latent != config.d_latent) {
    throw DimensionError("field_forward: latent dim " + std::to_string(z.d_latent) + " differs from config " +
                         std::to_string(config.d_latent));
  }
  const Tensor contexts = z.context_tensor();
  const Tensor poses = z.pose_tensor();
  const std::size_t m = coords.rows();
  std::vector<double> out;
  out.reserve(m * config.out_channels);
  for (std::size_t begin = 0; begin < m; begin += kForwardChunk) {
    const std::size_t end = std::min(m, begin + kForwardChunk);
    std::vector<double> chunk(coords.data().begin() + static_cast<std::ptrdiff_t>(begin * 2),
                              coords.data().begin() + static_cast<std::ptrdiff_t>(end * 2));
    Tape tape(params.dtype());
    Tape::NoGradGuard guard(tape);
    const ParamVars pv = bind_params(tape, params, false);
    Var f = field_graph(config, pv, tape.constant(contexts), tape.constant(poses),
                        Tensor({end - begin, 2}, std::move(chunk), coords.dtype()));
    out.insert(out.end(), f.value().data().begin(), f.value().data().end());
  }
  return Tensor({m, config.out_channels}, std::move(out), params.dtype());
}

}  // namespace enf
