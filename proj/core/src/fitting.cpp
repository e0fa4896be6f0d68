#include "enf/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "enf/error.hpp"
#include "enf/metrics.hpp"
#include "enf/ops.hpp"
#include "enf/parallel.hpp"
#include "enf/tape.hpp"

namespace enf {
namespace {

using nlohmann::json;

constexpr double kDivergenceLimit = 1e6;

json parse_object(const std::string& text, const char* what, const std::set<std::string>& allowed) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
  }
  return j;
}

template <typename T>
void read_key(const json& j, const char* key, T& out, const char* what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(what) + ": bad value for '" + key + "'");
  }
}

// Coordinates for one step: the full grid in order, or a fresh uniform subset.
std::pair<Tensor, Tensor> step_coords(const Signal& s, std::size_t per_step, std::mt19937_64& rng) {
  if (per_step == 0 || per_step >= s.coords.rows()) return {s.coords, s.values};
  CoordSample sample = sample_coords(s.coords, s.values, per_step, rng);
  return {std::move(sample.coords), std::move(sample.values)};
}

std::string sample_name(const Signal& s, std::size_t index) {
  return s.id.empty() ? "#" + std::to_string(index) : s.id;
}

// Per-sample seeds drawn in order so results do not depend on scheduling.
std::vector<std::uint64_t> derive_seeds(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint64_t> out(n);
  for (auto& s : out) s = rng();
  return out;
}

Tensor cast(const Tensor& t, DType dtype) { return t.dtype() == dtype ? t : t.as_dtype(dtype); }

struct AdaptedVars {
  Var contexts;
  Var poses;
};

// n_inner SGD steps on one signal, all recorded on `tape`. With `differentiable`
// the updates stay on the graph; otherwise each step restarts from constants.
AdaptedVars adapt_on_tape(Tape& tape, const ParamVars& pv, const Signal& signal, const LatentSet& z0,
                          const EnfConfig& config, std::size_t steps, double eps_c, double eps_p,
                          std::size_t per_step, bool differentiable, std::mt19937_64& rng,
                          const std::string& name) {
  const DType dtype = tape.dtype();
  Var c = tape.param(cast(z0.context_tensor(), dtype));
  Var p = tape.param(cast(z0.pose_tensor(), dtype));
  for (std::size_t s = 0; s < steps; ++s) {
    auto [coords, targets] = step_coords(signal, per_step, rng);
    try {
      Var loss = mse(field_graph(config, pv, c, p, cast(coords, dtype)), tape.constant(cast(targets, dtype)));
      const Var wrt[] = {c, p};
      if (differentiable) {
        const std::vector<Var> g = tape.grad(loss, wrt);
        c = sub(c, scale(g[0], eps_c));
        p = sub(p, scale(g[1], eps_p));
      } else {
        const std::vector<Tensor> g = tape.gradients(loss, wrt);
        std::vector<double> cv = c.value().vec(), pvv = p.value().vec();
        for (std::size_t i = 0; i < cv.size(); ++i) cv[i] -= eps_c * g[0][i];
        for (std::size_t i = 0; i < pvv.size(); ++i) pvv[i] -= eps_p * g[1][i];
        c = tape.param(Tensor(c.shape(), std::move(cv), dtype));
        p = tape.param(Tensor(p.shape(), std::move(pvv), dtype));
      }
    } catch (const NumericError& e) {
      throw NumericError("inner step " + std::to_string(s) + " of sample " + name + ": " + e.what());
    }
  }
  return {c, p};
}

double outer_loss_limit_check(double loss, const char* where) {
  if (!std::isfinite(loss) || loss > kDivergenceLimit) {
    throw NumericError(std::string(where) + ": loss diverged (" + std::to_string(loss) + ")");
  }
  return loss;
}

}  // namespace

void MetaLearnConfig::validate() const {
  if (num_latents == 0) throw ConfigError("num_latents must be >= 1");
  if (n_inner == 0) throw ConfigError("n_inner must be >= 1");
  if (!(eps_context > 0.0)) throw ConfigError("eps_context must be > 0");
  if (!(eps_pose > 0.0)) throw ConfigError("eps_pose must be > 0");
  if (!(outer_lr >= 0.0)) throw ConfigError("outer_lr must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(pose_noise >= 0.0)) throw ConfigError("pose_noise must be >= 0");
}

std::string MetaLearnConfig::to_json() const {
  return json{{"num_latents", num_latents}, {"n_inner", n_inner},       {"eps_context", eps_context},
              {"eps_pose", eps_pose},       {"outer_lr", outer_lr},     {"second_order", second_order},
              {"batch_size", batch_size},   {"coords_per_step", coords_per_step},
              {"pose_noise", pose_noise},   {"steps", steps}}
      .dump(2);
}

MetaLearnConfig MetaLearnConfig::from_json(const std::string& text) {
  static const std::set<std::string> keys{"num_latents", "n_inner",         "eps_context", "eps_pose", "outer_lr",
                                          "second_order", "batch_size", "coords_per_step", "pose_noise", "steps"};
  const json j = parse_object(text, "meta config", keys);
  MetaLearnConfig c;
  read_key(j, "num_latents", c.num_latents, "meta config");
  read_key(j, "n_inner", c.n_inner, "meta config");
  read_key(j, "eps_context", c.eps_context, "meta config");
  read_key(j, "eps_pose", c.eps_pose, "meta config");
  read_key(j, "outer_lr", c.outer_lr, "meta config");
  read_key(j, "second_order", c.second_order, "meta config");
  read_key(j, "batch_size", c.batch_size, "meta config");
  read_key(j, "coords_per_step", c.coords_per_step, "meta config");
  read_key(j, "pose_noise", c.pose_noise, "meta config");
  read_key(j, "steps", c.steps, "meta config");
  c.validate();
  return c;
}

void AutodecodeConfig::validate() const {
  if (num_latents == 0) throw ConfigError("num_latents must be >= 1");
  if (!(latent_lr > 0.0)) throw ConfigError("latent_lr must be > 0");
  if (!(param_lr > 0.0)) throw ConfigError("param_lr must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(pose_noise >= 0.0)) throw ConfigError("pose_noise must be >= 0");
}

std::string AutodecodeConfig::to_json() const {
  return json{{"num_latents", num_latents}, {"latent_lr", latent_lr},   {"param_lr", param_lr},
              {"epochs", epochs},           {"batch_size", batch_size}, {"coords_per_step", coords_per_step},
              {"pose_noise", pose_noise}}
      .dump(2);
}

AutodecodeConfig AutodecodeConfig::from_json(const std::string& text) {
  static const std::set<std::string> keys{"num_latents", "latent_lr",       "param_lr",  "epochs",
                                          "batch_size",  "coords_per_step", "pose_noise"};
  const json j = parse_object(text, "autodecode config", keys);
  AutodecodeConfig c;
  read_key(j, "num_latents", c.num_latents, "autodecode config");
  read_key(j, "latent_lr", c.latent_lr, "autodecode config");
  read_key(j, "param_lr", c.param_lr, "autodecode config");
  read_key(j, "epochs", c.epochs, "autodecode config");
  read_key(j, "batch_size", c.batch_size, "autodecode config");
  read_key(j, "coords_per_step", c.coords_per_step, "autodecode config");
  read_key(j, "pose_noise", c.pose_noise, "autodecode config");
  c.validate();
  return c;
}

void Adam::init(std::span<const Tensor* const> params) {
  t = 0;
  m.clear();
  v.clear();
  for (const Tensor* p : params) {
    m.push_back(Tensor::zeros(p->shape(), DType::F64));
    v.push_back(Tensor::zeros(p->shape(), DType::F64));
  }
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  if (params.size() != grads.size() || params.size() != m.size()) {
    throw ContractError("adam: parameter, gradient and moment counts differ");
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->shape()) {
      throw DimensionError("adam: gradient " + shape_string(grads[i].shape()) + " for parameter " +
                           shape_string(params[i]->shape()));
    }
    auto md = m[i].mutable_data();
    auto vd = v[i].mutable_data();
    std::vector<double> updated = params[i]->vec();
    for (std::size_t j = 0; j < updated.size(); ++j) {
      const double g = grads[i][j];
      md[j] = beta1 * md[j] + (1.0 - beta1) * g;
      vd[j] = beta2 * vd[j] + (1.0 - beta2) * g * g;
      updated[j] -= lr * (md[j] / c1) / (std::sqrt(vd[j] / c2) + eps);
    }
    *params[i] = Tensor(params[i]->shape(), std::move(updated), params[i]->dtype());
  }
}

TrainState TrainState::create(const EnfConfig& config, std::uint64_t seed, DType dtype) {
  TrainState state;
  state.rng.seed(seed);
  state.params = EnfParams::init(config, state.rng(), dtype);
  const auto trainable = std::as_const(state.params).trainable();
  state.adam.init(trainable);
  return state;
}

LatentSet fresh_latents(const EnfConfig& config, std::size_t num_latents, double pose_noise, std::uint64_t seed,
                        DType dtype) {
  return make_latent_set(init_grid_poses(num_latents, config.kind, pose_noise, seed), config.d_latent, config.kind,
                         dtype);
}

std::vector<LatentSet> inner_adapt(std::span<const Signal> signals, std::span<const LatentSet> z0,
                                   const EnfParams& params, const EnfConfig& config, const MetaLearnConfig& cfg,
                                   std::uint64_t seed) {
  if (signals.size() != z0.size()) throw ContractError("inner_adapt: one latent set per signal required");
  if (cfg.eps_context < 0.0 || cfg.eps_pose < 0.0) throw ConfigError("inner step sizes must be >= 0");
  const auto seeds = derive_seeds(seed, signals.size());
  std::vector<LatentSet> out(signals.size());
  parallel_for(signals.size(), [&](std::size_t i) {
    std::mt19937_64 rng(seeds[i]);
    Tape tape(params.dtype());
    const ParamVars pv = bind_params(tape, params, false);
    const AdaptedVars a = adapt_on_tape(tape, pv, signals[i], z0[i], config, cfg.n_inner, cfg.eps_context,
                                        cfg.eps_pose, cfg.coords_per_step, false, rng, sample_name(signals[i], i));
    out[i] = LatentSet::from_tensors(config.kind, a.contexts.value(), a.poses.value(), z0[i].sample_id);
  });
  return out;
}

MetaGradients compute_meta_gradients(std::span<const Signal> batch, const EnfParams& params, const EnfConfig& config,
                                     const MetaLearnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (batch.empty()) throw ContractError("meta step: empty batch");
  const auto seeds = derive_seeds(seed, batch.size());
  std::vector<double> losses(batch.size());
  std::vector<std::vector<Tensor>> per_sample(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    std::mt19937_64 rng(seeds[i]);
    const LatentSet z0 = fresh_latents(config, cfg.num_latents, cfg.pose_noise, rng(), params.dtype());
    Tape tape(params.dtype());
    const ParamVars pv = bind_params(tape, params, true);
    const std::string name = sample_name(batch[i], i);
    const AdaptedVars a = adapt_on_tape(tape, pv, batch[i], z0, config, cfg.n_inner, cfg.eps_context, cfg.eps_pose,
                                        cfg.coords_per_step, cfg.second_order, rng, name);
    auto [coords, targets] = step_coords(batch[i], cfg.coords_per_step, rng);
    try {
      Var loss = mse(field_graph(config, pv, a.contexts, a.poses, cast(coords, tape.dtype())),
                     tape.constant(cast(targets, tape.dtype())));
      losses[i] = loss.value().item();
      const auto wrt = pv.trainable();
      per_sample[i] = tape.gradients(loss, wrt);
    } catch (const NumericError& e) {
      throw NumericError("outer loss of sample " + name + ": " + e.what());
    }
  });
  MetaGradients out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t p = 0; p < EnfParams::kTrainable; ++p) {
    std::vector<double> acc(per_sample[0][p].numel(), 0.0);
    for (const auto& g : per_sample) {
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[p][j];
    }
    for (auto& a : acc) a *= inv;
    out.grads[p] = Tensor(per_sample[0][p].shape(), std::move(acc), DType::F64);
  }
  for (double l : losses) out.loss += l;
  out.loss *= inv;
  return out;
}

double meta_train_step(std::span<const Signal> batch, TrainState& state, const EnfConfig& config,
                       const MetaLearnConfig& cfg) {
  MetaGradients g = compute_meta_gradients(batch, state.params, config, cfg, state.rng());
  outer_loss_limit_check(g.loss, "meta_train_step");
  const auto trainable = state.params.trainable();
  state.adam.step(trainable, g.grads, cfg.outer_lr);
  ++state.step;
  return g.loss;
}

LatentTable init_latent_table(std::span<const Signal> signals, const EnfConfig& config, const AutodecodeConfig& cfg,
                              std::uint64_t seed, DType dtype) {
  LatentTable table;
  const auto seeds = derive_seeds(seed, signals.size());
  for (std::size_t i = 0; i < signals.size(); ++i) {
    if (table.contains(signals[i].id)) throw ContractError("duplicate sample id '" + signals[i].id + "'");
    LatentSet z = fresh_latents(config, cfg.num_latents, cfg.pose_noise, seeds[i], dtype);
    z.sample_id = signals[i].id;
    table.emplace(signals[i].id, std::move(z));
  }
  return table;
}

double autodecode_step(std::span<const Signal> batch, LatentTable& latents, TrainState& state,
                       const EnfConfig& config, const AutodecodeConfig& cfg) {
  if (batch.empty()) throw ContractError("autodecode step: empty batch");
  for (const auto& s : batch) {
    if (!latents.contains(s.id)) throw ContractError("autodecode step: unknown sample id '" + s.id + "'");
  }
  const auto seeds = derive_seeds(state.rng(), batch.size());
  const double inv = 1.0 / static_cast<double>(batch.size());
  std::vector<double> losses(batch.size());
  std::vector<std::vector<Tensor>> grads(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    std::mt19937_64 rng(seeds[i]);
    Tape tape(state.params.dtype());
    const ParamVars pv = bind_params(tape, state.params, true);
    const LatentSet& z = latents.at(batch[i].id);
    Var c = tape.param(cast(z.context_tensor(), tape.dtype()));
    Var p = tape.param(cast(z.pose_tensor(), tape.dtype()));
    auto [coords, targets] = step_coords(batch[i], cfg.coords_per_step, rng);
    try {
      Var loss =
          mse(field_graph(config, pv, c, p, cast(coords, tape.dtype())), tape.constant(cast(targets, tape.dtype())));
      losses[i] = loss.value().item();
      const auto weights = pv.trainable();
      std::vector<Var> wrt(weights.begin(), weights.end());
      wrt.push_back(c);
      wrt.push_back(p);
      grads[i] = tape.gradients(loss, wrt);
    } catch (const NumericError& e) {
      throw NumericError("autodecode sample " + batch[i].id + ": " + e.what());
    }
  });
  double loss = 0.0;
  for (double l : losses) loss += l;
  loss *= inv;
  outer_loss_limit_check(loss, "autodecode_step");

  // The batch loss is the mean of per-sample losses, so each latent sees 1/B of
  // its own gradient.
  for (std::size_t i = 0; i < batch.size(); ++i) {
    LatentSet& z = latents.at(batch[i].id);
    const Tensor& gc = grads[i][EnfParams::kTrainable];
    const Tensor& gp = grads[i][EnfParams::kTrainable + 1];
    std::vector<double> c = z.context_tensor().vec(), p = z.pose_tensor().vec();
    for (std::size_t j = 0; j < c.size(); ++j) c[j] -= cfg.latent_lr * inv * gc[j];
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= cfg.latent_lr * inv * gp[j];
    LatentSet updated = LatentSet::from_tensors(config.kind, Tensor(gc.shape(), std::move(c), z.dtype),
                                                Tensor(gp.shape(), std::move(p), z.dtype), z.sample_id);
    z = std::move(updated);
  }
  std::vector<Tensor> mean_grads;
  for (std::size_t p = 0; p < EnfParams::kTrainable; ++p) {
    std::vector<double> acc(grads[0][p].numel(), 0.0);
    for (const auto& g : grads) {
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[p][j];
    }
    for (auto& a : acc) a *= inv;
    mean_grads.emplace_back(grads[0][p].shape(), std::move(acc), DType::F64);
  }
  const auto trainable = state.params.trainable();
  state.adam.step(trainable, mean_grads, cfg.param_lr);
  ++state.step;
  return loss;
}

ImageField reconstruct(const Signal& signal, const LatentSet& z, const EnfParams& params, const EnfConfig& config) {
  const Tensor out = field_forward(cast(signal.coords, params.dtype()), z, params, config);
  return ImageField::from_tensor(signal.height, signal.width, out.as_dtype(DType::F64));
}

double reconstruction_psnr(const Signal& signal, const LatentSet& z, const EnfParams& params,
                           const EnfConfig& config) {
  const ImageField target = ImageField::from_tensor(signal.height, signal.width, signal.values.as_dtype(DType::F64));
  return eval_psnr(reconstruct(signal, z, params, config), target);
}

FitResult fit_latents_inference(const Signal& signal, const EnfParams& params, const EnfConfig& config,
                                const InferenceConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LatentSet z = fresh_latents(config, cfg.num_latents, cfg.pose_noise, rng(), params.dtype());
  z.sample_id = signal.id;
  if (!cfg.adam) {
    Tape tape(params.dtype());
    const ParamVars pv = bind_params(tape, params, false);
    const AdaptedVars a = adapt_on_tape(tape, pv, signal, z, config, cfg.n_steps, cfg.eps_context, cfg.eps_pose,
                                        cfg.coords_per_step, false, rng, sample_name(signal, 0));
    z = LatentSet::from_tensors(config.kind, a.contexts.value(), a.poses.value(), signal.id);
  } else {
    Tensor c = z.context_tensor(), p = z.pose_tensor();
    Adam adam;
    const Tensor* init[] = {&c, &p};
    adam.init(init);
    for (std::size_t s = 0; s < cfg.n_steps; ++s) {
      Tape tape(params.dtype());
      const ParamVars pv = bind_params(tape, params, false);
      Var cv = tape.param(c), pvar = tape.param(p);
      auto [coords, targets] = step_coords(signal, cfg.coords_per_step, rng);
      Var loss = mse(field_graph(config, pv, cv, pvar, cast(coords, tape.dtype())),
                     tape.constant(cast(targets, tape.dtype())));
      const Var wrt[] = {cv, pvar};
      const std::vector<Tensor> g = tape.gradients(loss, wrt);
      Tensor* targets_[] = {&c, &p};
      adam.step(targets_, g, cfg.adam_lr);
    }
    z = LatentSet::from_tensors(config.kind, c, p, signal.id);
  }
  return {z, reconstruction_psnr(signal, z, params, config)};
}

namespace {

// Cycles through shuffled epochs of sample indices.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::mt19937_64& rng) : order_(n), batch_(std::min(batch, n)), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n;
  }
  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == order_.size()) {
        for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_() % i]);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_;
  std::mt19937_64& rng_;
};

void log_and_checkpoint(TrainState& state, double loss, const TrainHooks& hooks, const EnfConfig& config,
                        bool last) {
  LossRecord rec{state.step, loss, psnr_from_mse(loss)};
  state.history.push_back(rec);
  if (hooks.on_log && hooks.log_every > 0 && (state.step % hooks.log_every == 0 || last)) hooks.on_log(rec);
  if (hooks.checkpoint_every > 0 && !hooks.checkpoint_path.empty() &&
      (state.step % hooks.checkpoint_every == 0 || last)) {
    save_checkpoint(hooks.checkpoint_path, config, state.params);
  }
}

}  // namespace

TrainState train_meta(std::span<const Signal> signals, const EnfConfig& config, const MetaLearnConfig& cfg,
                      std::uint64_t seed, const TrainHooks& hooks, DType dtype) {
  config.validate();
  cfg.validate();
  if (signals.empty()) throw ContractError("train_meta: no signals");
  TrainState state = TrainState::create(config, seed, dtype);
  BatchSampler sampler(signals.size(), cfg.batch_size, state.rng);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    std::vector<Signal> batch;
    for (std::size_t i : sampler.next()) batch.push_back(signals[i]);
    const double loss = meta_train_step(batch, state, config, cfg);
    log_and_checkpoint(state, loss, hooks, config, s + 1 == cfg.steps);
  }
  return state;
}

std::pair<TrainState, LatentTable> train_autodecode(std::span<const Signal> signals, const EnfConfig& config,
                                                    const AutodecodeConfig& cfg, std::uint64_t seed,
                                                    const TrainHooks& hooks, DType dtype) {
  config.validate();
  cfg.validate();
  if (signals.empty()) throw ContractError("train_autodecode: no signals");
  TrainState state = TrainState::create(config, seed, dtype);
  LatentTable table = init_latent_table(signals, config, cfg, state.rng(), dtype);
  const std::size_t per_epoch = (signals.size() + cfg.batch_size - 1) / cfg.batch_size;
  BatchSampler sampler(signals.size(), cfg.batch_size, state.rng);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::vector<Signal> batch;
      for (std::size_t i : sampler.next()) batch.push_back(signals[i]);
      const double loss = autodecode_step(batch, table, state, config, cfg);
      log_and_checkpoint(state, loss, hooks, config, e + 1 == cfg.epochs && b + 1 == per_epoch);
    }
  }
  return {std::move(state), std::move(table)};
}

MetaEvaluation evaluate_meta(std::span<const Signal> signals, const EnfParams& params, const EnfConfig& config,
                             const MetaLearnConfig& cfg, std::uint64_t seed) {
  if (signals.empty()) throw ContractError("evaluate_meta: no signals");
  const auto seeds = derive_seeds(seed, signals.size());
  std::vector<LatentSet> z0;
  for (std::size_t i = 0; i < signals.size(); ++i) {
    z0.push_back(fresh_latents(config, cfg.num_latents, cfg.pose_noise, seeds[i], params.dtype()));
    z0.back().sample_id = signals[i].id;
  }
  MetaLearnConfig full = cfg;
  full.coords_per_step = 0;
  MetaEvaluation out;
  out.latents = inner_adapt(signals, z0, params, config, full, seed);
  const double inv = 1.0 / static_cast<double>(signals.size());
  for (std::size_t i = 0; i < signals.size(); ++i) {
    const Tensor target = signals[i].values.as_dtype(DType::F64);
    const Tensor before = field_forward(cast(signals[i].coords, params.dtype()), z0[i], params, config);
    const Tensor after = field_forward(cast(signals[i].coords, params.dtype()), out.latents[i], params, config);
    out.mean_mse_before += inv * mean_squared_error(before.as_dtype(DType::F64), target);
    out.mean_mse_after += inv * mean_squared_error(after.as_dtype(DType::F64), target);
    out.psnr.push_back(reconstruction_psnr(signals[i], out.latents[i], params, config));
    out.mean_psnr += inv * out.psnr.back();
  }
  return out;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out << "step,loss,psnr\n";
  out.precision(10);
  for (const auto& r : history) out << r.step << ',' << r.loss << ',' << r.psnr << '\n';
}

}  // namespace enf
