#include "cli.hpp"

#include <algorithm>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "enf/checks.hpp"
#include "enf/data.hpp"
#include "enf/downstream.hpp"
#include "enf/error.hpp"
#include "enf/field.hpp"
#include "enf/fitting.hpp"
#include "enf/latents.hpp"
#include "enf/metrics.hpp"
#include "enf/serve.hpp"

namespace enf::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// Merged training configuration: JSON file first, then command-line overrides.
struct RunConfig {
  std::uint64_t seed = 0;
  EnfConfig enf;
  MetaLearnConfig meta;
  AutodecodeConfig autodecode;
  std::string manifest;
  std::size_t holdout = 0;
  std::string checkpoint = "model.enfc";
  std::string latents = "latents.enfl";
  std::string log = "loss.csv";
  std::size_t log_every = 50;
  std::size_t checkpoint_every = 0;
  DType dtype = DType::F32;

  static RunConfig from_file(const std::string& path) {
    RunConfig rc;
    if (path.empty()) return rc;
    json j;
    try {
      j = json::parse(read_text(path));
    } catch (const json::exception& e) {
      throw ConfigError("config '" + path + "': " + e.what());
    }
    static const std::set<std::string> top{"seed", "enf", "meta", "autodecode", "data", "output", "precision"};
    for (const auto& [key, _] : j.items()) {
      if (!top.contains(key)) throw ConfigError("config: unknown key '" + key + "'");
    }
    try {
      if (j.contains("seed")) rc.seed = j["seed"].get<std::uint64_t>();
      if (j.contains("enf")) rc.enf = EnfConfig::from_json(j["enf"].dump());
      if (j.contains("meta")) rc.meta = MetaLearnConfig::from_json(j["meta"].dump());
      if (j.contains("autodecode")) rc.autodecode = AutodecodeConfig::from_json(j["autodecode"].dump());
      if (j.contains("data")) {
        for (const auto& [key, value] : j["data"].items()) {
          if (key == "manifest") {
            rc.manifest = value.get<std::string>();
          } else if (key == "holdout") {
            rc.holdout = value.get<std::size_t>();
          } else {
            throw ConfigError("config: unknown key 'data." + key + "'");
          }
        }
      }
      if (j.contains("output")) {
        for (const auto& [key, value] : j["output"].items()) {
          if (key == "checkpoint") {
            rc.checkpoint = value.get<std::string>();
          } else if (key == "latents") {
            rc.latents = value.get<std::string>();
          } else if (key == "log") {
            rc.log = value.get<std::string>();
          } else if (key == "log_every") {
            rc.log_every = value.get<std::size_t>();
          } else if (key == "checkpoint_every") {
            rc.checkpoint_every = value.get<std::size_t>();
          } else {
            throw ConfigError("config: unknown key 'output." + key + "'");
          }
        }
      }
      if (j.contains("precision")) {
        const auto p = j["precision"].get<std::string>();
        if (p != "f32" && p != "f64") throw ConfigError("config: 'precision' must be \"f32\" or \"f64\"");
        rc.dtype = p == "f64" ? DType::F64 : DType::F32;
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    return rc;
  }

  void validate() const {
    enf.validate();
    meta.validate();
    autodecode.validate();
    if (manifest.empty()) throw ConfigError("data.manifest is required");
  }
};

struct Dataset {
  std::vector<Signal> train;
  std::vector<Signal> holdout;
  std::map<std::string, int> labels;
};

Dataset load_dataset(const std::string& manifest, std::size_t holdout, DType dtype) {
  const auto corpus = load_corpus(manifest);
  if (holdout >= corpus.size()) throw ConfigError("data.holdout must leave at least one training sample");
  Dataset d;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Signal s = to_signal(corpus[i].image, corpus[i].id, dtype);
    (i + holdout < corpus.size() ? d.train : d.holdout).push_back(std::move(s));
    d.labels[corpus[i].id] = corpus[i].label;
  }
  return d;
}

LatentSet select_set(const std::vector<LatentSet>& sets, const std::string& sample, std::size_t index) {
  if (!sample.empty()) {
    for (const auto& z : sets) {
      if (z.sample_id && *z.sample_id == sample) return z;
    }
    throw ConfigError("no latent set with sample id '" + sample + "'");
  }
  if (index >= sets.size()) {
    throw ConfigError("index " + std::to_string(index) + " out of range (" + std::to_string(sets.size()) + " sets)");
  }
  return sets[index];
}

std::vector<int> labels_for(const std::vector<LatentSet>& sets, const std::map<std::string, int>& labels) {
  std::vector<int> out;
  for (const auto& z : sets) {
    if (!z.sample_id || !labels.contains(*z.sample_id)) {
      throw ConfigError("latent set '" + z.sample_id.value_or("?") + "' has no label in the manifest");
    }
    out.push_back(labels.at(*z.sample_id));
  }
  return out;
}

std::map<std::string, int> manifest_labels(const std::string& manifest) {
  std::map<std::string, int> out;
  for (const auto& e : read_manifest(manifest).samples) out[fs::path(e.path).stem().string()] = e.label;
  return out;
}

void save_image(const ImageField& image, const fs::path& path) {
  if (path.extension() == ".ppm" && image.channels == 1) {
    ImageField rgb(image.height, image.width, 3);
    for (std::size_t i = 0; i < image.pixels(); ++i) {
      for (std::size_t c = 0; c < 3; ++c) rgb.values[i * 3 + c] = image.values[i];
    }
    save_ppm(rgb, path);
  } else {
    save_ppm(image, path);
  }
}

TrainHooks make_hooks(const RunConfig& rc, std::ostream& out) {
  TrainHooks hooks;
  hooks.log_every = rc.log_every;
  hooks.on_log = [&out](const LossRecord& r) {
    out << "step " << r.step << " loss " << r.loss << " psnr " << format_psnr(r.psnr) << '\n';
  };
  hooks.checkpoint_every = rc.checkpoint_every;
  hooks.checkpoint_path = rc.checkpoint;
  return hooks;
}

struct Cli {
  CLI::App app{"Equivariant neural fields: fit, edit and classify latent point clouds", "enf"};
  std::ostream& out;
  std::ostream& err;
  std::function<int()> action;

  // Shared option storage.
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string config_path, manifest, ckpt, latents, out_path, image, target, recon, a_path, b_path, sample, kind_name,
      model = "mpnn", static_dir, host = "127.0.0.1", test_latents, clf;
  std::size_t n = 64, res = 16, height = 0, width = 0, channels = 1, index = 0, index_b = 0, steps = 0,
              num_latents = 9, epochs = 200, hidden = 32, layers = 2, max_res = 256, holdout = 0;
  std::optional<std::size_t> steps_opt;
  double tx = 0.0, ty = 0.0, theta = 0.0, nx = 1.0, ny = 0.0, offset = 0.0, eps_context = 30.0, eps_pose = 1.0,
         lr = 3e-3, adam_lr = 1e-2, test_fraction = 0.25;
  bool adam = false;
  int port = 8080;
  std::vector<std::string> latent_files;

  Cli(std::ostream& o, std::ostream& e) : out(o), err(e) {
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for all subcommands");
    add_synth();
    add_fit_meta();
    add_fit_auto();
    add_encode();
    add_decode();
    add_transform();
    add_stitch();
    add_eval_psnr();
    add_gradcheck();
    add_proptest();
    add_train_classifier();
    add_classify();
    add_serve();
  }

  CLI::App* sub(const std::string& name, const std::string& help, std::function<int()> fn) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--seed", seed, "Random seed")->each([this](const std::string&) { seed_set = true; });
    s->callback([this, fn] { action = fn; });
    return s;
  }

  void add_synth() {
    auto* s = sub("synth-data", "Write a pose-augmented synthetic shape corpus", [this] {
      SynthOptions opts;
      opts.channels = channels;
      const auto samples = synth_shapes(n, res, seed, opts);
      const auto manifest_out = write_corpus(out_path, samples);
      out << "wrote " << manifest_out.samples.size() << " samples to " << out_path << '\n';
      return 0;
    });
    s->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
    s->add_option("--res", res, "Resolution (square)")->check(CLI::PositiveNumber);
    s->add_option("--channels", channels, "1 (gray) or 3 (RGB)")->check(CLI::IsMember({1, 3}));
    s->add_option("--out", out_path, "Output directory")->required();
  }

  RunConfig run_config() {
    RunConfig rc = RunConfig::from_file(config_path);
    if (seed_set) rc.seed = seed;
    if (!manifest.empty()) rc.manifest = manifest;
    if (holdout) rc.holdout = holdout;
    if (!ckpt.empty()) rc.checkpoint = ckpt;
    if (!latents.empty()) rc.latents = latents;
    if (steps_opt) {
      rc.meta.steps = *steps_opt;
      rc.autodecode.epochs = *steps_opt;
    }
    rc.validate();
    return rc;
  }

  void training_options(CLI::App* s) {
    s->add_option("--config", config_path, "JSON run configuration");
    s->add_option("--data", manifest, "Dataset manifest.json (overrides data.manifest)");
    s->add_option("--holdout", holdout, "Trailing samples held out for evaluation");
    s->add_option("--out-ckpt", ckpt, "Checkpoint path (.enfc)");
    s->add_option("--out-latents", latents, "Latent output path (.enfl)");
    s->add_option("--steps", steps_opt, "Outer steps (fit-meta) or epochs (fit-auto)");
  }

  void add_fit_meta() {
    auto* s = sub("fit-meta", "Meta-learn field weights; writes checkpoint, latents and loss log", [this] {
      const RunConfig rc = run_config();
      const Dataset d = load_dataset(rc.manifest, rc.holdout, rc.dtype);
      TrainState state = train_meta(d.train, rc.enf, rc.meta, rc.seed, make_hooks(rc, out), rc.dtype);
      save_checkpoint(rc.checkpoint, rc.enf, state.params);
      write_loss_csv(rc.log, state.history);
      const MetaEvaluation train_eval = evaluate_meta(d.train, state.params, rc.enf, rc.meta, rc.seed + 1);
      save_latents(rc.latents, train_eval.latents);
      out << "train_psnr " << format_psnr(train_eval.mean_psnr) << '\n';
      if (!d.holdout.empty()) {
        const MetaEvaluation h = evaluate_meta(d.holdout, state.params, rc.enf, rc.meta, rc.seed + 2);
        out << "heldout_psnr " << format_psnr(h.mean_psnr) << '\n';
      }
      return 0;
    });
    training_options(s);
  }

  void add_fit_auto() {
    auto* s = sub("fit-auto", "Autodecode field weights and per-sample latents", [this] {
      const RunConfig rc = run_config();
      const Dataset d = load_dataset(rc.manifest, rc.holdout, rc.dtype);
      auto [state, table] = train_autodecode(d.train, rc.enf, rc.autodecode, rc.seed, make_hooks(rc, out), rc.dtype);
      save_checkpoint(rc.checkpoint, rc.enf, state.params);
      write_loss_csv(rc.log, state.history);
      std::vector<LatentSet> sets;
      double psnr = 0.0;
      for (const auto& s : d.train) {
        sets.push_back(table.at(s.id));
        psnr += reconstruction_psnr(s, sets.back(), state.params, rc.enf) / static_cast<double>(d.train.size());
      }
      save_latents(rc.latents, sets);
      out << "train_psnr " << format_psnr(psnr) << '\n';
      return 0;
    });
    training_options(s);
  }

  void add_encode() {
    auto* s = sub("encode", "Fit latents to images with frozen weights", [this] {
      const auto [config, params] = load_checkpoint(ckpt);
      std::vector<Signal> signals;
      if (!image.empty()) {
        signals.push_back(to_signal(load_ppm(image), fs::path(image).stem().string(), params.dtype()));
      } else if (!manifest.empty()) {
        for (const auto& item : load_corpus(manifest)) signals.push_back(to_signal(item.image, item.id, params.dtype()));
      } else {
        throw ConfigError("encode needs --image or --data");
      }
      InferenceConfig ic;
      ic.num_latents = num_latents;
      ic.n_steps = steps_opt.value_or(3);
      ic.eps_context = eps_context;
      ic.eps_pose = eps_pose;
      ic.adam = adam;
      ic.adam_lr = adam_lr;
      std::vector<LatentSet> sets;
      std::mt19937_64 rng(seed);
      double psnr = 0.0;
      for (const auto& sig : signals) {
        FitResult r = fit_latents_inference(sig, params, config, ic, rng());
        psnr += r.psnr / static_cast<double>(signals.size());
        sets.push_back(std::move(r.latents));
      }
      save_latents(out_path, sets);
      out << "encoded " << sets.size() << " signals, mean_psnr " << format_psnr(psnr) << '\n';
      return 0;
    });
    s->add_option("--ckpt", ckpt, "Checkpoint (.enfc)")->required();
    s->add_option("--image", image, "Single PPM/PGM image");
    s->add_option("--data", manifest, "Dataset manifest.json");
    s->add_option("--out", out_path, "Latent output (.enfl)")->required();
    s->add_option("--steps", steps_opt, "Optimization steps (default 3)");
    s->add_option("--num-latents", num_latents, "Latents per set")->check(CLI::PositiveNumber);
    s->add_option("--eps-context", eps_context, "SGD step size for contexts");
    s->add_option("--eps-pose", eps_pose, "SGD step size for poses");
    s->add_flag("--adam", adam, "Use Adam on the latents");
    s->add_option("--adam-lr", adam_lr, "Adam learning rate");
  }

  void add_decode() {
    auto* s = sub("decode", "Decode a latent set at any resolution", [this] {
      const auto [config, params] = load_checkpoint(ckpt);
      const LatentSet z = select_set(load_latents(latents), sample, index);
      const std::size_t h = height ? height : res, w = width ? width : res;
      const Tensor values = field_forward(make_grid(h, w).as_dtype(params.dtype()), z, params, config);
      save_image(ImageField::from_tensor(h, w, values.as_dtype(DType::F64)), out_path);
      out << "wrote " << h << "x" << w << " decode to " << out_path << '\n';
      return 0;
    });
    s->add_option("--ckpt", ckpt, "Checkpoint (.enfc)")->required();
    s->add_option("--latents", latents, "Latent file (.enfl)")->required();
    s->add_option("--index", index, "Set index within the file");
    s->add_option("--sample", sample, "Select the set by sample id");
    s->add_option("--res", res, "Square resolution")->check(CLI::PositiveNumber);
    s->add_option("--height", height, "Height (overrides --res)");
    s->add_option("--width", width, "Width (overrides --res)");
    s->add_option("--out", out_path, "Output image (.ppm = P6, .pgm = P5)")->required();
  }

  void add_transform() {
    auto* s = sub("transform", "Apply a group element to every set in a latent file", [this] {
      std::vector<LatentSet> sets = load_latents(latents);
      bool warned = false;
      for (auto& z : sets) {
        const GroupElement g = z.kind == BiInvariantKind::RotoTranslation ? GroupElement::roto_translation(tx, ty, theta)
                                                                          : GroupElement::translation(tx, ty);
        if (z.kind != BiInvariantKind::RotoTranslation && theta != 0.0 && !warned) {
          warned = true;
          err << "warning: theta ignored for " << to_string(z.kind) << " latents\n";
        }
        z = act_on_latent_set(g, z);
      }
      save_latents(out_path, sets);
      out << "transformed " << sets.size() << " sets\n";
      return 0;
    });
    s->add_option("--latents", latents, "Input latent file")->required();
    s->add_option("--out", out_path, "Output latent file")->required();
    s->add_option("--tx", tx, "Translation x");
    s->add_option("--ty", ty, "Translation y");
    s->add_option("--theta", theta, "Rotation (radians)");
  }

  void add_stitch() {
    auto* s = sub("stitch", "Combine two latent sets across a half-plane {x : n.x < offset}", [this] {
      const LatentSet za = select_set(load_latents(a_path), "", index);
      const LatentSet zb = select_set(load_latents(b_path), "", index_b);
      const HalfPlane plane{{nx, ny}, offset};
      save_latents(out_path, {stitch(za, zb, plane.region())});
      out << "stitched set written to " << out_path << '\n';
      return 0;
    });
    s->add_option("--a", a_path, "Latents kept inside the half-plane")->required();
    s->add_option("--b", b_path, "Latents kept outside the half-plane")->required();
    s->add_option("--index-a", index, "Set index in --a");
    s->add_option("--index-b", index_b, "Set index in --b");
    s->add_option("--nx", nx, "Half-plane normal x");
    s->add_option("--ny", ny, "Half-plane normal y");
    s->add_option("--offset", offset, "Half-plane offset");
    s->add_option("--out", out_path, "Output latent file")->required();
  }

  void add_eval_psnr() {
    auto* s = sub("eval-psnr", "PSNR of a reconstruction against a target image", [this] {
      out << format_psnr(eval_psnr(load_ppm(recon), load_ppm(target))) << '\n';
      return 0;
    });
    s->add_option("--recon", recon, "Reconstruction image")->required();
    s->add_option("--target", target, "Target image")->required();
  }

  void add_gradcheck() {
    auto* s = sub("gradcheck", "Finite-difference check of the full ENF loss (64-bit)", [this] {
      const auto kind = kind_name.empty() ? BiInvariantKind::RotoTranslation : parse_bi_invariant_kind(kind_name);
      const GradCheckReport r = enf_gradcheck(seed, kind);
      out << "max_rel_error " << r.max_error << '\n';
      return r.max_error < 1e-4 ? 0 : 1;
    });
    s->add_option("--kind", kind_name, "None | Translation | RotoTranslation");
  }

  void add_proptest() {
    sub("proptest", "Run the invariant suites", [this] {
      bool ok = true;
      for (const auto& r : run_property_suite(seed)) {
        out << (r.passed() ? "PASS " : "FAIL ") << r.name << " value=" << r.value << (r.below ? " < " : " > ")
            << r.threshold << '\n';
        ok = ok && r.passed();
      }
      return ok ? 0 : 1;
    });
  }

  void add_train_classifier() {
    auto* s = sub("train-classifier", "Train a latent-set classifier", [this] {
      const auto labels = manifest_labels(manifest);
      std::vector<LatentSet> train = load_latents(latents), test;
      if (!test_latents.empty()) {
        test = load_latents(test_latents);
      } else {
        const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(train.size()));
        test.assign(train.end() - static_cast<std::ptrdiff_t>(n_test), train.end());
        train.resize(train.size() - n_test);
      }
      if (train.empty()) throw ConfigError("no training latents");
      MpnnConfig mc;
      mc.model = model == "mean_context" ? ClassifierKind::MeanContext : ClassifierKind::Mpnn;
      mc.kind = train.front().kind;
      mc.d_latent = train.front().d_latent;
      mc.n_layers = layers;
      mc.d_node_hidden = hidden;
      int max_label = 0;
      for (const auto& [_, l] : labels) max_label = std::max(max_label, l);
      mc.n_classes = static_cast<std::size_t>(max_label) + 1;
      ClassifierTrainConfig tc;
      tc.epochs = epochs;
      tc.lr = lr;
      tc.seed = seed;
      const auto trained = train_classifier(train, labels_for(train, labels), test, labels_for(test, labels), mc, tc);
      save_classifier(out_path, mc, trained.params);
      out << "train_accuracy " << trained.report.train_accuracy << "\ntest_accuracy " << trained.report.test_accuracy
          << '\n';
      return 0;
    });
    s->add_option("--latents", latents, "Training latents (.enfl)")->required();
    s->add_option("--data", manifest, "Manifest with labels")->required();
    s->add_option("--test-latents", test_latents, "Held-out latents (default: split off --test-fraction)");
    s->add_option("--test-fraction", test_fraction, "Trailing fraction held out");
    s->add_option("--model", model, "mpnn | mean_context")->check(CLI::IsMember({"mpnn", "mean_context"}));
    s->add_option("--epochs", epochs, "Training epochs");
    s->add_option("--lr", lr, "Adam learning rate");
    s->add_option("--hidden", hidden, "Node hidden width");
    s->add_option("--layers", layers, "Message-passing layers");
    s->add_option("--out", out_path, "Classifier checkpoint")->required();
  }

  void add_classify() {
    auto* s = sub("classify", "Predict classes for latent sets", [this] {
      const auto [config, params] = load_classifier(clf);
      const auto sets = load_latents(latents);
      std::vector<int> labels;
      if (!manifest.empty()) labels = labels_for(sets, manifest_labels(manifest));
      write_predictions_csv(out_path, sets, labels, params, config);
      if (!labels.empty()) out << "accuracy " << accuracy(sets, labels, params, config) << '\n';
      out << "wrote " << sets.size() << " predictions to " << out_path << '\n';
      return 0;
    });
    s->add_option("--clf", clf, "Classifier checkpoint")->required();
    s->add_option("--latents", latents, "Latent file")->required();
    s->add_option("--data", manifest, "Manifest with labels (optional)");
    s->add_option("--out", out_path, "Predictions CSV")->required();
  }

  void add_serve() {
    auto* s = sub("serve", "Serve the latent editor API", [this] {
      auto [config, params] = load_checkpoint(ckpt);
      ServeOptions opts;
      opts.max_resolution = max_res;
      SessionState state(config, params, opts);
      for (const auto& file : latent_files) {
        const auto sets = load_latents(file);
        const std::string stem = fs::path(file).stem().string();
        for (std::size_t i = 0; i < sets.size(); ++i) {
          state.add_set(sets.size() == 1 ? stem : stem + "/" + std::to_string(i), sets[i]);
        }
      }
      HttpServer server(state, static_dir.empty() ? std::nullopt : std::optional<fs::path>(static_dir));
      out << "serving on http://" << host << ":" << port << '\n' << std::flush;
      server.listen(host, port);
      return 0;
    });
    s->add_option("--ckpt", ckpt, "Checkpoint (.enfc)")->required();
    s->add_option("--latents", latent_files, "Latent files to load")->expected(0, -1);
    s->add_option("--host", host, "Bind address");
    s->add_option("--port", port, "Port");
    s->add_option("--static", static_dir, "Directory served at /");
    s->add_option("--max-res", max_res, "Largest decode extent");
  }
};

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Cli cli(out, err);
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    cli.app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &cli.app;
    for (const auto* s : cli.app.get_subcommands()) target = s;
    out << target->help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << cli.app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << cli.app.help();
    return 2;
  }
  try {
    return cli.action ? cli.action() : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace enf::cli
