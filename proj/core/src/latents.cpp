#include "enf/latents.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "enf/enft.hpp"
#include "enf/error.hpp"

namespace enf {
namespace {

Pose make_pose(BiInvariantKind kind, double x, double y, double theta = 0.0) {
  switch (kind) {
    case BiInvariantKind::None: return GroupElement::point(x, y);
    case BiInvariantKind::Translation: return GroupElement::translation(x, y);
    case BiInvariantKind::RotoTranslation: return GroupElement::roto_translation(x, y, theta);
  }
  return GroupElement::point(x, y);
}

void require_compatible(const LatentSet& a, const LatentSet& b, const char* op) {
  if (a.kind != b.kind) {
    throw KindMismatchError(std::string(op) + ": kinds " + to_string(a.kind) + " and " + to_string(b.kind) +
                            " differ");
  }
  if (a.d_latent != b.d_latent) {
    throw ContractError(std::string(op) + ": d_latent " + std::to_string(a.d_latent) + " vs " +
                        std::to_string(b.d_latent));
  }
}

}  // namespace

void LatentSet::validate() const {
  if (points.empty()) throw ContractError("latent set must hold at least one point");
  if (d_latent == 0) throw ContractError("latent set d_latent must be positive");
  const GroupKind expected = pose_kind(kind);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].context.size() != d_latent) {
      throw ContractError("latent " + std::to_string(i) + " has context length " +
                          std::to_string(points[i].context.size()) + ", expected " + std::to_string(d_latent));
    }
    if (points[i].pose.kind != expected) {
      throw KindMismatchError("latent " + std::to_string(i) + " has pose kind " + to_string(points[i].pose.kind) +
                              ", expected " + to_string(expected));
    }
  }
}

Tensor LatentSet::context_tensor() const {
  validate();
  std::vector<double> data;
  data.reserve(points.size() * d_latent);
  for (const auto& p : points) data.insert(data.end(), p.context.begin(), p.context.end());
  return Tensor({points.size(), d_latent}, std::move(data), dtype);
}

Tensor LatentSet::pose_tensor() const {
  validate();
  const std::size_t pd = pose_dim(kind);
  std::vector<double> data;
  data.reserve(points.size() * pd);
  for (const auto& p : points) {
    data.push_back(p.pose.t[0]);
    data.push_back(p.pose.t[1]);
    if (pd == 3) data.push_back(p.pose.theta);
  }
  return Tensor({points.size(), pd}, std::move(data), dtype);
}

LatentSet LatentSet::from_tensors(BiInvariantKind kind, const Tensor& contexts, const Tensor& poses,
                                  std::optional<std::string> sample_id) {
  const std::size_t pd = pose_dim(kind);
  if (contexts.rank() != 2 || poses.rank() != 2 || poses.cols() != pd || contexts.rows() != poses.rows()) {
    throw DimensionError("from_tensors: contexts " + shape_string(contexts.shape()) + " and poses " +
                         shape_string(poses.shape()) + " do not describe a " + to_string(kind) + " latent set");
  }
  LatentSet z;
  z.kind = kind;
  z.d_latent = contexts.cols();
  z.sample_id = std::move(sample_id);
  z.dtype = contexts.dtype();
  for (std::size_t i = 0; i < contexts.rows(); ++i) {
    LatentPoint p;
    p.context.assign(contexts.data().begin() + static_cast<std::ptrdiff_t>(i * z.d_latent),
                     contexts.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * z.d_latent));
    // Canonicalizing may step outside the f32 lattice; keep the set's precision.
    const double theta = pd == 3 ? round_to(canonical_angle(poses.at(i, 2)), z.dtype) : 0.0;
    p.pose = make_pose(kind, poses.at(i, 0), poses.at(i, 1));
    p.pose.theta = theta;
    z.points.push_back(std::move(p));
  }
  z.validate();
  return z;
}

std::vector<Pose> init_grid_poses(std::size_t n, BiInvariantKind kind, double noise_std, std::uint64_t seed) {
  if (n == 0) throw ContractError("init_grid_poses: N must be positive");
  if (noise_std < 0.0) throw ContractError("init_grid_poses: noise_std must be non-negative");
  std::size_t rows = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (rows > 1 && n % rows != 0) --rows;
  const std::size_t cols = n / rows;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Pose> poses;
  poses.reserve(n);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double x = -1.0 + (2.0 * static_cast<double>(c) + 1.0) / static_cast<double>(cols);
      double y = -1.0 + (2.0 * static_cast<double>(r) + 1.0) / static_cast<double>(rows);
      if (noise_std > 0.0) {
        x += noise_std * noise(rng);
        y += noise_std * noise(rng);
      }
      poses.push_back(make_pose(kind, x, y));
    }
  }
  return poses;
}

std::vector<Pose> init_fps_poses(std::size_t n, const std::vector<Vec2>& candidates, std::uint64_t seed,
                                 BiInvariantKind kind) {
  if (candidates.empty()) throw ContractError("init_fps_poses: empty candidate set");
  if (n == 0 || n > candidates.size()) {
    throw ContractError("init_fps_poses: cannot pick " + std::to_string(n) + " of " +
                        std::to_string(candidates.size()) + " candidates");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> first(0, candidates.size() - 1);
  std::vector<double> min_dist(candidates.size(), std::numeric_limits<double>::infinity());
  std::vector<char> taken(candidates.size(), 0);
  std::vector<Pose> out;
  std::size_t pick = first(rng);
  for (std::size_t k = 0; k < n; ++k) {
    taken[pick] = 1;
    out.push_back(make_pose(kind, candidates[pick][0], candidates[pick][1]));
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const double dx = candidates[i][0] - candidates[pick][0];
      const double dy = candidates[i][1] - candidates[pick][1];
      min_dist[i] = std::min(min_dist[i], dx * dx + dy * dy);
    }
    double best = -1.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (!taken[i] && min_dist[i] > best) {
        best = min_dist[i];
        pick = i;
      }
    }
  }
  return out;
}

LatentSet make_latent_set(const std::vector<Pose>& poses, std::size_t d_latent, BiInvariantKind kind,
                          DType dtype) {
  LatentSet z;
  z.d_latent = d_latent;
  z.kind = kind;
  z.dtype = dtype;
  for (const auto& p : poses) {
    LatentPoint lp;
    lp.pose = p;
    lp.pose.t[0] = round_to(p.t[0], dtype);
    lp.pose.t[1] = round_to(p.t[1], dtype);
    lp.context.assign(d_latent, 0.0);
    z.points.push_back(std::move(lp));
  }
  z.validate();
  return z;
}

LatentSet stitch(const LatentSet& a, const LatentSet& b, const Region& region) {
  require_compatible(a, b, "stitch");
  LatentSet out;
  out.d_latent = a.d_latent;
  out.kind = a.kind;
  out.dtype = a.dtype;
  out.sample_id = a.sample_id;
  for (const auto& p : a.points) {
    if (region(p.pose.position())) out.points.push_back(p);
  }
  for (const auto& p : b.points) {
    if (!region(p.pose.position())) out.points.push_back(p);
  }
  if (out.points.empty()) throw ContractError("stitch: region selects no latents from either set");
  return out;
}

LatentSet act_on_latent_set(const GroupElement& g, const LatentSet& z) {
  LatentSet out = z;
  for (auto& p : out.points) p.pose = act_on_pose(g, p.pose);
  return out;
}

void save_latents(const std::filesystem::path& path, const std::vector<LatentSet>& sets) {
  TensorArchive archive;
  archive.put_blob("meta", nlohmann::json{{"format", "enfl"}, {"count", sets.size()}}.dump());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const LatentSet& z = sets[i];
    z.validate();
    const std::string prefix = std::to_string(i) + "/";
    nlohmann::json meta{{"kind", to_string(z.kind)}, {"d_latent", z.d_latent}, {"n", z.size()}};
    meta["sample_id"] = z.sample_id ? nlohmann::json(*z.sample_id) : nlohmann::json(nullptr);
    bool any_scale = false;
    nlohmann::json scales = nlohmann::json::array();
    for (const auto& p : z.points) {
      any_scale = any_scale || p.window_scale.has_value();
      scales.push_back(p.window_scale ? nlohmann::json(*p.window_scale) : nlohmann::json(nullptr));
    }
    if (any_scale) meta["window_scale"] = scales;
    archive.put_blob(prefix + "meta", meta.dump());
    archive.put_blob(prefix + "pose_kind", std::string(1, static_cast<char>(pose_kind(z.kind))));
    archive.put(prefix + "context", z.context_tensor());
    archive.put(prefix + "pose", z.pose_tensor());
  }
  archive.save(path);
}

std::vector<LatentSet> load_latents(const std::filesystem::path& path) {
  const TensorArchive archive = TensorArchive::load(path);
  nlohmann::json top;
  try {
    top = nlohmann::json::parse(archive.blob("meta"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("latent file: bad metadata: " + std::string(e.what()));
  }
  if (top.value("format", "") != "enfl") throw FormatError("latent file: not an .enfl archive");
  const std::size_t count = top.value("count", std::size_t{0});
  std::vector<LatentSet> sets;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string prefix = std::to_string(i) + "/";
    const std::string& kind_blob = archive.blob(prefix + "pose_kind");
    if (kind_blob.size() != 1) throw FormatError("latent file: pose kind must be one byte");
    const auto kind_byte = static_cast<std::uint8_t>(kind_blob[0]);
    if (kind_byte > static_cast<std::uint8_t>(GroupKind::RotoTranslation2)) {
      throw FormatError("latent file: unknown pose kind byte " + std::to_string(kind_byte));
    }
    nlohmann::json meta;
    BiInvariantKind kind{};
    std::size_t d_latent = 0;
    std::optional<std::string> sample_id;
    try {
      meta = nlohmann::json::parse(archive.blob(prefix + "meta"));
      kind = parse_bi_invariant_kind(meta.at("kind").get<std::string>());
      d_latent = meta.at("d_latent").get<std::size_t>();
      if (!meta.at("sample_id").is_null()) sample_id = meta.at("sample_id").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("latent file: bad set metadata: " + std::string(e.what()));
    } catch (const ConfigError& e) {
      throw FormatError(std::string("latent file: ") + e.what());
    }
    if (static_cast<std::uint8_t>(pose_kind(kind)) != kind_byte) {
      throw FormatError("latent file: pose kind byte " + std::to_string(kind_byte) + " disagrees with kind " +
                        to_string(kind));
    }
    const Tensor& contexts = archive.tensor(prefix + "context");
    const Tensor& poses = archive.tensor(prefix + "pose");
    if (contexts.rank() != 2 || contexts.cols() != d_latent) {
      throw FormatError("latent file: d_latent " + std::to_string(d_latent) + " disagrees with context tensor " +
                        shape_string(contexts.shape()));
    }
    LatentSet z = LatentSet::from_tensors(kind, contexts, poses, sample_id);
    if (meta.contains("window_scale")) {
      const auto& scales = meta["window_scale"];
      if (!scales.is_array() || scales.size() != z.size()) throw FormatError("latent file: bad window_scale list");
      for (std::size_t k = 0; k < z.size(); ++k) {
        if (!scales[k].is_null()) z.points[k].window_scale = scales[k].get<double>();
      }
    }
    sets.push_back(std::move(z));
  }
  return sets;
}

}  // namespace enf
