#include "enf/serve.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "enf/data.hpp"
#include "enf/error.hpp"

namespace enf {
namespace {

using nlohmann::json;

constexpr char kBase64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

ApiResponse error_response(int status, const std::string& code, const std::string& message) {
  return {status, json{{"code", code}, {"message", message}}.dump()};
}

ApiResponse not_found(const std::string& name) { return error_response(404, "not_found", "unknown set '" + name + "'"); }

// Malformed request bodies.
struct BadRequest : Error {
  using Error::Error;
};

json parse_body(const std::string& body) {
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw BadRequest("request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw BadRequest(std::string("malformed JSON: ") + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw BadRequest(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw BadRequest(std::string("bad value for field '") + key + "'");
  }
}

template <typename T>
T field_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? field<T>(j, key) : fallback;
}

json pose_json(const Pose& p) { return {{"tx", p.t[0]}, {"ty", p.t[1]}, {"theta", p.theta}}; }

ApiResponse mutation_response(const std::string& name, std::uint64_t version, const std::string& warning = {}) {
  json j{{"name", name}, {"version", version}};
  if (!warning.empty()) j["warning"] = warning;
  return {200, j.dump()};
}

// Runs a handler body, mapping malformed input to 400.
template <typename F>
ApiResponse guarded(F&& f) {
  try {
    return f();
  } catch (const BadRequest& e) {
    return error_response(400, "bad_request", e.what());
  } catch (const Error& e) {
    return error_response(422, "unprocessable", e.what());
  }
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::uint32_t b0 = bytes[i];
    const std::uint32_t b1 = i + 1 < bytes.size() ? bytes[i + 1] : 0;
    const std::uint32_t b2 = i + 2 < bytes.size() ? bytes[i + 2] : 0;
    const std::uint32_t v = (b0 << 16) | (b1 << 8) | b2;
    out.push_back(kBase64[(v >> 18) & 63]);
    out.push_back(kBase64[(v >> 12) & 63]);
    out.push_back(i + 1 < bytes.size() ? kBase64[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < bytes.size() ? kBase64[v & 63] : '=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw FormatError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t v = 0;
    int pad = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        ++pad;
        v <<= 6;
        continue;
      }
      const int d = value(c);
      if (d < 0 || pad > 0) throw FormatError("base64: invalid character");
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  return out;
}

std::vector<std::uint8_t> decode_to_ppm(const LatentSet& z, const EnfParams& params, const EnfConfig& config,
                                        std::size_t height, std::size_t width) {
  const Tensor values = field_forward(make_grid(height, width).as_dtype(params.dtype()), z, params, config);
  ImageField image = ImageField::from_tensor(height, width, values.as_dtype(DType::F64));
  if (image.channels == 1) {
    ImageField rgb(height, width, 3);
    for (std::size_t i = 0; i < image.pixels(); ++i) {
      for (std::size_t ch = 0; ch < 3; ++ch) rgb.values[i * 3 + ch] = image.values[i];
    }
    image = std::move(rgb);
  } else if (image.channels != 3) {
    throw ContractError("decode: only 1- or 3-channel fields can be shipped as P6");
  }
  return encode_ppm(image);
}

DominanceReport region_dominance(const LatentSet& a, const LatentSet& b, const HalfPlane& plane,
                                 const EnfParams& params, const EnfConfig& config, std::size_t height,
                                 std::size_t width, double min_mass) {
  const LatentSet stitched = stitch(a, b, plane.region());
  std::size_t from_a = 0;
  for (const auto& p : a.points) from_a += plane.contains(p.pose.position()) ? 1 : 0;
  const Tensor grid = make_grid(height, width).as_dtype(params.dtype());
  const Tensor fa = field_forward(grid, a, params, config);
  const Tensor fb = field_forward(grid, b, params, config);
  const Tensor fs = field_forward(grid, stitched, params, config);
  const std::size_t channels = config.out_channels;
  DominanceReport report;
  std::size_t closer = 0;
  for (std::size_t i = 0; i < grid.rows(); ++i) {
    const Vec2 x{grid.at(i, 0), grid.at(i, 1)};
    if (!plane.contains(x)) continue;
    const AttentionWeights att = attention_weights(x, stitched, params, config);
    double mass = 0.0;
    for (const auto& head : att.weights) {
      for (std::size_t j = 0; j < att.indices.size(); ++j) mass += att.indices[j] < from_a ? head[j] : 0.0;
    }
    mass /= static_cast<double>(att.weights.size());
    if (mass < min_mass) continue;
    double da = 0.0, db = 0.0, dab = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = std::clamp(fs.at(i, c), 0.0, 1.0);
      const double va = std::clamp(fa.at(i, c), 0.0, 1.0), vb = std::clamp(fb.at(i, c), 0.0, 1.0);
      da += std::abs(v - va);
      db += std::abs(v - vb);
      dab += std::abs(va - vb);
    }
    if (dab == 0.0) continue;
    ++report.counted;
    closer += da < db ? 1 : 0;
  }
  report.fraction = report.counted ? static_cast<double>(closer) / static_cast<double>(report.counted) : 0.0;
  return report;
}

SessionState::SessionState(EnfConfig config, EnfParams params, ServeOptions options)
    : config_(std::move(config)), params_(std::move(params)), options_(options) {
  config_.validate();
  params_.check_shapes(config_);
}

void SessionState::add_set(const std::string& name, LatentSet z) {
  z.validate();
  if (z.kind != config_.kind || z.d_latent != config_.d_latent) {
    throw KindMismatchError("set '" + name + "' (" + to_string(z.kind) + ", d_latent " + std::to_string(z.d_latent) +
                            ") does not match the checkpoint (" + to_string(config_.kind) + ", d_latent " +
                            std::to_string(config_.d_latent) + ")");
  }
  std::unique_lock lock(mutex_);
  sets_[name] = Entry{std::move(z), 1};
}

std::optional<LatentSet> SessionState::latents(const std::string& name) const {
  std::shared_lock lock(mutex_);
  const auto it = sets_.find(name);
  if (it == sets_.end()) return std::nullopt;
  return it->second.z;
}

std::optional<std::uint64_t> SessionState::version(const std::string& name) const {
  std::shared_lock lock(mutex_);
  const auto it = sets_.find(name);
  if (it == sets_.end()) return std::nullopt;
  return it->second.version;
}

ApiResponse SessionState::handle_health() const {
  std::shared_lock lock(mutex_);
  return {200, json{{"status", "ok"}, {"sets", sets_.size()}, {"kind", to_string(config_.kind)}}.dump()};
}

ApiResponse SessionState::handle_list() const {
  std::shared_lock lock(mutex_);
  json out = json::array();
  for (const auto& [name, entry] : sets_) {
    json poses = json::array();
    for (const auto& p : entry.z.points) poses.push_back(pose_json(p.pose));
    out.push_back({{"name", name},
                   {"N", entry.z.size()},
                   {"d_latent", entry.z.d_latent},
                   {"kind", to_string(entry.z.kind)},
                   {"version", entry.version},
                   {"poses", poses}});
  }
  return {200, out.dump()};
}

ApiResponse SessionState::handle_decode(const std::string& name, std::size_t height, std::size_t width) const {
  if (height == 0 || width == 0 || height > options_.max_resolution || width > options_.max_resolution) {
    return error_response(422, "unprocessable",
                          "resolution " + std::to_string(height) + "x" + std::to_string(width) + " outside [1, " +
                              std::to_string(options_.max_resolution) + "]");
  }
  Entry snapshot;
  {
    std::shared_lock lock(mutex_);
    const auto it = sets_.find(name);
    if (it == sets_.end()) return not_found(name);
    snapshot = it->second;
  }
  return guarded([&] {
    const auto ppm = decode_to_ppm(snapshot.z, params_, config_, height, width);
    return ApiResponse{200, json{{"name", name},
                                 {"version", snapshot.version},
                                 {"width", width},
                                 {"height", height},
                                 {"channels", config_.out_channels},
                                 {"image", base64_encode(ppm)}}
                                .dump()};
  });
}

ApiResponse SessionState::handle_transform(const std::string& body) {
  return guarded([&]() -> ApiResponse {
    const json j = parse_body(body);
    const auto name = field<std::string>(j, "name");
    const json g_json = j.contains("g") ? j.at("g") : j;
    const double tx = field_or<double>(g_json, "tx", 0.0);
    const double ty = field_or<double>(g_json, "ty", 0.0);
    const double theta = field_or<double>(g_json, "theta", 0.0);
    std::string warning;
    GroupElement g;
    if (config_.kind == BiInvariantKind::RotoTranslation) {
      g = GroupElement::roto_translation(tx, ty, theta);
    } else {
      if (theta != 0.0) warning = std::string("theta ignored: ") + to_string(config_.kind) + " latents carry no orientation";
      g = GroupElement::translation(tx, ty);
    }
    std::unique_lock lock(mutex_);
    const auto it = sets_.find(name);
    if (it == sets_.end()) return not_found(name);
    it->second.z = act_on_latent_set(g, it->second.z);
    return mutation_response(name, ++it->second.version, warning);
  });
}

ApiResponse SessionState::handle_edit(const std::string& body) {
  return guarded([&]() -> ApiResponse {
    const json j = parse_body(body);
    const auto name = field<std::string>(j, "name");
    const auto op = field<std::string>(j, "op");
    std::unique_lock lock(mutex_);
    const auto it = sets_.find(name);
    if (it == sets_.end()) return not_found(name);
    LatentSet z = it->second.z;

    if (op == "move_latent" || op == "set_context") {
      const auto index = field<long long>(j, "index");
      if (index < 0 || static_cast<std::size_t>(index) >= z.size()) {
        return error_response(422, "unprocessable",
                              "index " + std::to_string(index) + " out of range for " + std::to_string(z.size()) +
                                  " latents");
      }
      LatentPoint& point = z.points[static_cast<std::size_t>(index)];
      if (op == "move_latent") {
        const double tx = field_or<double>(j, "tx", point.pose.t[0]);
        const double ty = field_or<double>(j, "ty", point.pose.t[1]);
        const double theta = field_or<double>(j, "theta", point.pose.theta);
        const Pose moved = z.kind == BiInvariantKind::RotoTranslation ? GroupElement::roto_translation(tx, ty, theta)
                           : z.kind == BiInvariantKind::Translation   ? GroupElement::translation(tx, ty)
                                                                      : GroupElement::point(tx, ty);
        point.pose = moved;
        // Keep the set's precision.
        point.pose.t[0] = round_to(point.pose.t[0], z.dtype);
        point.pose.t[1] = round_to(point.pose.t[1], z.dtype);
        point.pose.theta = round_to(point.pose.theta, z.dtype);
      } else {
        auto vec = field<std::vector<double>>(j, "vector");
        if (vec.size() != z.d_latent) {
          return error_response(422, "unprocessable",
                                "context of length " + std::to_string(vec.size()) + ", expected " +
                                    std::to_string(z.d_latent));
        }
        for (auto& v : vec) {
          if (!std::isfinite(v)) return error_response(422, "unprocessable", "context entries must be finite");
          v = round_to(v, z.dtype);
        }
        point.context = std::move(vec);
      }
    } else if (op == "stitch") {
      const auto other_name = field<std::string>(j, "other");
      const auto other = sets_.find(other_name);
      if (other == sets_.end()) return not_found(other_name);
      if (!j.contains("region")) throw BadRequest("missing field 'region'");
      const json& r = j.at("region");
      const auto normal = field<std::vector<double>>(r, "normal");
      if (normal.size() != 2) throw BadRequest("region normal must have two entries");
      HalfPlane plane{{normal[0], normal[1]}, field<double>(r, "offset")};
      const LatentSet& b = other->second.z;
      if (b.kind != z.kind || b.d_latent != z.d_latent || b.dtype != z.dtype) {
        return error_response(409, "conflict", "cannot stitch '" + name + "' with '" + other_name +
                                                   "': kinds, latent dims or precisions differ");
      }
      LatentSet stitched;
      try {
        stitched = stitch(z, b, plane.region());
      } catch (const Error& e) {
        return error_response(409, "conflict", e.what());
      }
      const DominanceReport d = region_dominance(z, b, plane, params_, config_, options_.default_height,
                                                 options_.default_width);
      it->second.z = std::move(stitched);
      json out{{"name", name}, {"version", ++it->second.version}};
      out["dominance"] = {{"fraction", d.fraction}, {"counted", d.counted}};
      return ApiResponse{200, out.dump()};
    } else {
      throw BadRequest("unknown op '" + op + "'");
    }
    it->second.z = std::move(z);
    return mutation_response(name, ++it->second.version);
  });
}

struct HttpServer::Impl {
  SessionState& state;
  httplib::Server server;
  std::thread thread;

  explicit Impl(SessionState& s) : state(s) {}
};

namespace {

void reply(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  res.set_content(r.body, "application/json");
}

std::size_t query_size(const httplib::Request& req, const char* key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string v = req.get_param_value(key);
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos || v.size() > 9) {
    throw BadRequest(std::string("query parameter '") + key + "' must be a non-negative integer");
  }
  return static_cast<std::size_t>(std::stoul(v));
}

}  // namespace

HttpServer::HttpServer(SessionState& state, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(state)) {
  auto& srv = impl_->server;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, impl_->state.handle_health());
  });
  srv.Get("/api/sets", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, impl_->state.handle_list());
  });
  srv.Get("/api/decode", [this](const httplib::Request& req, httplib::Response& res) {
    reply(res, guarded([&] {
            if (!req.has_param("name")) throw BadRequest("missing query parameter 'name'");
            const auto& opts = impl_->state.options();
            const std::size_t res_all = query_size(req, "res", 0);
            const std::size_t h = query_size(req, "height", res_all ? res_all : opts.default_height);
            const std::size_t w = query_size(req, "width", res_all ? res_all : opts.default_width);
            return impl_->state.handle_decode(req.get_param_value("name"), h, w);
          }));
  });
  srv.Post("/api/transform", [this](const httplib::Request& req, httplib::Response& res) {
    reply(res, impl_->state.handle_transform(req.body));
  });
  srv.Post("/api/edit", [this](const httplib::Request& req, httplib::Response& res) {
    reply(res, impl_->state.handle_edit(req.body));
  });
  if (static_dir) {
    if (!srv.set_mount_point("/", static_dir->string())) {
      throw ConfigError("static directory '" + static_dir->string() + "' does not exist");
    }
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void HttpServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace enf
