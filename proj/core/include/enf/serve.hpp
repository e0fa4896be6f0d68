#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "enf/field.hpp"
#include "enf/latents.hpp"

namespace enf {

struct ServeOptions {
  std::size_t max_resolution = 256;
  std::size_t default_height = 32;
  std::size_t default_width = 32;
};

/// Status code plus JSON body. Errors carry {"code", "message"}.
struct ApiResponse {
  int status = 200;
  std::string body;
};

/// Checkpoint (read-only) plus named, versioned latent sets. Reads run
/// against a snapshot; mutations are serialized.
class SessionState {
 public:
  SessionState(EnfConfig config, EnfParams params, ServeOptions options = {});

  /// Adds or replaces a set; its version restarts at 1.
  void add_set(const std::string& name, LatentSet z);

  /// GET /api/sets: [{name, N, d_latent, kind, version, poses: [{tx, ty, theta}]}].
  ApiResponse handle_list() const;
  /// GET /api/decode: {name, version, width, height, channels, image} where
  /// image is base64 of a P6 PPM (gray fields replicated to RGB).
  ApiResponse handle_decode(const std::string& name, std::size_t height, std::size_t width) const;
  /// POST /api/transform with {"name", "g": {tx, ty, theta}}.
  ApiResponse handle_transform(const std::string& body);
  /// POST /api/edit with {"name", "op": "move_latent"|"set_context"|"stitch", ...}.
  /// A stitch response also reports the region dominance at the default size.
  ApiResponse handle_edit(const std::string& body);
  ApiResponse handle_health() const;

  std::optional<LatentSet> latents(const std::string& name) const;
  std::optional<std::uint64_t> version(const std::string& name) const;
  const EnfConfig& config() const { return config_; }
  const EnfParams& params() const { return params_; }
  const ServeOptions& options() const { return options_; }

 private:
  struct Entry {
    LatentSet z;
    std::uint64_t version = 1;
  };

  const EnfConfig config_;
  const EnfParams params_;
  const ServeOptions options_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Entry> sets_;
};

struct DominanceReport {
  double fraction = 0.0;        // share of counted pixels closer to decode(a)
  std::size_t counted = 0;      // strongly attended pixels inside the region
};

/// Region dominance of stitch(a, b, plane) on an H x W grid: among pixels
/// inside the half-plane whose head-averaged attention mass on latents taken
/// from `a` is at least `min_mass`, the fraction whose stitched value is closer
/// (summed abs diff over channels) to decode(a) than to decode(b). Pixels
/// where the clamped decodes of a and b agree are skipped.
DominanceReport region_dominance(const LatentSet& a, const LatentSet& b, const HalfPlane& plane,
                                 const EnfParams& params, const EnfConfig& config, std::size_t height,
                                 std::size_t width, double min_mass = 0.5);

/// Decoded field as P6 bytes; values clamped to [0,1].
std::vector<std::uint8_t> decode_to_ppm(const LatentSet& z, const EnfParams& params, const EnfConfig& config,
                                        std::size_t height, std::size_t width);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// HTTP front end for a SessionState: /api/* routes, CORS headers, optional
/// static file directory mounted at "/".
class HttpServer {
 public:
  explicit HttpServer(SessionState& state, std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds host:port (port 0 picks a free port) and serves on a background
  /// thread. Returns the bound port.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace enf
