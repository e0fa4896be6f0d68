#include <gtest/gtest.h>

#include <cmath>
#include <atomic>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "enf/checks.hpp"
#include "enf/data.hpp"
#include "enf/error.hpp"
#include "enf/fitting.hpp"
#include "enf/metrics.hpp"
#include "enf/serve.hpp"
#include "test_util.hpp"

namespace enf {
namespace {

using nlohmann::json;

EnfConfig serve_config(BiInvariantKind kind, std::optional<double> sigma_att = std::nullopt) {
  EnfConfig c = testing::small_config(kind);
  c.sigma_q = 0.5;
  c.sigma_v = 0.5;
  c.sigma_att = sigma_att;
  return c;
}

LatentSet grid_set(const EnfConfig& cfg, std::size_t n, std::uint64_t seed) {
  LatentSet z = fresh_latents(cfg, n, 0.05, seed, DType::F64);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1), a(0, kTwoPi);
  for (auto& p : z.points) {
    for (auto& v : p.context) v = u(rng);
    if (cfg.kind == BiInvariantKind::RotoTranslation) p.pose.theta = a(rng);
  }
  return z;
}

ImageField decode_image(const SessionState& s, const std::string& name, std::size_t h, std::size_t w,
                        std::uint64_t* version = nullptr) {
  const ApiResponse r = s.handle_decode(name, h, w);
  EXPECT_EQ(r.status, 200) << r.body;
  const json j = json::parse(r.body);
  if (version) *version = j.at("version").get<std::uint64_t>();
  return decode_ppm(base64_decode(j.at("image").get<std::string>()));
}

struct Fixture {
  EnfConfig config;
  EnfParams params;
  SessionState state;
  explicit Fixture(EnfConfig c, std::uint64_t seed = 3)
      : config(c), params(EnfParams::init(c, seed, DType::F64)), state(config, params) {}
};

TEST(Base64, KnownVectorsAndRoundTrip) {
  EXPECT_EQ(base64_encode({'M', 'a', 'n'}), "TWFu");
  EXPECT_EQ(base64_encode({'M', 'a'}), "TWE=");
  EXPECT_EQ(base64_encode({'M'}), "TQ==");
  std::vector<std::uint8_t> bytes(256);
  for (std::size_t i = 0; i < 256; ++i) bytes[i] = static_cast<std::uint8_t>(i);
  EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  EXPECT_THROW(base64_decode("abc"), FormatError);
}

TEST(List, EmptyThenTwoSetsWithVersions) {
  Fixture f(serve_config(BiInvariantKind::Translation));
  EXPECT_EQ(json::parse(f.state.handle_list().body), json::array());
  f.state.add_set("a", grid_set(f.config, 4, 1));
  f.state.add_set("b", grid_set(f.config, 9, 2));
  const json j = json::parse(f.state.handle_list().body);
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[0]["name"], "a");
  EXPECT_EQ(j[0]["N"], 4);
  EXPECT_EQ(j[1]["N"], 9);
  EXPECT_EQ(j[1]["version"], 1);
  EXPECT_EQ(j[1]["poses"].size(), 9u);
  EXPECT_EQ(j[0]["kind"], "Translation");
  f.state.handle_transform(R"({"name":"a","g":{"tx":0.1}})");
  EXPECT_EQ(json::parse(f.state.handle_list().body)[0]["version"], 2);
}

TEST(List, MismatchedSetIsRejectedAtLoad) {
  Fixture f(serve_config(BiInvariantKind::Translation));
  EXPECT_THROW(f.state.add_set("x", random_latents(BiInvariantKind::RotoTranslation, 2, 4, 1)), KindMismatchError);
}

TEST(Decode, DeterministicBytesAndShape) {
  Fixture f(serve_config(BiInvariantKind::Translation));
  f.state.add_set("a", grid_set(f.config, 4, 1));
  const auto r1 = f.state.handle_decode("a", 12, 10), r2 = f.state.handle_decode("a", 12, 10);
  EXPECT_EQ(r1.body, r2.body);
  const auto img = decode_image(f.state, "a", 12, 10);
  EXPECT_EQ(img.height, 12u);
  EXPECT_EQ(img.width, 10u);
  EXPECT_EQ(img.channels, 3u);
  const json j = json::parse(r1.body);
  EXPECT_EQ(j["width"], 10);
  EXPECT_EQ(j["height"], 12);
  EXPECT_EQ(j["channels"], 1);
}

TEST(Decode, ZeroProjectionGivesConstantImage) {
  auto cfg = serve_config(BiInvariantKind::Translation);
  auto params = EnfParams::init(cfg, 1, DType::F64);
  params.W_o = Tensor::zeros(params.W_o.shape(), DType::F64);
  SessionState s(cfg, params);
  s.add_set("z", make_latent_set(init_grid_poses(4, cfg.kind, 0, 0), cfg.d_latent, cfg.kind));
  const auto img = decode_image(s, "z", 8, 8);
  for (double v : img.values) EXPECT_EQ(v, img.values[0]);
}

TEST(Decode, ErrorsForUnknownSetAndOversize) {
  Fixture f(serve_config(BiInvariantKind::Translation));
  f.state.add_set("a", grid_set(f.config, 4, 1));
  const auto nf = f.state.handle_decode("nope", 8, 8);
  EXPECT_EQ(nf.status, 404);
  EXPECT_EQ(json::parse(nf.body)["code"], "not_found");
  EXPECT_EQ(f.state.handle_decode("a", 257, 8).status, 422);
  EXPECT_EQ(f.state.handle_decode("a", 0, 8).status, 422);
}

TEST(Decode, HigherResolutionBlockAveragesToLower) {
  Fixture f(serve_config(BiInvariantKind::RotoTranslation));
  f.state.add_set("a", grid_set(f.config, 9, 4));
  const auto lo = decode_image(f.state, "a", 16, 16), hi = decode_image(f.state, "a", 32, 32);
  EXPECT_LE(mean_abs_difference(downsample2(hi), lo), 0.05);
}

TEST(Transform, IdentityLeavesDecodeBitwise) {
  Fixture f(serve_config(BiInvariantKind::RotoTranslation));
  f.state.add_set("a", grid_set(f.config, 4, 1));
  const auto before = f.state.handle_decode("a", 16, 16);
  const auto r = f.state.handle_transform(R"({"name":"a","g":{"tx":0,"ty":0,"theta":0}})");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body)["version"], 2);
  EXPECT_EQ(json::parse(f.state.handle_decode("a", 16, 16).body)["image"], json::parse(before.body)["image"]);
}

Tensor field_values(const SessionState& s, const std::string& name, std::size_t res) {
  return field_forward(make_grid(res, res), *s.latents(name), s.params(), s.config());
}

TEST(Transform, OnePixelTranslationShiftsDecode) {
  Fixture f(serve_config(BiInvariantKind::Translation));
  f.state.add_set("a", grid_set(f.config, 4, 1));
  const std::size_t res = 16;
  const Tensor before = field_values(f.state, "a", res);
  f.state.handle_transform(R"({"name":"a","g":{"tx":0.125,"ty":0}})");
  const Tensor after = field_values(f.state, "a", res);
  for (std::size_t r = 0; r < res; ++r) {
    for (std::size_t c = 0; c + 1 < res; ++c) {
      EXPECT_NEAR(after.at(r * res + c + 1, 0), before.at(r * res + c, 0), 1e-4);
    }
  }
}

TEST(Transform, QuarterTurnRotatesDecodeOnInscribedDisk) {
  Fixture f(serve_config(BiInvariantKind::RotoTranslation));
  f.state.add_set("a", grid_set(f.config, 9, 2));
  const std::size_t res = 16;
  const auto before = decode_image(f.state, "a", res, res);
  f.state.handle_transform(R"({"name":"a","g":{"tx":0,"ty":0,"theta":1.5707963267948966}})");
  const auto after = decode_image(f.state, "a", res, res);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < res; ++r) {
    for (std::size_t c = 0; c < res; ++c) {
      const Vec2 x = pixel_coordinate(r, c, res, res);
      if (x[0] * x[0] + x[1] * x[1] > 1.0) continue;
      // R(-pi/2)(x, y) = (y, -x) lands on pixel (res-1-c, r).
      total += std::abs(after.at(r, c) - before.at(res - 1 - c, r));
      ++count;
    }
  }
  EXPECT_LT(total / static_cast<double>(count), 1e-3);
}

TEST(Transform, ThetaIgnoredWithWarningForTranslationKind) {
  Fixture f(serve_config(BiInvariantKind::Translation));
  f.state.add_set("a", grid_set(f.config, 4, 1));
  const auto before = *f.state.latents("a");
  const auto r = f.state.handle_transform(R"({"name":"a","g":{"tx":0.5,"theta":1.0}})");
  ASSERT_EQ(r.status, 200);
  EXPECT_TRUE(json::parse(r.body).contains("warning"));
  EXPECT_NEAR(f.state.latents("a")->points[0].pose.t[0], before.points[0].pose.t[0] + 0.5, 1e-15);
  EXPECT_EQ(f.state.handle_transform(R"({"name":"zz","g":{}})").status, 404);
}

TEST(Edit, MoveToCurrentPoseKeepsDecode) {
  Fixture f(serve_config(BiInvariantKind::RotoTranslation));
  f.state.add_set("a", grid_set(f.config, 4, 1));
  const auto p = f.state.latents("a")->points[2].pose;
  const auto before = json::parse(f.state.handle_decode("a", 16, 16).body)["image"];
  const json body{{"name", "a"}, {"op", "move_latent"}, {"index", 2}, {"tx", p.t[0]}, {"ty", p.t[1]}, {"theta", p.theta}};
  const auto r = f.state.handle_edit(body.dump());
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_EQ(json::parse(r.body)["version"], 2);
  EXPECT_EQ(json::parse(f.state.handle_decode("a", 16, 16).body)["image"], before);
}

TEST(Edit, MoveLatentChangesItsPose) {
  Fixture f(serve_config(BiInvariantKind::Translation));
  f.state.add_set("a", grid_set(f.config, 4, 1));
  f.state.handle_edit(R"({"name":"a","op":"move_latent","index":0,"tx":0.25,"ty":-0.75})");
  EXPECT_EQ(f.state.latents("a")->points[0].pose.position(), (Vec2{0.25, -0.75}));
}

TEST(Edit, ZeroingOneContextOnlyChangesItsNeighbourhood) {
  Fixture f(serve_config(BiInvariantKind::Translation, 60.0));
  f.state.add_set("a", grid_set(f.config, 9, 5));
  const std::size_t res = 24;
  const Tensor before = field_values(f.state, "a", res);
  const auto centre = f.state.latents("a")->points[4].pose.position();
  const json body{{"name", "a"}, {"op", "set_context"}, {"index", 4}, {"vector", std::vector<double>(4, 0.0)}};
  ASSERT_EQ(f.state.handle_edit(body.dump()).status, 200);
  const Tensor after = field_values(f.state, "a", res);
  const Tensor grid = make_grid(res, res);
  double near_max = 0.0;
  for (std::size_t i = 0; i < grid.rows(); ++i) {
    const double d = std::hypot(grid.at(i, 0) - centre[0], grid.at(i, 1) - centre[1]);
    const double diff = std::abs(after[i] - before[i]);
    if (d > 0.6) EXPECT_LT(diff, 1e-3) << "pixel " << i << " at distance " << d;
    if (d < 0.2) near_max = std::max(near_max, diff);
  }
  EXPECT_GT(near_max, 1e-3);
}

TEST(Edit, StitchTakesLatentsByRegionAndReportsDominance) {
  Fixture f(serve_config(BiInvariantKind::Translation));
  f.state.add_set("a", grid_set(f.config, 4, 1));
  f.state.add_set("b", grid_set(f.config, 4, 2));
  const auto a = *f.state.latents("a"), b = *f.state.latents("b");
  const auto r = f.state.handle_edit(R"({"name":"a","op":"stitch","other":"b","region":{"normal":[1,0],"offset":0}})");
  ASSERT_EQ(r.status, 200) << r.body;
  const json j = json::parse(r.body);
  EXPECT_TRUE(j.contains("dominance"));
  EXPECT_EQ(*f.state.latents("a"), stitch(a, b, HalfPlane{{1, 0}, 0}.region()));
  EXPECT_EQ(*f.state.latents("b"), b);
  EXPECT_EQ(f.state.version("b"), 1u);
}

TEST(Edit, StitchConflictsAre409) {
  Fixture f(serve_config(BiInvariantKind::Translation));
  f.state.add_set("a", grid_set(f.config, 4, 1));
  auto low = grid_set(f.config, 4, 2);
  low = LatentSet::from_tensors(low.kind, low.context_tensor().as_dtype(DType::F32),
                                low.pose_tensor().as_dtype(DType::F32));
  f.state.add_set("f32", low);
  EXPECT_EQ(f.state.handle_edit(R"({"name":"a","op":"stitch","other":"f32","region":{"normal":[1,0],"offset":0}})")
                .status,
            409);
  // With b moved left of x = -1, the region x < -1 keeps no point of a and
  // discards every point of b.
  f.state.add_set("b", grid_set(f.config, 4, 3));
  f.state.handle_transform(R"({"name":"b","g":{"tx":-3}})");
  const auto empty =
      f.state.handle_edit(R"({"name":"a","op":"stitch","other":"b","region":{"normal":[1,0],"offset":-1}})");
  EXPECT_EQ(empty.status, 409);
  EXPECT_EQ(json::parse(empty.body)["code"], "conflict");
}

TEST(Edit, ErrorMapping) {
  Fixture f(serve_config(BiInvariantKind::Translation));
  f.state.add_set("a", grid_set(f.config, 4, 1));
  EXPECT_EQ(f.state.handle_edit(R"({"name":"a","op":"move_latent","index":4,"tx":0})").status, 422);
  EXPECT_EQ(f.state.handle_edit(R"({"name":"a","op":"move_latent","index":-1})").status, 422);
  EXPECT_EQ(f.state.handle_edit(R"({"name":"a","op":"set_context","index":0,"vector":[1]})").status, 422);
  EXPECT_EQ(f.state.handle_edit(R"({"name":"q","op":"move_latent","index":0})").status, 404);
  EXPECT_EQ(f.state.handle_edit(R"({"name":"a","op":"stitch","other":"q","region":{"normal":[1,0],"offset":0}})").status,
            404);
  EXPECT_EQ(f.state.handle_edit("{not json").status, 400);
  EXPECT_EQ(f.state.handle_edit(R"({"name":"a","op":"explode"})").status, 400);
  EXPECT_EQ(f.state.handle_edit(R"({"name":"a","op":"move_latent","index":"x"})").status, 400);
  EXPECT_EQ(f.state.version("a"), 1u);
  const json err = json::parse(f.state.handle_edit("[]").body);
  EXPECT_TRUE(err.contains("code"));
  EXPECT_TRUE(err.contains("message"));
}

TEST(Edit, EditingOneSetNeverChangesAnother) {
  Fixture f(serve_config(BiInvariantKind::RotoTranslation));
  f.state.add_set("a", grid_set(f.config, 4, 1));
  f.state.add_set("b", grid_set(f.config, 4, 2));
  const auto b_before = f.state.handle_decode("b", 16, 16).body;
  f.state.handle_edit(R"({"name":"a","op":"move_latent","index":0,"tx":0.3,"ty":0.3})");
  f.state.handle_transform(R"({"name":"a","g":{"theta":0.5}})");
  f.state.handle_edit(R"({"name":"a","op":"stitch","other":"b","region":{"normal":[0,1],"offset":0}})");
  EXPECT_EQ(f.state.handle_decode("b", 16, 16).body, b_before);
}

TEST(Concurrency, ParallelDecodesSeeConsistentSnapshots) {
  Fixture f(serve_config(BiInvariantKind::Translation));
  f.state.add_set("a", grid_set(f.config, 4, 1));
  std::vector<std::thread> readers;
  std::atomic<int> failures{0};
  for (int t = 0; t < 3; ++t) {
    readers.emplace_back([&] {
      for (int i = 0; i < 10; ++i) {
        if (f.state.handle_decode("a", 8, 8).status != 200) ++failures;
      }
    });
  }
  for (int i = 0; i < 10; ++i) f.state.handle_transform(R"({"name":"a","g":{"tx":0.01}})");
  for (auto& t : readers) t.join();
  EXPECT_EQ(failures.load(), 0);
  EXPECT_EQ(f.state.version("a"), 11u);
}

TEST(Dominance, StitchOfDistinctSetsFavoursTheKeptSide) {
  const auto cfg = serve_config(BiInvariantKind::Translation, 20.0);
  const auto params = EnfParams::init(cfg, 8, DType::F64);
  const auto a = grid_set(cfg, 9, 11), b = grid_set(cfg, 9, 12);
  const auto d = region_dominance(a, b, HalfPlane{{1, 0}, 0}, params, cfg, 16, 16);
  EXPECT_GT(d.counted, 0u);
  EXPECT_GE(d.fraction, 0.8);
  const auto self = region_dominance(a, a, HalfPlane{{1, 0}, 0}, params, cfg, 16, 16);
  EXPECT_EQ(self.counted, 0u);
}

class HttpApi : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_ = serve_config(BiInvariantKind::RotoTranslation);
    state_ = std::make_unique<SessionState>(cfg_, EnfParams::init(cfg_, 1, DType::F64));
    state_->add_set("a", grid_set(cfg_, 4, 1));
    state_->add_set("b", grid_set(cfg_, 4, 2));
    server_ = std::make_unique<HttpServer>(*state_);
    port_ = server_->start("127.0.0.1", 0);
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override { server_->stop(); }

  EnfConfig cfg_;
  std::unique_ptr<SessionState> state_;
  std::unique_ptr<HttpServer> server_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

TEST_F(HttpApi, HealthAndSets) {
  auto h = client_->Get("/api/health");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->status, 200);
  EXPECT_EQ(json::parse(h->body)["status"], "ok");
  EXPECT_EQ(h->get_header_value("Access-Control-Allow-Origin"), "*");
  auto s = client_->Get("/api/sets");
  ASSERT_TRUE(s);
  EXPECT_EQ(json::parse(s->body).size(), 2u);
}

TEST_F(HttpApi, DecodeMatchesHandler) {
  auto r = client_->Get("/api/decode?name=a&height=12&width=8");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->body, state_->handle_decode("a", 12, 8).body);
  auto sq = client_->Get("/api/decode?name=a&res=10");
  ASSERT_TRUE(sq);
  EXPECT_EQ(json::parse(sq->body)["width"], 10);
  EXPECT_EQ(client_->Get("/api/decode?name=zz")->status, 404);
  EXPECT_EQ(client_->Get("/api/decode?name=a&res=abc")->status, 400);
  EXPECT_EQ(client_->Get("/api/decode?res=4")->status, 400);
  EXPECT_EQ(client_->Get("/api/decode?name=a&res=9999")->status, 422);
}

TEST_F(HttpApi, TransformEditAndPreflight) {
  auto t = client_->Post("/api/transform", R"({"name":"a","g":{"tx":0.1,"ty":0,"theta":0.2}})", "application/json");
  ASSERT_TRUE(t);
  EXPECT_EQ(t->status, 200);
  EXPECT_EQ(json::parse(t->body)["version"], 2);
  auto e = client_->Post("/api/edit", R"({"name":"a","op":"move_latent","index":9})", "application/json");
  ASSERT_TRUE(e);
  EXPECT_EQ(e->status, 422);
  EXPECT_EQ(json::parse(e->body)["code"], "unprocessable");
  auto st = client_->Post("/api/edit", R"({"name":"a","op":"stitch","other":"b","region":{"normal":[1,0],"offset":0}})",
                          "application/json");
  ASSERT_TRUE(st);
  EXPECT_EQ(st->status, 200);
  EXPECT_EQ(json::parse(client_->Get("/api/sets")->body)[0]["version"], 3);
  auto o = client_->Options("/api/edit");
  ASSERT_TRUE(o);
  EXPECT_EQ(o->status, 204);
  EXPECT_EQ(client_->Post("/api/edit", "nope", "application/json")->status, 400);
}

}  // namespace
}  // namespace enf
