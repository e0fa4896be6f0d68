#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "enf/data.hpp"
#include "enf/latents.hpp"
#include "enf/metrics.hpp"
#include "test_util.hpp"

namespace enf {
namespace {

using testing::TempDir;

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const std::filesystem::path& path) { return path.string(); }

void write_file(const std::filesystem::path& path, const std::string& text) { std::ofstream(path) << text; }

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  const CliRun bogus = run({"bogus"});
  EXPECT_EQ(bogus.code, 2);
  EXPECT_NE(bogus.err.find("synth-data"), std::string::npos);
  EXPECT_EQ(run({"synth-data", "--out", "x", "--frobnicate"}).code, 2);
  EXPECT_EQ(run({"synth-data"}).code, 2);
}

TEST(Cli, HelpExitsZero) {
  const CliRun r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("fit-meta"), std::string::npos);
  const CliRun sub = run({"decode", "--help"});
  EXPECT_EQ(sub.code, 0);
  EXPECT_NE(sub.out.find("--ckpt"), std::string::npos);
}

TEST(Cli, GradcheckPassesAndReportsError) {
  const CliRun r = run({"gradcheck", "--seed", "0"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("max_rel_error"), std::string::npos);
}

TEST(Cli, EvalPsnrOfIdenticalImagesIsInf) {
  TempDir dir("cli_psnr");
  save_ppm(ImageField(4, 4, 1, 0.5), dir / "a.pgm");
  save_ppm(ImageField(4, 4, 1, 0.0), dir / "b.pgm");
  EXPECT_EQ(run({"eval-psnr", "--recon", p(dir / "a.pgm"), "--target", p(dir / "a.pgm")}).out, "inf\n");
  const CliRun r = run({"eval-psnr", "--recon", p(dir / "a.pgm"), "--target", p(dir / "b.pgm")});
  EXPECT_EQ(r.code, 0);
  EXPECT_NEAR(std::stod(r.out), psnr_from_mse(std::pow(128.0 / 255.0, 2)), 1e-3);
  EXPECT_EQ(run({"eval-psnr", "--recon", p(dir / "missing.pgm"), "--target", p(dir / "a.pgm")}).code, 1);
}

TEST(Cli, BadConfigKeyIsARuntimeError) {
  TempDir dir("cli_cfg");
  ASSERT_EQ(run({"synth-data", "--n", "6", "--res", "6", "--out", p(dir / "data")}).code, 0);
  write_file(dir / "cfg.json", R"({"data":{"manifest":"x"},"meta":{"n_iner":3}})");
  const CliRun r = run({"fit-meta", "--config", p(dir / "cfg.json")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("n_iner"), std::string::npos) << r.err;
}

TEST(Cli, FullPipeline) {
  TempDir dir("cli_pipe");
  const CliRun synth = run({"synth-data", "--n", "9", "--res", "8", "--seed", "2", "--out", p(dir / "data")});
  ASSERT_EQ(synth.code, 0) << synth.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "data" / "manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "data" / "sample_00008.pgm"));

  write_file(dir / "cfg.json", R"({
    "seed": 1,
    "enf": {"kind": "RotoTranslation", "d_latent": 4, "d_hidden": 8, "num_heads": 2, "rff_dim": 8, "k_nearest": 2},
    "meta": {"num_latents": 4, "steps": 4, "batch_size": 3, "coords_per_step": 16},
    "data": {"manifest": ")" + p(dir / "data" / "manifest.json") + R"(", "holdout": 3},
    "output": {"checkpoint": ")" + p(dir / "m.enfc") + R"(", "latents": ")" + p(dir / "z.enfl") +
                             R"(", "log": ")" + p(dir / "loss.csv") + R"(", "log_every": 2}
  })");
  const CliRun fit = run({"fit-meta", "--config", p(dir / "cfg.json")});
  ASSERT_EQ(fit.code, 0) << fit.err;
  EXPECT_NE(fit.out.find("heldout_psnr"), std::string::npos);
  EXPECT_EQ(load_latents(dir / "z.enfl").size(), 6u);

  const CliRun dec = run({"decode", "--ckpt", p(dir / "m.enfc"), "--latents", p(dir / "z.enfl"), "--res", "16", "--out",
                       p(dir / "r.ppm")});
  ASSERT_EQ(dec.code, 0) << dec.err;
  const ImageField img = load_ppm(dir / "r.ppm");
  EXPECT_EQ(img.width, 16u);
  EXPECT_EQ(img.channels, 3u);
  ASSERT_EQ(run({"decode", "--ckpt", p(dir / "m.enfc"), "--latents", p(dir / "z.enfl"), "--height", "5", "--width",
                 "7", "--out", p(dir / "r.pgm"), "--sample", "sample_00001"})
                .code,
            0);
  EXPECT_EQ(load_ppm(dir / "r.pgm").channels, 1u);
  EXPECT_EQ(run({"decode", "--ckpt", p(dir / "m.enfc"), "--latents", p(dir / "z.enfl"), "--index", "99", "--out",
                 p(dir / "x.ppm")})
                .code,
            1);

  ASSERT_EQ(run({"transform", "--latents", p(dir / "z.enfl"), "--out", p(dir / "t.enfl"), "--tx", "0.25", "--theta",
                 "1"})
                .code,
            0);
  const auto z = load_latents(dir / "z.enfl"), t = load_latents(dir / "t.enfl");
  const auto expected = act_on_latent_set(GroupElement::roto_translation(0.25, 0, 1), z[0]);
  ASSERT_EQ(expected.size(), t[0].size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(t[0].points[i].pose.t[c], expected.points[i].pose.t[c], 1e-6);
    EXPECT_NEAR(t[0].points[i].pose.theta, expected.points[i].pose.theta, 1e-6);
    EXPECT_EQ(t[0].points[i].context, expected.points[i].context);
  }

  ASSERT_EQ(run({"stitch", "--a", p(dir / "z.enfl"), "--b", p(dir / "z.enfl"), "--index-b", "1", "--out",
                 p(dir / "s.enfl")})
                .code,
            0);
  EXPECT_EQ(load_latents(dir / "s.enfl")[0], stitch(z[0], z[1], HalfPlane{}.region()));

  const CliRun enc = run({"encode", "--ckpt", p(dir / "m.enfc"), "--image", p(dir / "data" / "sample_00000.pgm"), "--out",
                       p(dir / "e.enfl"), "--num-latents", "4"});
  ASSERT_EQ(enc.code, 0) << enc.err;
  EXPECT_EQ(load_latents(dir / "e.enfl")[0].sample_id, "sample_00000");

  const CliRun tc = run({"train-classifier", "--latents", p(dir / "z.enfl"), "--data", p(dir / "data" / "manifest.json"),
                      "--epochs", "2", "--out", p(dir / "c.enfk")});
  ASSERT_EQ(tc.code, 0) << tc.err;
  EXPECT_NE(tc.out.find("test_accuracy"), std::string::npos);
  const CliRun cl = run({"classify", "--clf", p(dir / "c.enfk"), "--latents", p(dir / "z.enfl"), "--out",
                      p(dir / "pred.csv")});
  ASSERT_EQ(cl.code, 0) << cl.err;
  std::ifstream csv(dir / "pred.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "sample_id,label,pred,logit_0,logit_1,logit_2");
}

}  // namespace
}  // namespace enf
