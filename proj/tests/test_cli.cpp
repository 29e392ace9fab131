#include <gtest/gtest.h>

#include <filesystem>
#include <regex>
#include <sstream>

#include "draco/cli/run.hpp"

using namespace draco;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream o, e;
  const int c = cli::run_cli(args, o, e);
  return {c, o.str(), e.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("draco_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& p) const { return (dir_ / p).string(); }

  void simulate_small(const std::string& out, const std::string& seed = "1") {
    ASSERT_EQ(run({"simulate", "--out", path(out), "--count", "3", "--size", "32", "--blobs", "3", "--seed", seed}).code, 0);
  }

  fs::path dir_;
};

const std::vector<std::string> kTiny{"--set", "model.patch_size=4", "--set", "model.out_size=16", "--set",
                                     "model.embed_dim=16", "--set", "model.depth=1", "--set", "model.n_heads=2",
                                     "--set", "model.decoder_dim=8", "--set", "model.decoder_depth=1", "--set",
                                     "model.decoder_heads=2", "--set", "model.mlp_ratio=2", "--set",
                                     "model.neck_channels=4,4,4", "--set", "train.batch_size=2", "--set",
                                     "train.steps_per_epoch=3", "--set", "train.epochs=2", "--set",
                                     "train.warmup_steps=2", "--log-every", "0"};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<std::uint8_t> bytes(const std::string& p) { return io::read_file_bytes(p); }

}  // namespace

TEST_F(CliTest, HelpDocumentsEveryFlagWithDefault) {
  for (const char* sub : {"simulate", "pretrain", "denoise", "eval-snr", "curate", "gradcheck", "ablate"}) {
    const auto r = run({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    std::istringstream in(r.out);
    std::string line;
    std::size_t flags = 0;
    while (std::getline(in, line)) {
      if (line.rfind("  --", 0) != 0) continue;
      ++flags;
      const bool documented = line.find('[') != std::string::npos || line.find("REQUIRED") != std::string::npos;
      EXPECT_TRUE(documented) << sub << ": " << line;
    }
    EXPECT_GE(flags, 3u) << sub;
  }
}

TEST_F(CliTest, ErrorsAreOneLineWithDistinctCodes) {
  const std::regex line(R"(draco: error code=(\d+) kind=\w+ message=".*"\n)");
  auto expect = [&](std::vector<std::string> args, int code) {
    const auto r = run(args);
    EXPECT_EQ(r.code, code) << r.err;
    EXPECT_TRUE(std::regex_match(r.err, line)) << r.err;
  };
  expect({"simulate", "--out", path("a"), "--bogus"}, cli::exit_usage);
  expect({"frobnicate"}, cli::exit_usage);
  expect({"denoise", "--model", path("missing.ckpt"), "--in", path("x.mrc"), "--out", path("y")}, cli::exit_missing_input);
  expect({"pretrain", "--data", path("nowhere")}, cli::exit_missing_input);
  expect({"pretrain", "--set", "model.bogus=1", "--show-config"}, cli::exit_config);
  expect({"simulate", "--out", path("a"), "--defect", "frost"}, cli::exit_invalid);
}

TEST_F(CliTest, SimulateIsDeterministicAndManifestReplays) {
  simulate_small("a", "7");
  simulate_small("b", "7");
  for (const char* f : {"triplet_0000.mrc", "triplet_0002.mrc", "expected_0001.mrc", "pairs_0000.csv", "labels.csv"}) {
    ASSERT_TRUE(fs::exists(dir_ / "a" / f)) << f;
    EXPECT_EQ(bytes(path(std::string("a/") + f)), bytes(path(std::string("b/") + f))) << f;
  }
  // Replay the argv recorded in the manifest and compare outputs byte for byte.
  const auto before = bytes(path("a/triplet_0001.mrc"));
  const std::string m = cli::detail::read_text(dir_ / "a" / "manifest.txt");
  EXPECT_NE(m.find("command = simulate"), std::string::npos);
  EXPECT_NE(m.find("[config]"), std::string::npos);
  std::smatch sm;
  ASSERT_TRUE(std::regex_search(m, sm, std::regex("argv = (.*)\n")));
  std::vector<std::string> argv;
  const std::string argv_line = sm[1];
  const std::regex quoted_arg("\"([^\"]*)\"");
  for (std::sregex_iterator it(argv_line.begin(), argv_line.end(), quoted_arg), end; it != end; ++it)
    argv.push_back((*it)[1]);
  fs::remove_all(dir_ / "a");
  ASSERT_EQ(run(argv).code, 0);
  EXPECT_EQ(bytes(path("a/triplet_0001.mrc")), before);
  simulate_small("c", "8");
  EXPECT_NE(bytes(path("c/triplet_0001.mrc")), before);
}

TEST_F(CliTest, HybridNeedsWarmupCheckpoint) {
  simulate_small("data");
  auto base = cat({"pretrain", "--data", path("data")}, kTiny);
  auto r = run(cat(base, {"--stage", "hybrid", "--out", path("h")}));
  EXPECT_EQ(r.code, cli::exit_config) << r.err;
  EXPECT_NE(r.err.find("--from-scratch"), std::string::npos);
  EXPECT_EQ(run(cat(base, {"--stage", "hybrid", "--from-scratch", "--out", path("s")})).code, 0);
  // A hybrid checkpoint is not an acceptable warm-up checkpoint.
  EXPECT_EQ(run(cat(base, {"--stage", "hybrid", "--init", path("s/hybrid.ckpt"), "--out", path("h")})).code, cli::exit_config);
  ASSERT_EQ(run(cat(base, {"--stage", "warmup", "--out", path("w")})).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "w" / "warmup.ckpt"));
  EXPECT_EQ(run(cat(base, {"--stage", "hybrid", "--init", path("w/warmup.ckpt"), "--set", "model.lambda=0", "--out", path("h")})).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "h" / "hybrid.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "h" / "manifest.txt"));
  // Architecture changes against the checkpoint are config conflicts.
  EXPECT_EQ(run(cat(base, {"--stage", "hybrid", "--init", path("w/warmup.ckpt"), "--set", "model.embed_dim=32", "--out",
                           path("x")})).code,
            cli::exit_config);
}

TEST_F(CliTest, ResumeReproducesTheUninterruptedRun) {
  simulate_small("data");
  auto base = cat({"pretrain", "--data", path("data"), "--stage", "warmup", "--set", "train.snapshot_every=2"}, kTiny);
  ASSERT_EQ(run(cat(base, {"--out", path("full")})).code, 0);
  ASSERT_TRUE(fs::exists(dir_ / "full" / "ckpt_0002.ckpt"));
  ASSERT_EQ(run({"pretrain", "--data", path("data"), "--resume", path("full/ckpt_0002.ckpt"), "--out", path("resumed"),
                 "--log-every", "0"}).code,
            0);
  EXPECT_EQ(bytes(path("full/warmup.ckpt")), bytes(path("resumed/warmup.ckpt")));
  EXPECT_EQ(run({"pretrain", "--data", path("data"), "--resume", path("full/ckpt_0002.ckpt"), "--set", "train.seed=3"}).code,
            cli::exit_config);
}

TEST_F(CliTest, DenoiseEvalAndTileConflict) {
  simulate_small("data");
  ASSERT_EQ(run(cat({"pretrain", "--data", path("data"), "--stage", "warmup", "--out", path("w")}, kTiny)).code, 0);
  const auto ck = path("w/warmup.ckpt");
  auto r = run({"denoise", "--model", ck, "--in", path("data/triplet_0000.mrc"), "--out", path("den/d0")});
  EXPECT_EQ(r.code, cli::exit_config) << r.err;
  r = run({"denoise", "--model", ck, "--in", path("data/triplet_0000.mrc"), "--out", path("den/d0"), "--tile", "16",
           "--overlap", "8"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto d = io::load_mrc(path("den/d0.mrc"));
  ASSERT_EQ(d.sections.size(), 1u);
  EXPECT_EQ(d.sections[0].height, 32u);
  EXPECT_TRUE(fs::exists(dir_ / "den" / "d0.pgm"));
  EXPECT_TRUE(fs::exists(dir_ / "den" / "d0.manifest.txt"));
  r = run({"eval-snr", "--image", path("data/triplet_0000.mrc"), "--pairs", path("data/pairs_0000.csv"), "--clean",
           path("data/expected_0000.mrc"), "--report", path("rep/raw.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("mean_snr_db"), std::string::npos);
  const std::string csv = cli::detail::read_text(dir_ / "rep" / "raw.csv");
  EXPECT_EQ(csv.rfind("image,pairs,zero_contrast_pairs,snr_db,psnr_db\n", 0), 0u);
  r = run({"eval-snr", "--image", path("data/triplet_0000.mrc"), "--pairs", path("data/pairs_0000.csv"), "--pairs",
           path("data/pairs_0001.csv"), "--report", path("rep/bad.csv")});
  EXPECT_EQ(r.code, cli::exit_config);
}

TEST_F(CliTest, CurateKeepsEncoderAndReports) {
  simulate_small("data");
  ASSERT_EQ(run(cat({"pretrain", "--data", path("data"), "--stage", "warmup", "--out", path("w")}, kTiny)).code, 0);
  const auto r = run({"curate", "--model", path("w/warmup.ckpt"), "--count", "16", "--size", "32", "--blobs", "3",
                      "--out", path("cur")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::smatch a, b;
  ASSERT_TRUE(std::regex_search(r.out, a, std::regex("encoder_hash_before = (\\w+)")));
  ASSERT_TRUE(std::regex_search(r.out, b, std::regex("encoder_hash_after = (\\w+)")));
  EXPECT_EQ(a[1], b[1]);
  EXPECT_TRUE(fs::exists(dir_ / "cur" / "probe.txt"));
}

TEST_F(CliTest, GradcheckPasses) {
  const auto r = run({"gradcheck", "--instances", "1", "--out", path("gc")});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("draco_total_loss"), std::string::npos);
  EXPECT_EQ(r.out.find(",no\n"), std::string::npos);
}
