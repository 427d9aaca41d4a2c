#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <sstream>

#include "atv/commands.hpp"
#include "atv/config.hpp"
#include "atv/io.hpp"
#include "atv/pointcloud.hpp"
#include "atv/verify.hpp"
#include "test_util.hpp"

using namespace atv;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("atv_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(ATV_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, SetAndRejectUnknownKeys) {
  config::RunConfig cfg;
  cfg.set("lambda", "1.25");
  EXPECT_EQ(cfg.network.lambda, 1.25);
  cfg.set("min_views", "4");
  EXPECT_EQ(cfg.fusion.min_views, 4);
  EXPECT_THROW(cfg.set("no_such_key", "1"), config::ConfigError);
  EXPECT_THROW(cfg.set("lambda", "abc"), config::ConfigError);
  EXPECT_THROW(cfg.set("min_views", "2.5"), config::ConfigError);
}

TEST(Config, TextRoundTrip) {
  config::RunConfig cfg;
  cfg.set("lambda", "1.75");
  cfg.set("tau", "3.5");
  cfg.set("seed", "42");
  config::RunConfig back;
  config::apply_text(back, cfg.to_text(), "snapshot");
  EXPECT_EQ(back.to_text(), cfg.to_text());
  EXPECT_EQ(back.tau, 3.5);
}

TEST(Config, ApplyTextSkipsCommentsAndNamesTheLine) {
  config::RunConfig cfg;
  config::apply_text(cfg, "# comment\n\nlambda = 2.0\n", "a.txt");
  EXPECT_EQ(cfg.network.lambda, 2.0);
  try {
    config::apply_text(cfg, "lambda = 1\nbogus = 3\n", "b.txt");
    FAIL() << "expected ConfigError";
  } catch (const config::ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("b.txt"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2"), std::string::npos) << msg;
  }
}

TEST(Config, LaterSourcesWin) {
  config::RunConfig cfg;
  config::apply_text(cfg, "lambda = 2.0\ntau = 1\n", "file");
  const auto [k, v] = config::split_assignment("lambda=3.5");
  cfg.set(k, v);
  EXPECT_EQ(cfg.network.lambda, 3.5);
  EXPECT_EQ(cfg.tau, 1.0);
}

TEST(Config, SplitAssignment) {
  EXPECT_EQ(config::split_assignment("a=b"), (std::pair<std::string, std::string>{"a", "b"}));
  EXPECT_EQ(config::split_assignment(" key = 1.5 ").second, "1.5");
  EXPECT_THROW(config::split_assignment("novalue"), config::ConfigError);
}

TEST(Config, DescribeKeysMatchesSerialization) {
  const auto keys = config::describe_keys();
  const std::string text = config::RunConfig{}.to_text();
  std::istringstream in(text);
  std::string line;
  std::size_t i = 0;
  while (std::getline(in, line)) {
    ASSERT_LT(i, keys.size());
    EXPECT_EQ(line.rfind(keys[i].first + " = ", 0), 0u) << line;
    ++i;
  }
  EXPECT_EQ(i, keys.size());
}

TEST(Io, PfmRoundTripThroughFloat32) {
  const fs::path dir = scratch("pfm");
  std::mt19937_64 rng(1);
  const Tensor d = verify::random_tensor(rng, {5, 7}, 100, 900);
  io::write_pfm(dir / "d.pfm", d);
  const Tensor back = io::read_pfm(dir / "d.pfm");
  ASSERT_EQ(back.shape(), d.shape());
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(back[i], static_cast<double>(static_cast<float>(d[i])));
  io::write_text(dir / "bad.pfm", "P6\n1 1\n-1\n");
  EXPECT_THROW(io::read_pfm(dir / "bad.pfm"), io::DataError);
}

TEST(Io, ArchiveRoundTripIsExact) {
  const fs::path dir = scratch("archive");
  std::mt19937_64 rng(2);
  const io::NamedTensors t = {{"a", verify::random_tensor(rng, {2, 3})}, {"b/c", verify::random_tensor(rng, {4})}};
  io::write_archive(dir / "x.atvt", t);
  const auto back = io::read_archive(dir / "x.atvt");
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(back[i].first, t[i].first);
    EXPECT_TRUE(test::bitwise_equal(back[i].second, t[i].second));
  }
  io::write_text(dir / "junk.atvt", "nope");
  EXPECT_THROW(io::read_archive(dir / "junk.atvt"), io::DataError);
}

TEST(Io, PairsRoundTrip) {
  const fs::path dir = scratch("pairs");
  std::vector<io::ViewPair> p(2);
  p[0] = {0, {1}, {0.5}};
  p[1] = {1, {0}, {0.25}};
  io::write_pairs(dir / "pair.txt", p);
  const auto back = io::read_pairs(dir / "pair.txt");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].ref, 1);
  EXPECT_EQ(back[1].sources, std::vector<int>{0});
  EXPECT_EQ(back[0].scores[0], 0.5);
  EXPECT_THROW(io::parse_pairs("2\n0\n1 1 0.5\n", "pair.txt"), io::DataError);
}

TEST(Io, PngRoundTripAt8Bits) {
  const fs::path dir = scratch("png");
  std::mt19937_64 rng(3);
  const Tensor img = verify::random_tensor(rng, {3, 6, 9}, 0, 1);
  io::write_png(dir / "i.png", img);
  const Tensor back = io::read_png(dir / "i.png");
  ASSERT_EQ(back.shape(), img.shape());
  EXPECT_LE(test::max_abs_diff(back, img), 0.5 / 255 + 1e-12);
}

TEST(Io, PlyRoundTrip) {
  const fs::path dir = scratch("ply");
  PointCloud c;
  c.points = {{1.5, -2, 3}, {0, 0, 600.25}};
  c.colors = {{{1, 2, 3}}, {{255, 0, 128}}};
  c.source_view = {0, 1};
  write_ply(dir / "c.ply", c);
  const PointCloud back = read_ply(dir / "c.ply");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.points[i], c.points[i]);
    EXPECT_EQ(back.colors[i], c.colors[i]);
  }
}

TEST(Commands, BatchIndicesCoverEachEpoch) {
  std::vector<int> seen(10, 0);
  for (int step = 0; step < 5; ++step)
    for (std::size_t i : commands::batch_indices(10, 2, 7, step)) ++seen[i];
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_EQ(commands::batch_indices(10, 2, 7, 3), commands::batch_indices(10, 2, 7, 3));
}

TEST(Commands, EndToEndOnATinyDataset) {
  const fs::path dir = scratch("e2e");
  config::RunConfig cfg;
  cfg.set("steps", "2");
  cfg.set("checkpoint_every", "2");
  cfg.set("min_views", "2");
  cfg.set("prob_min", "0.0");
  std::ostringstream log;
  commands::SyntheticOptions syn;
  syn.out = dir / "data";
  syn.count = 1;
  syn.views = 3;
  syn.seed = 5;
  commands::make_synthetic(syn, cfg, log);
  ASSERT_EQ(commands::list_scenes(dir / "data").size(), 1u);

  const auto summary = commands::train(cfg, {dir / "data", dir / "run", false}, log);
  EXPECT_EQ(summary.last_step, 2);
  const auto ckpt = commands::latest_checkpoint(dir / "run");
  ASSERT_TRUE(ckpt.has_value());

  commands::InferOptions inf;
  inf.data = dir / "data";
  inf.checkpoint = *ckpt;
  inf.out = dir / "depths";
  commands::infer(cfg, inf, log);
  commands::FuseOptions fu;
  fu.data = dir / "data";
  fu.depths = dir / "depths";
  fu.out = dir / "fused";
  commands::fuse(cfg, fu, log);
  const std::string scene = commands::list_scenes(dir / "data")[0];
  ASSERT_TRUE(fs::exists(dir / "fused" / (scene + ".ply")));

  commands::EvalOptions ev;
  ev.recon = dir / "fused" / (scene + ".ply");
  ev.gt = dir / "data" / "scenes" / scene / "gt.ply";
  EXPECT_THROW(commands::eval(cfg, ev), config::ConfigError);
  cfg.set("tau", "5");
  const auto report = commands::eval(cfg, ev);
  EXPECT_GE(report.f_score_pct, 0.0);
  EXPECT_LE(report.f_score_pct, 100.0);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("exit");
  EXPECT_EQ(run("config"), 0);
  EXPECT_EQ(run("config --set no_such_key=1"), 1);
  EXPECT_EQ(run("no-such-command"), 1);
  PointCloud c;
  c.points = {{0, 0, 1}};
  c.colors = {{{0, 0, 0}}};
  c.source_view = {0};
  write_ply(dir / "a.ply", c);
  const std::string ply = (dir / "a.ply").string();
  EXPECT_EQ(run("eval --recon " + ply + " --gt " + ply), 1);
  EXPECT_EQ(run("eval --recon " + ply + " --gt " + ply + " --set tau=1"), 0);
  io::write_text(dir / "bad.ply", "ply\nformat nonsense\n");
  EXPECT_EQ(run("eval --recon " + (dir / "bad.ply").string() + " --gt " + ply + " --set tau=1"), 2);
}
