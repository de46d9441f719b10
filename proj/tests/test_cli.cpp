#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "advoverlay/cli.hpp"
#include "advoverlay/image_io.hpp"
#include "advoverlay/toy.hpp"

using namespace advoverlay;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fs::temp_directory_path() / ("advoverlay_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root);
    fs::create_directories(root / "corpus");
    write_scene_corpus(root / "corpus", 2, 11);
    save_png(root / "black.png", ImageTensor(3, kToySide, kToySide, 0.0));
  }
  void TearDown() override { fs::remove_all(root); }
  std::string path(const std::string& name) const { return (root / name).string(); }

  fs::path root;
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitWithOne) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"launch"}).code, kExitUsage);
  EXPECT_EQ(cli({"detect"}).code, kExitUsage);  // --image missing
  EXPECT_EQ(cli({"detect", "--image", path("black.png"), "--frobnicate"}).code, kExitUsage);
  EXPECT_EQ(cli({"attack", "--image", path("black.png"), "--mode", "sideways"}).code, kExitUsage);
  EXPECT_EQ(cli({"attack", "--image", path("black.png"), "--mask-rect", "1,2,3"}).code, kExitUsage);
  EXPECT_EQ(cli({"attack", "--image", path("black.png"), "--mode", "one-targeted"}).code, kExitUsage);
  const CliRun r = cli({"attack", "--image", path("black.png"), "--xi", "-1"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("xi"), std::string::npos);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST_F(CliTest, RuntimeFailuresExitWithTwo) {
  std::ofstream(root / "garbage.bin") << "not weights";
  EXPECT_EQ(cli({"detect", "--image", path("black.png"), "--weights", path("garbage.bin")}).code, kExitRuntime);
  fs::create_directories(root / "empty");
  EXPECT_EQ(cli({"corpus", "--corpus", path("empty"), "--iters", "1", "--output-dir", path("o")}).code, kExitRuntime);
}

TEST_F(CliTest, DetectOnBlackImageIsDeterministic) {
  const CliRun a = cli({"detect", "--image", path("black.png"), "--seed", "7"});
  const CliRun b = cli({"detect", "--image", path("black.png"), "--seed", "7"});
  EXPECT_EQ(a.code, kExitOk);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out.rfind("class_id,score,x,y,w,h\n", 0), 0u);
}

TEST_F(CliTest, AttackWritesReproducibleArtifacts) {
  const std::vector<std::string> base{"attack",  "--image", path("corpus/scene_000.png"), "--mask-rect", "32,32,64,64",
                                      "--mode",  "multi-untargeted", "--xi", "8", "--alpha", "2", "--iters", "3"};
  auto with_dir = [&](const std::string& d) {
    auto args = base;
    args.insert(args.end(), {"--output-dir", path(d)});
    return args;
  };
  ASSERT_EQ(cli(with_dir("a")).code, kExitOk);
  ASSERT_EQ(cli(with_dir("b")).code, kExitOk);
  for (const char* f : {"adversarial.png", "report.csv", "detections_benign.csv", "detections_adversarial.csv"}) {
    EXPECT_TRUE(fs::exists(root / "a" / f)) << f;
    EXPECT_EQ(slurp(root / "a" / f), slurp(root / "b" / f)) << f;
  }
  const std::string manifest = slurp(root / "a" / "manifest.txt");
  EXPECT_NE(manifest.find("xi = 8\n"), std::string::npos);
  EXPECT_NE(manifest.find("mask_pixels = 4096\n"), std::string::npos);
  EXPECT_NE(manifest.find("seed = 0\n"), std::string::npos);
  // Outside the mask the adversarial image is the letterboxed input.
  const ImageTensor in = load_image(root / "corpus" / "scene_000.png");
  const ImageTensor adv = load_image(root / "a" / "adversarial.png");
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < kToySide; ++y)
      for (int x = 0; x < kToySide; ++x)
        if (x < 32 || x >= 96 || y < 32 || y >= 96) ASSERT_EQ(in.at(c, y, x), adv.at(c, y, x));
}

TEST_F(CliTest, DefaultsAreXi8Alpha2Box64) {
  ASSERT_EQ(cli({"attack", "--image", path("black.png"), "--iters", "1", "--output-dir", path("d")}).code, kExitOk);
  const std::string manifest = slurp(root / "d" / "manifest.txt");
  for (const char* line : {"mode = multi-untargeted\n", "xi = 8\n", "alpha = 2\n", "channel_source = average\n",
                           "mask_pixels = 4096\n"})
    EXPECT_NE(manifest.find(line), std::string::npos) << line;
}

TEST_F(CliTest, MakeMaskRasterisesRects) {
  const CliRun r = cli({"make-mask", "--mask-rect", "0,0,10,10", "--mask-rect", "5,5,10,10", "--width", "20",
                     "--height", "20", "--output-dir", path("m")});
  ASSERT_EQ(r.code, kExitOk);
  EXPECT_EQ(r.out, "175 pixels\n");
  const Mask m = load_mask_png(root / "m" / "mask.png");
  EXPECT_EQ(m.popcount(), 175u);
  EXPECT_EQ(m.width(), 20);
}

TEST_F(CliTest, CorpusWritesCurvesAndManifest) {
  ASSERT_EQ(cli({"corpus", "--corpus", path("corpus"), "--iters", "2", "--output-dir", path("c")}).code, kExitOk);
  EXPECT_EQ(slurp(root / "c" / "trials.csv").rfind("image_id,benign_boxes,first_success_iteration,final_boxes\n", 0),
            0u);
  std::istringstream curve(slurp(root / "c" / "curve.csv"));
  int lines = 0;
  for (std::string l; std::getline(curve, l);) ++lines;
  EXPECT_EQ(lines, 3);
  EXPECT_NE(slurp(root / "c" / "manifest.txt").find("mask_box = 64x64\n"), std::string::npos);
}

TEST_F(CliTest, SweepOverXiHasFourGroups) {
  ASSERT_EQ(cli({"sweep", "--corpus", path("corpus"), "--param", "xi", "--values", "2,4,8,10", "--iters", "2",
                 "--output-dir", path("s")})
                .code,
            kExitOk);
  std::istringstream csv(slurp(root / "s" / "sweep.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "parameter_value,iteration,success_rate,mean_box_increase");
  std::set<std::string> groups;
  int rows = 0;
  while (std::getline(csv, line)) {
    groups.insert(line.substr(0, line.find(',')));
    ++rows;
  }
  EXPECT_EQ(groups, (std::set<std::string>{"2", "4", "8", "10"}));
  EXPECT_EQ(rows, 8);
  EXPECT_EQ(cli({"sweep", "--corpus", path("corpus"), "--param", "xi", "--values", "2,abc"}).code, kExitUsage);
}
