#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "param_arithmetic.hpp"
#include "samamba/cli.hpp"
#include "samamba/config.hpp"
#include "samamba/volume.hpp"
#include "tiny_config.hpp"

using namespace samamba;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("samamba_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

std::string with_commas(std::uint64_t n) {
  std::string s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

}  // namespace

TEST_F(CliTest, PhantomWritesImageAndLabels) {
  auto r = cli({"phantom", "--kind", "sphere-pack", "--dims", "64", "--seed", "7", "--out", path("p")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("p_image.raw")));
  EXPECT_TRUE(fs::exists(path("p_labels.raw")));
  auto labels = load_labels(path("p_labels"));
  EXPECT_EQ(labels.dims, (Dims{64, 64, 64}));

  // same flags, same bytes
  ASSERT_EQ(cli({"phantom", "--dims", "32,40,36", "--seed", "3", "--out", path("a")}).code, 0);
  ASSERT_EQ(cli({"phantom", "--dims", "32,40,36", "--seed", "3", "--out", path("b")}).code, 0);
  EXPECT_EQ(load_volume(path("a_image")).data, load_volume(path("b_image")).data);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_NE(cli({}).code, 0);
  EXPECT_NE(cli({"bogus"}).code, 0);
  EXPECT_NE(cli({"phantom", "--frobnicate", "1"}).code, 0);
  auto r = cli({"phantom", "--dims", "16", "--out", path("x")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  EXPECT_NE(cli({"phantom", "--kind", "gravel", "--out", path("x")}).code, 0);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST_F(CliTest, EvalRejectsMismatchedDims) {
  ASSERT_EQ(cli({"phantom", "--dims", "32", "--out", path("a")}).code, 0);
  ASSERT_EQ(cli({"phantom", "--dims", "32,32,40", "--out", path("b")}).code, 0);
  auto bad = cli({"eval", "--pred", path("a_labels"), "--ref", path("b_labels")});
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.err.find("32x32x40"), std::string::npos);
  auto good = cli({"eval", "--pred", path("a_labels"), "--ref", path("a_labels"), "--json"});
  EXPECT_EQ(good.code, 0);
  EXPECT_NE(good.out.find("\"macro_dice\":1"), std::string::npos);
}

TEST_F(CliTest, ReportPrintsAllProperties) {
  ASSERT_EQ(cli({"phantom", "--kind", "wetting-film", "--dims", "32", "--out", path("w")}).code, 0);
  auto r = cli({"report", "--labels", path("w_labels")});
  EXPECT_EQ(r.code, 0);
  for (const char* row : {"Porosity", "Saturation of brine", "Interfacial area oil-brine", "Surface area of grains",
                          "Euler number of pore space", "Euler number of oil"})
    EXPECT_NE(r.out.find(row), std::string::npos) << row;
}

TEST_F(CliTest, SummaryMatchesLayerArithmetic) {
  for (const char* preset : {"desk", "paper"}) {
    Config cfg = std::string(preset) == "desk" ? desk_config() : paper_config();
    auto t = samamba::testing::tally_parameters(cfg.model);
    auto r = cli({"summary", "--preset", preset});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("parameters (total): " + with_commas(t.total())), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("stage A: " + with_commas(t.stage_a())), std::string::npos);
    EXPECT_NE(r.out.find("stage B: " + with_commas(t.stage_b())), std::string::npos);
    EXPECT_NE(r.out.find("multiply-accumulates"), std::string::npos);
  }
  save_config(path("paper.json"), paper_config());
  auto r = cli({"summary", "--config", path("paper.json")});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("C=768 L=12"), std::string::npos);
}

TEST_F(CliTest, PreprocessTrainSegmentEval) {
  ASSERT_EQ(cli({"phantom", "--dims", "32", "--seed", "1", "--out", path("t")}).code, 0);
  ASSERT_EQ(cli({"phantom", "--dims", "32", "--seed", "2", "--out", path("u")}).code, 0);

  auto pre = cli({"preprocess", "--input", path("t_image"), "--input", path("u_image"), "--out-dir", path("pre"),
                  "--no-denoise"});
  ASSERT_EQ(pre.code, 0) << pre.err;
  EXPECT_TRUE(fs::exists(path("pre/reference.json")));
  EXPECT_TRUE(fs::exists(path("pre/t_image.raw")));

  Config cfg = desk_config();
  cfg.model = samamba::testing::tiny_model();
  cfg.data.grid = {16, 16, 0.1};
  cfg.data.denoise = false;
  cfg.train.batch_size = 2;
  cfg.train.steps_per_epoch = 2;
  cfg.train.val_fraction = 0.5;
  cfg.schedule.stage_a_epochs = 1;
  cfg.schedule.max_epochs = 2;
  cfg.optim.lr = 1e-2;
  save_config(path("tiny.json"), cfg);

  auto tr = cli({"train", "--config", path("tiny.json"), "--image", path("t_image"), "--labels", path("t_labels"),
                 "--image", path("u_image"), "--labels", path("u_labels"), "--out", path("run"), "--quiet"});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_TRUE(fs::exists(path("run/best/manifest.json")));
  EXPECT_TRUE(fs::exists(path("run/metrics.jsonl")));

  auto sg = cli({"segment", "--checkpoint", path("run/best"), "--input", path("u_image"), "--out", path("seg"),
                 "--probs"});
  ASSERT_EQ(sg.code, 0) << sg.err;
  EXPECT_TRUE(fs::exists(path("seg.raw")));
  for (const char* c : {"rock", "brine", "oil"}) EXPECT_TRUE(fs::exists(path("seg_prob_") + c + ".raw")) << c;
  EXPECT_EQ(load_labels(path("seg")).dims, (Dims{32, 32, 32}));
  EXPECT_EQ(cli({"eval", "--pred", path("seg"), "--ref", path("u_labels")}).code, 0);

  auto mismatched = cli({"train", "--config", path("tiny.json"), "--image", path("t_image"), "--out", path("r2"),
                         "--labels", path("t_labels"), "--labels", path("u_labels")});
  EXPECT_NE(mismatched.code, 0);
}
