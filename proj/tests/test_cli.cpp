#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mosaiks/csv.hpp"
#include "mosaiks/feature_table.hpp"
#include "mosaiks/patch_bank.hpp"
#include "mosaiks/ridge.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace mosaiks;
using testing_support::scratch_dir;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::string& args, const std::string& log_dir) {
  const std::string out = log_dir + "/stdout.txt", err = log_dir + "/stderr.txt";
  const std::string cmd = std::string(MOSAIKS_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::size_t line_count(const std::string& path) {
  std::ifstream f(path);
  std::size_t n = 0;
  for (std::string line; std::getline(f, line);) n += !line.empty();
  return n;
}

// One small corpus shared by the tests below: 60 images of 20x20 with
// nightlights, featurized at K=32.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = scratch_dir("cli_pipeline");
    ASSERT_EQ(run("synth --seed 4 --n 60 --size 20 --nightlights-pixels 16 --threads 2 --out " + root_ + "/data",
                  root_).code, 0);
    ASSERT_EQ(run("featurize --seed 4 --k 32 --images " + root_ + "/data/images --threads 2 --out " + root_ +
                      "/feat",
                  root_).code, 0);
  }
  static std::string data() { return root_ + "/data"; }
  static std::string feat() { return root_ + "/feat"; }
  static std::string root_;
};
std::string CliPipeline::root_;

}  // namespace

TEST(Cli, SynthWritesImagesAndManifest) {
  const auto dir = scratch_dir("cli_synth");
  ASSERT_EQ(run("synth --seed 1 --n 10 --size 16 --out " + dir + "/a", dir).code, 0);
  std::size_t images = 0;
  for (const auto& e : fs::directory_iterator(dir + "/a/images")) images += e.path().extension() == ".png";
  EXPECT_EQ(images, 10u);
  EXPECT_EQ(line_count(dir + "/a/manifest.csv"), 11u);
  const auto cfg = slurp(dir + "/a/synth.cfg");
  EXPECT_NE(cfg.find("n=10\n"), std::string::npos);
  EXPECT_NE(cfg.find("seed=1\n"), std::string::npos);
  // Re-running from the emitted config reproduces the manifest byte for byte.
  ASSERT_EQ(run("synth --config " + dir + "/a/synth.cfg --out " + dir + "/b", dir).code, 0);
  EXPECT_EQ(slurp(dir + "/a/manifest.csv"), slurp(dir + "/b/manifest.csv"));
}

TEST(Cli, UsageErrorsExitTwo) {
  const auto dir = scratch_dir("cli_usage");
  EXPECT_EQ(run("synth --n 0 --out " + dir + "/x", dir).code, 2);
  EXPECT_EQ(run("nonsense", dir).code, 2);
  EXPECT_EQ(run("featurize --out " + dir + "/y", dir).code, 2);  // no --images
  EXPECT_EQ(run("synth --n 3 --task forest --out " + dir + "/z", dir).code, 2);
}

TEST(Cli, FeaturizeDefaultsAndOverrides) {
  const auto dir = scratch_dir("cli_feat");
  ASSERT_EQ(run("synth --seed 2 --n 8 --size 12 --out " + dir + "/data", dir).code, 0);
  const auto r = run("featurize --images " + dir + "/data/images --out " + dir + "/def", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto bank = PatchBank::load(dir + "/def/bank.mskb");
  EXPECT_EQ(bank.num_features(), 8192u);
  EXPECT_EQ(bank.patch_width(), 3u);
  EXPECT_NE(r.out.find("K=8192"), std::string::npos);
  EXPECT_NE(r.out.find("compression="), std::string::npos);
  ASSERT_EQ(run("featurize --k 256 --m 6 --images " + dir + "/data/images --out " + dir + "/custom", dir).code, 0);
  const auto custom = PatchBank::load(dir + "/custom/bank.mskb");
  EXPECT_EQ(custom.num_features(), 256u);
  EXPECT_EQ(custom.patch_width(), 6u);
  const auto t = FeatureTable::load(dir + "/custom/features.mskf");
  EXPECT_EQ(t.rows(), 8u);
  EXPECT_EQ(t.bank_fingerprint, custom.fingerprint());
}

TEST(Cli, CorruptImageIsNamed) {
  const auto dir = scratch_dir("cli_corrupt");
  ASSERT_EQ(run("synth --seed 2 --n 4 --size 12 --out " + dir + "/data", dir).code, 0);
  const auto victim = fs::directory_iterator(dir + "/data/images")->path();
  std::ofstream(victim, std::ios::trunc) << "not a png";
  const auto r = run("featurize --k 16 --images " + dir + "/data/images --out " + dir + "/f", dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find(victim.filename().string()), std::string::npos) << r.err;
}

TEST_F(CliPipeline, MissingLabelColumnIsSchemaError) {
  const auto dir = scratch_dir("cli_schema");
  const auto r = run("train --features " + feat() + "/features.mskf --labels " + data() +
                         "/manifest.csv --label-column income --out " + dir,
                     dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("income"), std::string::npos);
}

TEST_F(CliPipeline, UnmatchedLabelCellsAreListed) {
  const auto dir = scratch_dir("cli_join");
  std::ofstream(dir + "/labels.csv") << "lat,lon,label\n10.0,10.0,1\n";
  const auto r = run("train --features " + feat() + "/features.mskf --labels " + dir + "/labels.csv --out " + dir,
                     dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("outside grid"), std::string::npos) << r.err;
}

TEST_F(CliPipeline, NoiselessTrainPredictEvalAgree) {
  const auto dir = scratch_dir("cli_train");
  const auto table = FeatureTable::load(feat() + "/features.mskf");
  Rng rng(9);
  const Eigen::VectorXd w = testing_support::random_vector(static_cast<Eigen::Index>(table.cols()), rng);
  const Eigen::VectorXd y = table.values * w;
  {
    std::ofstream f(dir + "/labels.csv");
    f << "lat,lon,label\n";
    f.precision(17);
    for (std::size_t i = 0; i < table.rows(); ++i)
      f << table.locations[i].lat << ',' << table.locations[i].lon << ',' << y(static_cast<Eigen::Index>(i)) << '\n';
  }
  const std::string common = " --features " + feat() + "/features.mskf --labels " + dir + "/labels.csv";
  ASSERT_EQ(run("train --seed 4" + common + " --out " + dir + "/run", dir).code, 0);
  ASSERT_EQ(run("eval --train-dir " + dir + "/run" + common + " --out " + dir + "/eval", dir).code, 0);
  ASSERT_EQ(run("predict --model " + dir + "/run/model.mskm --features " + feat() + "/features.mskf --out " + dir +
                    "/pred",
                dir).code, 0);

  const auto metrics = read_csv(dir + "/eval/metrics.csv");
  std::map<std::string, double> m;
  for (std::size_t r = 0; r < metrics.rows.size(); ++r) m[metrics.rows[r][0]] = metrics.number(r, 1);
  EXPECT_GT(m["holdout_r2"], 0.99);
  EXPECT_LE(m["cv_min_r2"], m["cv_mean_r2"]);

  // Recompute the training R^2 from the predictions file.
  const auto split = read_csv(dir + "/run/split.csv");
  const auto preds = read_csv(dir + "/pred/predictions.csv");
  const auto labels = read_csv(dir + "/labels.csv");
  std::map<std::pair<std::string, std::string>, double> pred_at;
  for (std::size_t r = 0; r < preds.rows.size(); ++r) pred_at[{preds.rows[r][0], preds.rows[r][1]}] = preds.number(r, 2);
  std::set<std::pair<std::string, std::string>> train_cells;
  for (const auto& row : split.rows)
    if (row[2] == "train") train_cells.insert({row[0], row[1]});
  std::vector<double> yt, pt;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    char a[40], b[40];
    std::snprintf(a, sizeof a, "%.17g", table.locations[i].lat);
    std::snprintf(b, sizeof b, "%.17g", table.locations[i].lon);
    if (!train_cells.count({a, b})) continue;
    yt.push_back(y(static_cast<Eigen::Index>(i)));
    pt.push_back(pred_at.at({a, b}));
  }
  ASSERT_EQ(yt.size(), static_cast<std::size_t>(m["n_train"]));
  const double r2 = r_squared(Eigen::Map<Eigen::VectorXd>(yt.data(), static_cast<Eigen::Index>(yt.size())),
                              Eigen::Map<Eigen::VectorXd>(pt.data(), static_cast<Eigen::Index>(pt.size())));
  EXPECT_NEAR(r2, m["train_r2"], 1e-10);
}

TEST_F(CliPipeline, PredictRefusesForeignBank) {
  const auto dir = scratch_dir("cli_foreign");
  ASSERT_EQ(run("train --features " + feat() + "/features.mskf --labels " + data() + "/manifest.csv --out " + dir +
                    "/run",
                dir).code, 0);
  ASSERT_EQ(run("featurize --seed 99 --k 32 --images " + data() + "/images --out " + dir + "/other", dir).code, 0);
  EXPECT_EQ(run("predict --model " + dir + "/run/model.mskm --features " + dir + "/other/features.mskf --out " +
                    dir + "/p",
                dir).code, 3);
}

TEST_F(CliPipeline, CheckerboardWritesFortyRows) {
  const auto dir = scratch_dir("cli_cb");
  const auto r = run("checkerboard --features " + feat() + "/features.mskf --labels " + data() +
                         "/manifest.csv --out " + dir,
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = read_csv(dir + "/checkerboard.csv");
  EXPECT_EQ(t.rows.size(), 40u);
  std::set<std::string> offsets;
  for (const auto& row : t.rows) offsets.insert(row[1]);
  EXPECT_EQ(offsets.size(), 4u);
  EXPECT_EQ(read_csv(dir + "/checkerboard_summary.csv").rows.size(), 10u);
  EXPECT_TRUE(fs::exists(dir + "/checkerboard.cfg"));
}

TEST_F(CliPipeline, RbfSingleSigmaGrid) {
  const auto dir = scratch_dir("cli_rbf");
  ASSERT_EQ(run("rbf --sigmas 0.5 --labels " + data() + "/manifest.csv --out " + dir, dir).code, 0);
  const auto t = read_csv(dir + "/rbf.csv");
  EXPECT_EQ(t.rows.size(), 40u);
  std::size_t live = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    if (t.rows[r][2] != "nan") {
      EXPECT_EQ(t.number(r, 2), 0.5);
      ++live;
    }
  EXPECT_GT(live, 0u);
}

TEST_F(CliPipeline, SuperresFourFactors) {
  const auto dir = scratch_dir("cli_sr");
  ASSERT_EQ(run("train --features " + feat() + "/features.mskf --labels " + data() + "/manifest.csv --out " + dir +
                    "/run",
                dir).code, 0);
  const auto r = run("superres --limit 3 --images " + data() + "/images --bank " + feat() + "/bank.mskb --model " +
                         dir + "/run/model.mskm --out " + dir,
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = read_csv(dir + "/superres.csv");
  std::map<std::pair<std::string, std::string>, std::set<std::string>> factors;
  for (const auto& row : t.rows) factors[{row[0], row[1]}].insert(row[2]);
  EXPECT_EQ(factors.size(), 3u);
  for (const auto& [cell, fs_] : factors) EXPECT_EQ(fs_, (std::set<std::string>{"2", "4", "8", "16"}));
  EXPECT_EQ(t.rows.size(), 3u * (4 + 16 + 64 + 256));
}

TEST_F(CliPipeline, FuseReportsBothModels) {
  const auto dir = scratch_dir("cli_fuse");
  const auto r = run("fuse --features " + feat() + "/features.mskf --labels " + data() + "/manifest.csv --second " +
                         data() + "/nightlights.csv --out " + dir,
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = read_csv(dir + "/fuse.csv");
  std::set<std::string> keys;
  for (const auto& row : t.rows) keys.insert(row[0]);
  EXPECT_TRUE(keys.count("single_holdout_r2"));
  EXPECT_TRUE(keys.count("block_holdout_r2"));
  EXPECT_TRUE(keys.count("block_lambda2"));
}

TEST_F(CliPipeline, ThreadCountDoesNotChangeBytes) {
  const auto dir = scratch_dir("cli_threads");
  for (const std::string t : {"1", "3"}) {
    const std::string out = dir + "/t" + t;
    ASSERT_EQ(run("featurize --seed 4 --k 32 --precision f64 --images " + data() + "/images --threads " + t +
                      " --out " + out,
                  dir).code, 0);
    ASSERT_EQ(run("train --threads " + t + " --features " + out + "/features.mskf --labels " + data() +
                      "/manifest.csv --out " + out,
                  dir).code, 0);
    ASSERT_EQ(run("checkerboard --threads " + t + " --deltas 4,8 --features " + out + "/features.mskf --labels " +
                      data() + "/manifest.csv --out " + out,
                  dir).code, 0);
  }
  for (const std::string f : {"bank.mskb", "features.mskf", "model.mskm", "cv.csv", "checkerboard.csv"})
    EXPECT_EQ(slurp(dir + "/t1/" + f), slurp(dir + "/t3/" + f)) << f;
}
