#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "synthetic.hpp"
#include "vqfuzz/cli/commands.hpp"
#include "vqfuzz/cli/lockfile.hpp"
#include "vqfuzz/cli/records_table.hpp"
#include "vqfuzz/digest.hpp"
#include "vqfuzz/manifest.hpp"

namespace vqfuzz {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct RunResult {
  int code = 0;
  std::string err;
};

RunResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "vqfuzz");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  RunResult r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.err = err.str();
  return r;
}

// Digest of every regular file under `dir`, keyed by relative path.
std::map<std::string, std::string> tree_digest(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file())
      out[fs::relative(e.path(), dir).string()] = sha256_hex(testing::read_file(e.path()));
  return out;
}

std::string manifest_without_timestamp(const fs::path& dir) {
  auto m = read_manifest(dir);
  m.timestamp.clear();
  return to_json(m);
}

// One full pipeline on a synthetic PNG dataset, shared by the tests below.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new TempDir();
    testing::write_png_dataset(*root_ / "data", 20, 10, 1);
    testing::write_file(config(), testing::tiny_config_text(*root_ / "data"));
    ASSERT_EQ(stage({"pretrain", "--out", dir("vqvae")}).code, 0);
    ASSERT_EQ(stage({"train-classifier", "--out", dir("clf")}).code, 0);
    ASSERT_EQ(stage({"adv-train", "--vqvae", dir("vqvae"), "--out", dir("adv")}).code, 0);
    ASSERT_EQ(stage({"generate", "--model", dir("adv"), "--out", dir("gen")}).code, 0);
    ASSERT_EQ(stage({"evaluate", "--dataset", dir("gen"), "--classifier", dir("clf"), "--out",
                     dir("eval")})
                  .code,
              0);
  }

  static void TearDownTestSuite() {
    delete root_;
    root_ = nullptr;
  }

  static std::string config() { return (*root_ / "config.ini").string(); }
  static std::string dir(const std::string& name) { return (*root_ / name).string(); }

  static RunResult stage(std::vector<std::string> args) {
    args.insert(args.begin(), {"--config", config()});
    return run_cli(args);
  }

  static TempDir* root_;
};

TempDir* Pipeline::root_ = nullptr;

TEST_F(Pipeline, GenerateWrites270Records) {
  const auto rows = cli::read_records(fs::path(dir("gen")) / "records.csv");
  ASSERT_EQ(rows.size(), 270U);
  EXPECT_EQ(testing::read_file(fs::path(dir("gen")) / "records.csv").substr(0, 4), "file");
  for (const auto& r : rows) {
    EXPECT_NE(r.source_class, r.perturber_class);
    EXPECT_TRUE(fs::exists(fs::path(dir("gen")) / "images" / r.file)) << r.file;
    EXPECT_EQ(r.lambda, 0.2);
  }
  EXPECT_EQ(rows.front().file, "0_0__1_0.png");
  EXPECT_EQ(read_manifest(dir("adv")).trained_lambda, 0.2);
}

TEST_F(Pipeline, MetricsCsvHasDocumentedColumns) {
  const auto text = testing::read_file(fs::path(dir("eval")) / "metrics.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "dataset,model,lambda,mse,ssim,ld,er,sr,ica_before,ica_after");
  std::istringstream in(text);
  EXPECT_EQ(read_metrics_csv(in).rows.size(), 1U);
  EXPECT_TRUE(fs::exists(fs::path(dir("eval")) / "grid.png"));
}

TEST_F(Pipeline, RerunsAreByteIdentical) {
  const auto original_checkpoints = tree_digest(dir("adv"));
  const auto clf_checkpoints = tree_digest(dir("clf"));
  ASSERT_EQ(stage({"generate", "--model", dir("adv"), "--out", dir("gen2")}).code, 0);
  ASSERT_EQ(stage({"evaluate", "--dataset", dir("gen2"), "--classifier", dir("clf"), "--out",
                   dir("eval2")})
                .code,
            0);
  EXPECT_EQ(testing::read_file(fs::path(dir("gen")) / "records.csv"),
            testing::read_file(fs::path(dir("gen2")) / "records.csv"));
  EXPECT_EQ(tree_digest(fs::path(dir("gen")) / "images"), tree_digest(fs::path(dir("gen2")) / "images"));
  EXPECT_EQ(testing::read_file(fs::path(dir("eval")) / "metrics.csv"),
            testing::read_file(fs::path(dir("eval2")) / "metrics.csv"));
  EXPECT_EQ(manifest_without_timestamp(dir("gen")), manifest_without_timestamp(dir("gen2")));
  EXPECT_EQ(manifest_without_timestamp(dir("eval")), manifest_without_timestamp(dir("eval2")));
  EXPECT_EQ(tree_digest(dir("adv")), original_checkpoints);
  EXPECT_EQ(tree_digest(dir("clf")), clf_checkpoints);
}

TEST_F(Pipeline, TrainingRerunIsDeterministic) {
  ASSERT_EQ(stage({"pretrain", "--out", dir("vqvae2")}).code, 0);
  EXPECT_EQ(testing::read_file(fs::path(dir("vqvae")) / "losses.csv"),
            testing::read_file(fs::path(dir("vqvae2")) / "losses.csv"));
  EXPECT_EQ(manifest_without_timestamp(dir("vqvae")), manifest_without_timestamp(dir("vqvae2")));
}

TEST_F(Pipeline, RetrainBeforeAccuracyMatchesEvaluate) {
  const auto clf_checkpoints = tree_digest(dir("clf"));
  const auto gen_files = tree_digest(dir("gen"));
  ASSERT_EQ(stage({"retrain", "--classifier", dir("clf"), "--dataset", dir("gen"), "--out",
                   dir("retrain")})
                .code,
            0);
  const auto m = read_manifest(dir("retrain"));
  EXPECT_EQ(m.properties.at("accuracy_before"),
            read_manifest(dir("eval")).properties.at("test_accuracy"));
  EXPECT_EQ(m.properties.at("selected"), "20");
  EXPECT_TRUE(fs::exists(fs::path(dir("retrain")) / "classifier" / "weights.pt"));
  EXPECT_EQ(tree_digest(dir("clf")), clf_checkpoints);
  EXPECT_EQ(tree_digest(dir("gen")), gen_files);

  ASSERT_EQ(stage({"retrain", "--classifier", dir("clf"), "--mode", "random-control", "--out",
                   dir("control")})
                .code,
            0);
  EXPECT_EQ(read_manifest(dir("control")).properties.at("moved"), "20");
  ASSERT_EQ(stage({"report", "--input", dir("eval"), "--input", dir("retrain"), "--input",
                   dir("control"), "--out", dir("report")})
                .code,
            0);
  std::istringstream in(testing::read_file(fs::path(dir("report")) / "report.csv"));
  EXPECT_EQ(read_metrics_csv(in).rows.size(), 3U);
}

TEST_F(Pipeline, AblationFlagsReachTheManifest) {
  ASSERT_EQ(stage({"adv-train", "--vqvae", dir("vqvae"), "--no-quantizer", "--lambda", "0.3",
                   "--out", dir("adv-vq")})
                .code,
            0);
  const auto m = read_manifest(dir("adv-vq"));
  EXPECT_EQ(m.trained_lambda, 0.3);
  EXPECT_EQ(m.properties.at("use_quantizer"), "false");
  EXPECT_EQ(m.properties.at("use_discriminators"), "true");
}

TEST_F(Pipeline, LambdaMismatchExitsWithThreeAndWritesNothing) {
  const auto r = stage({"generate", "--model", dir("adv"), "--lambda", "0.3", "--out", dir("bad-gen")});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("0.3"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir("bad-gen")));
}

TEST_F(Pipeline, MissingArtifactExitsWithFour) {
  EXPECT_EQ(stage({"adv-train", "--vqvae", dir("nothing"), "--out", dir("bad-adv")}).code, 4);
  EXPECT_EQ(stage({"generate", "--model", dir("nothing"), "--out", dir("bad-adv")}).code, 4);
  EXPECT_EQ(stage({"evaluate", "--dataset", dir("nothing"), "--classifier", dir("clf"), "--out",
                   dir("bad-adv")})
                .code,
            4);
  EXPECT_FALSE(fs::exists(dir("bad-adv")));
}

TEST_F(Pipeline, LockedOutputDirectoryExitsWithOne) {
  cli::DirectoryLock held(dir("locked"));
  const auto r = stage({"generate", "--model", dir("adv"), "--out", dir("locked")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("in use"), std::string::npos) << r.err;
}

TEST(Cli, ConfigErrorsExitWithTwoAndWriteNothing) {
  TempDir root;
  testing::write_file(root / "bad.ini", "[pretrain]\nepoch = 3\n");
  auto r = run_cli({"--config", (root / "bad.ini").string(), "pretrain", "--out", (root / "out").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("pretrain.epoch"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(root / "out"));

  testing::write_file(root / "range.ini", "[adversary]\nlambda = 2\n");
  r = run_cli({"--config", (root / "range.ini").string(), "pretrain", "--out", (root / "out").string()});
  EXPECT_EQ(r.code, 2);

  r = run_cli({"pretrain"});
  EXPECT_EQ(r.code, 2);
  r = run_cli({"--out", (root / "out").string(), "retrain", "--classifier", "x", "--mode", "other"});
  EXPECT_EQ(r.code, 2);
  r = run_cli({"--out", (root / "out").string(), "frobnicate"});
  EXPECT_EQ(r.code, 2);
  r = run_cli({"--config", (root / "absent.ini").string(), "pretrain", "--out", (root / "out").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(root / "out"));
}

TEST(Cli, EmptyDatasetDirectoryIsAMissingArtifact) {
  TempDir root;
  fs::create_directories(root / "data");
  testing::write_file(root / "c.ini", testing::tiny_config_text(root / "data"));
  const auto r = run_cli({"--config", (root / "c.ini").string(), "pretrain", "--out", (root / "out").string()});
  EXPECT_EQ(r.code, 4);
}

TEST(Cli, RecordsTableRoundTrip) {
  cli::RecordRow row;
  row.file = "3_0__7_2.png";
  row.original_id = "3/17";
  row.source_class = 3;
  row.perturber_id = "7/4";
  row.perturber_class = 7;
  row.perturber_index = 2;
  row.lambda = 0.1;
  std::stringstream s;
  cli::write_records(s, {row, row});
  std::string header;
  std::getline(s, header);
  EXPECT_EQ(header, cli::kRecordsHeader);
  s.seekg(0);
  const auto back = cli::read_records(s);
  ASSERT_EQ(back.size(), 2U);
  EXPECT_EQ(back[0].file, row.file);
  EXPECT_EQ(back[0].perturber_id, row.perturber_id);
  EXPECT_EQ(back[0].lambda, 0.1);
  EXPECT_EQ(back[0].original_file(), "3_0.png");
}

}  // namespace
}  // namespace vqfuzz
