#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "caepl/caepl.hpp"

namespace fs = std::filesystem;

#ifndef CAEPL_CLI_PATH
#define CAEPL_CLI_PATH ""
#endif
#ifndef CAEPL_SOURCE_DIR
#define CAEPL_SOURCE_DIR ""
#endif

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("caepl_harness_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

TEST(Config, PaperProtocolDefaults) {
  caepl::ExperimentConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.seg_train.lr, 1e-4);
  EXPECT_DOUBLE_EQ(cfg.seg_train.momentum, 0.9);
  EXPECT_EQ(cfg.seg_train.batch_size, 5);
  EXPECT_EQ(cfg.ae_train.batch_size, 4);
  EXPECT_DOUBLE_EQ(cfg.ae_train.p_corrupt, 0.5);
  EXPECT_DOUBLE_EQ(cfg.ae_train.p_white, 0.5);
  EXPECT_EQ(cfg.ae_train.ae_loss, caepl::TrainConfig::AeLoss::Bce);
  // regularization split: encoder 1e-3, segmentation net 5e-4, ae 1e-3
  EXPECT_DOUBLE_EQ(cfg.seg_train.l2.coefficient_for("encoder.conv1.weight"), 1e-3);
  EXPECT_DOUBLE_EQ(cfg.seg_train.l2.coefficient_for("fcn.conv3_2.weight"), 5e-4);
  EXPECT_DOUBLE_EQ(cfg.ae_train.l2.coefficient_for("decoder.conv1.weight"), 1e-3);
}

TEST(Config, JsonParseAndVariantDefaults) {
  auto j = nlohmann::json::parse(R"({
    "variant": "ae4m-fcn",
    "init": "encoder-checkpoint",
    "encoder_checkpoint": "/tmp/x.ckpt",
    "scale": "toy",
    "seed": 9,
    "dataset": {"type": "synthetic", "size": 32, "classes": 4, "train_count": 8, "val_count": 4},
    "train": {"lr": 0.02, "max_epochs": 7}
  })");
  auto cfg = caepl::experiment_from_json(j);
  EXPECT_EQ(cfg.variant, caepl::Variant::Ae4mFcn);
  EXPECT_EQ(cfg.init, caepl::InitPolicy::EncoderCheckpoint);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.num_classes, 4);
  EXPECT_DOUBLE_EQ(cfg.seg_train.lr, 0.02);
  EXPECT_EQ(cfg.seg_train.max_epochs, 7);
  EXPECT_EQ(cfg.seg_train.seed, 9u);
  // ae4m toy default has a 3-filter code
  EXPECT_EQ(cfg.ae_spec().code_channels(), 3);
  // untouched keys keep the published defaults
  EXPECT_DOUBLE_EQ(cfg.seg_train.momentum, 0.9);
}

TEST(Config, ErrorsAreConfigKind) {
  EXPECT_THROW(caepl::variant_from_name("resnet"), caepl::ConfigError);
  EXPECT_THROW(caepl::init_policy_from_name("imagenet"), caepl::ConfigError);
  auto bad_monitor = nlohmann::json::parse(R"({"train": {"monitor": "max_luck"}})");
  EXPECT_THROW(caepl::experiment_from_json(bad_monitor), caepl::ConfigError);
  auto bad_ds = nlohmann::json::parse(R"({"dataset": {"type": "dirs"}})");
  EXPECT_THROW(caepl::experiment_from_json(bad_ds), caepl::ConfigError);
  TempDir tmp;
  std::ofstream(tmp.path / "broken.json") << "{ not json";
  EXPECT_THROW(caepl::load_json_file(tmp.path / "broken.json"), caepl::ConfigError);
}

TEST(Config, HashIsStableAndSensitive) {
  caepl::ExperimentConfig a, b;
  EXPECT_EQ(caepl::config_hash(a), caepl::config_hash(b));
  b.seed = 2;
  EXPECT_NE(caepl::config_hash(a), caepl::config_hash(b));
}

TEST(Config, EnvOverrides) {
  caepl::ExperimentConfig cfg;
  ::setenv("CAEPL_SEED", "77", 1);
  ::setenv("CAEPL_SCALE", "full", 1);
  caepl::apply_env_overrides(cfg);
  ::unsetenv("CAEPL_SEED");
  ::unsetenv("CAEPL_SCALE");
  EXPECT_EQ(cfg.seed, 77u);
  EXPECT_EQ(cfg.scale, caepl::Scale::Full);
  EXPECT_EQ(cfg.seg_train.seed, 77u);
}

TEST(Csv, TrainLogRoundTripAndStableBytes) {
  TempDir tmp;
  caepl::TrainingLog log;
  log.rows = {{1, 0.5, 0.6, 0.7, 0.65, 0.0}, {2, 0.4, 0.55, 0.75, 0.7, 0.0}};
  caepl::write_train_log_csv(log, tmp.path / "log.csv");
  caepl::write_train_log_csv(log, tmp.path / "log2.csv");
  EXPECT_EQ(slurp(tmp.path / "log.csv"), slurp(tmp.path / "log2.csv"));
  auto back = caepl::read_train_log_csv(tmp.path / "log.csv");
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[1].epoch, 2);
  EXPECT_DOUBLE_EQ(back.rows[1].val_acc, 0.7);
  std::ofstream(tmp.path / "junk.csv") << "a,b,c\n1,2,3\n";
  EXPECT_THROW(caepl::read_train_log_csv(tmp.path / "junk.csv"), caepl::DataError);
}

TEST(Csv, ScoresIncludePerClassColumns) {
  TempDir tmp;
  caepl::ConfusionMatrix cm(3);
  std::vector<int> gt = {0, 1, 2, 0}, pred = {0, 1, 1, 0};
  cm.accumulate(pred, gt, 255);
  caepl::write_scores_csv("val", cm, tmp.path / "scores.csv");
  auto text = slurp(tmp.path / "scores.csv");
  EXPECT_NE(text.find("split,mean_iou,pix_acc,iou_0,iou_1,iou_2"), std::string::npos);
  EXPECT_NE(text.find("val,"), std::string::npos);
}

TEST(Svg, CurvesRenderPolylines) {
  TempDir tmp;
  caepl::TrainingLog log;
  for (int e = 1; e <= 10; ++e)
    log.rows.push_back({e, 1.0 / e, 1.2 / e, 1.0 - 1.0 / e, 1.0 - 1.2 / e, 0.0});
  caepl::write_curves_svg(log, tmp.path / "curves.svg");
  auto text = slurp(tmp.path / "curves.svg");
  EXPECT_NE(text.find("<svg"), std::string::npos);
  EXPECT_NE(text.find("polyline"), std::string::npos);
  EXPECT_NE(text.find("val_loss"), std::string::npos);
  caepl::TrainingLog empty;
  EXPECT_THROW(caepl::write_curves_svg(empty, tmp.path / "x.svg"), caepl::DataError);
}

TEST(Experiment, TrainSegWritesArtifactsAndEvaluateScores) {
  TempDir tmp;
  caepl::ExperimentConfig cfg;
  cfg.variant = caepl::Variant::Fcn;
  cfg.out = tmp.path / "run";
  cfg.dataset.synthetic.size = 32;
  cfg.dataset.synthetic.train_count = 6;
  cfg.dataset.synthetic.val_count = 3;
  cfg.num_classes = 5;
  cfg.divisor = 16;
  cfg.seg_train.lr = 1e-3;
  cfg.seg_train.max_epochs = 2;
  auto result = caepl::run_train_seg(cfg, /*verbose=*/false);
  EXPECT_EQ(result.log.rows.size(), 2u);
  EXPECT_TRUE(fs::exists(cfg.out / "log.csv"));
  EXPECT_TRUE(fs::exists(cfg.out / "best.ckpt"));
  EXPECT_TRUE(fs::exists(cfg.out / "last.ckpt"));

  auto outcome = caepl::run_evaluate(cfg, cfg.out / "best.ckpt", "val");
  EXPECT_GE(outcome.mean_iou, 0.0);
  EXPECT_LE(outcome.mean_iou, 1.0);
  EXPECT_TRUE(fs::exists(cfg.out / "scores.csv"));
}

TEST(Experiment, EncoderCheckpointInitNeedsCompatibleVariant) {
  caepl::ExperimentConfig cfg;
  cfg.variant = caepl::Variant::Fcn;
  cfg.init = caepl::InitPolicy::EncoderCheckpoint;
  cfg.encoder_checkpoint = "/nonexistent.ckpt";
  EXPECT_THROW(caepl::build_segmentation_model<float>(cfg), caepl::ConfigError);
}

TEST(Experiment, ParamsReportsDeltaForFullScale) {
  caepl::ExperimentConfig cfg;
  cfg.variant = caepl::Variant::Fcn;
  cfg.scale = caepl::Scale::Full;
  cfg.num_classes = 20;
  cfg.bn_mode = caepl::FCNSpec::BnMode::ScoreStreamsOnly;
  auto text = caepl::run_params(cfg, /*per_layer=*/false);
  EXPECT_NE(text.find("trainable 134473244"), std::string::npos);
  EXPECT_NE(text.find("delta_total 0"), std::string::npos);
}

TEST(Config, ShippedConfigsParse) {
  const fs::path src = CAEPL_SOURCE_DIR;
  if (src.empty()) GTEST_SKIP();
  auto cc = caepl::compare_from_json(caepl::load_json_file(src / "configs" / "desk-compare.json"));
  EXPECT_EQ(cc.matrix.size(), 4u);
  EXPECT_EQ(cc.seeds.size(), 3u);
  EXPECT_EQ(cc.matrix[0].first, caepl::Variant::Fcn);
  EXPECT_EQ(cc.matrix[1].second, caepl::InitPolicy::EncoderCheckpoint);
  EXPECT_EQ(cc.matrix[3].first, caepl::Variant::Eb4Fcn);

  auto ae = caepl::experiment_from_json(
      caepl::load_json_file(src / "configs" / "desk-train-ae.json"));
  EXPECT_EQ(ae.dataset.synthetic.train_count, 200);
  auto seg = caepl::experiment_from_json(
      caepl::load_json_file(src / "configs" / "desk-train-seg.json"));
  EXPECT_EQ(seg.init, caepl::InitPolicy::EncoderCheckpoint);
  auto full = caepl::experiment_from_json(
      caepl::load_json_file(src / "configs" / "full-scale-protocol.json"));
  EXPECT_EQ(full.scale, caepl::Scale::Full);
  EXPECT_EQ(full.ae_spec().encoder_filters, (std::vector<int>{96, 64, 32, 16}));
  EXPECT_DOUBLE_EQ(full.seg_train.lr, 1e-4);
  EXPECT_EQ(full.seg_train.patience, 3000);
  EXPECT_EQ(full.ae_train.patience, 2000);
}

TEST(Experiment, MemorizingTwoSamplesScoresNearPerfect) {
  // a capable toy model overfits two training images; evaluating the best
  // checkpoint against its own training split approaches a perfect score
  caepl::SyntheticSpec sspec;
  sspec.size = 64;
  sspec.train_count = 2;
  sspec.val_count = 2;
  sspec.seed = 5;
  auto data = caepl::generate_synthetic(sspec);
  caepl::FCNSpec fcn{.num_classes = 5, .divisor = 16, .bn_mode = caepl::FCNSpec::BnMode::AllConvs};
  auto model = caepl::build_fcn8s<float>(fcn);
  caepl::default_init(model, 3);
  caepl::TrainConfig cfg;
  cfg.lr = 0.03;
  cfg.batch_size = 2;
  cfg.max_epochs = 800;
  cfg.patience = 800;
  cfg.monitor = caepl::TrainConfig::Monitor::MaxValAcc;
  cfg.seed = 3;
  auto result = caepl::train_segmenter(model, data.train, data.train, cfg);
  auto best = caepl::model_from_checkpoint<float>(result.best);
  auto eval = caepl::evaluate_segmenter(best, data.train, 2);
  EXPECT_GT(eval.cm.mean_iou(), 0.95);
  EXPECT_GT(eval.cm.pixel_accuracy(), 0.99);
}

// --- CLI process-level checks: distinct exit statuses, parseable errors ----

#if defined(__linux__)

int run_cli(const std::string& args, std::string* err_line = nullptr) {
  const std::string cli = CAEPL_CLI_PATH;
  if (cli.empty()) return -1;
  TempDir tmp;
  const fs::path err_file = tmp.path / "stderr.txt";
  const std::string cmd = cli + " " + args + " 2>" + err_file.string() + " >/dev/null";
  const int status = std::system(cmd.c_str());
  if (err_line) {
    std::ifstream in(err_file);
    std::string line, last;
    while (std::getline(in, line))
      if (!line.empty()) last = line;
    *err_line = last;
  }
  return WEXITSTATUS(status);
}

TEST(Cli, MalformedConfigExitsWithConfigStatus) {
  TempDir tmp;
  std::ofstream(tmp.path / "bad.json") << "{ nope";
  std::string err;
  const int status = run_cli("train-seg --config " + (tmp.path / "bad.json").string(), &err);
  EXPECT_EQ(status, 2);
  EXPECT_NE(err.find("kind=config"), std::string::npos) << err;
}

TEST(Cli, MissingCheckpointExitsWithCheckpointStatus) {
  std::string err;
  const int status = run_cli("evaluate --checkpoint /nonexistent.ckpt", &err);
  EXPECT_EQ(status, 4);
  EXPECT_NE(err.find("kind=checkpoint"), std::string::npos) << err;
}

TEST(Cli, ParamsSucceeds) {
  TempDir tmp;
  std::string err;
  const int status =
      run_cli("params --variant fcn --scale full --out " + (tmp.path / "p").string(), &err);
  EXPECT_EQ(status, 0) << err;
  EXPECT_TRUE(fs::exists(tmp.path / "p" / "params.csv"));
}

TEST(Cli, CurvesRendersFromLogCsv) {
  TempDir tmp;
  caepl::TrainingLog log;
  for (int e = 1; e <= 5; ++e) log.rows.push_back({e, 1.0 / e, 1.1 / e, 0.5, 0.5, 0.0});
  caepl::write_train_log_csv(log, tmp.path / "log.csv");
  std::string err;
  const int status = run_cli("curves --log " + (tmp.path / "log.csv").string() + " --svg " +
                                 (tmp.path / "out.svg").string(),
                             &err);
  EXPECT_EQ(status, 0) << err;
  EXPECT_TRUE(fs::exists(tmp.path / "out.svg"));
}

#endif  // __linux__

}  // namespace
