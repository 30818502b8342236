// Command-line front end: training, evaluation, parameter audits, the
// comparison matrix, and curve rendering.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "caepl/caepl.hpp"

namespace {

// Exit statuses, one per error kind (documented in the README).
int exit_status(caepl::ErrorKind kind) {
  switch (kind) {
    case caepl::ErrorKind::Config: return 2;
    case caepl::ErrorKind::Data: return 3;
    case caepl::ErrorKind::Checkpoint: return 4;
    case caepl::ErrorKind::Shape:
    case caepl::ErrorKind::Param:
    case caepl::ErrorKind::Contract: return 5;
    case caepl::ErrorKind::Score: return 6;
    case caepl::ErrorKind::Io: return 7;
    case caepl::ErrorKind::Transfer: return 8;
  }
  return 1;
}

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> variant;
  std::optional<std::string> scale;
  std::string split = "val";
  std::string checkpoint;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_config = true) {
  if (with_config) cmd->add_option("--config", flags.config_path, "experiment config (json)");
  cmd->add_option("--seed", flags.seed, "override the experiment seed");
  cmd->add_option("--out", flags.out, "override the output directory");
  cmd->add_option("--variant", flags.variant, "fcn|ae4l-fcn|ae4m-fcn|ae4n-fcn|ae3-fcn|eb4-fcn");
  cmd->add_option("--scale", flags.scale, "toy|full");
}

caepl::ExperimentConfig resolve_config(const CommonFlags& flags) {
  caepl::ExperimentConfig cfg;
  if (!flags.config_path.empty())
    cfg = caepl::experiment_from_json(caepl::load_json_file(flags.config_path));
  caepl::apply_env_overrides(cfg);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.out) cfg.out = *flags.out;
  if (flags.variant) cfg.variant = caepl::variant_from_name(*flags.variant);
  if (flags.scale) {
    if (*flags.scale == "toy")
      cfg.scale = caepl::Scale::Toy;
    else if (*flags.scale == "full")
      cfg.scale = caepl::Scale::Full;
    else
      throw caepl::ConfigError("--scale must be toy or full");
  }
  // full-scale defaults follow the audited arrangement unless the config
  // says otherwise explicitly
  if (cfg.scale == caepl::Scale::Full) {
    if (!cfg.bn_mode_explicit) cfg.bn_mode = caepl::FCNSpec::BnMode::ScoreStreamsOnly;
    if (!cfg.num_classes_explicit) cfg.num_classes = 20;
  }
  cfg.seg_train.seed = cfg.seed;
  cfg.ae_train.seed = cfg.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"convolutional-autoencoder pre-processing layers for semantic segmentation"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string log_csv, svg_out;
  std::int64_t target_trainable = caepl::kPublishedAe4lTrainable;
  std::int64_t target_non_trainable = caepl::kPublishedAe4lNonTrainable;
  int search_layers = 4, filter_step = 4, filter_max = 256, filter_min = 4;
  bool per_layer = false;

  auto* train_ae = app.add_subcommand("train-ae", "pre-train the denoising autoencoder");
  add_common(train_ae, flags);

  auto* train_seg = app.add_subcommand("train-seg", "train the segmentation model");
  add_common(train_seg, flags);

  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a split");
  add_common(evaluate, flags);
  // environment provides defaults; explicit flags override them
  if (const char* v = std::getenv("CAEPL_CHECKPOINT")) flags.checkpoint = v;
  if (const char* v = std::getenv("CAEPL_SPLIT")) flags.split = v;
  evaluate->add_option("--checkpoint", flags.checkpoint, "checkpoint to score");
  evaluate->add_option("--split", flags.split, "train|val");

  auto* params = app.add_subcommand("params", "parameter audit for a model variant");
  add_common(params, flags);
  params->add_flag("--per-layer", per_layer, "print per-layer rows");

  auto* search = app.add_subcommand("search-ae-config",
                                    "enumerate encoder plans matching parameter targets");
  add_common(search, flags);
  search->add_option("--trainable", target_trainable, "target trainable count");
  search->add_option("--non-trainable", target_non_trainable, "target non-trainable count");
  search->add_option("--layers", search_layers, "encoder layer count");
  search->add_option("--filter-step", filter_step, "filter grid step");
  search->add_option("--filter-min", filter_min, "filter grid minimum");
  search->add_option("--filter-max", filter_max, "filter grid maximum");

  int jobs = 1;
  auto* compare = app.add_subcommand("compare", "run the experiment matrix across seeds");
  add_common(compare, flags);
  compare->add_option("--jobs", jobs, "run whole seeds concurrently (default 1)");

  auto* curves = app.add_subcommand("curves", "render a training log to svg");
  curves->add_option("--log", log_csv, "training log csv")->required();
  curves->add_option("--svg", svg_out, "output svg path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train_ae)) {
      auto cfg = resolve_config(flags);
      auto result = run_train_ae(cfg);
      std::cout << "best epoch " << result.log.best_epoch << " val_loss "
                << caepl::detail::fmt_g(result.best.meta.value) << "\n";
      std::cout << "wrote " << (cfg.out / "log.csv").string() << ", best.ckpt, last.ckpt\n";
    } else if (app.got_subcommand(train_seg)) {
      auto cfg = resolve_config(flags);
      auto result = run_train_seg(cfg);
      std::cout << "best epoch " << result.log.best_epoch << " val_acc "
                << caepl::detail::fmt_g(result.best.meta.value) << "\n";
      std::cout << "wrote " << (cfg.out / "log.csv").string() << ", best.ckpt, last.ckpt\n";
    } else if (app.got_subcommand(evaluate)) {
      auto cfg = resolve_config(flags);
      if (flags.checkpoint.empty())
        throw caepl::ConfigError("evaluate needs --checkpoint (or CAEPL_CHECKPOINT)");
      auto outcome = run_evaluate(cfg, flags.checkpoint, flags.split);
      std::cout << "split " << flags.split << " mean_iou "
                << caepl::detail::fmt_f(outcome.mean_iou, 4) << " pix_acc "
                << caepl::detail::fmt_f(outcome.pixel_acc, 4) << "\n";
      std::cout << "wrote " << (cfg.out / "scores.csv").string() << "\n";
    } else if (app.got_subcommand(params)) {
      auto cfg = resolve_config(flags);
      std::filesystem::create_directories(cfg.out);
      std::cout << run_params(cfg, per_layer, cfg.out / "params.csv");
    } else if (app.got_subcommand(search)) {
      caepl::AESearchConstraints constraints;
      constraints.layer_counts = {search_layers};
      constraints.filter_step = filter_step;
      constraints.filter_min = filter_min;
      constraints.filter_max = filter_max;
      auto cfg = resolve_config(flags);
      std::filesystem::create_directories(cfg.out);
      std::cout << run_search_ae_config(
          {.trainable = target_trainable, .non_trainable = target_non_trainable}, constraints,
          cfg.out / "ae_search.csv");
    } else if (app.got_subcommand(compare)) {
      if (flags.config_path.empty()) throw caepl::ConfigError("compare needs --config");
      auto cc = caepl::compare_from_json(caepl::load_json_file(flags.config_path));
      caepl::apply_env_overrides(cc.base);
      if (flags.seed) {
        cc.seeds = {*flags.seed};
      }
      if (flags.out) cc.base.out = *flags.out;
      cc.jobs = jobs;
      auto outcome = run_compare(cc);
      std::cout << "variant,encoder_weights,seed,mean_iou,pix_acc\n";
      for (const auto& r : outcome.rows)
        std::cout << r.variant << ',' << (r.encoder_weights ? "use" : "not_use") << ',' << r.seed
                  << ',' << caepl::detail::fmt_f(r.mean_iou, 4) << ','
                  << caepl::detail::fmt_f(r.pixel_acc, 4) << "\n";
      std::cout << "wrote " << (cc.base.out / "summary.csv").string() << " and summary_agg.csv\n";
    } else if (app.got_subcommand(curves)) {
      std::filesystem::path svg = svg_out.empty()
                                      ? std::filesystem::path(log_csv).replace_extension(".svg")
                                      : std::filesystem::path(svg_out);
      caepl::run_curves(log_csv, svg);
      std::cout << "wrote " << svg.string() << "\n";
    }
  } catch (const caepl::Error& e) {
    std::cerr << "caepl: error kind=" << caepl::error_kind_name(e.kind()) << " msg=\"" << e.what()
              << "\"\n";
    return exit_status(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "caepl: error kind=internal msg=\"" << e.what() << "\"\n";
    return 1;
  }
  return 0;
}
