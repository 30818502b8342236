#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "caepl/config.hpp"
#include "caepl/csv.hpp"
#include "caepl/svg.hpp"

namespace caepl {

struct LoadedData {
  Dataset train, val;
};

inline LoadedData load_data(const DatasetConfig& cfg) {
  LoadedData out;
  if (cfg.type == "synthetic") {
    auto data = generate_synthetic(cfg.synthetic);
    out.train = std::move(data.train);
    out.val = std::move(data.val);
    return out;
  }
  auto load_split = [&](const std::string& split) {
    Dataset ds = load_image_label_dirs(cfg.root / split / "images", cfg.root / split / "labels",
                                       cfg.num_classes);
    if (cfg.downscale_factor > 1)
      for (auto& s : ds.samples) s = downscale(s, cfg.downscale_factor);
    return ds;
  };
  out.train = load_split(cfg.train_split);
  out.val = load_split(cfg.val_split);
  return out;
}

// Builds the variant's segmentation model and applies the configured
// initialization. He-normal plus bilinear upsampling kernels always run
// first; checkpoint-based policies then overwrite the named subsets.
template <typename S>
ModelGraph<S> build_segmentation_model(const ExperimentConfig& cfg) {
  ModelGraph<S> model = cfg.variant == Variant::Fcn
                            ? build_fcn8s<S>(cfg.fcn_spec())
                            : compose_caepl<S>(cfg.ae_spec(), cfg.fcn_spec());
  default_init(model, cfg.seed);
  switch (cfg.init) {
    case InitPolicy::HeNormal: break;
    case InitPolicy::EncoderCheckpoint: {
      if (cfg.variant == Variant::Fcn)
        throw ConfigError("encoder-checkpoint init needs a variant with pre-processing layers");
      if (cfg.encoder_checkpoint.empty())
        throw ConfigError("encoder-checkpoint init needs encoder_checkpoint");
      auto ck = load_checkpoint(cfg.encoder_checkpoint);
      auto report = transfer_encoder_weights(model, ck);
      std::cerr << "caepl: transferred " << report.matched.size() << " encoder tensors\n";
      break;
    }
    case InitPolicy::NameMapped: {
      if (cfg.import_checkpoint.empty())
        throw ConfigError("name-mapped init needs import_checkpoint");
      auto ck = load_checkpoint(cfg.import_checkpoint);
      auto report = import_weights_by_name(model, ck, cfg.name_map);
      std::cerr << "caepl: imported " << report.matched.size() << " tensors by name\n";
      break;
    }
  }
  return model;
}

inline EpochCallback console_epoch_printer(const std::string& tag) {
  return [tag](const EpochRow& r) {
    std::cerr << "caepl: " << tag << " epoch " << r.epoch << " loss " << detail::fmt_g(r.loss)
              << " val_loss " << detail::fmt_g(r.val_loss) << " acc " << detail::fmt_g(r.acc)
              << " val_acc " << detail::fmt_g(r.val_acc) << "\n";
  };
}

// ---------------------------------------------------------------------------
// train-ae: denoising-autoencoder pre-training for the variant's encoder.
// Writes log.csv, best.ckpt, last.ckpt under cfg.out.
// ---------------------------------------------------------------------------
inline TrainResult run_train_ae(const ExperimentConfig& cfg, bool verbose = true) {
  if (!variant_has_autoencoder(cfg.variant))
    throw ConfigError(std::string("variant '") + variant_name(cfg.variant) +
                      "' has no autoencoder to pre-train");
  auto data = load_data(cfg.dataset);
  ModelGraph<float> model = build_autoencoder<float>(cfg.ae_spec());
  default_init(model, cfg.seed);

  TrainConfig tc = cfg.ae_train;
  tc.seed = cfg.seed;
  tc.config_hash = config_hash(cfg);
  const double baseline = corrupted_baseline_mse<float>(data.val, tc);
  if (verbose)
    std::cerr << "caepl: corrupted-input baseline val mse " << detail::fmt_g(baseline) << "\n";
  auto result = train_autoencoder(model, data.train, data.val, tc,
                                  verbose ? console_epoch_printer("train-ae") : EpochCallback{});
  std::filesystem::create_directories(cfg.out);
  write_train_log_csv(result.log, cfg.out / "log.csv");
  save_checkpoint(result.best, cfg.out / "best.ckpt");
  save_checkpoint(result.last, cfg.out / "last.ckpt");
  return result;
}

// ---------------------------------------------------------------------------
// train-seg: segmentation (or CAEPL fine-tuning) run.
// ---------------------------------------------------------------------------
inline TrainResult run_train_seg(const ExperimentConfig& cfg, bool verbose = true) {
  auto data = load_data(cfg.dataset);
  ModelGraph<float> model = build_segmentation_model<float>(cfg);
  TrainConfig tc = cfg.seg_train;
  tc.seed = cfg.seed;
  tc.config_hash = config_hash(cfg);
  auto result = train_segmenter(model, data.train, data.val, tc,
                                verbose ? console_epoch_printer("train-seg") : EpochCallback{});
  std::filesystem::create_directories(cfg.out);
  write_train_log_csv(result.log, cfg.out / "log.csv");
  save_checkpoint(result.best, cfg.out / "best.ckpt");
  save_checkpoint(result.last, cfg.out / "last.ckpt");
  return result;
}

// ---------------------------------------------------------------------------
// evaluate: load a checkpoint, score one split, write scores.csv.
// ---------------------------------------------------------------------------
struct EvaluateOutcome {
  double mean_iou = 0;
  double pixel_acc = 0;
  std::vector<double> per_class;
};

inline EvaluateOutcome run_evaluate(const ExperimentConfig& cfg,
                                    const std::filesystem::path& checkpoint_path,
                                    const std::string& split, bool write_outputs = true) {
  if (split != "train" && split != "val")
    throw ConfigError("evaluate: split must be train or val, got '" + split + "'");
  auto ck = load_checkpoint(checkpoint_path);
  ModelGraph<float> model = model_from_checkpoint<float>(ck);
  auto data = load_data(cfg.dataset);
  const Dataset& ds = split == "train" ? data.train : data.val;
  auto eval = evaluate_segmenter(model, ds, cfg.seg_train.batch_size);
  EvaluateOutcome out;
  out.mean_iou = eval.cm.mean_iou();
  out.pixel_acc = eval.cm.pixel_accuracy();
  out.per_class = eval.cm.per_class_iou();
  if (write_outputs) {
    std::filesystem::create_directories(cfg.out);
    write_scores_csv(split, eval.cm, cfg.out / "scores.csv");
  }
  return out;
}

// ---------------------------------------------------------------------------
// params: parameter audit against the published full-scale totals.
// ---------------------------------------------------------------------------
struct ParamTargets {
  std::int64_t trainable = 0, non_trainable = 0;
  bool known = false;
};

inline ParamTargets published_param_targets(Variant v, Scale scale) {
  if (scale != Scale::Full) return {};
  switch (v) {
    case Variant::Fcn: return {134473244, 160, true};
    case Variant::Ae4lFcn: return {134567020, 704, true};
    default: return {};
  }
}

inline constexpr std::int64_t kPublishedAe4lTrainable = 163059;
inline constexpr std::int64_t kPublishedAe4lNonTrainable = 800;

inline std::string run_params(const ExperimentConfig& cfg, bool per_layer,
                              const std::filesystem::path& csv_out = {}) {
  ModelGraph<float> model = cfg.variant == Variant::Fcn
                                ? build_fcn8s<float>(cfg.fcn_spec())
                                : compose_caepl<float>(cfg.ae_spec(), cfg.fcn_spec());
  auto report = count_parameters(model);

  std::ostringstream out;
  out << "variant " << variant_name(cfg.variant) << " scale "
      << (cfg.scale == Scale::Toy ? "toy" : "full") << "\n";
  if (per_layer) {
    for (const auto& row : report.rows)
      out << "  " << row.layer << "  trainable " << row.trainable << "  non-trainable "
          << row.non_trainable << "\n";
  }
  out << "trainable " << report.trainable << "\n";
  out << "non_trainable " << report.non_trainable << "\n";
  out << "total " << report.total() << "\n";
  const auto targets = published_param_targets(cfg.variant, cfg.scale);
  if (targets.known) {
    const std::int64_t target_total = targets.trainable + targets.non_trainable;
    out << "target_total " << target_total << "\n";
    out << "delta_total " << (report.total() - target_total) << "\n";
    out << "delta_pct "
        << detail::fmt_f(100.0 * static_cast<double>(report.total() - target_total) /
                             static_cast<double>(target_total),
                         4)
        << "\n";
  }
  if (!csv_out.empty()) {
    std::ostringstream csv;
    csv << kParamsSchema << "\n";
    csv << "layer,trainable,non_trainable\n";
    for (const auto& row : report.rows)
      csv << row.layer << ',' << row.trainable << ',' << row.non_trainable << "\n";
    csv << "total," << report.trainable << ',' << report.non_trainable << "\n";
    detail::write_text_atomic(csv_out, csv.str());
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// search-ae-config: enumerate encoder plans hitting parameter targets.
// ---------------------------------------------------------------------------
inline std::string run_search_ae_config(const AESearchTargets& targets,
                                        const AESearchConstraints& constraints,
                                        const std::filesystem::path& csv_out = {}) {
  auto res = search_ae_config(targets, constraints);
  std::ostringstream out;
  out << "targets trainable " << targets.trainable << " non_trainable " << targets.non_trainable
      << "\n";
  out << "exact_matches " << res.exact.size() << "\n";
  for (const auto& spec : res.exact) {
    out << "  filters";
    for (int f : spec.encoder_filters) out << ' ' << f;
    out << "\n";
  }
  if (res.exact.empty() && res.closest_error >= 0) {
    out << "closest_filters";
    for (int f : res.closest.encoder_filters) out << ' ' << f;
    const auto [tr, nt] = autoencoder_param_counts(res.closest);
    out << "  (trainable " << tr << ", non_trainable " << nt << ", error " << res.closest_error
        << ")\n";
  }
  if (!csv_out.empty()) {
    std::ostringstream csv;
    csv << "# caepl-ae-search-v1\n";
    csv << "kind,filters,trainable,non_trainable\n";
    for (const auto& spec : res.exact) {
      const auto [tr, nt] = autoencoder_param_counts(spec);
      csv << "exact,";
      for (std::size_t i = 0; i < spec.encoder_filters.size(); ++i)
        csv << (i ? " " : "") << spec.encoder_filters[i];
      csv << ',' << tr << ',' << nt << "\n";
    }
    if (res.exact.empty() && res.closest_error >= 0) {
      const auto [tr, nt] = autoencoder_param_counts(res.closest);
      csv << "closest,";
      for (std::size_t i = 0; i < res.closest.encoder_filters.size(); ++i)
        csv << (i ? " " : "") << res.closest.encoder_filters[i];
      csv << ',' << tr << ',' << nt << "\n";
    }
    detail::write_text_atomic(csv_out, csv.str());
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// compare: the experiment matrix. Each matrix row is a (variant, init) pair;
// rows run sequentially per seed with shared data and seeds. Autoencoder
// pre-training happens once per (seed, encoder plan) and is reused.
// ---------------------------------------------------------------------------
struct CompareRow {
  std::string variant;
  bool encoder_weights = false;
  std::uint64_t seed = 0;
  double mean_iou = 0;
  double pixel_acc = 0;
};

struct CompareConfig {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  ExperimentConfig base;
  std::vector<std::pair<Variant, InitPolicy>> matrix;
  int jobs = 1;  // >1 runs whole seeds concurrently (independent output dirs)
};

inline CompareConfig compare_from_json(const nlohmann::json& j) {
  CompareConfig cfg;
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (cfg.seeds.empty()) throw ConfigError("compare: seeds list is empty");
  cfg.base = experiment_from_json(j.value("base", nlohmann::json::object()));
  if (!j.contains("matrix") || j.at("matrix").empty())
    throw ConfigError("compare: matrix list is missing or empty");
  for (const auto& row : j.at("matrix")) {
    cfg.matrix.emplace_back(variant_from_name(row.at("variant").get<std::string>()),
                            init_policy_from_name(row.value("init", std::string("he-normal"))));
  }
  return cfg;
}

struct CompareOutcome {
  std::vector<CompareRow> rows;
};

inline CompareOutcome run_compare(const CompareConfig& cfg, bool verbose = true) {
  CompareOutcome outcome;
  const std::filesystem::path root = cfg.base.out;
  outcome.rows.resize(cfg.seeds.size() * cfg.matrix.size());

  auto run_seed = [&](std::size_t seed_index) {
    const std::uint64_t seed = cfg.seeds[seed_index];
    std::map<std::string, std::filesystem::path> ae_checkpoints;  // per encoder plan
    for (std::size_t m = 0; m < cfg.matrix.size(); ++m) {
      const auto& [variant, init] = cfg.matrix[m];
      ExperimentConfig exp = cfg.base;
      exp.variant = variant;
      exp.init = init;
      exp.seed = seed;
      exp.seg_train.seed = seed;
      exp.ae_train.seed = seed;
      std::string run_name = std::string(variant_name(variant)) + "-" + init_policy_name(init);
      exp.out = root / ("seed" + std::to_string(seed)) / run_name;

      if (init == InitPolicy::EncoderCheckpoint && exp.encoder_checkpoint.empty()) {
        if (!variant_has_autoencoder(variant))
          throw ConfigError(std::string("compare: variant '") + variant_name(variant) +
                            "' cannot use encoder weights");
        std::ostringstream plan;
        for (int f : exp.ae_spec().encoder_filters) plan << f << '_';
        auto it = ae_checkpoints.find(plan.str());
        if (it == ae_checkpoints.end()) {
          ExperimentConfig ae_cfg = exp;
          ae_cfg.out = root / ("seed" + std::to_string(seed)) /
                       (std::string("ae-") + variant_name(variant));
          if (verbose)
            std::cerr << "caepl: compare seed " << seed << ": pre-training autoencoder for "
                      << variant_name(variant) << "\n";
          run_train_ae(ae_cfg, verbose);
          it = ae_checkpoints.emplace(plan.str(), ae_cfg.out / "best.ckpt").first;
        }
        exp.encoder_checkpoint = it->second;
      }

      if (verbose)
        std::cerr << "caepl: compare seed " << seed << ": training " << run_name << "\n";
      auto result = run_train_seg(exp, verbose);
      auto eval = run_evaluate(exp, exp.out / "best.ckpt", "val", /*write_outputs=*/true);
      write_curves_svg(result.log, exp.out / "curves.svg");
      outcome.rows[seed_index * cfg.matrix.size() + m] = {
          variant_name(variant), init == InitPolicy::EncoderCheckpoint, seed, eval.mean_iou,
          eval.pixel_acc};
    }
  };

  if (cfg.jobs <= 1 || cfg.seeds.size() == 1) {
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) run_seed(s);
  } else {
    // Opt-in parallel mode: whole seeds run concurrently. Experiments share
    // no mutable state and write to distinct directories, so results are
    // identical to the sequential order.
    std::vector<std::thread> workers;
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    const int n_workers = std::min<int>(cfg.jobs, static_cast<int>(cfg.seeds.size()));
    for (int w = 0; w < n_workers; ++w) {
      workers.emplace_back([&] {
#ifdef _OPENMP
        omp_set_num_threads(1);  // no oversubscription under seed-level workers
#endif
        for (std::size_t s = next.fetch_add(1); s < cfg.seeds.size(); s = next.fetch_add(1)) {
          try {
            run_seed(s);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  // per-seed summary, table-style
  std::ostringstream csv;
  csv << kCompareSchema << "\n";
  csv << "variant,encoder_weights,seed,mean_iou,pix_acc\n";
  for (const auto& r : outcome.rows)
    csv << r.variant << ',' << (r.encoder_weights ? "use" : "not_use") << ',' << r.seed << ','
        << detail::fmt_f(r.mean_iou, 4) << ',' << detail::fmt_f(r.pixel_acc, 4) << "\n";
  detail::write_text_atomic(root / "summary.csv", csv.str());

  // aggregate over seeds plus per-seed deltas against the first matrix row
  std::ostringstream agg;
  agg << kCompareAggSchema << "\n";
  agg << "variant,encoder_weights,seeds,mean_iou_mean,mean_iou_std,pix_acc_mean,pix_acc_std,"
         "delta_mean_iou_vs_row0,per_seed_delta_mean_iou\n";
  const std::size_t rows_per_seed = cfg.matrix.size();
  for (std::size_t m = 0; m < rows_per_seed; ++m) {
    double miou_sum = 0, miou_sq = 0, pa_sum = 0, pa_sq = 0;
    std::ostringstream deltas;
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
      const CompareRow& r = outcome.rows[s * rows_per_seed + m];
      const CompareRow& base = outcome.rows[s * rows_per_seed + 0];
      miou_sum += r.mean_iou;
      miou_sq += r.mean_iou * r.mean_iou;
      pa_sum += r.pixel_acc;
      pa_sq += r.pixel_acc * r.pixel_acc;
      deltas << (s ? " " : "") << detail::fmt_f(r.mean_iou - base.mean_iou, 4);
    }
    const double n = static_cast<double>(cfg.seeds.size());
    const double miou_mean = miou_sum / n;
    const double pa_mean = pa_sum / n;
    const double miou_std = std::sqrt(std::max(0.0, miou_sq / n - miou_mean * miou_mean));
    const double pa_std = std::sqrt(std::max(0.0, pa_sq / n - pa_mean * pa_mean));
    double base_mean = 0;
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s)
      base_mean += outcome.rows[s * rows_per_seed].mean_iou;
    base_mean /= n;
    agg << variant_name(cfg.matrix[m].first) << ','
        << (cfg.matrix[m].second == InitPolicy::EncoderCheckpoint ? "use" : "not_use") << ','
        << cfg.seeds.size() << ',' << detail::fmt_f(miou_mean, 4) << ','
        << detail::fmt_f(miou_std, 4) << ',' << detail::fmt_f(pa_mean, 4) << ','
        << detail::fmt_f(pa_std, 4) << ',' << detail::fmt_f(miou_mean - base_mean, 4) << ','
        << deltas.str() << "\n";
  }
  detail::write_text_atomic(root / "summary_agg.csv", agg.str());
  return outcome;
}

// curves: render a training-log CSV to the SVG plot.
inline void run_curves(const std::filesystem::path& log_csv, const std::filesystem::path& svg_out) {
  write_curves_svg(read_train_log_csv(log_csv), svg_out);
}

}  // namespace caepl
