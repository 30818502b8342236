#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "caepl/dataset.hpp"
#include "caepl/models.hpp"
#include "caepl/train.hpp"

namespace caepl {

enum class Variant { Fcn, Ae4lFcn, Ae4mFcn, Ae4nFcn, Ae3Fcn, Eb4Fcn };
enum class InitPolicy { HeNormal, EncoderCheckpoint, NameMapped };
enum class Scale { Toy, Full };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Fcn: return "fcn";
    case Variant::Ae4lFcn: return "ae4l-fcn";
    case Variant::Ae4mFcn: return "ae4m-fcn";
    case Variant::Ae4nFcn: return "ae4n-fcn";
    case Variant::Ae3Fcn: return "ae3-fcn";
    case Variant::Eb4Fcn: return "eb4-fcn";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  for (Variant v : {Variant::Fcn, Variant::Ae4lFcn, Variant::Ae4mFcn, Variant::Ae4nFcn,
                    Variant::Ae3Fcn, Variant::Eb4Fcn})
    if (s == variant_name(v)) return v;
  throw ConfigError("unknown variant '" + s + "'");
}

inline const char* init_policy_name(InitPolicy p) {
  switch (p) {
    case InitPolicy::HeNormal: return "he-normal";
    case InitPolicy::EncoderCheckpoint: return "encoder-checkpoint";
    case InitPolicy::NameMapped: return "name-mapped";
  }
  return "?";
}

inline InitPolicy init_policy_from_name(const std::string& s) {
  for (InitPolicy p : {InitPolicy::HeNormal, InitPolicy::EncoderCheckpoint, InitPolicy::NameMapped})
    if (s == init_policy_name(p)) return p;
  throw ConfigError("unknown init policy '" + s + "'");
}

// Default encoder filter plans. Full-scale AE4L is the plan search_ae_config
// recovers from the published totals; AE4M is its 3-filter-code variant,
// AE4N a uniformly smaller plan, EB4 the stated four layers of 64 filters.
inline std::vector<int> default_encoder_filters(Variant v, Scale scale) {
  const bool toy = scale == Scale::Toy;
  switch (v) {
    case Variant::Fcn: return {};
    case Variant::Ae4lFcn: return toy ? std::vector<int>{8, 8, 4, 4} : std::vector<int>{96, 64, 32, 16};
    case Variant::Ae4mFcn: return toy ? std::vector<int>{8, 8, 4, 3} : std::vector<int>{96, 64, 32, 3};
    case Variant::Ae4nFcn: return toy ? std::vector<int>{6, 6, 3, 3} : std::vector<int>{64, 48, 24, 12};
    case Variant::Ae3Fcn: return toy ? std::vector<int>{8, 8, 4} : std::vector<int>{96, 64, 32};
    case Variant::Eb4Fcn: return toy ? std::vector<int>{8, 8, 8, 8} : std::vector<int>{64, 64, 64, 64};
  }
  return {};
}

// Whether the variant has a denoising autoencoder counterpart to pre-train
// (EB4 is a plain block with no autoencoder).
inline bool variant_has_autoencoder(Variant v) {
  return v != Variant::Fcn && v != Variant::Eb4Fcn;
}

struct DatasetConfig {
  std::string type = "synthetic";  // synthetic | dirs
  // synthetic
  SyntheticSpec synthetic;
  // dirs
  std::filesystem::path root;
  std::string train_split = "train";
  std::string val_split = "val";
  int num_classes = 19;
  int downscale_factor = 1;
};

struct ExperimentConfig {
  Variant variant = Variant::Fcn;
  InitPolicy init = InitPolicy::HeNormal;
  std::filesystem::path encoder_checkpoint;  // used by EncoderCheckpoint
  std::filesystem::path import_checkpoint;   // used by NameMapped
  std::map<std::string, std::string> name_map;
  Scale scale = Scale::Toy;
  std::uint64_t seed = 1;
  std::filesystem::path out = "runs/exp";
  DatasetConfig dataset;

  // model structure
  std::vector<int> ae_filters;  // empty = per-variant default
  FCNSpec::BnMode bn_mode = FCNSpec::BnMode::AllConvs;
  bool bn_mode_explicit = false;
  int divisor = 8;
  int num_classes = 5;  // segmentation logits
  bool num_classes_explicit = false;
  bool final_bn = false;

  // protocols; defaults follow the published training protocols
  TrainConfig seg_train;
  TrainConfig ae_train;

  ExperimentConfig() {
    seg_train.lr = 1e-4;
    seg_train.momentum = 0.9;
    seg_train.batch_size = 5;
    seg_train.monitor = TrainConfig::Monitor::MaxValAcc;
    seg_train.max_epochs = 300;
    seg_train.patience = 50;
    seg_train.l2.entries = {{"encoder.*", 1e-3}, {"fcn.*", 5e-4}};
    ae_train.lr = 1e-4;
    ae_train.momentum = 0.9;
    ae_train.batch_size = 4;
    ae_train.monitor = TrainConfig::Monitor::MinValLoss;
    ae_train.max_epochs = 300;
    ae_train.patience = 50;
    ae_train.ae_loss = TrainConfig::AeLoss::Bce;
    ae_train.p_corrupt = 0.5;
    ae_train.p_white = 0.5;
    ae_train.l2.entries = {{"*", 1e-3}};
  }

  AESpec ae_spec() const {
    AESpec spec;
    spec.encoder_filters = ae_filters.empty() ? default_encoder_filters(variant, scale) : ae_filters;
    spec.final_bn = final_bn;
    return spec;
  }

  FCNSpec fcn_spec() const {
    FCNSpec spec;
    spec.num_classes = num_classes;
    spec.divisor = scale == Scale::Full ? 1 : divisor;
    spec.bn_mode = bn_mode;
    return spec;
  }
};

namespace detail {

inline L2Map l2_from_json(const nlohmann::json& j) {
  L2Map map;
  for (auto it = j.begin(); it != j.end(); ++it)
    map.entries.emplace_back(it.key(), it.value().get<double>());
  return map;
}

inline void train_from_json(TrainConfig& cfg, const nlohmann::json& j) {
  cfg.lr = j.value("lr", cfg.lr);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
  cfg.patience = j.value("patience", cfg.patience);
  cfg.log_wall_seconds = j.value("log_wall_seconds", cfg.log_wall_seconds);
  if (j.contains("l2")) cfg.l2 = l2_from_json(j.at("l2"));
  if (j.contains("monitor")) {
    const auto m = j.at("monitor").get<std::string>();
    if (m == "min_val_loss")
      cfg.monitor = TrainConfig::Monitor::MinValLoss;
    else if (m == "max_val_acc")
      cfg.monitor = TrainConfig::Monitor::MaxValAcc;
    else
      throw ConfigError("unknown monitor '" + m + "'");
  }
  if (j.contains("loss")) {
    const auto l = j.at("loss").get<std::string>();
    if (l == "bce")
      cfg.ae_loss = TrainConfig::AeLoss::Bce;
    else if (l == "mse")
      cfg.ae_loss = TrainConfig::AeLoss::Mse;
    else
      throw ConfigError("unknown autoencoder loss '" + l + "'");
  }
  cfg.p_corrupt = j.value("p_corrupt", cfg.p_corrupt);
  cfg.p_white = j.value("p_white", cfg.p_white);
  if (j.value("per_pixel", false)) cfg.corruption_granularity = CorruptionGranularity::PerPixel;
}

}  // namespace detail

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  if (j.contains("variant")) cfg.variant = variant_from_name(j.at("variant").get<std::string>());
  if (j.contains("init")) cfg.init = init_policy_from_name(j.at("init").get<std::string>());
  if (j.contains("encoder_checkpoint"))
    cfg.encoder_checkpoint = j.at("encoder_checkpoint").get<std::string>();
  if (j.contains("import_checkpoint"))
    cfg.import_checkpoint = j.at("import_checkpoint").get<std::string>();
  if (j.contains("name_map"))
    cfg.name_map = j.at("name_map").get<std::map<std::string, std::string>>();
  if (j.contains("scale")) {
    const auto s = j.at("scale").get<std::string>();
    if (s == "toy")
      cfg.scale = Scale::Toy;
    else if (s == "full")
      cfg.scale = Scale::Full;
    else
      throw ConfigError("unknown scale '" + s + "'");
  }
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("out")) cfg.out = j.at("out").get<std::string>();

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    cfg.dataset.type = d.value("type", cfg.dataset.type);
    if (cfg.dataset.type == "synthetic") {
      auto& s = cfg.dataset.synthetic;
      s.size = d.value("size", s.size);
      s.num_classes = d.value("classes", s.num_classes);
      s.shapes_per_image = d.value("shapes_per_image", s.shapes_per_image);
      s.noise = d.value("noise", s.noise);
      s.train_count = d.value("train_count", s.train_count);
      s.val_count = d.value("val_count", s.val_count);
      s.seed = d.value("seed", s.seed);
      s.void_border = d.value("void_border", s.void_border);
      cfg.dataset.num_classes = s.num_classes;
    } else if (cfg.dataset.type == "dirs") {
      if (!d.contains("root")) throw ConfigError("dataset.type 'dirs' needs dataset.root");
      cfg.dataset.root = d.at("root").get<std::string>();
      cfg.dataset.train_split = d.value("train_split", cfg.dataset.train_split);
      cfg.dataset.val_split = d.value("val_split", cfg.dataset.val_split);
      cfg.dataset.num_classes = d.value("classes", cfg.dataset.num_classes);
      cfg.dataset.downscale_factor = d.value("downscale", cfg.dataset.downscale_factor);
    } else {
      throw ConfigError("unknown dataset.type '" + cfg.dataset.type + "'");
    }
  }
  cfg.num_classes = cfg.dataset.num_classes;

  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (m.contains("ae_filters")) cfg.ae_filters = m.at("ae_filters").get<std::vector<int>>();
    if (m.contains("bn_mode")) {
      const auto b = m.at("bn_mode").get<std::string>();
      if (b == "all_convs")
        cfg.bn_mode = FCNSpec::BnMode::AllConvs;
      else if (b == "score_streams_only")
        cfg.bn_mode = FCNSpec::BnMode::ScoreStreamsOnly;
      else
        throw ConfigError("unknown bn_mode '" + b + "'");
      cfg.bn_mode_explicit = true;
    }
    cfg.divisor = m.value("divisor", cfg.divisor);
    if (m.contains("num_classes")) {
      cfg.num_classes = m.at("num_classes").get<int>();
      cfg.num_classes_explicit = true;
    }
    cfg.final_bn = m.value("final_bn", cfg.final_bn);
  }

  if (j.contains("train")) detail::train_from_json(cfg.seg_train, j.at("train"));
  if (j.contains("ae_train")) detail::train_from_json(cfg.ae_train, j.at("ae_train"));
  cfg.seg_train.seed = cfg.seed;
  cfg.ae_train.seed = cfg.seed;
  return cfg;
}

inline nlohmann::json experiment_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["variant"] = variant_name(cfg.variant);
  j["init"] = init_policy_name(cfg.init);
  if (!cfg.encoder_checkpoint.empty()) j["encoder_checkpoint"] = cfg.encoder_checkpoint.string();
  if (!cfg.import_checkpoint.empty()) j["import_checkpoint"] = cfg.import_checkpoint.string();
  if (!cfg.name_map.empty()) j["name_map"] = cfg.name_map;
  j["scale"] = cfg.scale == Scale::Toy ? "toy" : "full";
  j["seed"] = cfg.seed;
  j["out"] = cfg.out.string();

  nlohmann::json d;
  d["type"] = cfg.dataset.type;
  if (cfg.dataset.type == "synthetic") {
    const auto& s = cfg.dataset.synthetic;
    d["size"] = s.size;
    d["classes"] = s.num_classes;
    d["shapes_per_image"] = s.shapes_per_image;
    d["noise"] = s.noise;
    d["train_count"] = s.train_count;
    d["val_count"] = s.val_count;
    d["seed"] = s.seed;
    d["void_border"] = s.void_border;
  } else {
    d["root"] = cfg.dataset.root.string();
    d["train_split"] = cfg.dataset.train_split;
    d["val_split"] = cfg.dataset.val_split;
    d["classes"] = cfg.dataset.num_classes;
    d["downscale"] = cfg.dataset.downscale_factor;
  }
  j["dataset"] = std::move(d);

  nlohmann::json m;
  m["ae_filters"] = cfg.ae_spec().encoder_filters;
  m["bn_mode"] =
      cfg.bn_mode == FCNSpec::BnMode::AllConvs ? "all_convs" : "score_streams_only";
  m["divisor"] = cfg.divisor;
  m["num_classes"] = cfg.num_classes;
  m["final_bn"] = cfg.final_bn;
  j["model"] = std::move(m);

  auto train_json = [](const TrainConfig& t, bool ae) {
    nlohmann::json out;
    out["lr"] = t.lr;
    out["momentum"] = t.momentum;
    out["batch_size"] = t.batch_size;
    out["max_epochs"] = t.max_epochs;
    out["patience"] = t.patience;
    out["monitor"] =
        t.monitor == TrainConfig::Monitor::MinValLoss ? "min_val_loss" : "max_val_acc";
    out["log_wall_seconds"] = t.log_wall_seconds;
    nlohmann::json l2;
    for (const auto& [pattern, lambda] : t.l2.entries) l2[pattern] = lambda;
    out["l2"] = std::move(l2);
    if (ae) {
      out["loss"] = t.ae_loss == TrainConfig::AeLoss::Bce ? "bce" : "mse";
      out["p_corrupt"] = t.p_corrupt;
      out["p_white"] = t.p_white;
      out["per_pixel"] = t.corruption_granularity == CorruptionGranularity::PerPixel;
    }
    return out;
  };
  j["train"] = train_json(cfg.seg_train, false);
  j["ae_train"] = train_json(cfg.ae_train, true);
  return j;
}

// Identifies the experiment itself; the output location is not part of it.
inline std::string config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j = experiment_to_json(cfg);
  j.erase("out");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

inline nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config '" + path.string() + "': " + e.what());
  }
}

// Environment overrides for CI: CAEPL_SEED, CAEPL_OUT, CAEPL_SCALE,
// CAEPL_VARIANT. Explicit command-line flags still win.
inline void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* v = std::getenv("CAEPL_SEED")) cfg.seed = std::strtoull(v, nullptr, 10);
  if (const char* v = std::getenv("CAEPL_OUT")) cfg.out = v;
  if (const char* v = std::getenv("CAEPL_VARIANT")) cfg.variant = variant_from_name(v);
  if (const char* v = std::getenv("CAEPL_SCALE")) {
    const std::string s = v;
    if (s == "toy")
      cfg.scale = Scale::Toy;
    else if (s == "full")
      cfg.scale = Scale::Full;
    else
      throw ConfigError("CAEPL_SCALE must be toy or full");
  }
  cfg.seg_train.seed = cfg.seed;
  cfg.ae_train.seed = cfg.seed;
}

}  // namespace caepl
