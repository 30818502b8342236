#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "caepl/checkpoint.hpp"
#include "caepl/graph.hpp"
#include "caepl/init.hpp"

namespace caepl {

// ---------------------------------------------------------------------------
// Autoencoder family: 3x3 stride-1 pad-1 convs throughout, no pooling, so
// every feature map keeps the input's spatial size. The decoder mirrors the
// encoder across the code layer and ends in a 3-channel modified-tanh conv.
// ---------------------------------------------------------------------------
struct AESpec {
  std::vector<int> encoder_filters;  // e.g. {96, 64, 32, 16}
  int input_channels = 3;
  bool final_bn = false;  // batch norm after the output conv (off by default)

  int code_channels() const {
    if (encoder_filters.empty()) throw ConfigError("autoencoder spec has no encoder filters");
    return encoder_filters.back();
  }
};

// Name of the layer whose output is the code h = f(x).
inline std::string encoder_output_layer(const AESpec& spec) {
  return "encoder.relu" + std::to_string(spec.encoder_filters.size());
}

// Encoder stack alone: conv+bn+relu per filter entry. Also used verbatim as
// the EB4-style plain pre-processing block.
inline std::vector<LayerSpec> encoder_layers(const AESpec& spec, const std::string& input_name) {
  if (spec.encoder_filters.empty()) throw ConfigError("autoencoder spec has no encoder filters");
  for (int f : spec.encoder_filters)
    if (f < 1) throw ConfigError("encoder filter counts must be positive");
  std::vector<LayerSpec> out;
  std::string prev = input_name;
  for (std::size_t i = 0; i < spec.encoder_filters.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    LayerSpec conv{.name = "encoder.conv" + n,
                   .kind = LayerKind::Conv,
                   .inputs = {prev},
                   .filters = spec.encoder_filters[i],
                   .kernel = 3,
                   .stride = 1,
                   .pad = 1};
    LayerSpec bn{.name = "encoder.bn" + n, .kind = LayerKind::BatchNorm, .inputs = {conv.name}};
    LayerSpec act{.name = "encoder.relu" + n, .kind = LayerKind::ReLU, .inputs = {bn.name}};
    prev = act.name;
    out.push_back(std::move(conv));
    out.push_back(std::move(bn));
    out.push_back(std::move(act));
  }
  return out;
}

inline GraphSpec autoencoder_spec(const AESpec& spec) {
  GraphSpec g;
  g.layers.push_back(
      {.name = "input", .kind = LayerKind::Input, .channels = spec.input_channels});
  for (auto& l : encoder_layers(spec, "input")) g.layers.push_back(std::move(l));

  // Decoder mirrors the encoder: reversed filters then the reconstruction.
  std::vector<int> dec(spec.encoder_filters.rbegin() + 1, spec.encoder_filters.rend());
  dec.push_back(spec.input_channels);
  std::string prev = encoder_output_layer(spec);
  for (std::size_t i = 0; i < dec.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    const bool last = i + 1 == dec.size();
    LayerSpec conv{.name = "decoder.conv" + n,
                   .kind = LayerKind::Conv,
                   .inputs = {prev},
                   .filters = dec[i],
                   .kernel = 3,
                   .stride = 1,
                   .pad = 1};
    prev = conv.name;
    g.layers.push_back(std::move(conv));
    if (!last || spec.final_bn) {
      LayerSpec bn{.name = "decoder.bn" + n, .kind = LayerKind::BatchNorm, .inputs = {prev}};
      prev = bn.name;
      g.layers.push_back(std::move(bn));
    }
    LayerSpec act{.name = last ? std::string("decoder.out") : "decoder.relu" + n,
                  .kind = last ? LayerKind::MTanh : LayerKind::ReLU,
                  .inputs = {prev}};
    prev = act.name;
    g.layers.push_back(std::move(act));
  }
  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// FCN-8s. VGG16-style backbone (2,2,3,3,3 convs per stage), 7x7 fc6 and 1x1
// fc7 as convolutions, three fused score streams with learnable x2, x2, x8
// upsampling. Batch-norm placement is configurable: AllConvs puts one after
// every conv, ScoreStreamsOnly normalizes only the four fusion operands
// (the arrangement whose parameter totals match the published full-scale
// counts).
// ---------------------------------------------------------------------------
struct FCNSpec {
  int num_classes = 19;
  int input_channels = 3;
  int divisor = 1;  // divides the stage/fc channel plan for desk-scale runs
  enum class BnMode { AllConvs, ScoreStreamsOnly } bn_mode = BnMode::ScoreStreamsOnly;
  std::vector<int> stage_channels = {64, 128, 256, 512, 512};
  int fc_channels = 4096;

  int stage(int i) const {
    const int c = stage_channels.at(static_cast<std::size_t>(i)) / divisor;
    if (c < 1) throw ConfigError("fcn divisor leaves no channels in stage " + std::to_string(i));
    return c;
  }
  int fc() const {
    const int c = fc_channels / divisor;
    if (c < 1) throw ConfigError("fcn divisor leaves no fc channels");
    return c;
  }
};

inline std::vector<LayerSpec> fcn8s_layers(const FCNSpec& spec, const std::string& input_name) {
  if (spec.num_classes < 2) throw ConfigError("fcn needs at least 2 classes");
  if (spec.stage_channels.size() != 5) throw ConfigError("fcn needs a 5-stage channel plan");
  const bool bn_all = spec.bn_mode == FCNSpec::BnMode::AllConvs;
  std::vector<LayerSpec> out;
  std::string prev = input_name;

  auto conv_block = [&](const std::string& tag, int filters, int kernel, int pad) {
    out.push_back({.name = "fcn.conv" + tag,
                   .kind = LayerKind::Conv,
                   .inputs = {prev},
                   .filters = filters,
                   .kernel = kernel,
                   .stride = 1,
                   .pad = pad});
    prev = "fcn.conv" + tag;
    if (bn_all) {
      out.push_back({.name = "fcn.bn" + tag, .kind = LayerKind::BatchNorm, .inputs = {prev}});
      prev = "fcn.bn" + tag;
    }
    out.push_back({.name = "fcn.relu" + tag, .kind = LayerKind::ReLU, .inputs = {prev}});
    prev = "fcn.relu" + tag;
  };
  auto pool = [&](int stage) {
    out.push_back({.name = "fcn.pool" + std::to_string(stage),
                   .kind = LayerKind::MaxPool,
                   .inputs = {prev},
                   .stride = 2,
                   .window = 2});
    prev = "fcn.pool" + std::to_string(stage);
  };

  static constexpr int kConvsPerStage[5] = {2, 2, 3, 3, 3};
  for (int s = 0; s < 5; ++s) {
    for (int c = 1; c <= kConvsPerStage[s]; ++c)
      conv_block(std::to_string(s + 1) + "_" + std::to_string(c), spec.stage(s), 3, 1);
    pool(s + 1);
  }
  std::string pool3 = "fcn.pool3", pool4 = "fcn.pool4";

  conv_block("_fc6", spec.fc(), 7, 3);
  conv_block("_fc7", spec.fc(), 1, 0);

  const int K = spec.num_classes;
  // AllConvs mode: a batch norm after every conv including the 1x1 score
  // convs. ScoreStreamsOnly mode: batch norms only on the four fusion
  // operands, which is the arrangement matching the published counts.
  auto score = [&](const std::string& tag, const std::string& from) -> std::string {
    out.push_back({.name = "fcn." + tag,
                   .kind = LayerKind::Conv,
                   .inputs = {from},
                   .filters = K,
                   .kernel = 1,
                   .stride = 1,
                   .pad = 0});
    if (bn_all) {
      out.push_back(
          {.name = "fcn.bn_" + tag, .kind = LayerKind::BatchNorm, .inputs = {"fcn." + tag}});
      return "fcn.bn_" + tag;
    }
    return "fcn." + tag;
  };
  auto upsample = [&](const std::string& name, const std::string& from, int factor) {
    out.push_back({.name = name,
                   .kind = LayerKind::TConv,
                   .inputs = {from},
                   .filters = K,
                   .kernel = 2 * factor,
                   .stride = factor});
  };
  auto stream_bn = [&](const std::string& name, const std::string& from) -> std::string {
    if (bn_all) return from;
    out.push_back({.name = name, .kind = LayerKind::BatchNorm, .inputs = {from}});
    return name;
  };

  const std::string score_fr = score("score_fr", prev);
  upsample("fcn.upscore2", score_fr, 2);
  const std::string score_pool4 = score("score_pool4", pool4);
  out.push_back({.name = "fcn.fuse_pool4",
                 .kind = LayerKind::Add,
                 .inputs = {stream_bn("fcn.bn_upscore2", "fcn.upscore2"),
                            stream_bn("fcn.bn_score_pool4", score_pool4)}});
  upsample("fcn.upscore_pool4", "fcn.fuse_pool4", 2);
  const std::string score_pool3 = score("score_pool3", pool3);
  out.push_back({.name = "fcn.fuse_pool3",
                 .kind = LayerKind::Add,
                 .inputs = {stream_bn("fcn.bn_upscore_pool4", "fcn.upscore_pool4"),
                            stream_bn("fcn.bn_score_pool3", score_pool3)}});
  upsample("fcn.upscore8", "fcn.fuse_pool3", 8);
  return out;
}

inline GraphSpec fcn8s_spec(const FCNSpec& spec) {
  GraphSpec g;
  g.layers.push_back(
      {.name = "input", .kind = LayerKind::Input, .channels = spec.input_channels});
  for (auto& l : fcn8s_layers(spec, "input")) g.layers.push_back(std::move(l));
  g.validate();
  return g;
}

// CAEPL composition: the autoencoder's encoder stack as pre-processing
// layers, then the full FCN reading the code. Encoder layer names are
// identical to the standalone autoencoder's, so weights transfer by name.
inline GraphSpec caepl_spec(const AESpec& ae, FCNSpec fcn) {
  if (ae.input_channels < 1) throw ConfigError("caepl: invalid input channels");
  fcn.input_channels = ae.code_channels();
  GraphSpec g;
  g.layers.push_back({.name = "input", .kind = LayerKind::Input, .channels = ae.input_channels});
  for (auto& l : encoder_layers(ae, "input")) g.layers.push_back(std::move(l));
  for (auto& l : fcn8s_layers(fcn, encoder_output_layer(ae))) g.layers.push_back(std::move(l));
  g.validate();
  return g;
}

template <typename S>
ModelGraph<S> build_autoencoder(const AESpec& spec) {
  return ModelGraph<S>(autoencoder_spec(spec));
}

template <typename S>
ModelGraph<S> build_fcn8s(const FCNSpec& spec) {
  return ModelGraph<S>(fcn8s_spec(spec));
}

template <typename S>
ModelGraph<S> compose_caepl(const AESpec& ae, const FCNSpec& fcn) {
  return ModelGraph<S>(caepl_spec(ae, fcn));
}

// He-normal everywhere, then bilinear tent kernels on the upsampling layers,
// the standard FCN starting point.
template <typename S>
void default_init(ModelGraph<S>& model, std::uint64_t seed) {
  he_normal_init(model, seed);
  for (const auto& l : model.spec().layers)
    if (l.kind == LayerKind::TConv) bilinear_init(model.state(l.name).weight, l.stride);
}

// ---------------------------------------------------------------------------
// Named weight transfer.
// ---------------------------------------------------------------------------
struct TransferReport {
  std::vector<std::string> matched;
  std::vector<std::string> missing;  // wanted but absent from the checkpoint
  std::vector<std::string> skipped;  // checkpoint tensors left unused
};

// Copies every model tensor under `prefix` (parameters and moving stats)
// from same-named checkpoint entries. Missing names are an error unless
// allow_partial is set; decoder and other non-matching weights are ignored.
template <typename S>
TransferReport transfer_encoder_weights(ModelGraph<S>& model, const Checkpoint& ck,
                                        bool allow_partial = false,
                                        const std::string& prefix = "encoder.") {
  TransferReport report;
  for (auto& [name, tensor] : model.all_tensors()) {
    if (name.rfind(prefix, 0) != 0) continue;
    const CheckpointTensor* src = ck.find(name);
    if (!src) {
      report.missing.push_back(name);
      continue;
    }
    if (src->shape != tensor->shape)
      throw TransferError("transfer: shape mismatch on '" + name + "': checkpoint " +
                          shape_str(src->shape) + " vs model " + shape_str(tensor->shape));
    for (std::size_t i = 0; i < src->data.size(); ++i)
      tensor->values[i] = static_cast<S>(src->data[i]);
    report.matched.push_back(name);
  }
  for (const auto& [name, t] : ck.tensors)
    if (name.rfind(prefix, 0) != 0 || !model.tensor_by_name(name))
      report.skipped.push_back(name);
  if (!allow_partial && !report.missing.empty())
    throw TransferError("transfer: checkpoint is missing " +
                        std::to_string(report.missing.size()) + " encoder tensors, first '" +
                        report.missing.front() + "'");
  if (report.matched.empty() && !allow_partial)
    throw TransferError("transfer: no '" + prefix + "' tensors matched");
  return report;
}

// Explicit old-name -> new-name import (e.g. backbone weights from another
// trained network). An empty map is a no-op.
template <typename S>
TransferReport import_weights_by_name(ModelGraph<S>& model, const Checkpoint& ck,
                                      const std::map<std::string, std::string>& name_map) {
  TransferReport report;
  for (const auto& [old_name, new_name] : name_map) {
    const CheckpointTensor* src = ck.find(old_name);
    if (!src) throw TransferError("import: checkpoint has no tensor '" + old_name + "'");
    auto dst = model.tensor_by_name(new_name);
    if (!dst) throw TransferError("import: model has no tensor '" + new_name + "'");
    if (src->shape != dst->shape)
      throw TransferError("import: shape mismatch mapping '" + old_name + "' -> '" + new_name +
                          "': " + shape_str(src->shape) + " vs " + shape_str(dst->shape));
    for (std::size_t i = 0; i < src->data.size(); ++i)
      dst->values[i] = static_cast<S>(src->data[i]);
    report.matched.push_back(new_name);
  }
  for (const auto& [name, t] : ck.tensors)
    if (!name_map.count(name)) report.skipped.push_back(name);
  return report;
}

// ---------------------------------------------------------------------------
// Parameter audit.
// ---------------------------------------------------------------------------
struct ParamRow {
  std::string layer;
  std::int64_t trainable = 0;
  std::int64_t non_trainable = 0;
};

struct ParamReport {
  std::vector<ParamRow> rows;
  std::int64_t trainable = 0;
  std::int64_t non_trainable = 0;
  std::int64_t total() const { return trainable + non_trainable; }
};

template <typename S>
ParamReport count_parameters(ModelGraph<S>& model) {
  ParamReport report;
  for (const auto& l : model.spec().layers) {
    auto& st = model.state(l.name);
    ParamRow row{.layer = l.name};
    for (const auto& t : {st.weight, st.bias, st.gamma, st.beta})
      if (t) row.trainable += t->size();
    for (const auto& t : {st.moving_mean, st.moving_var})
      if (t) row.non_trainable += t->size();
    if (row.trainable == 0 && row.non_trainable == 0) continue;
    report.trainable += row.trainable;
    report.non_trainable += row.non_trainable;
    report.rows.push_back(std::move(row));
  }
  return report;
}

// Closed-form counts for an autoencoder spec, kept consistent with
// build_autoencoder + count_parameters (asserted in the tests). Cheap enough
// to call tens of millions of times during the search.
inline std::pair<std::int64_t, std::int64_t> autoencoder_param_counts(const AESpec& spec) {
  std::int64_t trainable = 0, non_trainable = 0;
  int cin = spec.input_channels;
  std::vector<int> chain = spec.encoder_filters;
  std::vector<int> dec(spec.encoder_filters.rbegin() + 1, spec.encoder_filters.rend());
  dec.push_back(spec.input_channels);
  chain.insert(chain.end(), dec.begin(), dec.end());
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const int cout = chain[i];
    trainable += static_cast<std::int64_t>(cin) * 9 * cout + cout;  // 3x3 kernel + bias
    const bool last = i + 1 == chain.size();
    if (!last || spec.final_bn) {
      trainable += 2 * cout;      // gamma, beta
      non_trainable += 2 * cout;  // moving mean, moving variance
    }
    cin = cout;
  }
  return {trainable, non_trainable};
}

struct AESearchTargets {
  std::int64_t trainable = 0;
  std::int64_t non_trainable = 0;
};

struct AESearchConstraints {
  std::vector<int> layer_counts = {4};
  int filter_step = 4;
  int filter_min = 4;
  int filter_max = 256;
  std::vector<bool> final_bn_modes = {false};
};

struct AESearchResult {
  std::vector<AESpec> exact;
  AESpec closest;                  // valid when any candidate was evaluated
  std::int64_t closest_error = -1; // |d_trainable| + |d_non_trainable|
};

// Exhaustive enumeration of encoder filter plans whose parameter counts hit
// the targets exactly. An empty `exact` list is a legitimate outcome; the
// nearest miss is reported alongside.
inline AESearchResult search_ae_config(const AESearchTargets& targets,
                                       const AESearchConstraints& c = {}) {
  if (c.filter_min < 1 || c.filter_max < c.filter_min || c.filter_step < 1)
    throw ParamError("search_ae_config: bad filter constraints");
  AESearchResult res;
  if (targets.trainable < 0 || targets.non_trainable < 0) return res;

  std::vector<int> grid;
  for (int f = c.filter_min; f <= c.filter_max; f += c.filter_step) grid.push_back(f);

  AESpec probe;
  for (bool final_bn : c.final_bn_modes) {
    probe.final_bn = final_bn;
    for (int layers : c.layer_counts) {
      probe.encoder_filters.assign(static_cast<std::size_t>(layers), grid.front());
      std::vector<std::size_t> idx(static_cast<std::size_t>(layers), 0);
      while (true) {
        for (int i = 0; i < layers; ++i) probe.encoder_filters[i] = grid[idx[i]];
        const auto [tr, nt] = autoencoder_param_counts(probe);
        const std::int64_t err = std::llabs(tr - targets.trainable) +
                                 std::llabs(nt - targets.non_trainable);
        if (err == 0) {
          res.exact.push_back(probe);
        } else if (res.closest_error < 0 || err < res.closest_error) {
          res.closest_error = err;
          res.closest = probe;
        }
        int pos = layers - 1;
        while (pos >= 0 && ++idx[pos] == grid.size()) idx[pos--] = 0;
        if (pos < 0) break;
      }
    }
  }
  return res;
}

}  // namespace caepl
