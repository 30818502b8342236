#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "caepl/ops.hpp"
#include "caepl/rng.hpp"
#include "caepl/tensor.hpp"

namespace caepl {

enum class LayerKind { Input, Conv, TConv, BatchNorm, ReLU, MTanh, MaxPool, Softmax, Add };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Input: return "input";
    case LayerKind::Conv: return "conv";
    case LayerKind::TConv: return "tconv";
    case LayerKind::BatchNorm: return "batch_norm";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MTanh: return "mtanh";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Softmax: return "softmax";
    case LayerKind::Add: return "add";
  }
  return "?";
}

inline LayerKind layer_kind_from_name(const std::string& s) {
  static const std::unordered_map<std::string, LayerKind> table = {
      {"input", LayerKind::Input},     {"conv", LayerKind::Conv},
      {"tconv", LayerKind::TConv},     {"batch_norm", LayerKind::BatchNorm},
      {"relu", LayerKind::ReLU},       {"mtanh", LayerKind::MTanh},
      {"maxpool", LayerKind::MaxPool}, {"softmax", LayerKind::Softmax},
      {"add", LayerKind::Add}};
  auto it = table.find(s);
  if (it == table.end()) throw ConfigError("unknown layer kind '" + s + "'");
  return it->second;
}

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Input;
  std::vector<std::string> inputs;  // names of upstream layers
  int channels = 0;                 // input layers only
  int filters = 0;                  // conv/tconv output channels
  int kernel = 0;                   // conv/tconv kernel size
  int stride = 1;                   // conv/tconv/maxpool
  int pad = 0;                      // conv
  int window = 2;                   // maxpool
  bool bias = true;                 // conv
  double bn_eps = 1e-5;
  double bn_momentum = 0.99;
};

// Ordered, acyclic graph of named layers. Layers may only reference earlier
// layers, so the list order is a valid evaluation order by construction.
struct GraphSpec {
  std::vector<LayerSpec> layers;

  const LayerSpec* find(const std::string& name) const {
    for (const auto& l : layers)
      if (l.name == name) return &l;
    return nullptr;
  }

  void validate() const {
    if (layers.empty()) throw ConfigError("graph has no layers");
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& l = layers[i];
      if (l.name.empty()) throw ConfigError("layer " + std::to_string(i) + " has no name");
      if (seen.count(l.name)) throw ConfigError("duplicate layer name '" + l.name + "'");
      const std::size_t expected_inputs = l.kind == LayerKind::Input ? 0
                                          : l.kind == LayerKind::Add ? 2
                                                                     : 1;
      if (l.inputs.size() != expected_inputs)
        throw ConfigError("layer '" + l.name + "' expects " + std::to_string(expected_inputs) +
                          " inputs, has " + std::to_string(l.inputs.size()));
      for (const auto& in : l.inputs) {
        auto it = seen.find(in);
        if (it == seen.end())
          throw ConfigError("layer '" + l.name + "' references '" + in +
                            "' which is not an earlier layer");
      }
      switch (l.kind) {
        case LayerKind::Input:
          if (l.channels < 1) throw ConfigError("input layer '" + l.name + "' needs channels");
          break;
        case LayerKind::Conv:
        case LayerKind::TConv:
          if (l.filters < 1 || l.kernel < 1 || l.stride < 1)
            throw ConfigError("layer '" + l.name + "' has invalid conv parameters");
          break;
        case LayerKind::MaxPool:
          if (l.window < 1) throw ConfigError("layer '" + l.name + "' has invalid window");
          break;
        default:
          break;
      }
      seen.emplace(l.name, i);
    }
  }

  // Per-layer channel count, resolved front to back.
  std::vector<int> channel_plan() const {
    std::unordered_map<std::string, int> chan;
    std::vector<int> out;
    out.reserve(layers.size());
    for (const auto& l : layers) {
      int c = 0;
      switch (l.kind) {
        case LayerKind::Input: c = l.channels; break;
        case LayerKind::Conv:
        case LayerKind::TConv: c = l.filters; break;
        case LayerKind::Add: {
          const int a = chan.at(l.inputs[0]), b = chan.at(l.inputs[1]);
          if (a != b)
            throw ConfigError("add layer '" + l.name + "' fuses mismatched channel counts");
          c = a;
          break;
        }
        default: c = chan.at(l.inputs[0]); break;
      }
      chan[l.name] = c;
      out.push_back(c);
    }
    return out;
  }

  // Shape algebra without tensors: predicted [N,C,H,W] per layer.
  std::vector<std::pair<std::string, Shape>> predict_shapes(const Shape& input_shape) const {
    if (input_shape.size() != 4) throw ShapeError("predict_shapes: input must be [N,C,H,W]");
    const auto chans = channel_plan();
    std::unordered_map<std::string, Shape> by_name;
    std::vector<std::pair<std::string, Shape>> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& l = layers[i];
      Shape s;
      switch (l.kind) {
        case LayerKind::Input:
          s = input_shape;
          if (s[1] != l.channels)
            throw ShapeError("input has " + std::to_string(s[1]) + " channels, graph expects " +
                             std::to_string(l.channels));
          break;
        case LayerKind::Conv: {
          const Shape& in = by_name.at(l.inputs[0]);
          const int nh = in[2] + 2 * l.pad - l.kernel, nw = in[3] + 2 * l.pad - l.kernel;
          if (nh < 0 || nw < 0 || nh % l.stride || nw % l.stride)
            throw ShapeError("layer '" + l.name + "': non-integral output extent");
          s = {in[0], l.filters, nh / l.stride + 1, nw / l.stride + 1};
          break;
        }
        case LayerKind::TConv: {
          const Shape& in = by_name.at(l.inputs[0]);
          s = {in[0], l.filters, in[2] * l.stride, in[3] * l.stride};
          break;
        }
        case LayerKind::MaxPool: {
          const Shape& in = by_name.at(l.inputs[0]);
          if (in[2] % l.window || in[3] % l.window)
            throw ShapeError("layer '" + l.name + "': extent not divisible by window");
          s = {in[0], in[1], in[2] / l.window, in[3] / l.window};
          break;
        }
        case LayerKind::Add: {
          const Shape& a = by_name.at(l.inputs[0]);
          const Shape& b = by_name.at(l.inputs[1]);
          if (a != b)
            throw ShapeError("layer '" + l.name + "': fusing " + shape_str(a) + " with " +
                             shape_str(b));
          s = a;
          break;
        }
        default: {
          Shape in = by_name.at(l.inputs[0]);
          in[1] = chans[i];
          s = in;
          break;
        }
      }
      by_name[l.name] = s;
      out.emplace_back(l.name, std::move(s));
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& l : layers) {
      nlohmann::json j;
      j["name"] = l.name;
      j["kind"] = layer_kind_name(l.kind);
      if (!l.inputs.empty()) j["inputs"] = l.inputs;
      switch (l.kind) {
        case LayerKind::Input: j["channels"] = l.channels; break;
        case LayerKind::Conv:
          j["filters"] = l.filters;
          j["kernel"] = l.kernel;
          j["stride"] = l.stride;
          j["pad"] = l.pad;
          j["bias"] = l.bias;
          break;
        case LayerKind::TConv:
          j["filters"] = l.filters;
          j["kernel"] = l.kernel;
          j["stride"] = l.stride;
          break;
        case LayerKind::MaxPool:
          j["window"] = l.window;
          j["stride"] = l.stride;
          break;
        case LayerKind::BatchNorm:
          j["eps"] = l.bn_eps;
          j["momentum"] = l.bn_momentum;
          break;
        default: break;
      }
      out.push_back(std::move(j));
    }
    return out;
  }

  static GraphSpec from_json(const nlohmann::json& j) {
    GraphSpec spec;
    for (const auto& lj : j) {
      LayerSpec l;
      l.name = lj.at("name").get<std::string>();
      l.kind = layer_kind_from_name(lj.at("kind").get<std::string>());
      if (lj.contains("inputs")) l.inputs = lj.at("inputs").get<std::vector<std::string>>();
      l.channels = lj.value("channels", 0);
      l.filters = lj.value("filters", 0);
      l.kernel = lj.value("kernel", 0);
      l.stride = lj.value("stride", 1);
      l.pad = lj.value("pad", 0);
      l.window = lj.value("window", 2);
      l.bias = lj.value("bias", true);
      l.bn_eps = lj.value("eps", 1e-5);
      l.bn_momentum = lj.value("momentum", 0.99);
      spec.layers.push_back(std::move(l));
    }
    spec.validate();
    return spec;
  }
};

struct ForwardOptions {
  bool training = false;
  bool update_stats = true;  // only honored in training mode
};

// A graph spec plus its parameter tensors. Parameter names are
// "<layer>.weight|bias|gamma|beta|moving_mean|moving_var".
template <typename S>
class ModelGraph {
 public:
  struct LayerState {
    TensorPtr<S> weight, bias, gamma, beta, moving_mean, moving_var;
  };

  explicit ModelGraph(GraphSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const auto chans = spec_.channel_plan();
    std::unordered_map<std::string, int> chan_of;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) chan_of[spec_.layers[i].name] = chans[i];
    state_.resize(spec_.layers.size());
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const LayerSpec& l = spec_.layers[i];
      LayerState& st = state_[i];
      switch (l.kind) {
        case LayerKind::Conv: {
          const int cin = chan_of.at(l.inputs[0]);
          st.weight = Tensor<S>::zeros({l.filters, cin, l.kernel, l.kernel}, true);
          if (l.bias) st.bias = Tensor<S>::zeros({l.filters}, true);
          break;
        }
        case LayerKind::TConv: {
          const int cin = chan_of.at(l.inputs[0]);
          st.weight = Tensor<S>::zeros({cin, l.filters, l.kernel, l.kernel}, true);
          break;
        }
        case LayerKind::BatchNorm: {
          const int c = chans[i];
          st.gamma = Tensor<S>::full({c}, S(1), true);
          st.beta = Tensor<S>::zeros({c}, true);
          st.moving_mean = Tensor<S>::zeros({c});
          st.moving_var = Tensor<S>::full({c}, S(1));
          break;
        }
        default: break;
      }
    }
  }

  const GraphSpec& spec() const { return spec_; }
  std::size_t layer_count() const { return spec_.layers.size(); }

  LayerState& state(const std::string& layer_name) {
    for (std::size_t i = 0; i < spec_.layers.size(); ++i)
      if (spec_.layers[i].name == layer_name) return state_[i];
    throw ContractError("no layer named '" + layer_name + "'");
  }

  // Evaluates every layer; returns activations parallel to spec().layers.
  std::vector<TensorPtr<S>> forward_all(const TensorPtr<S>& input, const ForwardOptions& opts) {
    if (!input || input->shape.size() != 4) throw ShapeError("forward: input must be [N,C,H,W]");
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) index[spec_.layers[i].name] = i;
    std::vector<TensorPtr<S>> acts(spec_.layers.size());
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const LayerSpec& l = spec_.layers[i];
      LayerState& st = state_[i];
      switch (l.kind) {
        case LayerKind::Input:
          if (input->shape[1] != l.channels)
            throw ShapeError("input has " + std::to_string(input->shape[1]) +
                             " channels, graph expects " + std::to_string(l.channels));
          acts[i] = input;
          break;
        case LayerKind::Conv:
          acts[i] = conv2d(acts[index.at(l.inputs[0])], st.weight, st.bias, l.stride, l.pad);
          break;
        case LayerKind::TConv:
          acts[i] = transposed_conv2d(acts[index.at(l.inputs[0])], st.weight, l.stride);
          break;
        case LayerKind::BatchNorm:
          acts[i] = batch_norm(acts[index.at(l.inputs[0])], st.gamma, st.beta, st.moving_mean,
                               st.moving_var, opts.training, opts.training && opts.update_stats,
                               l.bn_eps, l.bn_momentum);
          break;
        case LayerKind::ReLU: acts[i] = relu(acts[index.at(l.inputs[0])]); break;
        case LayerKind::MTanh: acts[i] = modified_tanh(acts[index.at(l.inputs[0])]); break;
        case LayerKind::MaxPool:
          acts[i] = max_pool2d(acts[index.at(l.inputs[0])], l.window, l.stride);
          break;
        case LayerKind::Softmax: acts[i] = softmax_channels(acts[index.at(l.inputs[0])]); break;
        case LayerKind::Add:
          acts[i] = add(acts[index.at(l.inputs[0])], acts[index.at(l.inputs[1])]);
          break;
      }
    }
    return acts;
  }

  TensorPtr<S> forward(const TensorPtr<S>& input, const ForwardOptions& opts = {}) {
    return forward_all(input, opts).back();
  }

  TensorPtr<S> forward_layer(const TensorPtr<S>& input, const std::string& layer_name,
                             const ForwardOptions& opts = {}) {
    auto acts = forward_all(input, opts);
    for (std::size_t i = 0; i < spec_.layers.size(); ++i)
      if (spec_.layers[i].name == layer_name) return acts[i];
    throw ContractError("no layer named '" + layer_name + "'");
  }

  // Trainable parameters in deterministic layer order.
  std::vector<std::pair<std::string, TensorPtr<S>>> named_parameters() {
    std::vector<std::pair<std::string, TensorPtr<S>>> out;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& name = spec_.layers[i].name;
      const LayerState& st = state_[i];
      if (st.weight) out.emplace_back(name + ".weight", st.weight);
      if (st.bias) out.emplace_back(name + ".bias", st.bias);
      if (st.gamma) out.emplace_back(name + ".gamma", st.gamma);
      if (st.beta) out.emplace_back(name + ".beta", st.beta);
    }
    return out;
  }

  // Non-trainable buffers (batch-norm moving statistics).
  std::vector<std::pair<std::string, TensorPtr<S>>> named_buffers() {
    std::vector<std::pair<std::string, TensorPtr<S>>> out;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& name = spec_.layers[i].name;
      const LayerState& st = state_[i];
      if (st.moving_mean) out.emplace_back(name + ".moving_mean", st.moving_mean);
      if (st.moving_var) out.emplace_back(name + ".moving_var", st.moving_var);
    }
    return out;
  }

  std::vector<std::pair<std::string, TensorPtr<S>>> all_tensors() {
    auto out = named_parameters();
    auto bufs = named_buffers();
    out.insert(out.end(), bufs.begin(), bufs.end());
    return out;
  }

  TensorPtr<S> tensor_by_name(const std::string& name) {
    for (auto& [n, t] : all_tensors())
      if (n == name) return t;
    return nullptr;
  }

  void zero_grad() {
    for (auto& [n, t] : named_parameters()) t->zero_grad();
  }

  std::vector<std::pair<std::string, Shape>> predict_shapes(const Shape& input_shape) const {
    return spec_.predict_shapes(input_shape);
  }

 private:
  GraphSpec spec_;
  std::vector<LayerState> state_;
};

}  // namespace caepl
