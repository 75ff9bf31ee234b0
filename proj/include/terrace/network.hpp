#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "terrace/raster.hpp"
#include "terrace/tensor.hpp"

namespace terrace {

// Encoder-decoder topology: five two-conv encoder blocks with a 2x2 max pool
// after each (five pools total, hence the divisible-by-32 input contract),
// five decoder blocks of {upsample x2, concat the matching encoder output,
// two 3x3 convs}, and a 1x1 head producing footprint/border logits.
struct network_config {
  int in_channels = 11;
  std::vector<int> encoder_widths = {8, 16, 32, 64, 128};
  std::vector<int> decoder_widths = {128, 64, 32, 16, 8};  // deepest block first
  int out_channels = 2;

  void validate() const {
    if (in_channels < 1) throw contract_error("network: in_channels must be >= 1");
    if (encoder_widths.size() != 5)
      throw contract_error("network: exactly 5 encoder widths required, got " +
                           std::to_string(encoder_widths.size()));
    if (decoder_widths.size() != 5)
      throw contract_error("network: exactly 5 decoder widths required, got " +
                           std::to_string(decoder_widths.size()));
    for (int w : encoder_widths)
      if (w < 1) throw contract_error("network: encoder widths must be positive");
    for (int w : decoder_widths)
      if (w < 1) throw contract_error("network: decoder widths must be positive");
    if (out_channels != 2) throw contract_error("network: the head emits exactly 2 channels");
  }

  std::string fingerprint() const {
    std::string s = "in=" + std::to_string(in_channels) + ";enc=";
    for (std::size_t i = 0; i < encoder_widths.size(); ++i)
      s += (i ? "," : "") + std::to_string(encoder_widths[i]);
    s += ";dec=";
    for (std::size_t i = 0; i < decoder_widths.size(); ++i)
      s += (i ? "," : "") + std::to_string(decoder_widths[i]);
    s += ";out=" + std::to_string(out_channels);
    return s;
  }
};

template <typename T>
struct named_param {
  std::string name;
  tensor<T> value;
  bool frozen = false;
};

template <typename T>
struct model_weights {
  network_config config;
  std::vector<named_param<T>> params;  // topology order, names unique

  named_param<T>& find(const std::string& name) {
    for (auto& p : params)
      if (p.name == name) return p;
    throw contract_error("model_weights: no parameter named '" + name + "'");
  }
  const named_param<T>& find(const std::string& name) const {
    return const_cast<model_weights*>(this)->find(name);
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
  }
};

namespace detail {

// (name, out_channels, in_channels, kernel) for every conv layer, in
// execution order.
struct conv_layer_spec {
  std::string name;
  int out_c;
  int in_c;
  int k;
};

inline std::vector<conv_layer_spec> layer_plan(const network_config& cfg) {
  std::vector<conv_layer_spec> plan;
  int prev = cfg.in_channels;
  for (int b = 0; b < 5; ++b) {
    int w = cfg.encoder_widths[static_cast<std::size_t>(b)];
    std::string base = "enc" + std::to_string(b + 1);
    plan.push_back({base + ".conv1", w, prev, 3});
    plan.push_back({base + ".conv2", w, w, 3});
    prev = w;
  }
  for (int i = 0; i < 5; ++i) {
    int skip = cfg.encoder_widths[static_cast<std::size_t>(4 - i)];
    int w = cfg.decoder_widths[static_cast<std::size_t>(i)];
    int in_c = (i == 0 ? cfg.encoder_widths[4] : cfg.decoder_widths[static_cast<std::size_t>(i - 1)]) + skip;
    std::string base = "dec" + std::to_string(5 - i);
    plan.push_back({base + ".conv1", w, in_c, 3});
    plan.push_back({base + ".conv2", w, w, 3});
  }
  plan.push_back({"head", cfg.out_channels, cfg.decoder_widths[4], 1});
  return plan;
}

}  // namespace detail

// He-uniform initialization of all conv kernels (bound sqrt(6/fan_in)),
// zero biases. Identical seeds give bit-identical weights.
template <typename T = float>
model_weights<T> build_network(const network_config& cfg, std::uint64_t rng_seed) {
  cfg.validate();
  model_weights<T> w;
  w.config = cfg;
  std::mt19937_64 rng(rng_seed);
  for (const auto& layer : detail::layer_plan(cfg)) {
    double fan_in = static_cast<double>(layer.in_c) * layer.k * layer.k;
    double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto kernel = tensor<T>::zeros({layer.out_c, layer.in_c, layer.k, layer.k});
    for (std::int64_t i = 0; i < kernel.size(); ++i) kernel.data()[i] = static_cast<T>(dist(rng));
    w.params.push_back({layer.name + ".w", kernel, false});
    w.params.push_back({layer.name + ".b", tensor<T>::zeros({layer.out_c}), false});
  }
  return w;
}

template <typename T>
struct forward_options {
  conv_backend backend = default_conv_backend();
  // multiplies encoder outputs where they enter the decoder concat; test
  // hook for verifying that every skip connection is live
  std::array<T, 5> skip_scale = {T(1), T(1), T(1), T(1), T(1)};
};

// Runs the network. When a tape is supplied, unfrozen parameters are
// attached as differentiable leaves and their node ids land in param_nodes
// (aligned with w.params; -1 for frozen entries).
template <typename T>
tensor<T> forward(const model_weights<T>& w, const tensor<T>& batch, tape<T>* tp = nullptr,
                  const forward_options<T>& opt = {}, std::vector<int>* param_nodes = nullptr) {
  w.config.validate();
  detail::require_nchw(batch.shape, "network forward");
  if (batch.c() != w.config.in_channels)
    throw shape_error("network forward: batch has " + std::to_string(batch.c()) +
                      " channels, model expects " + std::to_string(w.config.in_channels));
  if (batch.h() % 32 != 0 || batch.w() % 32 != 0 || batch.h() < 32 || batch.w() < 32)
    throw shape_error("network forward: spatial dims " + std::to_string(batch.h()) + "x" +
                      std::to_string(batch.w()) +
                      " must be divisible by 32; pad the input first (pad_to_grid)");

  std::vector<tensor<T>> bound;
  bound.reserve(w.params.size());
  if (param_nodes) param_nodes->assign(w.params.size(), -1);
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    if (tp && !w.params[i].frozen) {
      bound.push_back(tp->variable(w.params[i].value));
      if (param_nodes) (*param_nodes)[i] = bound.back().node;
    } else {
      bound.push_back(w.params[i].value);
    }
  }
  auto param = [&](std::size_t idx) -> const tensor<T>& { return bound[idx]; };

  auto conv_block = [&](const tensor<T>& in, std::size_t base) {
    auto h1 = relu(add_bias(conv3x3(in, param(base), opt.backend), param(base + 1)));
    return relu(add_bias(conv3x3(h1, param(base + 2), opt.backend), param(base + 3)));
  };

  std::vector<tensor<T>> skips;
  tensor<T> cur = batch;
  for (int b = 0; b < 5; ++b) {
    cur = conv_block(cur, static_cast<std::size_t>(b) * 4);
    skips.push_back(cur);
    cur = maxpool2(cur);
  }
  for (int i = 0; i < 5; ++i) {
    auto up = upsample_nearest2(cur);
    tensor<T> skip = skips[static_cast<std::size_t>(4 - i)];
    if (opt.skip_scale[static_cast<std::size_t>(4 - i)] != T(1))
      skip = lincomb<T>({skip}, {opt.skip_scale[static_cast<std::size_t>(4 - i)]}, T(0));
    cur = conv_block(concat_channels(up, skip), (5 + static_cast<std::size_t>(i)) * 4);
  }
  return add_bias(conv1x1(cur, param(40)), param(41));
}

// Replaces the first conv kernel with a wider one: kernels for channels
// 0..2 are copied verbatim, new channels start at exactly zero so the
// extended model reproduces the RGB model until training moves them.
template <typename T>
model_weights<T> extend_input_channels(const model_weights<T>& w, int new_in) {
  if (w.config.in_channels != 3)
    throw contract_error("extend_input_channels: model must have 3 input channels, has " +
                         std::to_string(w.config.in_channels));
  if (new_in <= 3)
    throw contract_error("extend_input_channels: new channel count must exceed 3, got " +
                         std::to_string(new_in));
  model_weights<T> out = w;
  out.config.in_channels = new_in;
  auto& first = out.params.at(0);
  const auto& old_k = w.params.at(0).value;
  int f = old_k.dim(0);
  auto grown = tensor<T>::zeros({f, new_in, 3, 3});
  for (int o = 0; o < f; ++o)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 9; ++i)
        grown.data()[(static_cast<std::int64_t>(o) * new_in + c) * 9 + i] =
            old_k.data()[(static_cast<std::int64_t>(o) * 3 + c) * 9 + i];
  first.value = grown;
  return out;
}

enum class freeze_scope { none, encoder };

template <typename T>
model_weights<T> set_freeze(const model_weights<T>& w, freeze_scope scope) {
  model_weights<T> out = w;
  for (auto& p : out.params)
    p.frozen = scope == freeze_scope::encoder && p.name.rfind("enc", 0) == 0;
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints: directory with manifest.json + one f32le blob per parameter
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::filesystem::path& dir, const model_weights<float>& w) {
  std::filesystem::create_directories(dir);
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : w.params) {
    std::string file = p.name + ".bin";
    detail::write_file_bytes(dir / file, p.value.data(),
                             static_cast<std::size_t>(p.value.size()) * 4);
    params.push_back({{"name", p.name}, {"shape", p.value.shape}, {"file", file}});
  }
  nlohmann::json manifest = {{"format", "terrace-checkpoint-v1"},
                             {"fingerprint", w.config.fingerprint()},
                             {"config",
                              {{"in_channels", w.config.in_channels},
                               {"encoder_widths", w.config.encoder_widths},
                               {"decoder_widths", w.config.decoder_widths},
                               {"out_channels", w.config.out_channels}}},
                             {"params", params}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw io_error("cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
  if (!out) throw io_error("write failed for checkpoint manifest in " + dir.string());
}

inline model_weights<float> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw format_error("missing checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw format_error("corrupt checkpoint manifest: " + std::string(e.what()));
  }
  model_weights<float> w;
  try {
    if (manifest.at("format").get<std::string>() != "terrace-checkpoint-v1")
      throw format_error("unknown checkpoint format in " + dir.string());
    const auto& cfg = manifest.at("config");
    w.config.in_channels = cfg.at("in_channels").get<int>();
    w.config.encoder_widths = cfg.at("encoder_widths").get<std::vector<int>>();
    w.config.decoder_widths = cfg.at("decoder_widths").get<std::vector<int>>();
    w.config.out_channels = cfg.at("out_channels").get<int>();
    w.config.validate();
    for (const auto& entry : manifest.at("params")) {
      named_param<float> p;
      p.name = entry.at("name").get<std::string>();
      auto shape = entry.at("shape").get<std::vector<int>>();
      auto bytes = detail::read_file_bytes(dir / entry.at("file").get<std::string>());
      if (bytes.size() != static_cast<std::size_t>(numel(shape)) * 4)
        throw truncation_error("checkpoint blob for " + p.name + " has wrong size");
      std::vector<float> vals(bytes.size() / 4);
      std::memcpy(vals.data(), bytes.data(), bytes.size());
      p.value = tensor<float>::from(shape, std::move(vals));
      w.params.push_back(std::move(p));
    }
    if (manifest.at("fingerprint").get<std::string>() != w.config.fingerprint())
      throw format_error("checkpoint fingerprint does not match its config");
  } catch (const nlohmann::json::exception& e) {
    throw format_error("corrupt checkpoint manifest: " + std::string(e.what()));
  }
  // structural check against the plan
  auto plan = detail::layer_plan(w.config);
  if (w.params.size() != plan.size() * 2)
    throw format_error("checkpoint parameter list does not match the topology");
  return w;
}

}  // namespace terrace
