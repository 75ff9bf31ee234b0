#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "terrace/augment.hpp"
#include "terrace/loss.hpp"
#include "terrace/network.hpp"
#include "terrace/preprocess.hpp"
#include "terrace/targets.hpp"

namespace terrace {

struct train_config {
  double learning_rate = 1e-4;
  int epochs = 30;
  int batch_size = 4;
  loss_config loss;
  int freeze_epochs = 1;  // encoder frozen for epochs 1..freeze_epochs
  std::uint64_t rng_seed = 0;
  int checkpoint_every = 0;                 // 0 = final checkpoint only
  std::filesystem::path checkpoint_dir;     // empty = no checkpoints written
  std::filesystem::path metrics_path;       // empty = no jsonl log written
  std::optional<augment_config> augment;    // disabled unless set

  void validate() const {
    if (!(learning_rate > 0.0)) throw contract_error("train: learning rate must be positive");
    if (epochs < 1) throw contract_error("train: epochs must be >= 1");
    if (batch_size < 1) throw contract_error("train: batch size must be >= 1");
    if (freeze_epochs < 0) throw contract_error("train: freeze epochs must be >= 0");
    loss.validate();
    if (augment) augment->validate();
  }
};

// Bias-corrected Adam. Moment buffers are aligned with the parameter list;
// frozen parameters are skipped entirely, so both their values and their
// moments stay bit-identical.
template <typename T>
struct adam_state {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  static adam_state init(const model_weights<T>& w) {
    adam_state s;
    for (const auto& p : w.params) {
      s.m.emplace_back(static_cast<std::size_t>(p.value.size()), T(0));
      s.v.emplace_back(static_cast<std::size_t>(p.value.size()), T(0));
    }
    return s;
  }
};

// grads entries may be nullptr only for frozen parameters.
template <typename T>
void adam_step(model_weights<T>& w, const std::vector<const std::vector<T>*>& grads,
               adam_state<T>& state, double lr) {
  if (grads.size() != w.params.size() || state.m.size() != w.params.size())
    throw contract_error("adam_step: parameter/gradient/state size mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    auto& p = w.params[i];
    if (p.frozen) continue;
    if (!grads[i])
      throw contract_error("adam_step: missing gradient for unfrozen parameter '" + p.name + "'");
    const auto& g = *grads[i];
    if (g.size() != static_cast<std::size_t>(p.value.size()))
      throw contract_error("adam_step: gradient size mismatch for '" + p.name + "'");
    auto updated = std::make_shared<std::vector<T>>(*p.value.values);
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      double gj = static_cast<double>(g[j]);
      double mj = state.beta1 * static_cast<double>(m[j]) + (1.0 - state.beta1) * gj;
      double vj = state.beta2 * static_cast<double>(v[j]) + (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      double step_val = lr * (mj / bc1) / (std::sqrt(vj / bc2) + state.epsilon);
      (*updated)[j] = static_cast<T>(static_cast<double>((*updated)[j]) - step_val);
    }
    p.value.values = std::move(updated);
  }
}

struct training_scene {
  raster image;        // raw 11-channel (or 3-channel) scene
  target_pair targets;
};

struct epoch_metrics {
  int epoch = 0;
  double combined = 0;
  double bce = 0;
  double jaccard = 0;
  double pixel_iou = 0;
  std::string stage;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"L", combined},        {"H", bce},
            {"J", jaccard},   {"pixel_iou", pixel_iou}, {"stage", stage}};
  }
};

struct train_result {
  model_weights<float> weights;
  std::vector<epoch_metrics> log;
};

// Optimization loop: seeded shuffling, the two-stage freeze schedule
// (encoder frozen through freeze_epochs, everything trainable afterwards),
// per-epoch loss/pixel-IoU metrics, optional checkpoint cadence. Fully
// deterministic for a fixed (config, dataset order, seed).
inline train_result train(const train_config& cfg, const std::vector<training_scene>& dataset,
                          model_weights<float> weights) {
  cfg.validate();
  weights.config.validate();
  if (dataset.empty()) throw contract_error("train: dataset is empty");

  const int C = weights.config.in_channels;
  const int S_h = cfg.augment ? cfg.augment->crop_size : dataset.front().image.height;
  const int S_w = cfg.augment ? cfg.augment->crop_size : dataset.front().image.width;
  for (const auto& sc : dataset) {
    if (sc.image.channels != C)
      throw contract_error("train: scene has " + std::to_string(sc.image.channels) +
                           " channels, model expects " + std::to_string(C));
    if (!cfg.augment && (sc.image.height != S_h || sc.image.width != S_w))
      throw contract_error("train: scenes must share dimensions (or enable augmentation)");
    if (sc.targets.footprint.height != sc.image.height ||
        sc.targets.footprint.width != sc.image.width)
      throw contract_error("train: targets misaligned with image");
  }
  if (S_h % 32 != 0 || S_w % 32 != 0)
    throw contract_error("train: training tiles must be divisible by 32, got " +
                         std::to_string(S_w) + "x" + std::to_string(S_h));

  // without augmentation the normalized tensors are fixed; cache them
  std::vector<std::vector<float>> cached_inputs;
  std::vector<std::vector<float>> cached_targets;
  const std::int64_t plane = static_cast<std::int64_t>(S_h) * S_w;
  if (!cfg.augment) {
    for (const auto& sc : dataset) {
      auto norm = normalize(sc.image, compute_stats(sc.image));
      cached_inputs.push_back(std::move(norm.data));
      std::vector<float> tgt(static_cast<std::size_t>(2 * plane));
      std::copy(sc.targets.footprint.data.begin(), sc.targets.footprint.data.end(), tgt.begin());
      std::copy(sc.targets.touch.data.begin(), sc.targets.touch.data.end(),
                tgt.begin() + plane);
      cached_targets.push_back(std::move(tgt));
    }
  }
  auto minmax_stats = normalization_stats::for_channels(C);  // augmented tiles are in [0,1]

  adam_state<float> adam = adam_state<float>::init(weights);
  train_result result;

  std::ofstream metrics_out;
  if (!cfg.metrics_path.empty()) {
    metrics_out.open(cfg.metrics_path, std::ios::trunc);
    if (!metrics_out) throw io_error("cannot open metrics log " + cfg.metrics_path.string());
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    bool frozen_stage = epoch <= cfg.freeze_epochs;
    weights = set_freeze(weights, frozen_stage ? freeze_scope::encoder : freeze_scope::none);

    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(mix_seed(cfg.rng_seed, 0xe90c4, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    epoch_metrics em;
    em.epoch = epoch;
    em.stage = frozen_stage ? "freeze-encoder" : "end-to-end";
    double iou_inter = 0, iou_union = 0;
    int batches = 0;

    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t n = std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - pos);
      auto x = tensor<float>::zeros({static_cast<int>(n), C, S_h, S_w});
      auto y = tensor<float>::zeros({static_cast<int>(n), 2, S_h, S_w});
      for (std::size_t b = 0; b < n; ++b) {
        std::size_t idx = order[pos + b];
        if (cfg.augment) {
          auto [img, tgt] = augment_pair(
              dataset[idx].image, dataset[idx].targets.to_raster(), *cfg.augment,
              mix_seed(cfg.rng_seed, static_cast<std::uint64_t>(epoch),
                       static_cast<std::uint64_t>(idx)));
          auto norm = normalize(img, minmax_stats);
          std::copy(norm.data.begin(), norm.data.end(),
                    x.data() + static_cast<std::int64_t>(b) * C * plane);
          std::copy(tgt.data.begin(), tgt.data.end(),
                    y.data() + static_cast<std::int64_t>(b) * 2 * plane);
        } else {
          std::copy(cached_inputs[idx].begin(), cached_inputs[idx].end(),
                    x.data() + static_cast<std::int64_t>(b) * C * plane);
          std::copy(cached_targets[idx].begin(), cached_targets[idx].end(),
                    y.data() + static_cast<std::int64_t>(b) * 2 * plane);
        }
      }

      tape<float> t;
      std::vector<int> nodes;
      auto logits = forward(weights, x, &t, {}, &nodes);
      auto breakdown = combined_loss(y, logits, cfg.loss);
      t.backward(breakdown.node);

      std::vector<const std::vector<float>*> grads(weights.params.size(), nullptr);
      for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i] >= 0 && t.has_grad(nodes[i])) grads[i] = &t.grad(nodes[i]);
      adam_step(weights, grads, adam, cfg.learning_rate);

      em.combined += breakdown.combined;
      em.bce += breakdown.bce;
      em.jaccard += breakdown.jaccard;
      ++batches;
      for (std::size_t b = 0; b < n; ++b) {
        const float* z = logits.data() + static_cast<std::int64_t>(b) * 2 * plane;
        const float* yt = y.data() + static_cast<std::int64_t>(b) * 2 * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
          bool pred = z[j] >= 0.f;  // sigmoid(z) >= 0.5
          bool truth = yt[j] > 0.5f;
          iou_inter += pred && truth;
          iou_union += pred || truth;
        }
      }
    }

    em.combined /= batches;
    em.bce /= batches;
    em.jaccard /= batches;
    em.pixel_iou = iou_union > 0 ? iou_inter / iou_union : 1.0;
    result.log.push_back(em);
    if (metrics_out) metrics_out << em.to_json().dump() << "\n";

    if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        epoch % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d", epoch);
      save_checkpoint(cfg.checkpoint_dir / name, weights);
    }
  }

  if (!cfg.checkpoint_dir.empty()) save_checkpoint(cfg.checkpoint_dir / "final", weights);
  result.weights = std::move(weights);
  return result;
}

}  // namespace terrace
