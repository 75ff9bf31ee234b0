#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "terrace/augment.hpp"
#include "terrace/loss.hpp"
#include "terrace/network.hpp"
#include "terrace/postprocess.hpp"
#include "terrace/synthdata.hpp"
#include "terrace/train.hpp"

namespace terrace {

// One structured config file covering every stage; command-line flags
// override individual values and the effective result is echoed next to the
// run outputs so any run can be reproduced from its echo alone.
struct run_config {
  network_config network;
  loss_config loss;
  train_config train;
  augment_config augment;
  bool augment_enabled = false;
  postprocess_config postprocess;
  scene_config scenes;
  int touch_distance = 2;
  int threads = 0;  // 0 = --threads/TERRACE_THREADS/hardware

  nlohmann::json to_json() const;
  static run_config from_json(const nlohmann::json& j);
  static run_config load(const std::filesystem::path& p);
  void echo(const std::filesystem::path& p) const;

  // keeps the nested copies consistent before use
  void finalize() {
    train.loss = loss;
    train.augment = augment_enabled ? std::optional<augment_config>(augment) : std::nullopt;
  }
};

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::string& section,
                         const std::set<std::string>& known) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw contract_error("config: unknown key '" + it.key() + "' in section '" + section +
                           "'");
}

}  // namespace detail

inline nlohmann::json run_config::to_json() const {
  return {
      {"network",
       {{"in_channels", network.in_channels},
        {"encoder_widths", network.encoder_widths},
        {"decoder_widths", network.decoder_widths},
        {"out_channels", network.out_channels}}},
      {"loss",
       {{"alpha", loss.alpha},
        {"class_weights", loss.class_weights},
        {"variant", to_string(loss.variant)},
        {"epsilon", loss.epsilon}}},
      {"train",
       {{"learning_rate", train.learning_rate},
        {"epochs", train.epochs},
        {"batch_size", train.batch_size},
        {"freeze_epochs", train.freeze_epochs},
        {"rng_seed", train.rng_seed},
        {"checkpoint_every", train.checkpoint_every},
        {"augment_enabled", augment_enabled}}},
      {"augment",
       {{"scale_min", augment.scale_min},
        {"scale_max", augment.scale_max},
        {"rotation_max_degrees", augment.rotation_max_degrees},
        {"crop_size", augment.crop_size},
        {"gamma_choices", augment.gamma_choices},
        {"brightness_limit", augment.brightness_limit},
        {"contrast_min", augment.contrast_min},
        {"contrast_max", augment.contrast_max},
        {"rng_seed", augment.rng_seed}}},
      {"postprocess",
       {{"mask_threshold", postprocess.mask_threshold},
        {"border_threshold", postprocess.border_threshold},
        {"connectivity", postprocess.connectivity},
        {"min_instance_area", postprocess.min_instance_area}}},
      {"scenes", scene_config_to_json(scenes)},
      {"touch_distance", touch_distance},
      {"threads", threads}};
}

inline run_config run_config::from_json(const nlohmann::json& j) {
  run_config cfg;
  detail::require_keys(j, "(top level)",
                       {"network", "loss", "train", "augment", "postprocess", "scenes",
                        "touch_distance", "threads"});
  if (j.contains("network")) {
    const auto& n = j.at("network");
    detail::require_keys(n, "network",
                         {"in_channels", "encoder_widths", "decoder_widths", "out_channels"});
    cfg.network.in_channels = n.value("in_channels", cfg.network.in_channels);
    cfg.network.encoder_widths = n.value("encoder_widths", cfg.network.encoder_widths);
    cfg.network.decoder_widths = n.value("decoder_widths", cfg.network.decoder_widths);
    cfg.network.out_channels = n.value("out_channels", cfg.network.out_channels);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    detail::require_keys(l, "loss", {"alpha", "class_weights", "variant", "epsilon"});
    cfg.loss.alpha = l.value("alpha", cfg.loss.alpha);
    cfg.loss.class_weights = l.value("class_weights", cfg.loss.class_weights);
    if (l.contains("variant"))
      cfg.loss.variant = jaccard_variant_from_string(l.at("variant").get<std::string>());
    cfg.loss.epsilon = l.value("epsilon", cfg.loss.epsilon);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::require_keys(t, "train",
                         {"learning_rate", "epochs", "batch_size", "freeze_epochs", "rng_seed",
                          "checkpoint_every", "augment_enabled"});
    cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.freeze_epochs = t.value("freeze_epochs", cfg.train.freeze_epochs);
    cfg.train.rng_seed = t.value("rng_seed", cfg.train.rng_seed);
    cfg.train.checkpoint_every = t.value("checkpoint_every", cfg.train.checkpoint_every);
    cfg.augment_enabled = t.value("augment_enabled", cfg.augment_enabled);
  }
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    detail::require_keys(a, "augment",
                         {"scale_min", "scale_max", "rotation_max_degrees", "crop_size",
                          "gamma_choices", "brightness_limit", "contrast_min", "contrast_max",
                          "rng_seed"});
    cfg.augment.scale_min = a.value("scale_min", cfg.augment.scale_min);
    cfg.augment.scale_max = a.value("scale_max", cfg.augment.scale_max);
    cfg.augment.rotation_max_degrees =
        a.value("rotation_max_degrees", cfg.augment.rotation_max_degrees);
    cfg.augment.crop_size = a.value("crop_size", cfg.augment.crop_size);
    cfg.augment.gamma_choices = a.value("gamma_choices", cfg.augment.gamma_choices);
    cfg.augment.brightness_limit = a.value("brightness_limit", cfg.augment.brightness_limit);
    cfg.augment.contrast_min = a.value("contrast_min", cfg.augment.contrast_min);
    cfg.augment.contrast_max = a.value("contrast_max", cfg.augment.contrast_max);
    cfg.augment.rng_seed = a.value("rng_seed", cfg.augment.rng_seed);
  }
  if (j.contains("postprocess")) {
    const auto& p = j.at("postprocess");
    detail::require_keys(
        p, "postprocess",
        {"mask_threshold", "border_threshold", "connectivity", "min_instance_area"});
    cfg.postprocess.mask_threshold = p.value("mask_threshold", cfg.postprocess.mask_threshold);
    cfg.postprocess.border_threshold =
        p.value("border_threshold", cfg.postprocess.border_threshold);
    cfg.postprocess.connectivity = p.value("connectivity", cfg.postprocess.connectivity);
    cfg.postprocess.min_instance_area =
        p.value("min_instance_area", cfg.postprocess.min_instance_area);
  }
  if (j.contains("scenes")) {
    detail::require_keys(j.at("scenes"), "scenes",
                         {"size", "buildings_min", "buildings_max", "touching_pair_fraction",
                          "noise_sigma", "intensity_margin", "building_lo", "building_hi",
                          "building_size_min", "building_size_max", "min_visible_area",
                          "rng_seed"});
    cfg.scenes = scene_config_from_json(j.at("scenes"));
  }
  cfg.touch_distance = j.value("touch_distance", cfg.touch_distance);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.finalize();
  return cfg;
}

inline run_config run_config::load(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw io_error("cannot open config " + p.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw format_error("config " + p.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

inline void run_config::echo(const std::filesystem::path& p) const {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw io_error("cannot write effective config " + p.string());
  out << to_json().dump(2) << "\n";
  if (!out) throw io_error("write failed for " + p.string());
}

}  // namespace terrace
