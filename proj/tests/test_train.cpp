#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>

#include "oracles.hpp"
#include "terrace/synthdata.hpp"
#include "terrace/train.hpp"

using namespace terrace;

namespace {

model_weights<float> single_param_model(float value) {
  model_weights<float> w;
  w.params.push_back({"p", tensor<float>::scalar(value), false});
  return w;
}

network_config small_net(int in_channels = 11) {
  network_config cfg;
  cfg.in_channels = in_channels;
  cfg.encoder_widths = {8, 12, 16, 24, 32};
  cfg.decoder_widths = {32, 24, 16, 12, 8};
  return cfg;
}

network_config micro_net(int in_channels = 11) {
  network_config cfg;
  cfg.in_channels = in_channels;
  cfg.encoder_widths = {2, 3, 4, 5, 6};
  cfg.decoder_widths = {6, 5, 4, 3, 2};
  return cfg;
}

std::vector<training_scene> make_scenes(int count, int size, std::uint64_t seed,
                                        int buildings_min = 3, int buildings_max = 5) {
  scene_config cfg;
  cfg.size = size;
  cfg.rng_seed = seed;
  cfg.buildings_min = buildings_min;
  cfg.buildings_max = buildings_max;
  cfg.building_size_min = std::max(4, size / 12);
  cfg.building_size_max = std::max(6, size / 5);
  std::vector<training_scene> scenes;
  for (int i = 0; i < count; ++i) {
    auto sc = generate_scene(cfg, static_cast<std::uint64_t>(i));
    scenes.push_back({std::move(sc.image), make_targets(sc.labels, 2)});
  }
  return scenes;
}

bool params_equal(const model_weights<float>& a, const model_weights<float>& b,
                  const std::string& prefix) {
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].name.rfind(prefix, 0) != 0) continue;
    if (std::memcmp(a.params[i].value.data(), b.params[i].value.data(),
                    static_cast<std::size_t>(a.params[i].value.size()) * 4) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("first adam step matches the hand-computed update", "[train]") {
  auto w = single_param_model(1.f);
  auto state = adam_state<float>::init(w);
  std::vector<float> g = {1.f};
  std::vector<const std::vector<float>*> grads = {&g};
  adam_step(w, grads, state, 0.1);
  // m_hat = 1, v_hat = 1 -> w' = 1 - 0.1 / (1 + 1e-8)
  CHECK(w.params[0].value.at(0) == Catch::Approx(0.9).margin(1e-6));
  CHECK(state.step == 1);
}

TEST_CASE("frozen parameters ignore gradients and keep their moments", "[train]") {
  auto w = single_param_model(2.5f);
  w.params[0].frozen = true;
  auto state = adam_state<float>::init(w);
  std::vector<float> g = {13.f};
  std::vector<const std::vector<float>*> grads = {&g};
  adam_step(w, grads, state, 0.5);
  CHECK(w.params[0].value.at(0) == 2.5f);
  CHECK(state.m[0][0] == 0.f);
  CHECK(state.v[0][0] == 0.f);
  CHECK(state.step == 1);
}

TEST_CASE("zero gradients leave weights unchanged but advance the step", "[train]") {
  auto w = single_param_model(1.25f);
  auto state = adam_state<float>::init(w);
  std::vector<float> g = {0.f};
  std::vector<const std::vector<float>*> grads = {&g};
  adam_step(w, grads, state, 0.1);
  adam_step(w, grads, state, 0.1);
  CHECK(w.params[0].value.at(0) == 1.25f);
  CHECK(state.step == 2);
}

TEST_CASE("missing gradients on unfrozen parameters are contract errors", "[train]") {
  auto w = single_param_model(1.f);
  auto state = adam_state<float>::init(w);
  std::vector<const std::vector<float>*> grads = {nullptr};
  CHECK_THROWS_AS(adam_step(w, grads, state, 0.1), contract_error);
}

TEST_CASE("one-batch overfit drives the combined loss under the fixture bar", "[train]") {
  auto scenes = make_scenes(4, 96, 42);
  train_config cfg;
  cfg.epochs = 100;
  cfg.batch_size = 4;
  cfg.learning_rate = 2e-3;  // overfit fixture; the schedule contract is tested elsewhere
  cfg.freeze_epochs = 0;
  cfg.rng_seed = 7;
  auto init = build_network<float>(small_net(), 3);
  auto result = train(cfg, scenes, init);
  REQUIRE(result.log.size() == 100);
  // recorded oracle run: seed(7,3,42) reaches ~0.02 by epoch 100
  CHECK(result.log.back().combined < 0.05);
  CHECK(result.log.back().pixel_iou > 0.8);
}

TEST_CASE("stage one trains the decoder only", "[train]") {
  auto scenes = make_scenes(6, 64, 5);
  auto init = extend_input_channels(build_network<float>(micro_net(3), 11), 11);
  train_config cfg;
  cfg.epochs = 1;
  cfg.freeze_epochs = 1;
  cfg.batch_size = 2;
  auto result = train(cfg, scenes, init);
  REQUIRE(result.log.size() == 1);
  CHECK(result.log[0].stage == "freeze-encoder");
  CHECK(params_equal(result.weights, init, "enc"));
  CHECK_FALSE(params_equal(result.weights, init, "dec"));

  // the zero-initialized multispectral slices stay zero while frozen
  const auto& k = result.weights.params.at(0).value;
  for (int o = 0; o < k.dim(0); ++o)
    for (int c = 3; c < 11; ++c)
      for (int i = 0; i < 9; ++i)
        CHECK(k.data()[(static_cast<std::int64_t>(o) * 11 + c) * 9 + i] == 0.f);
}

TEST_CASE("unfrozen training moves the multispectral slices", "[train]") {
  auto scenes = make_scenes(2, 64, 9);
  auto init = extend_input_channels(build_network<float>(micro_net(3), 13), 11);
  train_config cfg;
  cfg.epochs = 1;
  cfg.freeze_epochs = 0;
  cfg.batch_size = 2;
  cfg.learning_rate = 1e-3;
  auto result = train(cfg, scenes, init);
  const auto& k = result.weights.params.at(0).value;
  float norm = 0.f;
  for (int o = 0; o < k.dim(0); ++o)
    for (int c = 3; c < 11; ++c)
      for (int i = 0; i < 9; ++i)
        norm = std::max(norm,
                        std::abs(k.data()[(static_cast<std::int64_t>(o) * 11 + c) * 9 + i]));
  CHECK(norm > 0.f);
}

TEST_CASE("training is deterministic across runs and thread counts", "[train]") {
  auto scenes = make_scenes(6, 32, 21);
  train_config cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.rng_seed = 11;
  auto init = build_network<float>(micro_net(), 2);

  int before = thread_count();
  set_thread_count(1);
  auto a = train(cfg, scenes, init);
  set_thread_count(2);
  auto b = train(cfg, scenes, init);
  set_thread_count(before);
  auto c = train(cfg, scenes, init);

  for (std::size_t i = 0; i < a.weights.params.size(); ++i) {
    const auto& pa = a.weights.params[i].value;
    const auto& pb = b.weights.params[i].value;
    const auto& pc = c.weights.params[i].value;
    REQUIRE(std::memcmp(pa.data(), pb.data(), static_cast<std::size_t>(pa.size()) * 4) == 0);
    REQUIRE(std::memcmp(pa.data(), pc.data(), static_cast<std::size_t>(pa.size()) * 4) == 0);
  }
}

TEST_CASE("loss decreases over a 20-epoch window for most seeds", "[train]") {
  int passing = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto scenes = make_scenes(4, 32, 100 + seed);
    train_config cfg;
    cfg.epochs = 21;
    cfg.batch_size = 4;
    cfg.learning_rate = 1e-3;
    cfg.freeze_epochs = 0;
    cfg.rng_seed = seed;
    auto result = train(cfg, scenes, build_network<float>(micro_net(), seed));
    if (result.log.back().combined < result.log.front().combined) ++passing;
  }
  CHECK(passing >= 9);
}

TEST_CASE("epoch one only, when epochs is one", "[train]") {
  auto scenes = make_scenes(2, 32, 31);
  train_config cfg;
  cfg.epochs = 1;
  auto result = train(cfg, scenes, build_network<float>(micro_net(), 1));
  CHECK(result.log.size() == 1);
}

TEST_CASE("inconsistent datasets fail before training starts", "[train]") {
  auto scenes = make_scenes(2, 32, 41);
  auto odd = make_scenes(1, 64, 42);
  scenes.push_back(odd[0]);
  train_config cfg;
  CHECK_THROWS_AS(train(cfg, scenes, build_network<float>(micro_net(), 1)), contract_error);

  std::vector<training_scene> none;
  CHECK_THROWS_AS(train(cfg, none, build_network<float>(micro_net(), 1)), contract_error);
}

TEST_CASE("metric logs and checkpoints land on disk", "[train]") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "terrace_test_train";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto scenes = make_scenes(2, 32, 51);
  train_config cfg;
  cfg.epochs = 4;
  cfg.checkpoint_every = 2;
  cfg.checkpoint_dir = dir / "ckpt";
  cfg.metrics_path = dir / "metrics.jsonl";
  auto result = train(cfg, scenes, build_network<float>(micro_net(), 1));
  CHECK(fs::exists(dir / "ckpt" / "epoch_0002" / "manifest.json"));
  CHECK(fs::exists(dir / "ckpt" / "epoch_0004" / "manifest.json"));
  CHECK(fs::exists(dir / "ckpt" / "final" / "manifest.json"));

  std::ifstream log(dir / "metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.contains("L"));
    CHECK(j.contains("H"));
    CHECK(j.contains("J"));
    CHECK(j.contains("pixel_iou"));
    CHECK(j.contains("stage"));
    ++lines;
  }
  CHECK(lines == 4);
}

TEST_CASE("augmented training runs deterministically", "[train]") {
  auto scenes = make_scenes(3, 64, 61);
  train_config cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  augment_config aug;
  aug.crop_size = 32;
  aug.rng_seed = 4;
  cfg.augment = aug;
  auto init = build_network<float>(micro_net(), 14);
  auto a = train(cfg, scenes, init);
  auto b = train(cfg, scenes, init);
  for (std::size_t i = 0; i < a.weights.params.size(); ++i) {
    const auto& pa = a.weights.params[i].value;
    const auto& pb = b.weights.params[i].value;
    REQUIRE(std::memcmp(pa.data(), pb.data(), static_cast<std::size_t>(pa.size()) * 4) == 0);
  }
}
