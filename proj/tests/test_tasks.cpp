#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "segnas/checkpoint.hpp"
#include "segnas/tasks.hpp"

using namespace segnas;

namespace {

SyntheticTaskConfig small_task() {
  SyntheticTaskConfig cfg;
  cfg.image_size = 32;
  cfg.meta_train = 64;
  cfg.meta_val = 16;
  cfg.holdout = 32;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("dataset generation is byte-identical for a fixed seed") {
  const auto cfg = small_task();
  Dataset a = generate(cfg);
  Dataset b = generate(cfg);
  CHECK((a.images.data == b.images.data).all());
  CHECK((a.masks.data == b.masks.data).all());

  SyntheticTaskConfig other = cfg;
  other.seed = 4;
  Dataset c = generate(other);
  CHECK((a.images.data != c.images.data).any());
}

TEST_CASE("splits are disjoint and cover the dataset") {
  Dataset data = generate(small_task());
  CHECK(data.meta_train().end == data.meta_val().begin);
  CHECK(data.meta_val().end == data.holdout().begin);
  CHECK(data.holdout().end == data.total());
}

TEST_CASE("zero shapes per image leave the mask all background") {
  SyntheticTaskConfig cfg = small_task();
  cfg.min_shapes = 0;
  cfg.max_shapes = 0;
  Dataset data = generate(cfg);
  CHECK((data.masks.data == 0).all());
}

TEST_CASE("every class appears over many images") {
  SyntheticTaskConfig cfg = small_task();
  cfg.meta_train = 900;
  cfg.meta_val = 50;
  cfg.holdout = 50;
  Dataset data = generate(cfg);
  std::vector<std::int64_t> freq(cfg.num_classes, 0);
  for (Eigen::Index i = 0; i < data.masks.data.size(); ++i) ++freq[data.masks.data[i]];
  for (int c = 0; c < cfg.num_classes; ++c) CHECK(freq[c] > 0);
}

TEST_CASE("labels stay within num_classes") {
  Dataset data = generate(small_task());
  CHECK((data.masks.data >= 0).all());
  CHECK((data.masks.data < small_task().num_classes).all());
}

TEST_CASE("image size must be divisible by 16") {
  SyntheticTaskConfig cfg = small_task();
  cfg.image_size = 30;
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
}

TEST_CASE("dataset round-trips through its container file") {
  Dataset data = generate(small_task());
  const std::string path = "/tmp/segnas_test_dataset.bin";
  data.save(path);
  Dataset loaded = Dataset::load(path);
  CHECK((loaded.images.data == data.images.data).all());
  CHECK((loaded.masks.data == data.masks.data).all());
  CHECK(loaded.config.meta_train == data.config.meta_train);
  std::remove(path.c_str());
}

TEST_CASE("encoder stub output shapes match its descs for any /16 size") {
  for (int size : {32, 48, 64}) {
    EncoderStub stub;
    Rng rng(1);
    stub.init(rng);
    const auto descs = stub.feature_descs(size);
    Tensor<float> images(2, 3, size, size);
    images.fill_uniform(rng, 0.0f, 1.0f);
    auto feats = stub.forward(images, false, nullptr);
    for (int s = 0; s < 4; ++s) {
      CHECK(feats[s].c == descs[s].channels);
      CHECK(feats[s].h == descs[s].height);
      CHECK(feats[s].w == descs[s].width);
      CHECK(descs[s].height == size / descs[s].stride);
    }
  }
}

TEST_CASE("feature cache matches a fresh eval-mode forward bit for bit") {
  Dataset data = generate(small_task());
  EncoderStub stub = build_encoder_stub(data, 3, /*prefit_epochs=*/2);
  FeatureCache cache = precompute_encoder(data, stub);

  std::vector<int> idx = {0, 5, 17};
  auto cached = cache.gather(idx);
  auto fresh = stub.forward(data.gather_images(idx), false, nullptr);
  for (int s = 0; s < 4; ++s) CHECK((cached[s].data == fresh[s].data).all());

  // rebuilding the cache gives the same bytes
  FeatureCache again = precompute_encoder(data, stub);
  for (int s = 0; s < 4; ++s)
    CHECK((again.features[s].data == cache.features[s].data).all());
}

TEST_CASE("feature cache rejects a different stub") {
  Dataset data = generate(small_task());
  EncoderStub stub = build_encoder_stub(data, 3, 1);
  FeatureCache cache = precompute_encoder(data, stub);
  const std::string path = "/tmp/segnas_test_featcache.bin";
  cache.save(path);

  CHECK_NOTHROW(FeatureCache::load(path, stub.fingerprint()));
  CHECK_THROWS_AS(FeatureCache::load(path, stub.fingerprint() + 1), CheckpointError);
  std::remove(path.c_str());
}

TEST_CASE("teacher reaches the threshold and its cached logits are exact") {
  SyntheticTaskConfig cfg = small_task();
  cfg.meta_train = 192;
  Dataset data = generate(cfg);
  EncoderStub stub = build_encoder_stub(data, cfg.seed);
  FeatureCache cache = precompute_encoder(data, stub);
  Teacher teacher = build_teacher(data, cache, cfg.seed, 0.75, 80);
  CHECK(teacher.holdout_reward >= 0.75);

  // cached logits equal a fresh teacher forward
  std::vector<int> idx = {3, 40};
  auto out = teacher.net.forward(cache.gather(idx), false);
  Tensor<float> up = bilinear_resize_forward(out.main, cfg.image_size, cfg.image_size);
  const Eigen::Index item = static_cast<Eigen::Index>(cfg.num_classes) *
                            cfg.image_size * cfg.image_size;
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (Eigen::Index j = 0; j < item; ++j)
      CHECK(up.data[static_cast<Eigen::Index>(i) * item + j] ==
            teacher.logits.data[idx[i] * item + j]);
}

TEST_CASE("an unreachable teacher threshold raises diagnostics") {
  SyntheticTaskConfig cfg = small_task();
  Dataset data = generate(cfg);
  EncoderStub stub = build_encoder_stub(data, cfg.seed, 1);
  FeatureCache cache = precompute_encoder(data, stub);
  CHECK_THROWS_WITH_AS(build_teacher(data, cache, cfg.seed, 0.999, 1),
                       doctest::Contains("teacher failed to reach"),
                       std::runtime_error);
}

TEST_CASE("trivial predictor reward is a weak baseline") {
  Dataset data = generate(small_task());
  const double trivial = trivial_predictor_reward(data, data.meta_val());
  CHECK(trivial > 0.0);
  CHECK(trivial < 0.3);
}

TEST_CASE("task context caches to disk and reloads consistently") {
  SyntheticTaskConfig cfg = small_task();
  cfg.meta_train = 192;
  const std::string dir = "/tmp/segnas_test_ctx";
  std::filesystem::remove_all(dir);
  TaskContext first = build_task_context(cfg, dir, false);
  TaskContext second = build_task_context(cfg, dir, false);  // from disk
  CHECK(first.teacher_holdout_reward == second.teacher_holdout_reward);
  CHECK((first.teacher_logits.data == second.teacher_logits.data).all());
  CHECK(first.stub.fingerprint() == second.stub.fingerprint());
  for (int s = 0; s < 4; ++s)
    CHECK((first.features.features[s].data == second.features.features[s].data).all());
  std::filesystem::remove_all(dir);
}
