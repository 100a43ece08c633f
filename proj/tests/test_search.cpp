#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "segnas/search.hpp"

using namespace segnas;

namespace {

SyntheticTaskConfig tiny_task() {
  SyntheticTaskConfig cfg;
  cfg.image_size = 32;
  cfg.meta_train = 192;
  cfg.meta_val = 16;
  cfg.holdout = 32;
  cfg.seed = 9;
  return cfg;
}

SearchConfig tiny_search() {
  SearchConfig cfg;
  cfg.seed = 9;
  cfg.stage1_epochs = 2;
  cfg.stage2_epochs = 1;
  cfg.total_architectures = 8;
  return cfg;
}

const TaskContext& shared_context() {
  static TaskContext ctx = [] {
    SyntheticTaskConfig cfg = tiny_task();
    return build_task_context(cfg, "", false);
  }();
  return ctx;
}

bool rows_equivalent(const ArchRecord& a, const ArchRecord& b) {
  return a.index == b.index && a.genome == b.genome && a.reward1 == b.reward1 &&
         a.continued == b.continued && a.reward2.has_value() == b.reward2.has_value() &&
         (!a.reward2 || *a.reward2 == *b.reward2) &&
         a.final_reward == b.final_reward && a.p_at_decision == b.p_at_decision &&
         a.mode == b.mode && a.failed == b.failed;
}

}  // namespace

TEST_CASE("gate: above-mean rewards always continue") {
  RunningMean running;
  running.add(0.4);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) CHECK(should_continue(0.5, running, 0.0, rng));
}

TEST_CASE("gate: the first architecture always continues") {
  RunningMean fresh;
  Rng rng(2);
  CHECK(should_continue(0.0, fresh, 0.0, rng));
}

TEST_CASE("gate: below-mean termination frequency approaches 1-p") {
  RunningMean running;
  running.add(0.4);
  Rng rng(3);
  const int trials = 4000;
  int terminated = 0;
  for (int i = 0; i < trials; ++i)
    if (!should_continue(0.3, running, 0.9, rng)) ++terminated;
  const double freq = static_cast<double>(terminated) / trials;
  CHECK(freq == doctest::Approx(0.1).epsilon(0.2));
}

TEST_CASE("p anneals linearly from p_start to p_end") {
  SearchConfig cfg = tiny_search();
  cfg.total_architectures = 101;
  CHECK(anneal_p(cfg, 0) == doctest::Approx(0.9));
  CHECK(anneal_p(cfg, 50) == doctest::Approx(0.7));
  CHECK(anneal_p(cfg, 100) == doctest::Approx(0.5));
  for (int i = 1; i <= 100; ++i) CHECK(anneal_p(cfg, i) <= anneal_p(cfg, i - 1));
}

TEST_CASE("stage-1 evaluation is deterministic and bounded") {
  const TaskContext& ctx = shared_context();
  SearchConfig cfg = tiny_search();
  Genome g = sample_uniform(derive_seed(55, 1, 0));
  auto a = evaluate_stage1(g, ctx, cfg, 1234);
  auto b = evaluate_stage1(g, ctx, cfg, 1234);
  CHECK(a.reward == b.reward);
  CHECK(a.reward >= 0.0);
  CHECK(a.reward <= 1.0);
  CHECK_FALSE(a.failed);
}

TEST_CASE("an all-zero cell scores near the trivial predictor") {
  const TaskContext& ctx = shared_context();
  SearchConfig cfg = tiny_search();
  Genome g = decode(
      "[[[0,1],[1,2],[2,3]],[10,[0,0,10,10],[0,1,10,10],[0,1,10,10]]]");
  auto r = evaluate_stage1(g, ctx, cfg, 99);
  const double trivial = trivial_predictor_reward(ctx.data, ctx.data.meta_val());
  CHECK(r.reward <= trivial + 0.1);
}

TEST_CASE("polyak ablation changes the validated weights") {
  const TaskContext& ctx = shared_context();
  SearchConfig with = tiny_search();
  SearchConfig without = tiny_search();
  without.ablation.polyak = false;
  Genome g = sample_uniform(derive_seed(55, 1, 1));
  auto a = evaluate_stage1(g, ctx, with, 77);
  auto b = evaluate_stage1(g, ctx, without, 77);
  CHECK(a.reward != b.reward);  // i.e. validation really used the shadow
}

TEST_CASE("stage 2 runs end-to-end and stays bounded") {
  const TaskContext& ctx = shared_context();
  SearchConfig cfg = tiny_search();
  Genome g = sample_uniform(derive_seed(55, 1, 2));
  auto s1 = evaluate_stage1(g, ctx, cfg, 42);
  REQUIRE(s1.net.has_value());
  auto s2 = evaluate_stage2(*s1.net, ctx, cfg, 42);
  CHECK(s2.reward >= 0.0);
  CHECK(s2.reward <= 1.0);
  CHECK_FALSE(s2.failed);
}

TEST_CASE("records round-trip through JSON") {
  ArchRecord r;
  r.index = 7;
  r.genome = "[[[3,3],[3,2],[3,0]],[8,[0,0,5,2],[0,2,8,8],[0,5,1,4]]]";
  r.reward1 = 0.5;
  r.continued = true;
  r.reward2 = 0.625;
  r.final_reward = 0.625;
  r.p_at_decision = 0.87;
  r.seconds_stage1 = 1.25;
  r.seconds_stage2 = 0.5;
  r.mode = "rl";
  r.aux = "cell";
  ArchRecord back = record_from_json(record_to_json(r));
  CHECK(rows_equivalent(r, back));
  CHECK(back.seconds_stage1 == r.seconds_stage1);

  ArchRecord terminated;
  terminated.genome = r.genome;
  terminated.mode = "random";
  terminated.aux = "none";
  ArchRecord back2 = record_from_json(record_to_json(terminated));
  CHECK_FALSE(back2.reward2.has_value());
}

TEST_CASE("malformed logs are rejected with the offending line") {
  const std::string path = "/tmp/segnas_test_badlog.jsonl";
  {
    std::ofstream out(path, std::ios::trunc);
    out << R"({"type":"header"})" << "\n";
    out << record_to_json(ArchRecord{}) << "\n";
    out << "{\"index\": 1, truncated";  // simulated crash mid-write
  }
  CHECK_THROWS_WITH_AS(load_search_log(path), doctest::Contains(":3"),
                       std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("search runs are deterministic across worker counts") {
  const TaskContext& ctx = shared_context();
  SearchConfig cfg = tiny_search();
  cfg.mode = SearchMode::Rl;
  cfg.controller.batch_size = 4;
  cfg.total_architectures = 8;

  const std::string log1 = "/tmp/segnas_test_w1.jsonl";
  const std::string log2 = "/tmp/segnas_test_w2.jsonl";
  cfg.workers = 1;
  auto a = run_search(cfg, ctx, log1);
  cfg.workers = 2;
  auto b = run_search(cfg, ctx, log2);

  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i)
    CHECK(rows_equivalent(a.records[i], b.records[i]));
  CHECK(a.top_genomes == b.top_genomes);

  for (const auto& p : {log1, log2}) {
    std::filesystem::remove(p);
    std::filesystem::remove(p + ".ctrl");
    std::filesystem::remove(p + ".state");
  }
}

TEST_CASE("random mode never trains the controller and marks its rows") {
  const TaskContext& ctx = shared_context();
  SearchConfig cfg = tiny_search();
  cfg.mode = SearchMode::Random;
  cfg.total_architectures = 6;
  const std::string log = "/tmp/segnas_test_rand.jsonl";
  auto outcome = run_search(cfg, ctx, log);
  CHECK(outcome.records.size() == 6);
  for (const auto& r : outcome.records) CHECK(r.mode == "random");
  CHECK_FALSE(std::filesystem::exists(log + ".ctrl"));

  // replaying the log reproduces the online running mean
  auto records = load_search_log(log);
  RunningMean replay;
  for (const auto& r : records) replay.add(r.reward1);
  CHECK(replay.count == outcome.running.count);
  CHECK(replay.mean == doctest::Approx(outcome.running.mean).epsilon(1e-12));

  std::filesystem::remove(log);
  std::filesystem::remove(log + ".state");
}

TEST_CASE("a resumed run reproduces the uninterrupted one") {
  const TaskContext& ctx = shared_context();
  SearchConfig cfg = tiny_search();
  cfg.mode = SearchMode::Rl;
  cfg.controller.batch_size = 4;

  const std::string full_log = "/tmp/segnas_test_full.jsonl";
  const std::string part_log = "/tmp/segnas_test_part.jsonl";

  cfg.total_architectures = 8;  // two batches of 4
  auto full = run_search(cfg, ctx, full_log);

  cfg.max_new_architectures = 4;  // interrupt at the batch boundary
  run_search(cfg, ctx, part_log);
  cfg.max_new_architectures = 0;  // and continue
  auto resumed = run_search(cfg, ctx, part_log, /*resume=*/true);

  REQUIRE(resumed.records.size() == full.records.size());
  for (std::size_t i = 0; i < full.records.size(); ++i)
    CHECK(rows_equivalent(full.records[i], resumed.records[i]));

  for (const auto& p : {full_log, part_log}) {
    std::filesystem::remove(p);
    std::filesystem::remove(p + ".ctrl");
    std::filesystem::remove(p + ".state");
  }
}

TEST_CASE("top genomes are canonical, unique and reward-ordered") {
  const TaskContext& ctx = shared_context();
  SearchConfig cfg = tiny_search();
  cfg.mode = SearchMode::Random;
  cfg.total_architectures = 6;
  cfg.top_k = 3;
  const std::string log = "/tmp/segnas_test_top.jsonl";
  auto outcome = run_search(cfg, ctx, log);
  CHECK(outcome.top_genomes.size() == 3);
  for (const auto& text : outcome.top_genomes) {
    Genome g = decode(text);
    CHECK(encode(canonicalize(g)) == text);
  }
  // the best recorded reward belongs to the first listed genome
  double best = 0;
  std::string best_genome;
  for (const auto& r : outcome.records)
    if (r.final_reward > best) {
      best = r.final_reward;
      best_genome = r.genome;
    }
  CHECK(outcome.top_genomes.front() == encode(canonicalize(decode(best_genome))));
  std::filesystem::remove(log);
  std::filesystem::remove(log + ".state");
}

TEST_CASE("full training halves learning rates at phase boundaries") {
  const TaskContext& ctx = shared_context();
  FullTrainConfig cfg;
  cfg.phase_epochs = 2;
  cfg.adapt_channels = 8;
  cfg.seed = 5;
  Genome g = sample_uniform(derive_seed(55, 1, 3));
  auto result = full_train(g, ctx, cfg);

  REQUIRE(result.epochs.size() == 8);
  CHECK(result.epochs[0].decoder_lr == doctest::Approx(3e-3));
  CHECK(result.epochs[2].decoder_lr == doctest::Approx(1.5e-3));
  CHECK(result.epochs[4].decoder_lr == doctest::Approx(7.5e-4));
  CHECK(result.epochs[6].decoder_lr == doctest::Approx(3.75e-4));
  // halfway through the last phase: BN frozen and one more halving
  CHECK(result.epochs[7].decoder_lr == doctest::Approx(1.875e-4));
  CHECK(result.epochs[6].bn_frozen == false);
  CHECK(result.epochs[7].bn_frozen == true);
  CHECK(result.epochs[3].encoder_lr == doctest::Approx(5e-4));
  CHECK(result.holdout_reward >= 0.0);
}

TEST_CASE("model checkpoints round-trip through save and load") {
  const TaskContext& ctx = shared_context();
  FullTrainConfig cfg;
  cfg.phase_epochs = 1;
  cfg.adapt_channels = 8;
  cfg.seed = 6;
  Genome g = sample_uniform(derive_seed(55, 1, 4));
  const std::string path = "/tmp/segnas_test_model.bin";
  auto result = full_train(g, ctx, cfg, path);

  LoadedModel model = load_model(path, ctx);
  CHECK(model.genome == g);
  auto r = evaluate_model(model.decoder, model.encoder, ctx, ctx.data.holdout(),
                          cfg.batch_size);
  CHECK(r.reward == doctest::Approx(result.holdout_reward).epsilon(1e-12));
  std::remove(path.c_str());
}

TEST_CASE("stripping trained aux cells leaves the holdout reward bit-identical") {
  const TaskContext& ctx = shared_context();
  FullTrainConfig cfg;
  cfg.phase_epochs = 1;
  cfg.adapt_channels = 8;
  cfg.seed = 7;
  Genome g = sample_uniform(derive_seed(55, 1, 5));
  const std::string path = "/tmp/segnas_test_model2.bin";
  full_train(g, ctx, cfg, path);
  LoadedModel model = load_model(path, ctx);

  DecoderNet<float> stripped(strip_aux(model.decoder.ir()));
  for (auto& p : stripped.params())
    p.value = model.decoder.params().by_name(p.name).value;

  auto full = evaluate_model(model.decoder, model.encoder, ctx, ctx.data.holdout());
  auto bare = evaluate_model(stripped, model.encoder, ctx, ctx.data.holdout());
  CHECK(full.reward == bare.reward);
  CHECK(full.miou == bare.miou);
  std::remove(path.c_str());
}
