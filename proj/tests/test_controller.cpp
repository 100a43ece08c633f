#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <numeric>

#include "segnas/checkpoint.hpp"
#include "segnas/controller.hpp"

using namespace segnas;

namespace {

ControllerConfig small_config() {
  ControllerConfig cfg;
  cfg.hidden = 24;
  cfg.embed_dim = 8;
  return cfg;
}

}  // namespace

TEST_CASE("masked heads renormalise and zero invalid actions") {
  Controller ctrl(small_config(), 1);
  // step 0: pair-0 index head, pool size 4 of 6 slots
  auto p0 = ctrl.action_distribution({});
  CHECK(p0.size() == 6);
  CHECK(std::accumulate(p0.begin(), p0.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(p0[4] == 0.0);
  CHECK(p0[5] == 0.0);

  // step 7: first cell-branch index head, pool size 2 of 8 slots
  std::vector<int> prefix = {0, 1, 2, 3, 4, 5, 6};
  auto p7 = ctrl.action_distribution(prefix);
  CHECK(p7.size() == 8);
  CHECK(std::accumulate(p7.begin(), p7.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
  for (int j = 2; j < 8; ++j) CHECK(p7[j] == 0.0);
}

TEST_CASE("sampled rollouts are valid and seed-deterministic") {
  Controller ctrl(small_config(), 2);
  for (int i = 0; i < 100; ++i) {
    Rng rng(1000 + i);
    Rollout r = ctrl.sample(rng);
    CHECK_NOTHROW(validate(r.genome));
    CHECK(decode(encode(r.genome)) == r.genome);
  }
  Rng a(7), b(7);
  Rollout ra = ctrl.sample(a);
  Rollout rb = ctrl.sample(b);
  CHECK(ra.tokens == rb.tokens);
  CHECK(ra.token_logprobs == rb.token_logprobs);
}

TEST_CASE("re-evaluation reproduces sampling log-probabilities") {
  Controller ctrl(small_config(), 3);
  Rng rng(11);
  Rollout r = ctrl.sample(rng);
  auto lp = ctrl.evaluate_logprobs(r.tokens);
  double sum = 0;
  for (int t = 0; t < kNumTokens; ++t) {
    CHECK(lp[t] == doctest::Approx(r.token_logprobs[t]).epsilon(1e-12));
    sum += lp[t];
  }
  CHECK(sum == doctest::Approx(r.sequence_logprob()).epsilon(1e-12));
}

TEST_CASE("episode log-probability gradient matches finite differences") {
  Controller ctrl(small_config(), 4);
  Rng rng(21);
  Rollout r = ctrl.sample(rng);

  ctrl.params().zero_grad();
  ctrl.accumulate_logprob_gradient(r.tokens);

  auto logprob_sum = [&]() {
    auto lp = ctrl.evaluate_logprobs(r.tokens);
    double s = 0;
    for (double v : lp) s += v;
    return s;
  };

  const double step = 1e-6;
  Rng pick(31);
  int checked = 0;
  for (auto& p : ctrl.params()) {
    for (int probe = 0; probe < 4; ++probe) {
      const Eigen::Index i = pick.uniform_int(static_cast<int>(p.size()));
      const double keep = p.value[i];
      p.value[i] = keep + step;
      const double fp = logprob_sum();
      p.value[i] = keep - step;
      const double fm = logprob_sum();
      p.value[i] = keep;
      const double fd = (fp - fm) / (2 * step);
      const double scale = std::max({1.0, std::abs(fd), std::abs(p.grad[i])});
      CHECK(std::abs(p.grad[i] - fd) <= 1e-4 * scale);
      ++checked;
    }
  }
  CHECK(checked >= 40);
}

TEST_CASE("zero advantage with zero entropy leaves parameters unchanged") {
  ControllerConfig cfg = small_config();
  cfg.entropy_coeff = 0.0;
  Controller ctrl(cfg, 5);
  Rng rng(41);
  std::vector<Rollout> batch;
  for (int i = 0; i < 4; ++i) {
    Rollout r = ctrl.sample(rng);
    r.reward = 0.5;  // identical rewards; first batch baseline = mean
    batch.push_back(r);
  }
  const auto before = params_fingerprint(ctrl.params());
  ctrl.ppo_update(batch);
  CHECK(params_fingerprint(ctrl.params()) == before);
  CHECK(ctrl.baseline() == doctest::Approx(0.5));
}

TEST_CASE("positive advantage raises the rollout's log-probability") {
  ControllerConfig cfg = small_config();
  cfg.lr = 1e-2;
  Controller ctrl(cfg, 6);
  Rng rng(51);

  // seed the baseline low
  std::vector<Rollout> cold;
  for (int i = 0; i < 4; ++i) {
    Rollout r = ctrl.sample(rng);
    r.reward = 0.0;
    cold.push_back(r);
  }
  ctrl.ppo_update(cold);

  Rollout good = ctrl.sample(rng);
  good.reward = 1.0;
  const double before = [&] {
    auto lp = ctrl.evaluate_logprobs(good.tokens);
    double s = 0;
    for (double v : lp) s += v;
    return s;
  }();
  ctrl.ppo_update({good});
  const double after = [&] {
    auto lp = ctrl.evaluate_logprobs(good.tokens);
    double s = 0;
    for (double v : lp) s += v;
    return s;
  }();
  CHECK(after > before);
}

TEST_CASE("clipped ratios produce no surrogate gradient") {
  ControllerConfig cfg = small_config();
  cfg.entropy_coeff = 0.0;
  cfg.ppo_epochs = 1;
  Controller ctrl(cfg, 7);
  Rng rng(61);

  // establish a zero baseline without touching parameters
  std::vector<Rollout> cold;
  for (int i = 0; i < 4; ++i) {
    Rollout r = ctrl.sample(rng);
    r.reward = 0.0;
    cold.push_back(r);
  }
  ctrl.ppo_update(cold);
  const auto before = params_fingerprint(ctrl.params());

  // fake stale log-probs so every ratio is e > 1 + clip, advantage positive
  Rollout stale = ctrl.sample(rng);
  stale.reward = 1.0;
  for (auto& lp : stale.token_logprobs) lp -= 1.0;
  ctrl.ppo_update({stale});
  CHECK(params_fingerprint(ctrl.params()) == before);
}

TEST_CASE("empty batch is rejected") {
  Controller ctrl(small_config(), 8);
  CHECK_THROWS_AS(ctrl.ppo_update({}), std::invalid_argument);
}

TEST_CASE("checkpoint round trip preserves sampling and baseline") {
  Controller ctrl(small_config(), 9);
  Rng warm(71);
  std::vector<Rollout> batch;
  for (int i = 0; i < 4; ++i) {
    Rollout r = ctrl.sample(warm);
    r.reward = 0.1 * i;
    batch.push_back(r);
  }
  ctrl.ppo_update(batch);

  const std::string path = "/tmp/segnas_test_controller.bin";
  ctrl.save(path);
  Controller loaded = Controller::load(path);
  CHECK(loaded.baseline() == doctest::Approx(ctrl.baseline()).epsilon(1e-12));
  CHECK(params_fingerprint(loaded.params()) == params_fingerprint(ctrl.params()));

  Rng a(81), b(81);
  Rollout ra = ctrl.sample(a);
  Rollout rb = loaded.sample(b);
  CHECK(ra.tokens == rb.tokens);
  std::remove(path.c_str());
}

TEST_CASE("loading a non-controller file fails") {
  const std::string path = "/tmp/segnas_test_notctrl.bin";
  Container c;
  c.set_meta("type", "something-else");
  c.save(path);
  CHECK_THROWS_AS(Controller::load(path), CheckpointError);
  std::remove(path.c_str());
}

TEST_CASE("bandit surrogate converges onto the rewarded token") {
  ControllerConfig cfg = small_config();
  cfg.lr = 1e-2;
  Controller ctrl(cfg, 10);
  Rng rng(91);
  const int target = 2;

  double prob = 0;
  int updates = 0;
  for (; updates < 400; ++updates) {
    std::vector<Rollout> batch;
    for (int i = 0; i < cfg.batch_size; ++i) {
      Rollout r = ctrl.sample(rng);
      r.reward = r.tokens[0] == target ? 1.0 : 0.0;
      batch.push_back(r);
    }
    ctrl.ppo_update(batch);
    prob = ctrl.action_distribution({})[target];
    if (prob > 0.9) break;
  }
  CHECK(prob > 0.9);
  CHECK(updates < 400);
}
