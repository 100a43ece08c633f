#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "segnas/optim.hpp"
#include "segnas/params.hpp"

using namespace segnas;

TEST_CASE("plain sgd step") {
  ParamStore<double> store;
  const int h = store.add("w", {1});
  store[h].grad[0] = 1.0;
  SgdMomentum<double> sgd{0.1, 0.0};
  sgd.step(store);
  CHECK(store[h].value[0] == doctest::Approx(-0.1).epsilon(1e-15));
}

TEST_CASE("momentum accumulates velocity") {
  ParamStore<double> store;
  const int h = store.add("w", {1});
  SgdMomentum<double> sgd{1.0, 0.9};
  store[h].grad[0] = 1.0;
  sgd.step(store);  // v=1, w=-1
  store[h].grad[0] = 1.0;
  sgd.step(store);  // v=1.9, w=-2.9
  CHECK(store[h].value[0] == doctest::Approx(-2.9).epsilon(1e-12));
}

TEST_CASE("adam first step matches the hand computation") {
  // theta=0, g=2, lr=0.1, b1=0.9, b2=0.99, eps=1e-3:
  // mhat=2, vhat=4 -> delta = -0.1 * 2 / (2 + 0.001)
  ParamStore<double> store;
  const int h = store.add("w", {1});
  store[h].grad[0] = 2.0;
  Adam<double> adam{0.1};
  adam.step(store);
  CHECK(store[h].value[0] == doctest::Approx(-0.2 / 2.001).epsilon(1e-12));

  // first step is sign-like: magnitude close to lr regardless of |g|
  ParamStore<double> other;
  const int h2 = other.add("w", {1});
  other[h2].grad[0] = 1e-2;
  Adam<double> adam2{0.1};
  adam2.step(other);
  CHECK(other[h2].value[0] == doctest::Approx(-1e-3 / 0.011).epsilon(1e-9));
}

TEST_CASE("parameter groups update independently") {
  ParamStore<double> decoder, encoder;
  const int hd = decoder.add("w", {1});
  const int he = encoder.add("w", {1});
  decoder[hd].grad[0] = 1.0;
  encoder[he].grad[0] = 1.0;
  Adam<double> adam{3e-3};
  SgdMomentum<double> sgd{1e-3, 0.9};
  adam.step(decoder);
  sgd.step(encoder);
  CHECK(decoder[hd].value[0] == doctest::Approx(-3e-3 / 1.001).epsilon(1e-9));
  CHECK(encoder[he].value[0] == doctest::Approx(-1e-3).epsilon(1e-12));
}

TEST_CASE("buffers are not touched by optimizers") {
  ParamStore<double> store;
  store.add("w", {1});
  const int buf = store.add("rm", {1}, false);
  store[buf].value[0] = 5.0;
  Adam<double> adam{0.1};
  adam.step(store);
  CHECK(store[buf].value[0] == 5.0);
}

TEST_CASE("one polyak step") {
  ParamStore<double> store;
  const int h = store.add("w", {1});
  store[h].shadow[0] = 1.0;
  store[h].value[0] = 2.0;
  store.polyak_update(0.9);
  CHECK(store[h].shadow[0] == doctest::Approx(1.1).epsilon(1e-15));
}

TEST_CASE("decay zero tracks the latest value") {
  ParamStore<double> store;
  const int h = store.add("w", {1});
  store.polyak_init();
  for (double v : {3.0, -1.0, 7.5}) {
    store[h].value[0] = v;
    store.polyak_update(0.0);
    CHECK(store[h].shadow[0] == v);
  }
}

TEST_CASE("shadow converges geometrically to a constant parameter") {
  ParamStore<double> store;
  const int h = store.add("w", {1});
  const double theta = 2.0, init = 1.0, decay = 0.9;
  store[h].value[0] = theta;
  store[h].shadow[0] = init;
  for (int k = 1; k <= 40; ++k) {
    store.polyak_update(decay);
    const double expected = std::pow(decay, k) * std::abs(init - theta);
    CHECK(std::abs(store[h].shadow[0] - theta) == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("swap round trip is the identity and double swap throws") {
  ParamStore<double> store;
  const int h = store.add("w", {3});
  store[h].value << 1, 2, 3;
  store.polyak_init();
  store[h].value << 4, 5, 6;
  store.polyak_update(0.5);

  const Eigen::ArrayXd before = store[h].value;
  store.polyak_swap_in();
  CHECK_THROWS_AS(store.polyak_swap_in(), std::logic_error);
  CHECK((store[h].value != before).any());  // shadow is live now
  store.polyak_swap_out();
  CHECK((store[h].value == before).all());
  CHECK_THROWS_AS(store.polyak_swap_out(), std::logic_error);
}
