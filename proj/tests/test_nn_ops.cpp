#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "segnas/loss.hpp"
#include "segnas/net.hpp"
#include "segnas/nn.hpp"

using namespace segnas;

namespace {

GraphIR single_op_ir(OpCode op, int c, int h, int w) {
  GraphIR ir;
  ir.nodes.push_back({0, NodeKind::Source, OpCode::Conv1x1, {}, {c, h, w, 1}, false});
  ir.nodes.push_back({1, NodeKind::CellOp, op, {0}, {c, h, w, 1}, false});
  ir.main_output = 1;
  ir.source_descs[0] = {c, h, w, 1};
  ir.num_classes = c;
  ir.adapt_channels = c;
  return ir;
}

std::array<Tensor<double>, 4> one_source(const Tensor<double>& x) {
  return {x, Tensor<double>(), Tensor<double>(), Tensor<double>()};
}

}  // namespace

TEST_CASE("zero op emits zeros regardless of input") {
  DecoderNet<double> net(single_op_ir(OpCode::Zero, 4, 5, 5));
  Rng rng(1);
  net.init_xavier(rng);
  Tensor<double> x(2, 4, 5, 5);
  x.fill_normal(rng, 3.0);
  auto out = net.forward(one_source(x), true);
  CHECK((out.main.data == 0.0).all());
}

TEST_CASE("skip op is the identity") {
  DecoderNet<double> net(single_op_ir(OpCode::Skip, 4, 5, 5));
  Rng rng(2);
  Tensor<double> x(2, 4, 5, 5);
  x.fill_normal(rng, 1.0);
  auto out = net.forward(one_source(x), false);
  CHECK((out.main.data == x.data).all());
}

TEST_CASE("dilation arithmetic: conv3x3 rate 12 keeps an 8x8 map") {
  ConvSpec spec{3, 12, 1};
  CHECK(spec.pad() == 12);
  CHECK(spec.out_size(8) == 8);
  // receptive field (k-1)*d + 1
  CHECK((3 - 1) * 12 + 1 == 25);

  DecoderNet<double> net(single_op_ir(OpCode::Conv3x3Rate12, 3, 8, 8));
  Rng rng(3);
  net.init_xavier(rng);
  Tensor<double> x(1, 3, 8, 8);
  x.fill_normal(rng, 1.0);
  auto out = net.forward(one_source(x), true);
  CHECK(out.main.h == 8);
  CHECK(out.main.w == 8);
}

TEST_CASE("dilated depthwise taps land at +-rate offsets") {
  // impulse at the centre of a 25x25 map, rate-12 3x3 depthwise, weights=1
  Tensor<double> x(1, 1, 25, 25);
  x.at(0, 0, 12, 12) = 1.0;
  Eigen::Array<double, Eigen::Dynamic, 1> w(9);
  w.setOnes();
  auto y = depthwise_forward<double>(x, w, {3, 12, 1});
  for (int dy = -12; dy <= 12; dy += 12)
    for (int dx = -12; dx <= 12; dx += 12)
      CHECK(y.at(0, 0, 12 + dy, 12 + dx) == 1.0);
  CHECK(y.data.sum() == 9.0);
}

TEST_CASE("bilinear resize by factor 1 is the identity") {
  Rng rng(4);
  Tensor<double> x(2, 3, 7, 5);
  x.fill_normal(rng, 1.0);
  auto y = bilinear_resize_forward(x, 7, 5);
  CHECK((y.data == x.data).all());
}

TEST_CASE("bilinear resize backward is the exact adjoint") {
  Rng rng(5);
  for (auto [ih, iw, oh, ow] : {std::array<int, 4>{3, 3, 6, 6},
                                std::array<int, 4>{5, 7, 9, 11},
                                std::array<int, 4>{8, 8, 3, 5}}) {
    Tensor<double> x(2, 3, ih, iw), y(2, 3, oh, ow);
    x.fill_normal(rng, 1.0);
    y.fill_normal(rng, 1.0);
    auto fx = bilinear_resize_forward(x, oh, ow);
    auto by = bilinear_resize_backward(y, ih, iw);
    const double lhs = (fx.data * y.data).sum();
    const double rhs = (x.data * by.data).sum();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("global average pool matches its adjoint") {
  Rng rng(6);
  Tensor<double> x(2, 4, 6, 6), y(2, 4, 1, 1);
  x.fill_normal(rng, 1.0);
  y.fill_normal(rng, 1.0);
  auto fx = global_avg_pool_forward(x);
  auto by = global_avg_pool_backward(y, 6, 6);
  CHECK((fx.data * y.data).sum() == doctest::Approx((x.data * by.data).sum()).epsilon(1e-12));
}

TEST_CASE("uniform logits on two classes give ln 2") {
  Tensor<double> logits(1, 2, 1, 1);
  Mask target(1, 1, 1);
  target.at(0, 0, 0) = 0;
  auto ce = softmax_cross_entropy(logits, target);
  CHECK(ce.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(ce.scored_pixels == 1);
}

TEST_CASE("cross entropy is nonnegative and vanishes in the one-hot limit") {
  Tensor<double> logits(1, 3, 1, 1);
  Mask target(1, 1, 1);
  target.at(0, 0, 0) = 2;
  logits.at(0, 2, 0, 0) = 50.0;
  auto ce = softmax_cross_entropy(logits, target);
  CHECK(ce.loss >= 0.0);
  CHECK(ce.loss < 1e-12);
}

TEST_CASE("cross entropy rejects out-of-range class ids") {
  Tensor<double> logits(1, 3, 1, 1);
  Mask target(1, 1, 1);
  target.at(0, 0, 0) = 3;
  CHECK_THROWS_AS(softmax_cross_entropy(logits, target), std::invalid_argument);
}

TEST_CASE("ignore-labelled pixels are excluded from the mean") {
  Tensor<double> logits(1, 2, 1, 2);
  logits.at(0, 0, 0, 1) = 100.0;  // would dominate if scored
  Mask target(1, 1, 2);
  target.at(0, 0, 0) = 0;
  target.at(0, 0, 1) = kIgnoreLabel;
  auto ce = softmax_cross_entropy(logits, target);
  CHECK(ce.scored_pixels == 1);
  CHECK(ce.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(ce.dlogits.at(0, 0, 0, 1) == 0.0);
  CHECK(ce.dlogits.at(0, 1, 0, 1) == 0.0);
}

TEST_CASE("distillation term vanishes when student equals teacher") {
  Rng rng(7);
  Tensor<double> logits(1, 3, 4, 4);
  logits.fill_normal(rng, 1.0);
  Mask target(1, 4, 4);
  LossSpec<double> spec;
  auto res = segmentation_loss<double>(logits, {}, target, &logits, spec);
  CHECK(res.kd == 0.0);
  CHECK(res.total == res.ce_main);
}

TEST_CASE("zero aux coefficients reduce the total to main + kd") {
  Rng rng(8);
  Tensor<double> logits(1, 3, 4, 4), aux1(1, 3, 2, 2), aux2(1, 3, 2, 2);
  Tensor<double> teacher(1, 3, 4, 4);
  logits.fill_normal(rng, 1.0);
  aux1.fill_normal(rng, 1.0);
  aux2.fill_normal(rng, 1.0);
  teacher.fill_normal(rng, 1.0);
  Mask target(1, 4, 4);
  target.at(0, 1, 1) = 2;

  LossSpec<double> spec;
  spec.kd_coeff = 0.3;
  spec.aux_coeffs = {0.0, 0.0};
  auto res = segmentation_loss<double>(logits, {aux1, aux2}, target, &teacher, spec);
  CHECK(res.total == doctest::Approx(res.ce_main + 0.3 * res.kd).epsilon(1e-12));
  CHECK(res.ce_aux.size() == 2);

  LossSpec<double> wrong;
  wrong.aux_coeffs = {0.3};
  CHECK_THROWS_AS(
      segmentation_loss<double>(logits, {aux1, aux2}, target, nullptr, wrong),
      std::invalid_argument);
}

TEST_CASE("eval-mode forward is bit-deterministic") {
  Genome g = decode("[[[3,3],[3,2],[3,0]],[8,[0,0,5,2],[0,2,8,8],[0,5,1,4]]]");
  std::array<FeatureDesc, 4> sources = {
      {{4, 12, 12, 2}, {6, 6, 6, 4}, {8, 3, 3, 8}, {8, 3, 3, 16}}};
  DecoderNet<double> net(build(g, sources, 8, 5, AuxMode::Cell));
  Rng rng(9);
  net.init_xavier(rng);
  std::array<Tensor<double>, 4> xs;
  for (int s = 0; s < 4; ++s) {
    xs[s] = Tensor<double>(2, sources[s].channels, sources[s].height, sources[s].width);
    xs[s].fill_normal(rng, 1.0);
  }
  auto a = net.forward(xs, false);
  auto b = net.forward(xs, false);
  CHECK((a.main.data == b.main.data).all());
}

TEST_CASE("batch norm train mode normalises with batch statistics") {
  Tensor<double> x(2, 1, 2, 2);
  Rng rng(10);
  x.fill_normal(rng, 5.0);
  x.data += 3.0;
  Eigen::Array<double, Eigen::Dynamic, 1> gamma(1), beta(1), rm(1), rv(1);
  gamma.setOnes();
  beta.setZero();
  rm.setZero();
  rv.setOnes();
  BatchNormCache<double> cache;
  auto y = batchnorm_forward<double>(x, gamma, beta, rm, rv, true, &cache);
  CHECK(y.data.mean() == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(y.data.square().mean() == doctest::Approx(1.0).epsilon(1e-3));
  // running stats moved toward the batch statistics
  CHECK(rm[0] != 0.0);
}
