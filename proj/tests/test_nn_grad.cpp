#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <string>
#include <vector>

#include "segnas/loss.hpp"
#include "segnas/net.hpp"
#include "segnas/nn.hpp"

using namespace segnas;

// Central finite differences against the analytic reverse pass, double
// precision. Tolerance: |a - fd| <= 1e-4 * max(1, |a|, |fd|).

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

bool grad_close(double analytic, double fd) {
  const double scale = std::max({1.0, std::abs(analytic), std::abs(fd)});
  return std::abs(analytic - fd) <= kTol * scale;
}

GraphIR single_node_ir(NodeKind kind, OpCode op, int cin, int cout, int h, int w) {
  GraphIR ir;
  ir.nodes.push_back({0, NodeKind::Source, OpCode::Conv1x1, {}, {cin, h, w, 1}, false});
  ir.nodes.push_back({1, kind, op, {0}, {cout, h, w, 1}, false});
  ir.main_output = 1;
  ir.source_descs[0] = {cin, h, w, 1};
  ir.num_classes = cout;
  ir.adapt_channels = cin;
  return ir;
}

std::array<Tensor<double>, 4> one_source(const Tensor<double>& x) {
  return {x, Tensor<double>(), Tensor<double>(), Tensor<double>()};
}

// Checks d(sum(R * main_out))/d(input and all params) for one small graph.
void check_net_gradients(GraphIR ir, std::uint64_t seed,
                         const std::string& label) {
  INFO(label);
  DecoderNet<double> net(std::move(ir));
  Rng rng(seed);
  net.init_xavier(rng);

  const auto& sd = net.ir().source_descs[0];
  Tensor<double> x(2, sd.channels, sd.height, sd.width);
  x.fill_uniform(rng, -1.0, 1.0);

  const auto& od = net.ir().nodes[net.ir().main_output].out_desc;
  Tensor<double> probe(2, od.channels, od.height, od.width);
  probe.fill_uniform(rng, -1.0, 1.0);

  auto loss_of = [&](const Tensor<double>& input) {
    auto out = net.forward(one_source(input), true);
    return (out.main.data * probe.data).sum();
  };

  net.params().zero_grad();
  auto out = net.forward(one_source(x), true);
  auto dsources = net.backward(probe, {});

  // input gradient
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data[i];
    x.data[i] = keep + kStep;
    const double fp = loss_of(x);
    x.data[i] = keep - kStep;
    const double fm = loss_of(x);
    x.data[i] = keep;
    const double fd = (fp - fm) / (2 * kStep);
    if (!grad_close(dsources[0].data[i], fd)) {
      CAPTURE(i);
      CHECK(dsources[0].data[i] == doctest::Approx(fd).epsilon(kTol));
    }
  }

  // parameter gradients
  for (auto& p : net.params()) {
    if (!p.trainable) continue;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + kStep;
      const double fp = loss_of(x);
      p.value[i] = keep - kStep;
      const double fm = loss_of(x);
      p.value[i] = keep;
      const double fd = (fp - fm) / (2 * kStep);
      if (!grad_close(p.grad[i], fd)) {
        CAPTURE(p.name);
        CAPTURE(i);
        CHECK(p.grad[i] == doctest::Approx(fd).epsilon(kTol));
      }
    }
  }
  CHECK(out.main.all_finite());
}

}  // namespace

TEST_CASE("gradients of every cell operation match finite differences") {
  struct Case {
    OpCode op;
    int c, h, w;
    std::uint64_t seed;
  };
  const std::vector<Case> cases = {
      {OpCode::Conv1x1, 5, 6, 6, 101},
      {OpCode::Conv3x3, 5, 6, 6, 102},
      {OpCode::Sep3x3, 5, 6, 6, 103},
      {OpCode::Sep5x5, 4, 6, 6, 104},
      {OpCode::Gap, 5, 6, 6, 105},
      {OpCode::Conv3x3Rate3, 4, 8, 8, 106},
      {OpCode::Conv3x3Rate12, 3, 8, 8, 107},
      {OpCode::Sep3x3Rate3, 4, 8, 8, 108},
      {OpCode::Sep5x5Rate6, 3, 8, 8, 109},
      {OpCode::Skip, 5, 6, 6, 110},
      {OpCode::Zero, 5, 6, 6, 111},
  };
  for (const auto& c : cases) {
    check_net_gradients(single_node_ir(NodeKind::CellOp, c.op, c.c, c.c, c.h, c.w),
                        c.seed, op_abbrev(c.op));
  }
}

TEST_CASE("gradients of the heads match finite differences") {
  check_net_gradients(single_node_ir(NodeKind::Classifier, OpCode::Conv1x1, 6, 4, 5, 5),
                      201, "classifier");
  check_net_gradients(single_node_ir(NodeKind::Adapt1x1, OpCode::Conv1x1, 6, 4, 5, 5),
                      202, "adapt (conv+bn+relu)");
  check_net_gradients(single_node_ir(NodeKind::Fuse1x1, OpCode::Conv1x1, 8, 4, 4, 4),
                      203, "fuse");
}

TEST_CASE("upsample node gradient matches finite differences") {
  GraphIR ir;
  ir.nodes.push_back({0, NodeKind::Source, OpCode::Conv1x1, {}, {3, 4, 5, 1}, false});
  ir.nodes.push_back({1, NodeKind::Upsample, OpCode::Conv1x1, {0}, {3, 7, 9, 1}, false});
  ir.main_output = 1;
  ir.source_descs[0] = {3, 4, 5, 1};
  check_net_gradients(std::move(ir), 301, "bilinear upsample");
}

TEST_CASE("zero op blocks gradient flow to its input") {
  DecoderNet<double> net(single_node_ir(NodeKind::CellOp, OpCode::Zero, 4, 4, 5, 5));
  Rng rng(401);
  net.init_xavier(rng);
  Tensor<double> x(2, 4, 5, 5);
  x.fill_normal(rng, 1.0);
  net.forward(one_source(x), true);
  Tensor<double> probe(2, 4, 5, 5);
  probe.fill_normal(rng, 1.0);
  auto ds = net.backward(probe, {});
  CHECK((ds[0].data == 0.0).all());
}

TEST_CASE("sum node distributes the upstream gradient unchanged") {
  GraphIR ir;
  ir.nodes.push_back({0, NodeKind::Source, OpCode::Conv1x1, {}, {3, 4, 4, 1}, false});
  ir.nodes.push_back({1, NodeKind::Source, OpCode::Conv1x1, {}, {3, 4, 4, 1}, false});
  ir.nodes.push_back({2, NodeKind::Sum, OpCode::Conv1x1, {0, 1}, {3, 4, 4, 1}, false});
  ir.main_output = 2;
  ir.source_descs[0] = {3, 4, 4, 1};
  ir.source_descs[1] = {3, 4, 4, 1};
  DecoderNet<double> net(std::move(ir));

  Rng rng(402);
  Tensor<double> a(1, 3, 4, 4), b(1, 3, 4, 4), probe(1, 3, 4, 4);
  a.fill_normal(rng, 1.0);
  b.fill_normal(rng, 1.0);
  probe.fill_normal(rng, 1.0);
  net.forward({a, b, Tensor<double>(), Tensor<double>()}, true);
  auto ds = net.backward(probe, {});
  CHECK((ds[0].data == probe.data).all());
  CHECK((ds[1].data == probe.data).all());
}

TEST_CASE("cross entropy gradient matches finite differences") {
  Rng rng(501);
  Tensor<double> logits(2, 4, 3, 3);
  logits.fill_uniform(rng, -2.0, 2.0);
  Mask target(2, 3, 3);
  for (Eigen::Index i = 0; i < target.data.size(); ++i)
    target.data[i] = rng.uniform_int(5) - 1;  // includes ignore label -1

  auto ce = softmax_cross_entropy(logits, target);
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double keep = logits.data[i];
    logits.data[i] = keep + kStep;
    const double fp = softmax_cross_entropy(logits, target).loss;
    logits.data[i] = keep - kStep;
    const double fm = softmax_cross_entropy(logits, target).loss;
    logits.data[i] = keep;
    const double fd = (fp - fm) / (2 * kStep);
    CHECK(grad_close(ce.dlogits.data[i], fd));
  }
}

TEST_CASE("distillation loss gradient matches finite differences") {
  Rng rng(502);
  Tensor<double> a(1, 3, 4, 4), b(1, 3, 4, 4);
  a.fill_uniform(rng, -1.0, 1.0);
  b.fill_uniform(rng, -1.0, 1.0);
  auto res = mse(a, b);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double keep = a.data[i];
    a.data[i] = keep + kStep;
    const double fp = mse(a, b).loss;
    a.data[i] = keep - kStep;
    const double fm = mse(a, b).loss;
    a.data[i] = keep;
    CHECK(grad_close(res.da.data[i], (fp - fm) / (2 * kStep)));
  }
}

TEST_CASE("composite loss gradient through a full decoder") {
  // Whole pipeline: genome-built graph with aux cells, CE + aux CE + KD,
  // checked on a random subset of coordinates.
  Genome g = decode("[[[1,3],[0,2],[4,0]],[2,[0,1,9,4],[2,0,3,1],[0,6,2,10]]]");
  std::array<FeatureDesc, 4> sources = {
      {{3, 8, 8, 2}, {4, 4, 4, 4}, {5, 2, 2, 8}, {6, 2, 2, 16}}};
  DecoderNet<double> net(build(g, sources, 6, 3, AuxMode::Cell));
  Rng rng(601);
  net.init_xavier(rng);

  std::array<Tensor<double>, 4> xs;
  for (int s = 0; s < 4; ++s) {
    xs[s] = Tensor<double>(2, sources[s].channels, sources[s].height, sources[s].width);
    xs[s].fill_uniform(rng, -1.0, 1.0);
  }
  Mask target(2, 16, 16);
  for (Eigen::Index i = 0; i < target.data.size(); ++i)
    target.data[i] = rng.uniform_int(3);
  Tensor<double> teacher(2, 3, 16, 16);
  teacher.fill_uniform(rng, -1.0, 1.0);

  LossSpec<double> spec;
  spec.kd_coeff = 0.3;
  spec.aux_coeffs = {0.3, 0.3, 0.3};

  auto loss_of = [&]() {
    auto out = net.forward(xs, true);
    return static_cast<double>(
        segmentation_loss<double>(out.main, out.aux, target, &teacher, spec).total);
  };

  net.params().zero_grad();
  auto out = net.forward(xs, true);
  auto res = segmentation_loss<double>(out.main, out.aux, target, &teacher, spec);
  net.backward(res.dmain, res.daux);

  int checked = 0;
  for (auto& p : net.params()) {
    if (!p.trainable) continue;
    // probe a few coordinates per parameter
    for (Eigen::Index i = 0; i < p.size() && i < 3; ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + kStep;
      const double fp = loss_of();
      p.value[i] = keep - kStep;
      const double fm = loss_of();
      p.value[i] = keep;
      const double fd = (fp - fm) / (2 * kStep);
      if (!grad_close(p.grad[i], fd)) {
        CAPTURE(p.name);
        CHECK(p.grad[i] == doctest::Approx(fd).epsilon(kTol));
      }
      ++checked;
    }
  }
  CHECK(checked > 100);
}
