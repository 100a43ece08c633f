#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "segnas/graph.hpp"
#include "segnas/nn.hpp"
#include "segnas/params.hpp"
#include "segnas/tensor.hpp"

namespace segnas {

inline ConvSpec op_conv_spec(OpCode op) {
  switch (op) {
    case OpCode::Conv1x1: return {1, 1, 1};
    case OpCode::Conv3x3: return {3, 1, 1};
    case OpCode::Sep3x3: return {3, 1, 1};
    case OpCode::Sep5x5: return {5, 1, 1};
    case OpCode::Gap: return {1, 1, 1};
    case OpCode::Conv3x3Rate3: return {3, 3, 1};
    case OpCode::Conv3x3Rate12: return {3, 12, 1};
    case OpCode::Sep3x3Rate3: return {3, 3, 1};
    case OpCode::Sep5x5Rate6: return {5, 6, 1};
    case OpCode::Skip:
    case OpCode::Zero: return {1, 1, 1};
  }
  return {1, 1, 1};
}

inline bool op_is_separable(OpCode op) {
  return op == OpCode::Sep3x3 || op == OpCode::Sep5x5 ||
         op == OpCode::Sep3x3Rate3 || op == OpCode::Sep5x5Rate6;
}

/// Executes a GraphIR: owns the parameter store, runs forward and
/// reverse-mode backward over the node list. One instance is confined to a
/// single worker; the IR itself stays immutable.
template <typename Scalar>
class DecoderNet {
 public:
  struct Output {
    Tensor<Scalar> main;
    std::vector<Tensor<Scalar>> aux;
  };

  explicit DecoderNet(GraphIR ir) : ir_(std::move(ir)) {
    for (std::size_t i = 0; i < ir_.nodes.size(); ++i) {
      if (ir_.nodes[i].id != static_cast<int>(i))
        throw std::logic_error("node ids must equal list positions");
    }
    binds_.resize(ir_.nodes.size());
    for (const auto& node : ir_.nodes) register_node(node);
    compute_liveness();
  }

  const GraphIR& ir() const { return ir_; }
  ParamStore<Scalar>& params() { return store_; }
  const ParamStore<Scalar>& params() const { return store_; }

  /// Xavier-uniform conv weights, unit batch-norm scales, zero biases.
  void init_xavier(Rng& rng) {
    for (const auto& node : ir_.nodes) {
      auto& b = binds_[node.id];
      if (b.dw_w >= 0) {
        auto& p = store_[b.dw_w];
        const int k = b.dw_spec.kernel;
        const Scalar limit = std::sqrt(Scalar(6) / static_cast<Scalar>(2 * k * k));
        for (Eigen::Index i = 0; i < p.size(); ++i)
          p.value[i] = static_cast<Scalar>(rng.uniform(-limit, limit));
      }
      if (b.conv_w >= 0) {
        auto& p = store_[b.conv_w];
        const int k = b.conv_spec.kernel;
        const int cin = p.shape[1], cout = p.shape[0];
        const Scalar limit =
            std::sqrt(Scalar(6) / static_cast<Scalar>((cin + cout) * k * k));
        for (Eigen::Index i = 0; i < p.size(); ++i)
          p.value[i] = static_cast<Scalar>(rng.uniform(-limit, limit));
      }
      for (int h : {b.bn1_g, b.bn2_g})
        if (h >= 0) store_[h].value.setOnes();
      for (int h : {b.bn1_rv, b.bn2_rv})
        if (h >= 0) store_[h].value.setOnes();
    }
  }

  /// Runs the graph. In training mode batch norm uses batch statistics and
  /// caches are kept for backward; in eval mode removable nodes are skipped.
  Output forward(const std::array<Tensor<Scalar>, 4>& sources, bool training) {
    for (int s = 0; s < 4; ++s) {
      const auto& d = ir_.source_descs[s];
      if (sources[s].c != d.channels || sources[s].h != d.height ||
          sources[s].w != d.width)
        throw std::logic_error("source tensor does not match its desc");
    }
    outs_.assign(ir_.nodes.size(), Tensor<Scalar>());
    caches_.assign(training ? ir_.nodes.size() : 0, Cache());
    training_ = training;

    int source_index = 0;
    for (const auto& node : ir_.nodes) {
      if (node.kind == NodeKind::Source) {
        outs_[node.id] = sources[source_index++];
        continue;
      }
      if (!live_[node.id]) continue;
      if (!training && node.removable) continue;
      eval_node(node, training);
    }

    Output out;
    out.main = outs_[ir_.main_output];
    if (training) {
      for (int id : ir_.aux_outputs) out.aux.push_back(outs_[id]);
    }
    return out;
  }

  /// Reverse sweep; requires a preceding training-mode forward. Gradients
  /// accumulate into the store; returns the gradient w.r.t. each source.
  std::array<Tensor<Scalar>, 4> backward(const Tensor<Scalar>& dmain,
                                         const std::vector<Tensor<Scalar>>& daux) {
    if (!training_) throw std::logic_error("backward requires a training forward");
    grads_.assign(ir_.nodes.size(), Tensor<Scalar>());
    accumulate(ir_.main_output, dmain);
    for (std::size_t k = 0; k < daux.size(); ++k)
      accumulate(ir_.aux_outputs[k], daux[k]);

    std::array<Tensor<Scalar>, 4> dsources;
    int source_count = 0;
    for (auto it = ir_.nodes.rbegin(); it != ir_.nodes.rend(); ++it) {
      const auto& node = *it;
      if (!live_[node.id]) continue;
      if (node.kind == NodeKind::Source) continue;
      if (grads_[node.id].size() == 0) continue;
      backward_node(node);
    }
    for (const auto& node : ir_.nodes) {
      if (node.kind != NodeKind::Source) continue;
      auto& g = grads_[node.id];
      if (g.size() == 0)
        g = Tensor<Scalar>(outs_[node.id].n, node.out_desc.channels,
                           node.out_desc.height, node.out_desc.width);
      dsources[source_count++] = std::move(g);
    }
    return dsources;
  }

  /// Output of an individual node from the last forward (testing hook).
  const Tensor<Scalar>& node_output(int id) const { return outs_[id]; }

 private:
  struct Bind {
    int conv_w = -1, conv_b = -1, dw_w = -1;
    int bn1_g = -1, bn1_b = -1, bn1_rm = -1, bn1_rv = -1;
    int bn2_g = -1, bn2_b = -1, bn2_rm = -1, bn2_rv = -1;
    ConvSpec conv_spec, dw_spec;
  };

  struct Cache {
    BatchNormCache<Scalar> bn1, bn2;
    Tensor<Scalar> mid;  // separable: first-stage activation; gap: pooled map
  };

  void add_bn(const std::string& prefix, int channels, int& g, int& b, int& rm,
              int& rv) {
    g = store_.add(prefix + ".g", {channels});
    b = store_.add(prefix + ".b", {channels});
    rm = store_.add(prefix + ".rm", {channels}, false);
    rv = store_.add(prefix + ".rv", {channels}, false);
  }

  void register_node(const GraphNode& node) {
    auto& b = binds_[node.id];
    const std::string p = "n" + std::to_string(node.id);
    const int cout = node.out_desc.channels;
    const int cin = node.inputs.empty()
                        ? 0
                        : ir_.nodes[node.inputs[0]].out_desc.channels;
    switch (node.kind) {
      case NodeKind::Adapt1x1:
      case NodeKind::Fuse1x1:
        b.conv_spec = {1, 1, 1};
        b.conv_w = store_.add(p + ".w", {cout, cin, 1, 1});
        add_bn(p + ".bn1", cout, b.bn1_g, b.bn1_b, b.bn1_rm, b.bn1_rv);
        break;
      case NodeKind::Classifier:
      case NodeKind::AuxClassifier:
        b.conv_spec = {1, 1, 1};
        b.conv_w = store_.add(p + ".w", {cout, cin, 1, 1});
        b.conv_b = store_.add(p + ".bias", {cout});
        break;
      case NodeKind::CellOp:
      case NodeKind::AuxCellOp:
        if (node.op == OpCode::Skip || node.op == OpCode::Zero) break;
        if (op_is_separable(node.op)) {
          b.dw_spec = op_conv_spec(node.op);
          b.dw_w = store_.add(p + ".dw", {cin, b.dw_spec.kernel, b.dw_spec.kernel});
          add_bn(p + ".bn1", cin, b.bn1_g, b.bn1_b, b.bn1_rm, b.bn1_rv);
          b.conv_spec = {1, 1, 1};
          b.conv_w = store_.add(p + ".w", {cout, cin, 1, 1});
          add_bn(p + ".bn2", cout, b.bn2_g, b.bn2_b, b.bn2_rm, b.bn2_rv);
        } else if (node.op == OpCode::Gap) {
          b.conv_spec = {1, 1, 1};
          b.conv_w = store_.add(p + ".w", {cout, cin, 1, 1});
          add_bn(p + ".bn1", cout, b.bn1_g, b.bn1_b, b.bn1_rm, b.bn1_rv);
        } else {
          b.conv_spec = op_conv_spec(node.op);
          b.conv_w = store_.add(
              p + ".w", {cout, cin, b.conv_spec.kernel, b.conv_spec.kernel});
          add_bn(p + ".bn1", cout, b.bn1_g, b.bn1_b, b.bn1_rm, b.bn1_rv);
        }
        break;
      default:
        break;  // sum/concat/upsample/source carry no parameters
    }
  }

  /// Nodes with no path to the main or an aux output are never evaluated.
  void compute_liveness() {
    live_.assign(ir_.nodes.size(), 0);
    if (ir_.main_output >= 0) live_[ir_.main_output] = 1;
    for (int id : ir_.aux_outputs) live_[id] = 1;
    for (auto it = ir_.nodes.rbegin(); it != ir_.nodes.rend(); ++it) {
      if (!live_[it->id]) continue;
      for (int in : it->inputs) live_[in] = 1;
    }
  }

  Tensor<Scalar> bn_relu(int which, const GraphNode& node, Tensor<Scalar> t,
                         bool training) {
    const auto& b = binds_[node.id];
    const int g = which == 1 ? b.bn1_g : b.bn2_g;
    const int bb = which == 1 ? b.bn1_b : b.bn2_b;
    const int rm = which == 1 ? b.bn1_rm : b.bn2_rm;
    const int rv = which == 1 ? b.bn1_rv : b.bn2_rv;
    BatchNormCache<Scalar>* cache = nullptr;
    if (training)
      cache = which == 1 ? &caches_[node.id].bn1 : &caches_[node.id].bn2;
    t = batchnorm_forward<Scalar>(t, store_[g].value, store_[bb].value,
                                  store_[rm].value, store_[rv].value,
                                  training && !bn_frozen_, cache);
    return relu_forward(t);
  }

 public:
  /// When frozen, batch norm uses running statistics even in training mode.
  void set_bn_frozen(bool frozen) { bn_frozen_ = frozen; }

 private:
  void eval_node(const GraphNode& node, bool training) {
    const auto& b = binds_[node.id];
    const Tensor<Scalar>& in = outs_[node.inputs.empty() ? 0 : node.inputs[0]];
    switch (node.kind) {
      case NodeKind::Adapt1x1:
      case NodeKind::Fuse1x1: {
        auto t = conv2d_forward<Scalar>(in, store_[b.conv_w].value, nullptr,
                                        node.out_desc.channels, b.conv_spec);
        outs_[node.id] = bn_relu(1, node, std::move(t), training);
        break;
      }
      case NodeKind::Classifier:
      case NodeKind::AuxClassifier:
        outs_[node.id] = conv2d_forward<Scalar>(
            in, store_[b.conv_w].value, store_[b.conv_b].value.data(),
            node.out_desc.channels, b.conv_spec);
        break;
      case NodeKind::CellOp:
      case NodeKind::AuxCellOp:
        outs_[node.id] = eval_cell_op(node, in, training);
        break;
      case NodeKind::Sum: {
        Tensor<Scalar> acc = outs_[node.inputs[0]];
        for (std::size_t i = 1; i < node.inputs.size(); ++i)
          acc.data += outs_[node.inputs[i]].data;
        outs_[node.id] = std::move(acc);
        break;
      }
      case NodeKind::Concat: {
        std::vector<const Tensor<Scalar>*> xs;
        for (int id : node.inputs) xs.push_back(&outs_[id]);
        outs_[node.id] = channel_concat(xs);
        break;
      }
      case NodeKind::Upsample:
        outs_[node.id] = bilinear_resize_forward(in, node.out_desc.height,
                                                 node.out_desc.width);
        break;
      case NodeKind::Source:
        break;
    }
  }

  Tensor<Scalar> eval_cell_op(const GraphNode& node, const Tensor<Scalar>& in,
                              bool training) {
    const auto& b = binds_[node.id];
    switch (node.op) {
      case OpCode::Skip:
        return in;
      case OpCode::Zero:
        return Tensor<Scalar>(in.n, in.c, in.h, in.w);
      case OpCode::Gap: {
        Tensor<Scalar> pooled = global_avg_pool_forward(in);
        if (training) caches_[node.id].mid = pooled;
        auto t = conv2d_forward<Scalar>(pooled, store_[b.conv_w].value, nullptr,
                                        node.out_desc.channels, b.conv_spec);
        t = bilinear_resize_forward(t, in.h, in.w);
        return bn_relu(1, node, std::move(t), training);
      }
      default:
        if (op_is_separable(node.op)) {
          auto t = depthwise_forward<Scalar>(in, store_[b.dw_w].value, b.dw_spec);
          t = bn_relu(1, node, std::move(t), training);
          if (training) caches_[node.id].mid = t;
          t = conv2d_forward<Scalar>(t, store_[b.conv_w].value, nullptr,
                                     node.out_desc.channels, b.conv_spec);
          return bn_relu(2, node, std::move(t), training);
        }
        return bn_relu(1, node,
                       conv2d_forward<Scalar>(in, store_[b.conv_w].value,
                                              nullptr, node.out_desc.channels,
                                              b.conv_spec),
                       training);
    }
  }

  void accumulate(int id, const Tensor<Scalar>& g) {
    if (grads_[id].size() == 0)
      grads_[id] = g;
    else
      grads_[id].data += g.data;
  }

  Tensor<Scalar> bn_relu_backward(int which, const GraphNode& node,
                                  Tensor<Scalar> g, const Tensor<Scalar>& post) {
    const auto& b = binds_[node.id];
    g = relu_backward(post, g);
    const int gg = which == 1 ? b.bn1_g : b.bn2_g;
    const int bb = which == 1 ? b.bn1_b : b.bn2_b;
    auto& cache = which == 1 ? caches_[node.id].bn1 : caches_[node.id].bn2;
    return batchnorm_backward<Scalar>(cache, g, store_[gg].value,
                                      store_[gg].grad, store_[bb].grad);
  }

  void backward_node(const GraphNode& node) {
    auto& b = binds_[node.id];
    Tensor<Scalar>& g = grads_[node.id];
    const Tensor<Scalar>& in = outs_[node.inputs.empty() ? 0 : node.inputs[0]];
    switch (node.kind) {
      case NodeKind::Adapt1x1:
      case NodeKind::Fuse1x1: {
        auto d = bn_relu_backward(1, node, std::move(g), outs_[node.id]);
        accumulate(node.inputs[0],
                   conv2d_backward<Scalar>(in, store_[b.conv_w].value, d,
                                           b.conv_spec, store_[b.conv_w].grad,
                                           nullptr));
        break;
      }
      case NodeKind::Classifier:
      case NodeKind::AuxClassifier:
        accumulate(node.inputs[0],
                   conv2d_backward<Scalar>(in, store_[b.conv_w].value, g,
                                           b.conv_spec, store_[b.conv_w].grad,
                                           store_[b.conv_b].grad.data()));
        break;
      case NodeKind::CellOp:
      case NodeKind::AuxCellOp:
        backward_cell_op(node, in, std::move(g));
        break;
      case NodeKind::Sum:
        for (int id : node.inputs) accumulate(id, g);
        break;
      case NodeKind::Concat: {
        std::vector<int> channels;
        for (int id : node.inputs)
          channels.push_back(ir_.nodes[id].out_desc.channels);
        auto parts = channel_split(g, channels);
        for (std::size_t i = 0; i < node.inputs.size(); ++i)
          accumulate(node.inputs[i], parts[i]);
        break;
      }
      case NodeKind::Upsample:
        accumulate(node.inputs[0], bilinear_resize_backward(g, in.h, in.w));
        break;
      case NodeKind::Source:
        break;
    }
    g = Tensor<Scalar>();  // free as we go
  }

  void backward_cell_op(const GraphNode& node, const Tensor<Scalar>& in,
                        Tensor<Scalar> g) {
    auto& b = binds_[node.id];
    switch (node.op) {
      case OpCode::Skip:
        accumulate(node.inputs[0], g);
        return;
      case OpCode::Zero:
        return;
      case OpCode::Gap: {
        auto d = bn_relu_backward(1, node, std::move(g), outs_[node.id]);
        d = bilinear_resize_backward(d, 1, 1);
        auto dmid = conv2d_backward<Scalar>(caches_[node.id].mid,
                                            store_[b.conv_w].value, d,
                                            b.conv_spec, store_[b.conv_w].grad,
                                            nullptr);
        accumulate(node.inputs[0], global_avg_pool_backward(dmid, in.h, in.w));
        return;
      }
      default:
        if (op_is_separable(node.op)) {
          auto d = bn_relu_backward(2, node, std::move(g), outs_[node.id]);
          d = conv2d_backward<Scalar>(caches_[node.id].mid,
                                      store_[b.conv_w].value, d, b.conv_spec,
                                      store_[b.conv_w].grad, nullptr);
          d = bn_relu_backward(1, node, std::move(d), caches_[node.id].mid);
          accumulate(node.inputs[0],
                     depthwise_backward<Scalar>(in, store_[b.dw_w].value, d,
                                                b.dw_spec, store_[b.dw_w].grad));
        } else {
          auto d = bn_relu_backward(1, node, std::move(g), outs_[node.id]);
          accumulate(node.inputs[0],
                     conv2d_backward<Scalar>(in, store_[b.conv_w].value, d,
                                             b.conv_spec, store_[b.conv_w].grad,
                                             nullptr));
        }
        return;
    }
  }

  GraphIR ir_;
  ParamStore<Scalar> store_;
  std::vector<Bind> binds_;
  std::vector<char> live_;
  std::vector<Tensor<Scalar>> outs_;
  std::vector<Cache> caches_;
  std::vector<Tensor<Scalar>> grads_;
  bool training_ = false;
  bool bn_frozen_ = false;
};

}  // namespace segnas
