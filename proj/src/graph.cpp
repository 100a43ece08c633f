#include "segnas/graph.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace segnas {

const char* node_kind_name(NodeKind kind) {
  switch (kind) {
    case NodeKind::Source: return "source";
    case NodeKind::Adapt1x1: return "adapt-1x1";
    case NodeKind::CellOp: return "cell-op";
    case NodeKind::Sum: return "sum";
    case NodeKind::Concat: return "concat";
    case NodeKind::Fuse1x1: return "fuse-1x1";
    case NodeKind::Classifier: return "classifier";
    case NodeKind::AuxCellOp: return "aux-cell-op";
    case NodeKind::AuxClassifier: return "aux-classifier";
    case NodeKind::Upsample: return "upsample";
  }
  return "?";
}

namespace {

class Builder {
 public:
  Builder(const Genome& genome, const std::array<FeatureDesc, 4>& sources,
          int adapt_channels, int num_classes, AuxMode aux)
      : genome_(genome),
        adapt_channels_(adapt_channels),
        num_classes_(num_classes),
        aux_(aux) {
    ir_.source_descs = sources;
    ir_.num_classes = num_classes;
    ir_.adapt_channels = adapt_channels;
  }

  GraphIR run() {
    validate(genome_);
    for (int s = 0; s + 1 < 4; ++s) {
      const auto& a = ir_.source_descs[s];
      const auto& b = ir_.source_descs[s + 1];
      if (b.height > a.height || b.width > a.width)
        throw std::invalid_argument("sources must be ordered shallow to deep");
    }

    // Connectivity pool: 4 adapted encoder outputs, grown by one block sum
    // per pair.
    std::vector<int> pool;
    for (int s = 0; s < 4; ++s) {
      int src = add_node(NodeKind::Source, {}, ir_.source_descs[s]);
      FeatureDesc adapted = ir_.source_descs[s];
      adapted.channels = adapt_channels_;
      pool.push_back(add_node(NodeKind::Adapt1x1, {src}, adapted));
    }

    std::vector<bool> consumed(pool.size(), false);
    for (int k = 0; k < kNumPairs; ++k) {
      const int ca = genome_.connectivity.pairs[k][0];
      const int cb = genome_.connectivity.pairs[k][1];
      consumed[ca] = true;
      consumed[cb] = true;
      int outa = emit_cell(pool[ca], NodeKind::CellOp, false);
      int outb = emit_cell(pool[cb], NodeKind::CellOp, false);
      align_pair(outa, outb);
      int block = add_node(NodeKind::Sum, {outa, outb}, desc_of(outa));
      ir_.block_sum_nodes[k] = block;
      pool.push_back(block);
      consumed.push_back(false);
    }

    // Head: every block sum not consumed by a later pair is upsampled to the
    // largest spatial size among them, concatenated, fused and classified.
    std::vector<int> fused;
    for (int p = 4; p < static_cast<int>(pool.size()); ++p) {
      if (!consumed[p]) {
        fused.push_back(pool[p]);
        ir_.fused_pool_indices.push_back(p);
      }
    }
    FeatureDesc target = desc_of(fused[0]);
    for (int id : fused) {
      const auto& d = desc_of(id);
      if (d.height * d.width > target.height * target.width) target = d;
    }
    std::vector<int> aligned;
    for (int id : fused) aligned.push_back(upsample_to(id, target, false));

    int head_in;
    FeatureDesc concat_desc = target;
    concat_desc.channels = adapt_channels_ * static_cast<int>(aligned.size());
    if (aligned.size() > 1) {
      head_in = add_node(NodeKind::Concat, aligned, concat_desc);
    } else {
      head_in = aligned[0];
    }
    FeatureDesc fuse_desc = target;
    fuse_desc.channels = adapt_channels_;
    int fuse = add_node(NodeKind::Fuse1x1, {head_in}, fuse_desc);
    FeatureDesc cls_desc = target;
    cls_desc.channels = num_classes_;
    ir_.main_output = add_node(NodeKind::Classifier, {fuse}, cls_desc);

    // Auxiliary heads form a suffix of the node list so strip_aux only has
    // to drop trailing nodes.
    if (aux_ != AuxMode::None) {
      for (int k = 0; k < kNumPairs; ++k) {
        int tap = ir_.block_sum_nodes[k];
        if (aux_ == AuxMode::Cell)
          tap = emit_cell(tap, NodeKind::AuxCellOp, true);
        FeatureDesc d = desc_of(tap);
        d.channels = num_classes_;
        ir_.aux_outputs.push_back(
            add_node(NodeKind::AuxClassifier, {tap}, d, true));
      }
    }
    return std::move(ir_);
  }

 private:
  int add_node(NodeKind kind, std::vector<int> inputs, FeatureDesc desc,
               bool removable = false, OpCode op = OpCode::Conv1x1) {
    GraphNode node;
    node.id = static_cast<int>(ir_.nodes.size());
    node.kind = kind;
    node.op = op;
    node.inputs = std::move(inputs);
    node.out_desc = desc;
    node.removable = removable;
    ir_.nodes.push_back(std::move(node));
    return ir_.nodes.back().id;
  }

  const FeatureDesc& desc_of(int id) const { return ir_.nodes[id].out_desc; }

  /// One cell instance rooted at `input`. Ops preserve the input resolution,
  /// so branch summands never need alignment.
  int emit_cell(int input, NodeKind op_kind, bool removable) {
    const FeatureDesc desc = desc_of(input);
    std::vector<int> cpool = {
        input,
        add_node(op_kind, {input}, desc, removable, genome_.cell.op0)};
    std::vector<bool> sum_consumed;  // per branch sum, cpool slots 4, 7, 10
    std::vector<int> sum_slots;

    for (const auto& br : genome_.cell.branches) {
      for (int used : {br.in_a, br.in_b}) {
        for (std::size_t s = 0; s < sum_slots.size(); ++s)
          if (used == sum_slots[s]) sum_consumed[s] = true;
      }
      int a = add_node(op_kind, {cpool[br.in_a]}, desc, removable, br.op_a);
      int b = add_node(op_kind, {cpool[br.in_b]}, desc, removable, br.op_b);
      int sum = add_node(NodeKind::Sum, {a, b}, desc, removable);
      cpool.push_back(a);
      cpool.push_back(b);
      sum_slots.push_back(static_cast<int>(cpool.size()));
      cpool.push_back(sum);
      sum_consumed.push_back(false);
    }

    std::vector<int> leftovers;
    for (std::size_t s = 0; s < sum_slots.size(); ++s)
      if (!sum_consumed[s]) leftovers.push_back(cpool[sum_slots[s]]);
    if (leftovers.size() == 1) return leftovers[0];
    return add_node(NodeKind::Sum, leftovers, desc, removable);
  }

  /// Upsamples the smaller of a pair in place; no-op when sizes match.
  void align_pair(int& a, int& b) {
    const auto& da = desc_of(a);
    const auto& db = desc_of(b);
    if (da.height == db.height && da.width == db.width) return;
    if (da.height * da.width < db.height * db.width)
      a = upsample_to(a, db, ir_.nodes[a].removable);
    else
      b = upsample_to(b, da, ir_.nodes[b].removable);
  }

  int upsample_to(int id, const FeatureDesc& target, bool removable) {
    const auto& d = desc_of(id);
    if (d.height == target.height && d.width == target.width) return id;
    FeatureDesc out = d;
    out.height = target.height;
    out.width = target.width;
    out.stride = target.stride;
    return add_node(NodeKind::Upsample, {id}, out, removable);
  }

  const Genome& genome_;
  int adapt_channels_;
  int num_classes_;
  AuxMode aux_;
  GraphIR ir_;
};

}  // namespace

GraphIR build(const Genome& genome, const std::array<FeatureDesc, 4>& sources,
              int adapt_channels, int num_classes, AuxMode aux) {
  return Builder(genome, sources, adapt_channels, num_classes, aux).run();
}

GraphIR strip_aux(const GraphIR& ir) {
  GraphIR out = ir;
  // Removable nodes are a suffix by construction; verify before truncating.
  std::size_t first = out.nodes.size();
  for (std::size_t i = 0; i < out.nodes.size(); ++i) {
    if (out.nodes[i].removable) {
      first = i;
      break;
    }
  }
  for (std::size_t i = first; i < out.nodes.size(); ++i) {
    if (!out.nodes[i].removable)
      throw std::logic_error("removable nodes are not a suffix");
  }
  out.nodes.resize(first);
  out.aux_outputs.clear();
  return out;
}

namespace {

// k x k conv with batch norm, no bias.
CostEstimate conv_bn_cost(int k, int cin, int cout, int h, int w) {
  CostEstimate e;
  e.params = static_cast<std::int64_t>(k) * k * cin * cout + 2LL * cout;
  e.madds = static_cast<std::int64_t>(k) * k * cin * cout * h * w;
  return e;
}

CostEstimate op_cost(OpCode op, int cin, int cout, int h, int w) {
  CostEstimate e;
  switch (op) {
    case OpCode::Conv1x1:
      return conv_bn_cost(1, cin, cout, h, w);
    case OpCode::Conv3x3:
    case OpCode::Conv3x3Rate3:
    case OpCode::Conv3x3Rate12:
      return conv_bn_cost(3, cin, cout, h, w);
    case OpCode::Sep3x3:
    case OpCode::Sep3x3Rate3: {
      CostEstimate dw = conv_bn_cost(3, 1, cin, h, w);  // depthwise: k*k*cin
      CostEstimate pw = conv_bn_cost(1, cin, cout, h, w);
      return {dw.params + pw.params, dw.madds + pw.madds};
    }
    case OpCode::Sep5x5:
    case OpCode::Sep5x5Rate6: {
      CostEstimate dw = conv_bn_cost(5, 1, cin, h, w);
      CostEstimate pw = conv_bn_cost(1, cin, cout, h, w);
      return {dw.params + pw.params, dw.madds + pw.madds};
    }
    case OpCode::Gap:
      // pool -> conv1x1 on the 1x1 map -> upsample; BN on the final map.
      return {static_cast<std::int64_t>(cin) * cout + 2LL * cout,
              static_cast<std::int64_t>(cin) * cout};
    case OpCode::Skip:
    case OpCode::Zero:
      return e;
  }
  return e;
}

}  // namespace

CostEstimate estimate_node(const GraphIR& ir, const GraphNode& node) {
  const int h = node.out_desc.height;
  const int w = node.out_desc.width;
  const int cout = node.out_desc.channels;
  const int cin = node.inputs.empty()
                      ? 0
                      : ir.nodes[node.inputs[0]].out_desc.channels;
  switch (node.kind) {
    case NodeKind::Adapt1x1:
    case NodeKind::Fuse1x1:
      return conv_bn_cost(1, cin, cout, h, w);
    case NodeKind::CellOp:
    case NodeKind::AuxCellOp:
      return op_cost(node.op, cin, cout, h, w);
    case NodeKind::Classifier:
    case NodeKind::AuxClassifier:
      // conv1x1 with bias, no batch norm
      return {static_cast<std::int64_t>(cin) * cout + cout,
              static_cast<std::int64_t>(cin) * cout * h * w};
    default:
      return {};
  }
}

CostEstimate estimate(const GraphIR& ir, const FeatureDesc& input_desc) {
  for (const auto& src : ir.source_descs) {
    if (src.stride <= 0 || input_desc.height / src.stride != src.height)
      throw std::invalid_argument("source descs inconsistent with input size");
  }
  CostEstimate total;
  for (const auto& node : ir.nodes) {
    if (node.removable) continue;
    CostEstimate e = estimate_node(ir, node);
    total.params += e.params;
    total.madds += e.madds;
  }
  return total;
}

std::string export_dot(const GraphIR& ir) {
  std::ostringstream dot;
  dot << "digraph decoder {\n";
  dot << "  rankdir=TB;\n";
  dot << "  node [fontname=\"Helvetica\", shape=box];\n";
  for (const auto& node : ir.nodes) {
    dot << "  n" << node.id << " [label=\"" << node.id << ": "
        << node_kind_name(node.kind);
    if (node.kind == NodeKind::CellOp || node.kind == NodeKind::AuxCellOp)
      dot << "\\n" << op_abbrev(node.op);
    dot << "\\n" << node.out_desc.channels << "x" << node.out_desc.height
        << "x" << node.out_desc.width << "\"";
    if (node.removable) dot << ", style=dashed";
    if (node.id == ir.main_output) dot << ", penwidth=2";
    dot << "];\n";
  }
  for (const auto& node : ir.nodes) {
    for (int in : node.inputs) dot << "  n" << in << " -> n" << node.id << ";\n";
  }
  dot << "}\n";
  return dot.str();
}

std::string dump(const GraphIR& ir) {
  std::ostringstream os;
  for (const auto& node : ir.nodes) {
    os << node.id << " " << node_kind_name(node.kind);
    if (node.kind == NodeKind::CellOp || node.kind == NodeKind::AuxCellOp)
      os << " [" << op_abbrev(node.op) << "]";
    os << " in=(";
    for (std::size_t i = 0; i < node.inputs.size(); ++i)
      os << (i ? "," : "") << node.inputs[i];
    os << ") out=" << node.out_desc.channels << "x" << node.out_desc.height
       << "x" << node.out_desc.width << " stride=" << node.out_desc.stride
       << (node.removable ? " removable" : "") << "\n";
  }
  return os.str();
}

bool has_path(const GraphIR& ir, int from, int to) {
  // Nodes are topologically ordered, one forward sweep suffices.
  std::vector<char> reach(ir.nodes.size(), 0);
  std::unordered_map<int, std::size_t> index;
  for (std::size_t i = 0; i < ir.nodes.size(); ++i) index[ir.nodes[i].id] = i;
  reach[index.at(from)] = 1;
  for (std::size_t i = 0; i < ir.nodes.size(); ++i) {
    for (int in : ir.nodes[i].inputs) {
      auto it = index.find(in);
      if (it != index.end() && reach[it->second]) reach[i] = 1;
    }
  }
  return reach[index.at(to)] != 0;
}

}  // namespace segnas
