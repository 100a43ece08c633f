#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "segnas/genome.hpp"

namespace segnas {

/// Shape of one feature map as produced by the encoder or a decoder node.
struct FeatureDesc {
  int channels = 0;
  int height = 0;
  int width = 0;
  int stride = 1;  // downsampling factor relative to the network input
  bool operator==(const FeatureDesc&) const = default;
};

enum class NodeKind {
  Source,      // encoder output placeholder
  Adapt1x1,    // per-source 1x1 adaptation conv
  CellOp,      // one operation inside a main cell
  Sum,
  Concat,
  Fuse1x1,
  Classifier,
  AuxCellOp,   // operation inside an auxiliary cell
  AuxClassifier,
  Upsample,    // bilinear resize to out_desc
};

const char* node_kind_name(NodeKind kind);

struct GraphNode {
  int id = 0;
  NodeKind kind = NodeKind::Source;
  OpCode op = OpCode::Conv1x1;  // meaningful for CellOp / AuxCellOp only
  std::vector<int> inputs;
  FeatureDesc out_desc;
  bool removable = false;
};

enum class AuxMode { None, Classifier, Cell };

struct GraphIR {
  std::vector<GraphNode> nodes;  // topologically ordered; main path precedes aux
  int main_output = -1;
  std::vector<int> aux_outputs;
  std::array<FeatureDesc, 4> source_descs{};
  int num_classes = 0;
  int adapt_channels = 0;
  std::array<int, 3> block_sum_nodes{};  // decoder block summation node ids
  std::vector<int> fused_pool_indices;   // pool indices (4..6) concatenated at the head
};

/// Instantiates a genome over the four encoder feature maps. Sources must be
/// ordered shallow to deep (non-increasing spatial size).
GraphIR build(const Genome& genome, const std::array<FeatureDesc, 4>& sources,
              int adapt_channels, int num_classes, AuxMode aux);

/// Drops every removable node. Main node ids are unchanged.
GraphIR strip_aux(const GraphIR& ir);

struct CostEstimate {
  std::int64_t params = 0;
  std::int64_t madds = 0;
};

/// Analytic parameter and multiply-add counts over non-removable nodes.
CostEstimate estimate(const GraphIR& ir, const FeatureDesc& input_desc);

/// Per-node cost, exposed so callers can cross-check additivity.
CostEstimate estimate_node(const GraphIR& ir, const GraphNode& node);

/// Deterministic DOT digraph; removable nodes are dashed.
std::string export_dot(const GraphIR& ir);

/// Line-oriented debug text, one node per line.
std::string dump(const GraphIR& ir);

/// True when `ir` contains a directed path from `from` to `to`.
bool has_path(const GraphIR& ir, int from, int to);

}  // namespace segnas
