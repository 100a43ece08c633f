#pragma once

#include <string>
#include <vector>

#include "segnas/search.hpp"

namespace segnas {

struct ReportOptions {
  int window = 50;
};

/// Consumes one or more JSONL search logs and writes summary CSV tables and
/// static SVG plots into `out_dir`:
///   windows.csv     reward means and stage-2 advance rate per index window
///   summary.csv     per-log aggregates incl. the stage-1/2 rank correlation
///   comparison.csv  RL vs random last-window means (when both modes present)
///   rewards.svg     final reward over architecture index
///   stages.svg      stage-1 vs stage-2 reward scatter
void write_report(const std::vector<std::string>& log_paths,
                  const std::string& out_dir, const ReportOptions& options = {});

}  // namespace segnas
