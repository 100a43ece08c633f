#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "segnas/controller.hpp"
#include "segnas/metrics.hpp"
#include "segnas/net.hpp"
#include "segnas/tasks.hpp"

namespace segnas {

enum class SearchMode { Rl, Random };

struct AblationConfig {
  bool polyak = true;
  bool kd = true;
  AuxMode aux = AuxMode::Cell;
};

struct SearchConfig {
  int total_architectures = 300;
  int max_new_architectures = 0;  // per-invocation cap; 0 runs to the total
  int stage1_epochs = 5;
  int stage2_epochs = 1;
  double p_start = 0.9;
  double p_end = 0.5;  // linear anneal across the run
  double polyak_decay1 = 0.9;
  double polyak_decay2 = 0.99;
  double kd_coeff = 0.3;
  double aux_coeff = 0.3;
  SearchMode mode = SearchMode::Rl;
  AblationConfig ablation;
  int batch_size = 16;  // inner-training batch
  int adapt_channels = 16;
  double decoder_lr = 3e-3;
  double encoder_lr = 1e-3;
  double encoder_momentum = 0.9;
  int workers = 1;
  std::uint64_t seed = 0;
  int top_k = 5;
  ControllerConfig controller;
};

/// Running mean of stage-1 rewards; one update per completed stage-1
/// evaluation, terminated architectures included.
struct RunningMean {
  int count = 0;
  double mean = 0;
  void add(double reward) {
    ++count;
    mean += (reward - mean) / count;
  }
};

double anneal_p(const SearchConfig& config, int index);

/// reward1 above the running mean continues deterministically; otherwise the
/// architecture survives with probability p.
bool should_continue(double reward1, const RunningMean& running, double p, Rng& rng);

struct StageOneResult {
  double reward = 0;
  bool failed = false;
  double seconds = 0;
  std::optional<DecoderNet<float>> net;
};

StageOneResult evaluate_stage1(const Genome& genome, const TaskContext& ctx,
                               const SearchConfig& config, std::uint64_t arch_seed);

struct StageTwoResult {
  double reward = 0;
  bool failed = false;
  double seconds = 0;
};

StageTwoResult evaluate_stage2(DecoderNet<float>& decoder, const TaskContext& ctx,
                               const SearchConfig& config, std::uint64_t arch_seed);

/// One JSONL log row.
struct ArchRecord {
  int index = 0;
  std::string genome;
  double reward1 = 0;
  bool continued = false;
  std::optional<double> reward2;
  double final_reward = 0;
  double p_at_decision = 0;
  double seconds_stage1 = 0;
  double seconds_stage2 = 0;
  std::string mode;
  bool polyak = true;
  bool kd = true;
  std::string aux;
  bool failed = false;
};

std::string record_to_json(const ArchRecord& record);
ArchRecord record_from_json(const std::string& line);

/// Parses a JSONL search log (header line skipped). Throws on malformed
/// rows, naming the line.
std::vector<ArchRecord> load_search_log(const std::string& path);

struct SearchOutcome {
  std::vector<ArchRecord> records;       // full history including resumed rows
  std::vector<std::string> top_genomes;  // canonical texts, best first
  RunningMean running;
};

/// The outer loop: sample -> stage 1 -> gate -> optional stage 2 -> PPO.
/// Appends one JSONL row per architecture to `log_path`; `resume` restarts
/// from an interrupted run's log and sidecar state.
SearchOutcome run_search(const SearchConfig& config, const TaskContext& ctx,
                         const std::string& log_path, bool resume = false);

// --- Full training -----------------------------------------------------------

struct FullTrainConfig {
  int phase_epochs = 6;  // per phase; four phases with the aux schedule below
  std::array<double, 4> aux_coeffs{0.3, 0.25, 0.2, 0.15};
  AuxMode aux = AuxMode::Cell;
  int adapt_channels = 24;
  double decoder_lr = 3e-3;
  double encoder_lr = 1e-3;
  double encoder_momentum = 0.9;
  int batch_size = 16;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int phase = 0;
  int epoch = 0;
  double decoder_lr = 0;
  double encoder_lr = 0;
  double train_loss = 0;
  double val_reward = 0;
  bool bn_frozen = false;
};

struct FullTrainResult {
  double holdout_reward = 0;
  double holdout_miou = 0, holdout_fwiou = 0, holdout_mpa = 0;
  std::vector<EpochLog> epochs;
};

/// Multi-phase end-to-end training with per-phase aux coefficients, learning
/// rates halved at phase boundaries and batch-norm statistics frozen halfway
/// through the last phase. Saves a model checkpoint when a path is given.
FullTrainResult full_train(const Genome& genome, const TaskContext& ctx,
                           const FullTrainConfig& config,
                           const std::string& checkpoint_path = "");

/// Model checkpoint bridge for cmd_train / cmd_eval.
void save_model(const std::string& path, const Genome& genome, AuxMode aux,
                int adapt_channels, DecoderNet<float>& decoder, EncoderStub& encoder,
                const TaskContext& ctx);

struct LoadedModel {
  Genome genome;
  AuxMode aux = AuxMode::None;
  DecoderNet<float> decoder;
  EncoderStub encoder;
};

LoadedModel load_model(const std::string& path, const TaskContext& ctx);

/// Eval-mode reward of a decoder over cached encoder features.
double evaluate_decoder_reward(DecoderNet<float>& net, const TaskContext& ctx,
                               Split split, int batch_size = 16);

/// Eval-mode metrics of a full model (encoder forward, no cache).
RewardBreakdown evaluate_model(DecoderNet<float>& decoder, EncoderStub& encoder,
                               const TaskContext& ctx, Split split,
                               int batch_size = 16);

}  // namespace segnas
