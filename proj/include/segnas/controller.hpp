#pragma once

#include <array>
#include <string>
#include <vector>

#include "segnas/genome.hpp"
#include "segnas/params.hpp"
#include "segnas/rng.hpp"

namespace segnas {

struct ControllerConfig {
  int layers = 2;
  int hidden = 100;
  int embed_dim = 32;
  double lr = 1e-4;
  double ppo_clip = 0.2;
  int ppo_epochs = 3;
  int batch_size = 8;
  double baseline_decay = 0.95;
  double entropy_coeff = 1e-4;
  double init_range = 0.08;  // uniform weight init
};

/// One sampled architecture episode: 19 tokens with their (masked,
/// renormalised) log-probabilities.
struct Rollout {
  Genome genome;
  std::array<int, kNumTokens> tokens{};
  std::array<double, kNumTokens> token_logprobs{};
  double reward = 0;
  int stage_reached = 1;

  double sequence_logprob() const {
    double total = 0;
    for (double lp : token_logprobs) total += lp;
    return total;
  }
};

struct PpoDiagnostics {
  double mean_ratio = 0;
  double grad_norm = 0;
  double entropy = 0;
  double baseline = 0;
};

/// Two-layer LSTM policy over the 19-token genome grammar, trained with a
/// clipped-surrogate PPO objective against a scalar reward EMA baseline.
class Controller {
 public:
  Controller(ControllerConfig cfg, std::uint64_t init_seed);

  const ControllerConfig& config() const { return cfg_; }

  Rollout sample(Rng& rng);

  /// Teacher-forced re-evaluation of an episode's token log-probabilities.
  std::array<double, kNumTokens> evaluate_logprobs(
      const std::array<int, kNumTokens>& tokens);

  /// Masked next-token distribution after forcing `prefix`.
  std::vector<double> action_distribution(const std::vector<int>& prefix);

  /// One PPO batch update (ppo_epochs passes). Rewards are read from the
  /// rollouts. Throws on an empty batch.
  PpoDiagnostics ppo_update(const std::vector<Rollout>& batch);

  double baseline() const { return baseline_; }

  /// Sum of the episode's token log-probabilities; the gradient of that sum
  /// is accumulated into the store (diagnostics / gradient-check hook).
  double accumulate_logprob_gradient(const std::array<int, kNumTokens>& tokens);

  void save(const std::string& path) const;
  static Controller load(const std::string& path);

  ParamStore<double>& params() { return store_; }

 private:
  struct StepCache;
  struct SeqCache;

  void forward_step(int step, const Eigen::VectorXd& x,
                    std::vector<Eigen::VectorXd>& h,
                    std::vector<Eigen::VectorXd>& c, SeqCache* cache);
  Eigen::VectorXd masked_log_softmax(int step,
                                     const Eigen::VectorXd& hidden_top) const;
  Eigen::VectorXd embed_token(int step_of_token, int token) const;

  // Runs the policy over fixed tokens, filling the cache for backprop.
  void teacher_forced(const std::array<int, kNumTokens>& tokens, SeqCache& cache);

  void backward(const SeqCache& cache,
                const std::array<Eigen::VectorXd, kNumTokens>& dlogits);

  ControllerConfig cfg_;
  ParamStore<double> store_;
  // handles
  int embed_index_, embed_op_, embed_start_;
  std::vector<int> w_ih_, w_hh_, b_;
  int head_conn_w_, head_conn_b_, head_cell_w_, head_cell_b_, head_op_w_, head_op_b_;
  double baseline_ = 0;
  bool baseline_init_ = false;
  long adam_t_ = 0;
};

}  // namespace segnas
