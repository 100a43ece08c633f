#include "segnas/controller.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "segnas/checkpoint.hpp"
#include "segnas/optim.hpp"

namespace segnas {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline Eigen::Map<MatrixXd> as_matrix(ParamArray<double>& p) {
  return {p.value.data(), p.shape[0], p.shape[1]};
}
inline Eigen::Map<const MatrixXd> as_matrix(const ParamArray<double>& p) {
  return {p.value.data(), p.shape[0], p.shape[1]};
}
inline Eigen::Map<MatrixXd> grad_matrix(ParamArray<double>& p) {
  return {p.grad.data(), p.shape[0], p.shape[1]};
}
inline Eigen::Map<VectorXd> as_vector(ParamArray<double>& p) {
  return {p.value.data(), p.value.size()};
}
inline Eigen::Map<VectorXd> grad_vector(ParamArray<double>& p) {
  return {p.grad.data(), p.grad.size()};
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

struct Controller::StepCache {
  VectorXd x;  // input embedding
  std::vector<VectorXd> h_prev, c_prev, gate_i, gate_f, gate_g, gate_o, c, tanh_c;
  VectorXd logp;  // masked log-probabilities over the step's head
};

struct Controller::SeqCache {
  std::array<StepCache, kNumTokens> steps;
  std::array<int, kNumTokens> tokens{};
};

Controller::Controller(ControllerConfig cfg, std::uint64_t init_seed)
    : cfg_(cfg) {
  const int H = cfg_.hidden, E = cfg_.embed_dim;
  embed_index_ = store_.add("embed.index", {8, E});
  embed_op_ = store_.add("embed.op", {kNumOps, E});
  embed_start_ = store_.add("embed.start", {E, 1});
  for (int l = 0; l < cfg_.layers; ++l) {
    const int in = l == 0 ? E : H;
    w_ih_.push_back(store_.add("lstm" + std::to_string(l) + ".w_ih", {4 * H, in}));
    w_hh_.push_back(store_.add("lstm" + std::to_string(l) + ".w_hh", {4 * H, H}));
    b_.push_back(store_.add("lstm" + std::to_string(l) + ".b", {4 * H, 1}));
  }
  head_conn_w_ = store_.add("head.conn.w", {6, H});
  head_conn_b_ = store_.add("head.conn.b", {6, 1});
  head_cell_w_ = store_.add("head.cell.w", {8, H});
  head_cell_b_ = store_.add("head.cell.b", {8, 1});
  head_op_w_ = store_.add("head.op.w", {kNumOps, H});
  head_op_b_ = store_.add("head.op.b", {kNumOps, 1});

  Rng rng(init_seed);
  for (auto& p : store_) {
    for (Eigen::Index i = 0; i < p.size(); ++i)
      p.value[i] = rng.uniform(-cfg_.init_range, cfg_.init_range);
  }
}

Eigen::VectorXd Controller::embed_token(int step_of_token, int token) const {
  const auto& schema = token_schema();
  const auto& table = schema[step_of_token].kind == TokenKind::Op
                          ? store_[embed_op_]
                          : store_[embed_index_];
  return as_matrix(table).row(token).transpose();
}

void Controller::forward_step(int step, const VectorXd& x,
                              std::vector<VectorXd>& h, std::vector<VectorXd>& c,
                              SeqCache* cache) {
  const int H = cfg_.hidden;
  VectorXd input = x;
  StepCache* sc = cache ? &cache->steps[step] : nullptr;
  if (sc) {
    sc->x = x;
    sc->h_prev.resize(cfg_.layers);
    sc->c_prev.resize(cfg_.layers);
    sc->gate_i.resize(cfg_.layers);
    sc->gate_f.resize(cfg_.layers);
    sc->gate_g.resize(cfg_.layers);
    sc->gate_o.resize(cfg_.layers);
    sc->c.resize(cfg_.layers);
    sc->tanh_c.resize(cfg_.layers);
  }
  for (int l = 0; l < cfg_.layers; ++l) {
    if (sc) {
      sc->h_prev[l] = h[l];
      sc->c_prev[l] = c[l];
    }
    VectorXd z = as_matrix(store_[w_ih_[l]]) * input +
                 as_matrix(store_[w_hh_[l]]) * h[l] +
                 Eigen::Map<const VectorXd>(store_[b_[l]].value.data(), 4 * H);
    VectorXd gi(H), gf(H), gg(H), go(H);
    for (int j = 0; j < H; ++j) {
      gi[j] = sigmoid(z[j]);
      gf[j] = sigmoid(z[H + j]);
      gg[j] = std::tanh(z[2 * H + j]);
      go[j] = sigmoid(z[3 * H + j]);
    }
    c[l] = gf.cwiseProduct(c[l]) + gi.cwiseProduct(gg);
    VectorXd tc = c[l].array().tanh();
    h[l] = go.cwiseProduct(tc);
    if (sc) {
      sc->gate_i[l] = gi;
      sc->gate_f[l] = gf;
      sc->gate_g[l] = gg;
      sc->gate_o[l] = go;
      sc->c[l] = c[l];
      sc->tanh_c[l] = tc;
    }
    input = h[l];
  }
}

Eigen::VectorXd Controller::masked_log_softmax(int step,
                                               const VectorXd& hidden_top) const {
  const auto& info = token_schema()[step];
  const ParamArray<double>* w;
  const ParamArray<double>* b;
  switch (info.kind) {
    case TokenKind::ConnIndex: w = &store_[head_conn_w_]; b = &store_[head_conn_b_]; break;
    case TokenKind::CellIndex: w = &store_[head_cell_w_]; b = &store_[head_cell_b_]; break;
    default: w = &store_[head_op_w_]; b = &store_[head_op_b_]; break;
  }
  VectorXd logits = as_matrix(*w) * hidden_top +
                    Eigen::Map<const VectorXd>(b->value.data(), b->value.size());
  // log-softmax over the first num_valid entries; the rest get -inf
  const int valid = info.num_valid;
  double zmax = logits[0];
  for (int j = 1; j < valid; ++j) zmax = std::max(zmax, logits[j]);
  double sum = 0;
  for (int j = 0; j < valid; ++j) sum += std::exp(logits[j] - zmax);
  const double lse = zmax + std::log(sum);
  VectorXd logp = VectorXd::Constant(logits.size(), -std::numeric_limits<double>::infinity());
  for (int j = 0; j < valid; ++j) logp[j] = logits[j] - lse;
  return logp;
}

void Controller::teacher_forced(const std::array<int, kNumTokens>& tokens,
                                SeqCache& cache) {
  const int H = cfg_.hidden;
  std::vector<VectorXd> h(cfg_.layers, VectorXd::Zero(H));
  std::vector<VectorXd> c(cfg_.layers, VectorXd::Zero(H));
  VectorXd x = Eigen::Map<const VectorXd>(store_[embed_start_].value.data(), cfg_.embed_dim);
  cache.tokens = tokens;
  for (int t = 0; t < kNumTokens; ++t) {
    forward_step(t, x, h, c, &cache);
    cache.steps[t].logp = masked_log_softmax(t, h[cfg_.layers - 1]);
    if (t + 1 < kNumTokens) x = embed_token(t, tokens[t]);
  }
}

Rollout Controller::sample(Rng& rng) {
  const int H = cfg_.hidden;
  std::vector<VectorXd> h(cfg_.layers, VectorXd::Zero(H));
  std::vector<VectorXd> c(cfg_.layers, VectorXd::Zero(H));
  VectorXd x = Eigen::Map<const VectorXd>(store_[embed_start_].value.data(), cfg_.embed_dim);

  Rollout rollout;
  const auto& schema = token_schema();
  for (int t = 0; t < kNumTokens; ++t) {
    forward_step(t, x, h, c, nullptr);
    VectorXd logp = masked_log_softmax(t, h[cfg_.layers - 1]);
    const int valid = schema[t].num_valid;
    const double u = rng.uniform();
    double acc = 0;
    int token = valid - 1;
    for (int j = 0; j < valid; ++j) {
      acc += std::exp(logp[j]);
      if (u < acc) {
        token = j;
        break;
      }
    }
    rollout.tokens[t] = token;
    rollout.token_logprobs[t] = logp[token];
    if (t + 1 < kNumTokens) x = embed_token(t, token);
  }
  rollout.genome = from_tokens(rollout.tokens);
  return rollout;
}

std::array<double, kNumTokens> Controller::evaluate_logprobs(
    const std::array<int, kNumTokens>& tokens) {
  SeqCache cache;
  teacher_forced(tokens, cache);
  std::array<double, kNumTokens> out{};
  for (int t = 0; t < kNumTokens; ++t) out[t] = cache.steps[t].logp[tokens[t]];
  return out;
}

std::vector<double> Controller::action_distribution(const std::vector<int>& prefix) {
  if (prefix.size() >= kNumTokens)
    throw std::invalid_argument("prefix covers the whole episode");
  const int H = cfg_.hidden;
  std::vector<VectorXd> h(cfg_.layers, VectorXd::Zero(H));
  std::vector<VectorXd> c(cfg_.layers, VectorXd::Zero(H));
  VectorXd x = Eigen::Map<const VectorXd>(store_[embed_start_].value.data(), cfg_.embed_dim);
  VectorXd logp;
  for (int t = 0; t <= static_cast<int>(prefix.size()); ++t) {
    forward_step(t, x, h, c, nullptr);
    logp = masked_log_softmax(t, h[cfg_.layers - 1]);
    if (t < static_cast<int>(prefix.size())) x = embed_token(t, prefix[t]);
  }
  std::vector<double> probs(logp.size());
  for (Eigen::Index j = 0; j < logp.size(); ++j)
    probs[j] = std::isinf(logp[j]) ? 0.0 : std::exp(logp[j]);
  return probs;
}

void Controller::backward(const SeqCache& cache,
                          const std::array<VectorXd, kNumTokens>& dlogits) {
  const int H = cfg_.hidden;
  std::vector<VectorXd> dh(cfg_.layers, VectorXd::Zero(H));
  std::vector<VectorXd> dc(cfg_.layers, VectorXd::Zero(H));
  const auto& schema = token_schema();

  for (int t = kNumTokens - 1; t >= 0; --t) {
    const StepCache& sc = cache.steps[t];
    // head
    int wh, bh;
    switch (schema[t].kind) {
      case TokenKind::ConnIndex: wh = head_conn_w_; bh = head_conn_b_; break;
      case TokenKind::CellIndex: wh = head_cell_w_; bh = head_cell_b_; break;
      default: wh = head_op_w_; bh = head_op_b_; break;
    }
    const int valid = schema[t].num_valid;
    const VectorXd dl = dlogits[t].head(valid);
    // the head reads this step's top hidden state
    const VectorXd h_top = sc.gate_o.back().cwiseProduct(sc.tanh_c.back());
    grad_matrix(store_[wh]).topRows(valid).noalias() += dl * h_top.transpose();
    grad_vector(store_[bh]).head(valid) += dl;
    dh[cfg_.layers - 1] += as_matrix(store_[wh]).topRows(valid).transpose() * dl;

    // LSTM layers, top to bottom
    for (int l = cfg_.layers - 1; l >= 0; --l) {
      const VectorXd& gi = sc.gate_i[l];
      const VectorXd& gf = sc.gate_f[l];
      const VectorXd& gg = sc.gate_g[l];
      const VectorXd& go = sc.gate_o[l];
      const VectorXd& tc = sc.tanh_c[l];

      VectorXd dgo = dh[l].cwiseProduct(tc);
      dc[l] += dh[l].cwiseProduct(go).cwiseProduct(
          (VectorXd::Ones(H) - tc.cwiseProduct(tc)));
      VectorXd dgi = dc[l].cwiseProduct(gg);
      VectorXd dgf = dc[l].cwiseProduct(sc.c_prev[l]);
      VectorXd dgg = dc[l].cwiseProduct(gi);

      VectorXd dz(4 * H);
      for (int j = 0; j < H; ++j) {
        dz[j] = dgi[j] * gi[j] * (1 - gi[j]);
        dz[H + j] = dgf[j] * gf[j] * (1 - gf[j]);
        dz[2 * H + j] = dgg[j] * (1 - gg[j] * gg[j]);
        dz[3 * H + j] = dgo[j] * go[j] * (1 - go[j]);
      }

      const VectorXd& input = l == 0 ? sc.x : sc.gate_o[l - 1].cwiseProduct(sc.tanh_c[l - 1]);
      grad_matrix(store_[w_ih_[l]]).noalias() += dz * input.transpose();
      grad_matrix(store_[w_hh_[l]]).noalias() += dz * sc.h_prev[l].transpose();
      grad_vector(store_[b_[l]]) += dz;

      const VectorXd dx = as_matrix(store_[w_ih_[l]]).transpose() * dz;
      VectorXd dh_prev = as_matrix(store_[w_hh_[l]]).transpose() * dz;
      VectorXd dc_prev = dc[l].cwiseProduct(gf);

      if (l > 0) dh[l - 1] += dx;
      else {
        // input embedding gradient: token emitted at step t-1 (start at t=0)
        if (t == 0) {
          grad_vector(store_[embed_start_]) += dx;
        } else {
          const int prev_token = cache.tokens[t - 1];
          auto& table = schema[t - 1].kind == TokenKind::Op ? store_[embed_op_]
                                                            : store_[embed_index_];
          grad_matrix(table).row(prev_token) += dx.transpose();
        }
      }
      dh[l] = dh_prev;
      dc[l] = dc_prev;
    }
  }
}

double Controller::accumulate_logprob_gradient(
    const std::array<int, kNumTokens>& tokens) {
  SeqCache cache;
  teacher_forced(tokens, cache);
  const auto& schema = token_schema();
  double total = 0;
  std::array<VectorXd, kNumTokens> dlogits;
  for (int t = 0; t < kNumTokens; ++t) {
    const VectorXd& logp = cache.steps[t].logp;
    total += logp[tokens[t]];
    VectorXd d = VectorXd::Zero(logp.size());
    for (int j = 0; j < schema[t].num_valid; ++j) {
      d[j] = (j == tokens[t] ? 1.0 : 0.0) - std::exp(logp[j]);
    }
    dlogits[t] = std::move(d);
  }
  backward(cache, dlogits);
  return total;
}

PpoDiagnostics Controller::ppo_update(const std::vector<Rollout>& batch) {
  if (batch.empty()) throw std::invalid_argument("empty PPO batch");

  double mean_reward = 0;
  for (const auto& r : batch) mean_reward += r.reward;
  mean_reward /= static_cast<double>(batch.size());
  if (!baseline_init_) {
    baseline_ = mean_reward;
    baseline_init_ = true;
  }
  const double advantage_baseline = baseline_;

  Adam<double> adam{cfg_.lr};
  adam.t = adam_t_;

  PpoDiagnostics diag;
  const double scale = 1.0 / static_cast<double>(batch.size() * kNumTokens);
  const auto& schema = token_schema();

  for (int epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
    store_.zero_grad();
    double ratio_sum = 0, entropy_sum = 0;
    for (const auto& rollout : batch) {
      SeqCache cache;
      teacher_forced(rollout.tokens, cache);
      const double advantage = rollout.reward - advantage_baseline;

      std::array<VectorXd, kNumTokens> dlogits;
      for (int t = 0; t < kNumTokens; ++t) {
        const int valid = schema[t].num_valid;
        const VectorXd& logp = cache.steps[t].logp;
        const int token = rollout.tokens[t];
        const double ratio = std::exp(logp[token] - rollout.token_logprobs[t]);
        ratio_sum += ratio;

        // clipped surrogate: gradient is live unless the ratio is clipped
        // on the advantage's improving side
        const bool active = advantage >= 0 ? ratio <= 1.0 + cfg_.ppo_clip
                                           : ratio >= 1.0 - cfg_.ppo_clip;

        VectorXd p = VectorXd::Zero(logp.size());
        double entropy = 0;
        for (int j = 0; j < valid; ++j) {
          p[j] = std::exp(logp[j]);
          entropy -= p[j] * logp[j];
        }
        entropy_sum += entropy;

        VectorXd d = VectorXd::Zero(logp.size());
        if (active) {
          const double coeff = -scale * ratio * advantage;  // descent on -J
          for (int j = 0; j < valid; ++j)
            d[j] = coeff * ((j == token ? 1.0 : 0.0) - p[j]);
        }
        if (cfg_.entropy_coeff > 0) {
          for (int j = 0; j < valid; ++j)
            d[j] += scale * cfg_.entropy_coeff * p[j] * (logp[j] + entropy);
        }
        dlogits[t] = std::move(d);
      }
      backward(cache, dlogits);
    }

    double gnorm = 0;
    for (const auto& p : store_) gnorm += p.grad.square().sum();
    diag.grad_norm = std::sqrt(gnorm);
    diag.mean_ratio = ratio_sum / static_cast<double>(batch.size() * kNumTokens);
    diag.entropy = entropy_sum / static_cast<double>(batch.size() * kNumTokens);

    adam.step(store_);
  }
  adam_t_ = adam.t;

  baseline_ = cfg_.baseline_decay * baseline_ +
              (1.0 - cfg_.baseline_decay) * mean_reward;
  diag.baseline = baseline_;
  return diag;
}

void Controller::save(const std::string& path) const {
  Container c;
  c.set_meta("type", "controller");
  c.set_meta("layers", std::to_string(cfg_.layers));
  c.set_meta("hidden", std::to_string(cfg_.hidden));
  c.set_meta("embed_dim", std::to_string(cfg_.embed_dim));
  c.set_meta("lr", format_double(cfg_.lr));
  c.set_meta("ppo_clip", format_double(cfg_.ppo_clip));
  c.set_meta("ppo_epochs", std::to_string(cfg_.ppo_epochs));
  c.set_meta("batch_size", std::to_string(cfg_.batch_size));
  c.set_meta("baseline_decay", format_double(cfg_.baseline_decay));
  c.set_meta("entropy_coeff", format_double(cfg_.entropy_coeff));
  c.set_meta("baseline", format_double(baseline_));
  c.set_meta("baseline_init", baseline_init_ ? "1" : "0");
  c.set_meta("adam_t", std::to_string(adam_t_));
  save_params(c, "ctrl/", store_, true);
  c.save(path);
}

Controller Controller::load(const std::string& path) {
  Container c = Container::load(path);
  if (!c.has_meta("type") || c.meta("type") != "controller")
    throw CheckpointError(path + ": not a controller checkpoint");
  ControllerConfig cfg;
  cfg.layers = std::stoi(c.meta("layers"));
  cfg.hidden = std::stoi(c.meta("hidden"));
  cfg.embed_dim = std::stoi(c.meta("embed_dim"));
  cfg.lr = std::stod(c.meta("lr"));
  cfg.ppo_clip = std::stod(c.meta("ppo_clip"));
  cfg.ppo_epochs = std::stoi(c.meta("ppo_epochs"));
  cfg.batch_size = std::stoi(c.meta("batch_size"));
  cfg.baseline_decay = std::stod(c.meta("baseline_decay"));
  cfg.entropy_coeff = std::stod(c.meta("entropy_coeff"));
  Controller ctrl(cfg, 0);
  load_params(c, "ctrl/", ctrl.store_, true);
  ctrl.baseline_ = std::stod(c.meta("baseline"));
  ctrl.baseline_init_ = c.meta("baseline_init") == "1";
  ctrl.adam_t_ = std::stol(c.meta("adam_t"));
  return ctrl;
}

}  // namespace segnas
