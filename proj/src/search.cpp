#include "segnas/search.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "segnas/checkpoint.hpp"
#include "segnas/loss.hpp"
#include "segnas/metrics.hpp"
#include "segnas/optim.hpp"

namespace segnas {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

const char* aux_mode_name(AuxMode aux) {
  switch (aux) {
    case AuxMode::None: return "none";
    case AuxMode::Classifier: return "classifier";
    case AuxMode::Cell: return "cell";
  }
  return "?";
}

AuxMode aux_mode_from(const std::string& name) {
  if (name == "none") return AuxMode::None;
  if (name == "classifier") return AuxMode::Classifier;
  if (name == "cell") return AuxMode::Cell;
  throw std::invalid_argument("unknown aux mode '" + name + "'");
}

/// Copies values and buffers; gradients, shadows and optimizer moments start
/// fresh in the destination.
void copy_weights(ParamStore<float>& dst, const ParamStore<float>& src) {
  auto it = dst.begin();
  for (const auto& p : src) {
    it->value = p.value;
    if (it->trainable) {
      it->grad.setZero();
      it->shadow.setZero();
      it->opt_m.setZero();
      it->opt_v.setZero();
    }
    ++it;
  }
}

Mask argmax_mask(const Tensor<float>& logits) {
  Mask pred(logits.n, logits.h, logits.w);
  const Eigen::Index plane = static_cast<Eigen::Index>(logits.h) * logits.w;
  for (int item = 0; item < logits.n; ++item)
    for (Eigen::Index i = 0; i < plane; ++i) {
      int best = 0;
      float bestv = logits.plane(item, 0)[i];
      for (int ch = 1; ch < logits.c; ++ch) {
        const float v = logits.plane(item, ch)[i];
        if (v > bestv) {
          bestv = v;
          best = ch;
        }
      }
      pred.data[static_cast<Eigen::Index>(item) * plane + i] = best;
    }
  return pred;
}

std::vector<int> split_indices(Split split) {
  std::vector<int> idx(split.size());
  std::iota(idx.begin(), idx.end(), split.begin);
  return idx;
}

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
}

Tensor<float> gather_teacher_logits(const TaskContext& ctx,
                                    const std::vector<int>& idx) {
  const auto& t = ctx.teacher_logits;
  Tensor<float> out(static_cast<int>(idx.size()), t.c, t.h, t.w);
  const Eigen::Index item_size = static_cast<Eigen::Index>(t.c) * t.h * t.w;
  const int base = ctx.data.meta_train().begin;
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(t.data.data() + (idx[i] - base) * item_size, item_size,
                out.data.data() + static_cast<Eigen::Index>(i) * item_size);
  return out;
}

LossSpec<float> make_loss_spec(const SearchConfig& config, bool with_kd,
                               std::size_t aux_outputs) {
  LossSpec<float> spec;
  spec.kd_coeff = with_kd ? static_cast<float>(config.kd_coeff) : 0.0f;
  spec.aux_coeffs.assign(aux_outputs, static_cast<float>(config.aux_coeff));
  return spec;
}

}  // namespace

double anneal_p(const SearchConfig& config, int index) {
  if (config.total_architectures <= 1) return config.p_start;
  const double t = static_cast<double>(index) /
                   static_cast<double>(config.total_architectures - 1);
  return config.p_start + (config.p_end - config.p_start) * std::min(1.0, t);
}

bool should_continue(double reward1, const RunningMean& running, double p, Rng& rng) {
  if (running.count == 0) return true;  // first architecture always continues
  if (reward1 > running.mean) return true;
  return rng.bernoulli(p);
}

double evaluate_decoder_reward(DecoderNet<float>& net, const TaskContext& ctx,
                               Split split, int batch_size) {
  ConfusionMatrix cm(ctx.task.num_classes);
  const int S = ctx.task.image_size;
  for (int start = split.begin; start < split.end; start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(split.end, start + batch_size); ++i)
      idx.push_back(i);
    auto out = net.forward(ctx.features.gather(idx), false);
    Tensor<float> logits = bilinear_resize_forward(out.main, S, S);
    cm.add_mask(ctx.data.gather_masks(idx), argmax_mask(logits));
  }
  return compute_reward(cm).reward;
}

RewardBreakdown evaluate_model(DecoderNet<float>& decoder, EncoderStub& encoder,
                               const TaskContext& ctx, Split split, int batch_size) {
  ConfusionMatrix cm(ctx.task.num_classes);
  const int S = ctx.task.image_size;
  for (int start = split.begin; start < split.end; start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(split.end, start + batch_size); ++i)
      idx.push_back(i);
    auto feats = encoder.forward(ctx.data.gather_images(idx), false, nullptr);
    auto out = decoder.forward(feats, false);
    Tensor<float> logits = bilinear_resize_forward(out.main, S, S);
    cm.add_mask(ctx.data.gather_masks(idx), argmax_mask(logits));
  }
  return compute_reward(cm);
}

StageOneResult evaluate_stage1(const Genome& genome, const TaskContext& ctx,
                               const SearchConfig& config, std::uint64_t arch_seed) {
  const auto start = Clock::now();
  StageOneResult result;

  GraphIR ir = build(genome, ctx.source_descs, config.adapt_channels,
                     ctx.task.num_classes, config.ablation.aux);
  DecoderNet<float> net(std::move(ir));
  Rng init_rng(derive_seed(arch_seed, 0x111));
  net.init_xavier(init_rng);

  Adam<float> opt{static_cast<float>(config.decoder_lr)};
  if (config.ablation.polyak) net.params().polyak_init();

  const bool with_kd = config.ablation.kd && ctx.teacher_logits.size() > 0;
  LossSpec<float> spec =
      make_loss_spec(config, with_kd, net.ir().aux_outputs.size());

  Rng order_rng(derive_seed(arch_seed, 0x222));
  auto order = split_indices(ctx.data.meta_train());
  bool diverged = false;
  for (int epoch = 0; epoch < config.stage1_epochs && !diverged; ++epoch) {
    shuffle_indices(order, order_rng);
    for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
      std::vector<int> idx(order.begin() + at,
                           order.begin() + std::min(order.size(), at + config.batch_size));
      auto out = net.forward(ctx.features.gather(idx), true);
      Tensor<float> teacher;
      if (with_kd) teacher = gather_teacher_logits(ctx, idx);
      auto loss = segmentation_loss<float>(out.main, out.aux,
                                           ctx.data.gather_masks(idx),
                                           with_kd ? &teacher : nullptr, spec);
      if (!std::isfinite(loss.total)) {
        diverged = true;
        break;
      }
      net.params().zero_grad();
      net.backward(loss.dmain, loss.daux);
      opt.step(net.params());
      if (config.ablation.polyak)
        net.params().polyak_update(static_cast<float>(config.polyak_decay1));
    }
  }

  if (diverged) {
    result.failed = true;
    result.reward = 0;
    result.seconds = elapsed(start);
    return result;
  }

  if (config.ablation.polyak) net.params().polyak_swap_in();
  result.reward = evaluate_decoder_reward(net, ctx, ctx.data.meta_val(),
                                          config.batch_size);
  if (config.ablation.polyak) net.params().polyak_swap_out();
  result.seconds = elapsed(start);
  result.net.emplace(std::move(net));
  return result;
}

StageTwoResult evaluate_stage2(DecoderNet<float>& decoder, const TaskContext& ctx,
                               const SearchConfig& config, std::uint64_t arch_seed) {
  const auto start = Clock::now();
  StageTwoResult result;

  EncoderStub encoder;
  copy_weights(encoder.params(), ctx.stub.params());

  Adam<float> opt_dec{static_cast<float>(config.decoder_lr)};
  SgdMomentum<float> opt_enc{static_cast<float>(config.encoder_lr),
                             static_cast<float>(config.encoder_momentum)};
  if (config.ablation.polyak) {
    decoder.params().polyak_init();
    encoder.params().polyak_init();
  }

  // knowledge distillation is omitted in the second stage
  LossSpec<float> spec =
      make_loss_spec(config, false, decoder.ir().aux_outputs.size());

  Rng order_rng(derive_seed(arch_seed, 0x333));
  auto order = split_indices(ctx.data.meta_train());
  bool diverged = false;
  for (int epoch = 0; epoch < config.stage2_epochs && !diverged; ++epoch) {
    shuffle_indices(order, order_rng);
    for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
      std::vector<int> idx(order.begin() + at,
                           order.begin() + std::min(order.size(), at + config.batch_size));
      EncoderStub::Cache enc_cache;
      auto feats = encoder.forward(ctx.data.gather_images(idx), true, &enc_cache);
      auto out = decoder.forward(feats, true);
      auto loss = segmentation_loss<float>(out.main, out.aux,
                                           ctx.data.gather_masks(idx), nullptr, spec);
      if (!std::isfinite(loss.total)) {
        diverged = true;
        break;
      }
      decoder.params().zero_grad();
      encoder.params().zero_grad();
      auto dsources = decoder.backward(loss.dmain, loss.daux);
      encoder.backward(enc_cache, std::move(dsources));
      opt_dec.step(decoder.params());
      opt_enc.step(encoder.params());
      if (config.ablation.polyak) {
        decoder.params().polyak_update(static_cast<float>(config.polyak_decay2));
        encoder.params().polyak_update(static_cast<float>(config.polyak_decay2));
      }
    }
  }

  if (diverged) {
    result.failed = true;
    result.reward = 0;
    result.seconds = elapsed(start);
    return result;
  }

  if (config.ablation.polyak) {
    decoder.params().polyak_swap_in();
    encoder.params().polyak_swap_in();
  }
  result.reward =
      evaluate_model(decoder, encoder, ctx, ctx.data.meta_val(), config.batch_size)
          .reward;
  if (config.ablation.polyak) {
    decoder.params().polyak_swap_out();
    encoder.params().polyak_swap_out();
  }
  result.seconds = elapsed(start);
  return result;
}

// --- Log rows ----------------------------------------------------------------

std::string record_to_json(const ArchRecord& r) {
  json j;
  j["index"] = r.index;
  j["genome"] = r.genome;
  j["reward1"] = r.reward1;
  j["continued"] = r.continued;
  if (r.reward2)
    j["reward2"] = *r.reward2;
  else
    j["reward2"] = nullptr;
  j["final_reward"] = r.final_reward;
  j["p_at_decision"] = r.p_at_decision;
  j["seconds_stage1"] = r.seconds_stage1;
  j["seconds_stage2"] = r.seconds_stage2;
  j["mode"] = r.mode;
  j["polyak"] = r.polyak;
  j["kd"] = r.kd;
  j["aux"] = r.aux;
  j["failed"] = r.failed;
  return j.dump();
}

ArchRecord record_from_json(const std::string& line) {
  json j = json::parse(line);
  ArchRecord r;
  r.index = j.at("index").get<int>();
  r.genome = j.at("genome").get<std::string>();
  r.reward1 = j.at("reward1").get<double>();
  r.continued = j.at("continued").get<bool>();
  if (!j.at("reward2").is_null()) r.reward2 = j.at("reward2").get<double>();
  r.final_reward = j.at("final_reward").get<double>();
  r.p_at_decision = j.at("p_at_decision").get<double>();
  r.seconds_stage1 = j.at("seconds_stage1").get<double>();
  r.seconds_stage2 = j.at("seconds_stage2").get<double>();
  r.mode = j.at("mode").get<std::string>();
  r.polyak = j.at("polyak").get<bool>();
  r.kd = j.at("kd").get<bool>();
  r.aux = j.at("aux").get<std::string>();
  r.failed = j.at("failed").get<bool>();
  return r;
}

namespace {

json search_config_json(const SearchConfig& c) {
  json j;
  j["total_architectures"] = c.total_architectures;
  j["stage1_epochs"] = c.stage1_epochs;
  j["stage2_epochs"] = c.stage2_epochs;
  j["p_start"] = c.p_start;
  j["p_end"] = c.p_end;
  j["polyak_decay1"] = c.polyak_decay1;
  j["polyak_decay2"] = c.polyak_decay2;
  j["kd_coeff"] = c.kd_coeff;
  j["aux_coeff"] = c.aux_coeff;
  j["mode"] = c.mode == SearchMode::Rl ? "rl" : "random";
  j["polyak"] = c.ablation.polyak;
  j["kd"] = c.ablation.kd;
  j["aux"] = aux_mode_name(c.ablation.aux);
  j["batch_size"] = c.batch_size;
  j["adapt_channels"] = c.adapt_channels;
  j["decoder_lr"] = c.decoder_lr;
  j["encoder_lr"] = c.encoder_lr;
  j["workers"] = c.workers;
  j["seed"] = c.seed;
  j["top_k"] = c.top_k;
  j["controller_lr"] = c.controller.lr;
  j["controller_hidden"] = c.controller.hidden;
  j["controller_layers"] = c.controller.layers;
  j["ppo_clip"] = c.controller.ppo_clip;
  j["ppo_epochs"] = c.controller.ppo_epochs;
  j["ppo_batch"] = c.controller.batch_size;
  j["baseline_decay"] = c.controller.baseline_decay;
  j["entropy_coeff"] = c.controller.entropy_coeff;
  return j;
}

json task_config_json(const SyntheticTaskConfig& t) {
  json j;
  j["image_size"] = t.image_size;
  j["num_classes"] = t.num_classes;
  j["min_shapes"] = t.min_shapes;
  j["max_shapes"] = t.max_shapes;
  j["noise"] = t.noise;
  j["meta_train"] = t.meta_train;
  j["meta_val"] = t.meta_val;
  j["holdout"] = t.holdout;
  j["seed"] = t.seed;
  return j;
}

}  // namespace

std::vector<ArchRecord> load_search_log(const std::string& path) {
  std::vector<ArchRecord> records;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open log " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": malformed JSONL row");
    if (j.contains("type") && j["type"] == "header") continue;
    try {
      records.push_back(record_from_json(line));
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": incomplete record (" + e.what() + ")");
    }
  }
  return records;
}

SearchOutcome run_search(const SearchConfig& config, const TaskContext& ctx,
                         const std::string& log_path, bool resume) {
  SearchOutcome outcome;
  const std::string ctrl_path = log_path + ".ctrl";
  const std::string state_path = log_path + ".state";

  Controller controller(config.controller, derive_seed(config.seed, 0xC011));
  Rng sampler(derive_seed(config.seed, 0x5a11));
  int next_index = 0;

  if (resume) {
    outcome.records = load_search_log(log_path);
    for (const auto& r : outcome.records) outcome.running.add(r.reward1);
    next_index = static_cast<int>(outcome.records.size());
    if (std::filesystem::exists(state_path)) {
      Container c = Container::load(state_path);
      sampler.deserialize(c.meta("sampler_rng"));
      if (config.mode == SearchMode::Rl && std::filesystem::exists(ctrl_path))
        controller = Controller::load(ctrl_path);
    }
  } else {
    std::ofstream out(log_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open log " + log_path);
    json header;
    header["type"] = "header";
    header["mode"] = config.mode == SearchMode::Rl ? "rl" : "random";
    header["search"] = search_config_json(config);
    header["task"] = task_config_json(ctx.task);
    out << header.dump() << "\n";
  }

  const int workers = std::max(1, config.workers);
  const int first_new = next_index;

  while (next_index < config.total_architectures &&
         (config.max_new_architectures <= 0 ||
          next_index - first_new < config.max_new_architectures)) {
    const int batch =
        std::min(config.controller.batch_size, config.total_architectures - next_index);

    // sample the batch up front; the controller never trains mid-flight
    std::vector<Rollout> rollouts(batch);
    for (int j = 0; j < batch; ++j) {
      if (config.mode == SearchMode::Rl) {
        rollouts[j] = controller.sample(sampler);
      } else {
        Rng g(derive_seed(config.seed, 0x9e0, next_index + j));
        rollouts[j].genome = sample_uniform(g);
        rollouts[j].tokens = to_tokens(rollouts[j].genome);
      }
    }

    std::vector<ArchRecord> records(batch);
    std::vector<double> reward1(batch, 0.0);
    std::vector<char> stage1_done(batch, 0);
    std::mutex mu;
    std::condition_variable cv;
    std::atomic<int> claim{0};

    auto worker_fn = [&]() {
      while (true) {
        const int j = claim.fetch_add(1);
        if (j >= batch) return;
        const int index = next_index + j;
        const std::uint64_t arch_seed = derive_seed(config.seed, 0xe5a1, index);

        StageOneResult s1 = evaluate_stage1(rollouts[j].genome, ctx, config, arch_seed);
        {
          std::lock_guard<std::mutex> lock(mu);
          reward1[j] = s1.reward;
          stage1_done[j] = 1;
        }
        cv.notify_all();

        // the gate sees the running mean over every earlier stage-1 reward
        {
          std::unique_lock<std::mutex> lock(mu);
          cv.wait(lock, [&] {
            for (int i = 0; i < j; ++i)
              if (!stage1_done[i]) return false;
            return true;
          });
        }
        RunningMean upto = outcome.running;
        for (int i = 0; i < j; ++i) upto.add(reward1[i]);

        const double p = anneal_p(config, index);
        Rng gate_rng(derive_seed(config.seed, 0x9a7e, index));
        const bool proceed =
            !s1.failed && should_continue(s1.reward, upto, p, gate_rng);

        ArchRecord rec;
        rec.index = index;
        rec.genome = encode(rollouts[j].genome);
        rec.reward1 = s1.reward;
        rec.continued = proceed;
        rec.p_at_decision = p;
        rec.seconds_stage1 = s1.seconds;
        rec.mode = config.mode == SearchMode::Rl ? "rl" : "random";
        rec.polyak = config.ablation.polyak;
        rec.kd = config.ablation.kd;
        rec.aux = aux_mode_name(config.ablation.aux);
        rec.failed = s1.failed;

        if (proceed && s1.net) {
          StageTwoResult s2 = evaluate_stage2(*s1.net, ctx, config, arch_seed);
          rec.reward2 = s2.reward;
          rec.seconds_stage2 = s2.seconds;
          rec.failed = rec.failed || s2.failed;
          rec.final_reward = s2.failed ? 0.0 : s2.reward;
        } else {
          rec.final_reward = s1.failed ? 0.0 : s1.reward;
        }

        {
          std::lock_guard<std::mutex> lock(mu);
          records[j] = std::move(rec);
        }
      }
    };

    std::vector<std::thread> pool;
    for (int w = 0; w < std::min(workers, batch); ++w) pool.emplace_back(worker_fn);
    for (auto& t : pool) t.join();

    // commit in index order: running mean, PPO update, log rows
    for (int j = 0; j < batch; ++j) outcome.running.add(reward1[j]);

    if (config.mode == SearchMode::Rl) {
      for (int j = 0; j < batch; ++j) {
        rollouts[j].reward = records[j].final_reward;
        rollouts[j].stage_reached = records[j].continued ? 2 : 1;
      }
      controller.ppo_update(rollouts);
    }

    {
      std::ofstream out(log_path, std::ios::app);
      for (int j = 0; j < batch; ++j) out << record_to_json(records[j]) << "\n";
    }
    for (auto& r : records) outcome.records.push_back(std::move(r));
    next_index += batch;

    if (config.mode == SearchMode::Rl) controller.save(ctrl_path);
    Container state;
    state.set_meta("next_index", std::to_string(next_index));
    state.set_meta("sampler_rng", sampler.serialize());
    state.save(state_path);
  }

  // top-k canonical genomes by final reward
  std::vector<const ArchRecord*> sorted;
  for (const auto& r : outcome.records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ArchRecord* a, const ArchRecord* b) {
                     return a->final_reward > b->final_reward;
                   });
  for (const auto* r : sorted) {
    if (static_cast<int>(outcome.top_genomes.size()) >= config.top_k) break;
    const std::string canonical = encode(canonicalize(decode(r->genome)));
    if (std::find(outcome.top_genomes.begin(), outcome.top_genomes.end(), canonical) ==
        outcome.top_genomes.end())
      outcome.top_genomes.push_back(canonical);
  }
  return outcome;
}

// --- Full training -------------------------------------------------------------

FullTrainResult full_train(const Genome& genome, const TaskContext& ctx,
                           const FullTrainConfig& config,
                           const std::string& checkpoint_path) {
  FullTrainResult result;

  GraphIR ir = build(genome, ctx.source_descs, config.adapt_channels,
                     ctx.task.num_classes, config.aux);
  DecoderNet<float> net(std::move(ir));
  Rng init_rng(derive_seed(config.seed, 0x444));
  net.init_xavier(init_rng);

  EncoderStub encoder;
  copy_weights(encoder.params(), ctx.stub.params());

  Adam<float> opt_dec{static_cast<float>(config.decoder_lr)};
  SgdMomentum<float> opt_enc{static_cast<float>(config.encoder_lr),
                             static_cast<float>(config.encoder_momentum)};

  Rng order_rng(derive_seed(config.seed, 0x555));
  auto order = split_indices(ctx.data.meta_train());

  const int phases = static_cast<int>(config.aux_coeffs.size());
  double lr_scale = 1.0;
  bool bn_frozen = false;

  for (int phase = 0; phase < phases; ++phase) {
    if (phase > 0) lr_scale *= 0.5;  // halve at each phase boundary
    for (int epoch = 0; epoch < config.phase_epochs; ++epoch) {
      if (phase == phases - 1 && epoch == config.phase_epochs / 2 && !bn_frozen) {
        // halfway through the last phase: freeze BN stats, halve again
        bn_frozen = true;
        net.set_bn_frozen(true);
        encoder.set_bn_frozen(true);
        lr_scale *= 0.5;
      }
      opt_dec.lr = static_cast<float>(config.decoder_lr * lr_scale);
      opt_enc.lr = static_cast<float>(config.encoder_lr * lr_scale);

      LossSpec<float> spec;
      spec.kd_coeff = 0;
      spec.aux_coeffs.assign(net.ir().aux_outputs.size(),
                             static_cast<float>(config.aux_coeffs[phase]));

      double loss_sum = 0;
      int steps = 0;
      shuffle_indices(order, order_rng);
      for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
        std::vector<int> idx(order.begin() + at,
                             order.begin() + std::min(order.size(), at + config.batch_size));
        EncoderStub::Cache enc_cache;
        auto feats = encoder.forward(ctx.data.gather_images(idx), true, &enc_cache);
        auto out = net.forward(feats, true);
        auto loss = segmentation_loss<float>(out.main, out.aux,
                                             ctx.data.gather_masks(idx), nullptr, spec);
        if (!std::isfinite(loss.total))
          throw std::runtime_error("full_train diverged (non-finite loss)");
        net.params().zero_grad();
        encoder.params().zero_grad();
        auto dsources = net.backward(loss.dmain, loss.daux);
        encoder.backward(enc_cache, std::move(dsources));
        opt_dec.step(net.params());
        opt_enc.step(encoder.params());
        loss_sum += loss.total;
        ++steps;
      }

      EpochLog entry;
      entry.phase = phase;
      entry.epoch = epoch;
      entry.decoder_lr = opt_dec.lr;
      entry.encoder_lr = opt_enc.lr;
      entry.train_loss = loss_sum / std::max(1, steps);
      entry.val_reward =
          evaluate_model(net, encoder, ctx, ctx.data.meta_val(), config.batch_size)
              .reward;
      entry.bn_frozen = bn_frozen;
      result.epochs.push_back(entry);
    }
  }

  RewardBreakdown holdout =
      evaluate_model(net, encoder, ctx, ctx.data.holdout(), config.batch_size);
  result.holdout_reward = holdout.reward;
  result.holdout_miou = holdout.miou;
  result.holdout_fwiou = holdout.fwiou;
  result.holdout_mpa = holdout.mpa;

  if (!checkpoint_path.empty())
    save_model(checkpoint_path, genome, config.aux, config.adapt_channels, net,
               encoder, ctx);
  return result;
}

void save_model(const std::string& path, const Genome& genome, AuxMode aux,
                int adapt_channels, DecoderNet<float>& decoder,
                EncoderStub& encoder, const TaskContext& ctx) {
  Container c;
  c.set_meta("type", "model");
  c.set_meta("genome", encode(genome));
  c.set_meta("aux", aux_mode_name(aux));
  c.set_meta("adapt_channels", std::to_string(adapt_channels));
  c.set_meta("num_classes", std::to_string(ctx.task.num_classes));
  c.set_meta("image_size", std::to_string(ctx.task.image_size));
  save_params(c, "dec/", decoder.params());
  save_params(c, "enc/", encoder.params());
  c.save(path);
}

LoadedModel load_model(const std::string& path, const TaskContext& ctx) {
  Container c = Container::load(path);
  if (!c.has_meta("type") || c.meta("type") != "model")
    throw CheckpointError(path + ": not a model checkpoint");
  if (std::stoi(c.meta("image_size")) != ctx.task.image_size ||
      std::stoi(c.meta("num_classes")) != ctx.task.num_classes)
    throw CheckpointError(path + ": checkpoint does not match the task config");

  const Genome genome = decode(c.meta("genome"));
  const AuxMode aux = aux_mode_from(c.meta("aux"));
  const int adapt = std::stoi(c.meta("adapt_channels"));
  GraphIR ir = build(genome, ctx.source_descs, adapt, ctx.task.num_classes, aux);
  LoadedModel model{genome, aux, DecoderNet<float>(std::move(ir)), EncoderStub()};
  load_params(c, "dec/", model.decoder.params());
  load_params(c, "enc/", model.encoder.params());
  return model;
}

}  // namespace segnas
