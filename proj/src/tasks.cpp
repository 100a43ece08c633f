#include "segnas/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

#include "segnas/checkpoint.hpp"
#include "segnas/loss.hpp"
#include "segnas/metrics.hpp"
#include "segnas/optim.hpp"

namespace segnas {

namespace {

struct ShapeColor {
  float r, g, b;
};

// one base colour per shape kind; instances get jittered copies
constexpr ShapeColor kBaseColors[4] = {
    {0.85f, 0.20f, 0.20f},  // disk
    {0.20f, 0.80f, 0.25f},  // rectangle
    {0.25f, 0.35f, 0.90f},  // triangle
    {0.90f, 0.80f, 0.20f},  // ring
};

float clampf(float v) { return std::min(1.0f, std::max(0.0f, v)); }

void paint(Tensor<float>& images, Mask& masks, int item, int y, int x,
           const ShapeColor& color, int cls) {
  images.at(item, 0, y, x) = color.r;
  images.at(item, 1, y, x) = color.g;
  images.at(item, 2, y, x) = color.b;
  masks.at(item, y, x) = cls;
}

}  // namespace

Dataset generate(const SyntheticTaskConfig& config) {
  if (config.image_size % 16 != 0)
    throw std::invalid_argument("image_size must be divisible by 16");
  if (config.num_classes < 2)
    throw std::invalid_argument("need at least background plus one class");

  const int S = config.image_size;
  const int total = config.meta_train + config.meta_val + config.holdout;
  Dataset data;
  data.config = config;
  data.images = Tensor<float>(total, 3, S, S);
  data.masks = Mask(total, S, S);

  Rng rng(derive_seed(config.seed, 0xda7a));
  for (int item = 0; item < total; ++item) {
    // tinted dark background
    const float bg[3] = {static_cast<float>(rng.uniform(0.05, 0.25)),
                         static_cast<float>(rng.uniform(0.05, 0.25)),
                         static_cast<float>(rng.uniform(0.05, 0.25))};
    for (int ch = 0; ch < 3; ++ch) {
      float* p = data.images.plane(item, ch);
      std::fill(p, p + S * S, bg[ch]);
    }

    const int count = config.min_shapes +
                      (config.max_shapes > config.min_shapes
                           ? rng.uniform_int(config.max_shapes - config.min_shapes + 1)
                           : 0);
    for (int s = 0; s < count; ++s) {
      const int kind = rng.uniform_int(4);
      const int cls = 1 + kind % (config.num_classes - 1);
      const int ext = S / 12 + rng.uniform_int(std::max(1, S / 5 - S / 12));
      const int cx = ext + rng.uniform_int(std::max(1, S - 2 * ext));
      const int cy = ext + rng.uniform_int(std::max(1, S - 2 * ext));
      ShapeColor color = kBaseColors[kind];
      color.r = clampf(color.r + static_cast<float>(rng.uniform(-0.15, 0.15)));
      color.g = clampf(color.g + static_cast<float>(rng.uniform(-0.15, 0.15)));
      color.b = clampf(color.b + static_cast<float>(rng.uniform(-0.15, 0.15)));

      switch (kind) {
        case 0:  // disk
          for (int y = cy - ext; y <= cy + ext; ++y)
            for (int x = cx - ext; x <= cx + ext; ++x) {
              if (y < 0 || y >= S || x < 0 || x >= S) continue;
              const int dy = y - cy, dx = x - cx;
              if (dy * dy + dx * dx <= ext * ext) paint(data.images, data.masks, item, y, x, color, cls);
            }
          break;
        case 1: {  // rectangle
          const int hw = std::max(2, static_cast<int>(ext * rng.uniform(0.5, 1.0)));
          const int hh = std::max(2, static_cast<int>(ext * rng.uniform(0.5, 1.0)));
          for (int y = std::max(0, cy - hh); y <= std::min(S - 1, cy + hh); ++y)
            for (int x = std::max(0, cx - hw); x <= std::min(S - 1, cx + hw); ++x)
              paint(data.images, data.masks, item, y, x, color, cls);
          break;
        }
        case 2:  // triangle, apex up
          for (int y = cy - ext; y <= cy + ext; ++y) {
            if (y < 0 || y >= S) continue;
            const double progress = static_cast<double>(y - (cy - ext)) / (2.0 * ext);
            const int half = static_cast<int>(progress * ext);
            for (int x = std::max(0, cx - half); x <= std::min(S - 1, cx + half); ++x)
              paint(data.images, data.masks, item, y, x, color, cls);
          }
          break;
        default: {  // ring
          const int inner = std::max(1, static_cast<int>(ext * 0.55));
          for (int y = cy - ext; y <= cy + ext; ++y)
            for (int x = cx - ext; x <= cx + ext; ++x) {
              if (y < 0 || y >= S || x < 0 || x >= S) continue;
              const int dy = y - cy, dx = x - cx;
              const int d2 = dy * dy + dx * dx;
              if (d2 <= ext * ext && d2 >= inner * inner)
                paint(data.images, data.masks, item, y, x, color, cls);
            }
          break;
        }
      }
    }

    if (config.noise > 0) {
      for (int ch = 0; ch < 3; ++ch) {
        float* p = data.images.plane(item, ch);
        for (int i = 0; i < S * S; ++i)
          p[i] = clampf(p[i] + static_cast<float>(rng.normal() * config.noise));
      }
    }
  }
  return data;
}

Tensor<float> Dataset::gather_images(const std::vector<int>& idx) const {
  const int S = config.image_size;
  Tensor<float> out(static_cast<int>(idx.size()), 3, S, S);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (int ch = 0; ch < 3; ++ch)
      std::copy_n(images.plane(idx[i], ch), S * S, out.plane(static_cast<int>(i), ch));
  return out;
}

Mask Dataset::gather_masks(const std::vector<int>& idx) const {
  const int S = config.image_size;
  Mask out(static_cast<int>(idx.size()), S, S);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(masks.data.data() + static_cast<Eigen::Index>(idx[i]) * S * S, S * S,
                out.data.data() + static_cast<Eigen::Index>(i) * S * S);
  return out;
}

void Dataset::save(const std::string& path) const {
  Container c;
  c.set_meta("type", "dataset");
  std::ostringstream cfg;
  cfg << config.image_size << " " << config.num_classes << " " << config.min_shapes
      << " " << config.max_shapes << " " << config.noise << " " << config.meta_train
      << " " << config.meta_val << " " << config.holdout << " " << config.seed;
  c.set_meta("config", cfg.str());
  c.put("images", {total(), 3, config.image_size, config.image_size},
        images.data.data(), static_cast<std::size_t>(images.size()));
  c.put("masks", {total(), config.image_size, config.image_size},
        masks.data.data(), static_cast<std::size_t>(masks.data.size()));
  c.save(path);
}

Dataset Dataset::load(const std::string& path) {
  Container c = Container::load(path);
  if (!c.has_meta("type") || c.meta("type") != "dataset")
    throw CheckpointError(path + ": not a dataset file");
  SyntheticTaskConfig cfg;
  std::istringstream is(c.meta("config"));
  is >> cfg.image_size >> cfg.num_classes >> cfg.min_shapes >> cfg.max_shapes >>
      cfg.noise >> cfg.meta_train >> cfg.meta_val >> cfg.holdout >> cfg.seed;
  Dataset data;
  data.config = cfg;
  const int total = cfg.meta_train + cfg.meta_val + cfg.holdout;
  data.images = Tensor<float>(total, 3, cfg.image_size, cfg.image_size);
  data.masks = Mask(total, cfg.image_size, cfg.image_size);
  auto imgs = c.get<float>("images");
  auto msks = c.get<int>("masks");
  std::copy(imgs.begin(), imgs.end(), data.images.data.data());
  std::copy(msks.begin(), msks.end(), data.masks.data.data());
  return data;
}

double trivial_predictor_reward(const Dataset& data, Split split) {
  const int C = data.config.num_classes;
  std::vector<std::int64_t> freq(C, 0);
  const int S = data.config.image_size;
  for (int item = split.begin; item < split.end; ++item)
    for (int i = 0; i < S * S; ++i)
      ++freq[data.masks.data[static_cast<Eigen::Index>(item) * S * S + i]];

  double best = 0;
  for (int pred = 1; pred < C; ++pred) {
    ConfusionMatrix cm(C);
    for (int g = 0; g < C; ++g) cm.add(g, pred, freq[g]);
    best = std::max(best, compute_reward(cm).reward);
  }
  return best;
}

// --- EncoderStub -------------------------------------------------------------

EncoderStub::EncoderStub() {
  int cin = 3;
  for (int s = 0; s < 4; ++s) {
    const int cout = kChannels[s];
    const std::string p = "enc" + std::to_string(s);
    conv_w_[s] = store_.add(p + ".w", {cout, cin, 3, 3});
    bn_g_[s] = store_.add(p + ".bn.g", {cout});
    bn_b_[s] = store_.add(p + ".bn.b", {cout});
    bn_rm_[s] = store_.add(p + ".bn.rm", {cout}, false);
    bn_rv_[s] = store_.add(p + ".bn.rv", {cout}, false);
    cin = cout;
  }
}

void EncoderStub::init(Rng& rng) {
  int cin = 3;
  for (int s = 0; s < 4; ++s) {
    const int cout = kChannels[s];
    auto& w = store_[conv_w_[s]];
    const float limit = std::sqrt(6.0f / static_cast<float>((cin + cout) * 9));
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w.value[i] = static_cast<float>(rng.uniform(-limit, limit));
    store_[bn_g_[s]].value.setOnes();
    store_[bn_rv_[s]].value.setOnes();
    cin = cout;
  }
}

std::array<FeatureDesc, 4> EncoderStub::feature_descs(int image_size) const {
  std::array<FeatureDesc, 4> descs;
  int size = image_size, stride = 1;
  for (int s = 0; s < 4; ++s) {
    size /= 2;
    stride *= 2;
    descs[s] = {kChannels[s], size, size, stride};
  }
  return descs;
}

std::array<Tensor<float>, 4> EncoderStub::forward(const Tensor<float>& images,
                                                  bool training, Cache* cache) {
  const ConvSpec spec{3, 1, 2};
  std::array<Tensor<float>, 4> feats;
  Tensor<float> x = images;
  for (int s = 0; s < 4; ++s) {
    if (cache) cache->inputs[s] = x;
    Tensor<float> t = conv2d_forward<float>(x, store_[conv_w_[s]].value, nullptr,
                                            kChannels[s], spec);
    t = batchnorm_forward<float>(t, store_[bn_g_[s]].value, store_[bn_b_[s]].value,
                                 store_[bn_rm_[s]].value, store_[bn_rv_[s]].value,
                                 training && !bn_frozen_,
                                 cache ? &cache->bn[s] : nullptr);
    t = relu_forward(t);
    if (cache) cache->outputs[s] = t;
    feats[s] = t;
    x = std::move(t);
  }
  return feats;
}

void EncoderStub::backward(const Cache& cache,
                           std::array<Tensor<float>, 4> dfeatures) {
  const ConvSpec spec{3, 1, 2};
  Tensor<float> carry;
  for (int s = 3; s >= 0; --s) {
    Tensor<float> g = std::move(dfeatures[s]);
    if (carry.size() > 0) g.data += carry.data;
    g = relu_backward(cache.outputs[s], g);
    g = batchnorm_backward<float>(cache.bn[s], g, store_[bn_g_[s]].value,
                                  store_[bn_g_[s]].grad, store_[bn_b_[s]].grad);
    carry = conv2d_backward<float>(cache.inputs[s], store_[conv_w_[s]].value, g,
                                   spec, store_[conv_w_[s]].grad, nullptr);
  }
}

std::uint64_t EncoderStub::fingerprint() const { return params_fingerprint(store_); }

EncoderStub build_encoder_stub(const Dataset& data, std::uint64_t seed,
                               int prefit_epochs, int batch_size) {
  EncoderStub stub;
  Rng rng(derive_seed(seed, 0x57b));
  stub.init(rng);

  // throwaway per-stage linear heads for the pre-fit
  const int C = data.config.num_classes;
  ParamStore<float> heads;
  std::array<int, 4> head_w, head_b;
  for (int s = 0; s < 4; ++s) {
    head_w[s] = heads.add("head" + std::to_string(s) + ".w",
                          {C, EncoderStub::kChannels[s], 1, 1});
    head_b[s] = heads.add("head" + std::to_string(s) + ".b", {C});
    auto& w = heads[head_w[s]];
    const float limit = std::sqrt(6.0f / static_cast<float>(EncoderStub::kChannels[s] + C));
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w.value[i] = static_cast<float>(rng.uniform(-limit, limit));
  }

  Adam<float> opt_enc{3e-3f};
  Adam<float> opt_heads{3e-3f};
  const Split train = data.meta_train();
  const int S = data.config.image_size;
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), train.begin);

  for (int epoch = 0; epoch < prefit_epochs; ++epoch) {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(i + 1)]);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::vector<int> idx(order.begin() + start,
                           order.begin() + std::min(order.size(), start + batch_size));
      Tensor<float> images = data.gather_images(idx);
      Mask targets = data.gather_masks(idx);

      EncoderStub::Cache cache;
      auto feats = stub.forward(images, true, &cache);

      // logits = sum of upsampled per-stage linear heads
      Tensor<float> logits(images.n, C, S, S);
      std::array<Tensor<float>, 4> head_out;
      for (int s = 0; s < 4; ++s) {
        head_out[s] = conv2d_forward<float>(feats[s], heads[head_w[s]].value,
                                            heads[head_b[s]].value.data(), C, {1, 1, 1});
        logits.data += bilinear_resize_forward(head_out[s], S, S).data;
      }
      auto ce = softmax_cross_entropy(logits, targets);

      stub.params().zero_grad();
      heads.zero_grad();
      std::array<Tensor<float>, 4> dfeats;
      for (int s = 0; s < 4; ++s) {
        Tensor<float> dhead = bilinear_resize_backward(ce.dlogits, feats[s].h, feats[s].w);
        dfeats[s] = conv2d_backward<float>(feats[s], heads[head_w[s]].value, dhead,
                                           {1, 1, 1}, heads[head_w[s]].grad,
                                           heads[head_b[s]].grad.data());
      }
      stub.backward(cache, std::move(dfeats));
      opt_enc.step(stub.params());
      opt_heads.step(heads);
    }
  }
  return stub;
}

// --- FeatureCache ------------------------------------------------------------

std::array<Tensor<float>, 4> FeatureCache::gather(const std::vector<int>& idx) const {
  std::array<Tensor<float>, 4> out;
  for (int s = 0; s < 4; ++s) {
    const auto& f = features[s];
    out[s] = Tensor<float>(static_cast<int>(idx.size()), f.c, f.h, f.w);
    const Eigen::Index item_size = static_cast<Eigen::Index>(f.c) * f.h * f.w;
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(f.data.data() + idx[i] * item_size, item_size,
                  out[s].data.data() + static_cast<Eigen::Index>(i) * item_size);
  }
  return out;
}

void FeatureCache::save(const std::string& path) const {
  Container c;
  c.set_meta("type", "feature-cache");
  c.set_meta("stub_fingerprint", std::to_string(stub_fingerprint));
  for (int s = 0; s < 4; ++s) {
    const auto& f = features[s];
    c.put("stage" + std::to_string(s), {f.n, f.c, f.h, f.w}, f.data.data(),
          static_cast<std::size_t>(f.size()));
  }
  c.save(path);
}

FeatureCache FeatureCache::load(const std::string& path,
                                std::uint64_t expected_fingerprint) {
  Container c = Container::load(path);
  if (!c.has_meta("type") || c.meta("type") != "feature-cache")
    throw CheckpointError(path + ": not a feature cache");
  FeatureCache cache;
  cache.stub_fingerprint = std::stoull(c.meta("stub_fingerprint"));
  if (cache.stub_fingerprint != expected_fingerprint)
    throw CheckpointError(path + ": cache was built from a different encoder stub");
  for (int s = 0; s < 4; ++s) {
    const auto& e = c.entry("stage" + std::to_string(s));
    Tensor<float> f(static_cast<int>(e.shape[0]), static_cast<int>(e.shape[1]),
                    static_cast<int>(e.shape[2]), static_cast<int>(e.shape[3]));
    auto v = c.get<float>(e.name);
    std::copy(v.begin(), v.end(), f.data.data());
    cache.features[s] = std::move(f);
  }
  return cache;
}

FeatureCache precompute_encoder(const Dataset& data, EncoderStub& stub) {
  FeatureCache cache;
  cache.stub_fingerprint = stub.fingerprint();
  const int total = data.total();
  const int batch = 32;
  const auto descs = stub.feature_descs(data.config.image_size);
  for (int s = 0; s < 4; ++s)
    cache.features[s] = Tensor<float>(total, descs[s].channels, descs[s].height,
                                      descs[s].width);
  for (int start = 0; start < total; start += batch) {
    std::vector<int> idx;
    for (int i = start; i < std::min(total, start + batch); ++i) idx.push_back(i);
    auto feats = stub.forward(data.gather_images(idx), false, nullptr);
    for (int s = 0; s < 4; ++s) {
      const Eigen::Index item_size =
          static_cast<Eigen::Index>(descs[s].channels) * descs[s].height * descs[s].width;
      std::copy_n(feats[s].data.data(), item_size * static_cast<Eigen::Index>(idx.size()),
                  cache.features[s].data.data() + start * item_size);
    }
  }
  return cache;
}

// --- Teacher -----------------------------------------------------------------

GraphIR teacher_graph(const std::array<FeatureDesc, 4>& sources, int channels,
                      int num_classes) {
  GraphIR ir;
  ir.source_descs = sources;
  ir.num_classes = num_classes;
  ir.adapt_channels = channels;
  auto add = [&](NodeKind kind, OpCode op, std::vector<int> inputs, FeatureDesc desc) {
    GraphNode n;
    n.id = static_cast<int>(ir.nodes.size());
    n.kind = kind;
    n.op = op;
    n.inputs = std::move(inputs);
    n.out_desc = desc;
    ir.nodes.push_back(std::move(n));
    return n.id;
  };

  const FeatureDesc target{channels, sources[0].height, sources[0].width, sources[0].stride};
  std::vector<int> aligned;
  for (int s = 0; s < 4; ++s) {
    int src = add(NodeKind::Source, OpCode::Conv1x1, {}, sources[s]);
    FeatureDesc adapted = sources[s];
    adapted.channels = channels;
    int a = add(NodeKind::Adapt1x1, OpCode::Conv1x1, {src}, adapted);
    if (adapted.height != target.height || adapted.width != target.width)
      a = add(NodeKind::Upsample, OpCode::Conv1x1, {a}, target);
    aligned.push_back(a);
  }
  int sum = add(NodeKind::Sum, OpCode::Conv1x1, aligned, target);
  int conv = add(NodeKind::CellOp, OpCode::Conv3x3, {sum}, target);
  conv = add(NodeKind::CellOp, OpCode::Conv3x3, {conv}, target);
  FeatureDesc cls = target;
  cls.channels = num_classes;
  ir.main_output = add(NodeKind::Classifier, OpCode::Conv1x1, {conv}, cls);
  return ir;
}

namespace {

double eval_reward(DecoderNet<float>& net, const Dataset& data,
                   const FeatureCache& cache, Split split, int batch) {
  ConfusionMatrix cm(data.config.num_classes);
  const int S = data.config.image_size;
  for (int start = split.begin; start < split.end; start += batch) {
    std::vector<int> idx;
    for (int i = start; i < std::min(split.end, start + batch); ++i) idx.push_back(i);
    auto out = net.forward(cache.gather(idx), false);
    Tensor<float> logits = bilinear_resize_forward(out.main, S, S);
    Mask pred(logits.n, S, S);
    for (int item = 0; item < logits.n; ++item)
      for (int i = 0; i < S * S; ++i) {
        int best = 0;
        float bestv = logits.plane(item, 0)[i];
        for (int ch = 1; ch < logits.c; ++ch)
          if (logits.plane(item, ch)[i] > bestv) {
            bestv = logits.plane(item, ch)[i];
            best = ch;
          }
        pred.data[static_cast<Eigen::Index>(item) * S * S + i] = best;
      }
    cm.add_mask(data.gather_masks(idx), pred);
  }
  return compute_reward(cm).reward;
}

}  // namespace

Teacher build_teacher(const Dataset& data, const FeatureCache& cache,
                      std::uint64_t seed, double threshold, int max_epochs,
                      int batch_size) {
  const auto descs = [&] {
    std::array<FeatureDesc, 4> d;
    for (int s = 0; s < 4; ++s) {
      const auto& f = cache.features[s];
      d[s] = {f.c, f.h, f.w, data.config.image_size / f.h};
    }
    return d;
  }();

  DecoderNet<float> net(teacher_graph(descs, 32, data.config.num_classes));
  Rng rng(derive_seed(seed, 0x7ea));
  net.init_xavier(rng);

  Adam<float> opt{3e-3f};
  const Split train = data.meta_train();
  const int S = data.config.image_size;
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), train.begin);
  LossSpec<float> spec;
  spec.kd_coeff = 0;

  Teacher teacher{std::move(net), {}, 0, 0};
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(i + 1)]);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::vector<int> idx(order.begin() + start,
                           order.begin() + std::min(order.size(), start + batch_size));
      auto out = teacher.net.forward(cache.gather(idx), true);
      auto loss = segmentation_loss<float>(out.main, {}, data.gather_masks(idx),
                                           nullptr, spec);
      teacher.net.params().zero_grad();
      teacher.net.backward(loss.dmain, {});
      opt.step(teacher.net.params());
    }
    teacher.epochs_trained = epoch + 1;
    teacher.holdout_reward = eval_reward(teacher.net, data, cache, data.holdout(), batch_size);
    if (teacher.holdout_reward >= threshold) break;
  }
  if (teacher.holdout_reward < threshold) {
    std::ostringstream os;
    os << "teacher failed to reach holdout reward " << threshold << ": got "
       << teacher.holdout_reward << " after " << teacher.epochs_trained
       << " epochs (meta-train size " << train.size() << ")";
    throw std::runtime_error(os.str());
  }

  // cache meta-train logits at mask resolution
  teacher.logits = Tensor<float>(train.size(), data.config.num_classes, S, S);
  const Eigen::Index item_size =
      static_cast<Eigen::Index>(data.config.num_classes) * S * S;
  for (int start = train.begin; start < train.end; start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(train.end, start + batch_size); ++i) idx.push_back(i);
    auto out = teacher.net.forward(cache.gather(idx), false);
    Tensor<float> up = bilinear_resize_forward(out.main, S, S);
    std::copy_n(up.data.data(), item_size * static_cast<Eigen::Index>(idx.size()),
                teacher.logits.data.data() + (start - train.begin) * item_size);
  }
  return teacher;
}

// --- TaskContext ---------------------------------------------------------------

namespace {

std::uint64_t config_fingerprint(const SyntheticTaskConfig& c) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  mix(c.image_size);
  mix(c.num_classes);
  mix(c.min_shapes);
  mix(c.max_shapes);
  mix(static_cast<std::uint64_t>(c.noise * 1e6));
  mix(c.meta_train);
  mix(c.meta_val);
  mix(c.holdout);
  mix(c.seed);
  return h;
}

}  // namespace

TaskContext build_task_context(const SyntheticTaskConfig& config,
                               const std::string& work_dir, bool verbose) {
  namespace fs = std::filesystem;
  const std::uint64_t fp = config_fingerprint(config);
  const std::string tag = std::to_string(fp);
  auto path_of = [&](const std::string& kind) {
    return work_dir + "/" + kind + "_" + tag + ".bin";
  };
  const bool use_disk = !work_dir.empty();
  if (use_disk) fs::create_directories(work_dir);

  TaskContext ctx;
  ctx.task = config;

  if (use_disk && fs::exists(path_of("dataset"))) {
    ctx.data = Dataset::load(path_of("dataset"));
  } else {
    if (verbose) std::cerr << "[task] generating dataset\n";
    ctx.data = generate(config);
    if (use_disk) ctx.data.save(path_of("dataset"));
  }

  bool stub_loaded = false;
  if (use_disk && fs::exists(path_of("stub"))) {
    Container c = Container::load(path_of("stub"));
    load_params(c, "enc/", ctx.stub.params());
    stub_loaded = true;
  }
  if (!stub_loaded) {
    if (verbose) std::cerr << "[task] pre-fitting encoder stub\n";
    ctx.stub = build_encoder_stub(ctx.data, config.seed);
    if (use_disk) {
      Container c;
      c.set_meta("type", "encoder-stub");
      c.set_meta("fingerprint", std::to_string(ctx.stub.fingerprint()));
      save_params(c, "enc/", ctx.stub.params());
      c.save(path_of("stub"));
    }
  }

  bool features_loaded = false;
  if (use_disk && fs::exists(path_of("features"))) {
    try {
      ctx.features = FeatureCache::load(path_of("features"), ctx.stub.fingerprint());
      features_loaded = true;
    } catch (const CheckpointError&) {
      features_loaded = false;  // stale cache, rebuild
    }
  }
  if (!features_loaded) {
    if (verbose) std::cerr << "[task] precomputing encoder features\n";
    ctx.features = precompute_encoder(ctx.data, ctx.stub);
    if (use_disk) ctx.features.save(path_of("features"));
  }

  bool teacher_loaded = false;
  if (use_disk && fs::exists(path_of("teacher"))) {
    Container c = Container::load(path_of("teacher"));
    if (c.has_meta("stub_fingerprint") &&
        std::stoull(c.meta("stub_fingerprint")) == ctx.stub.fingerprint()) {
      const auto& e = c.entry("logits");
      ctx.teacher_logits = Tensor<float>(
          static_cast<int>(e.shape[0]), static_cast<int>(e.shape[1]),
          static_cast<int>(e.shape[2]), static_cast<int>(e.shape[3]));
      auto v = c.get<float>("logits");
      std::copy(v.begin(), v.end(), ctx.teacher_logits.data.data());
      ctx.teacher_holdout_reward = std::stod(c.meta("holdout_reward"));
      teacher_loaded = true;
    }
  }
  if (!teacher_loaded) {
    if (verbose) std::cerr << "[task] training the distillation teacher\n";
    Teacher teacher = build_teacher(ctx.data, ctx.features, config.seed);
    ctx.teacher_logits = std::move(teacher.logits);
    ctx.teacher_holdout_reward = teacher.holdout_reward;
    if (use_disk) {
      Container c;
      c.set_meta("type", "teacher");
      c.set_meta("stub_fingerprint", std::to_string(ctx.stub.fingerprint()));
      c.set_meta("holdout_reward", format_double(ctx.teacher_holdout_reward));
      const auto& t = ctx.teacher_logits;
      c.put("logits", {t.n, t.c, t.h, t.w}, t.data.data(),
            static_cast<std::size_t>(t.size()));
      save_params(c, "dec/", teacher.net.params());
      c.save(path_of("teacher"));
    }
  }

  ctx.source_descs = ctx.stub.feature_descs(config.image_size);
  if (verbose)
    std::cerr << "[task] ready (teacher holdout reward "
              << ctx.teacher_holdout_reward << ")\n";
  return ctx;
}

}  // namespace segnas
