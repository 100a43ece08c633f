#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "segnas/graph.hpp"
#include "segnas/net.hpp"
#include "segnas/nn.hpp"
#include "segnas/params.hpp"
#include "segnas/tensor.hpp"

namespace segnas {

/// Desk-scale stand-in for the segmentation datasets: coloured geometric
/// shapes (disk, rectangle, triangle, ring) on a noisy background, one class
/// per shape kind plus background.
struct SyntheticTaskConfig {
  int image_size = 48;  // must be divisible by 16
  int num_classes = 5;  // including background (class 0)
  int min_shapes = 1;
  int max_shapes = 4;
  double noise = 0.05;
  int meta_train = 288;
  int meta_val = 32;
  int holdout = 64;
  std::uint64_t seed = 0;
};

struct Split {
  int begin = 0, end = 0;
  int size() const { return end - begin; }
};

struct Dataset {
  SyntheticTaskConfig config;
  Tensor<float> images;  // [N,3,S,S]
  Mask masks;            // [N,S,S]

  int total() const { return images.n; }
  Split meta_train() const { return {0, config.meta_train}; }
  Split meta_val() const { return {config.meta_train, config.meta_train + config.meta_val}; }
  Split holdout() const {
    return {config.meta_train + config.meta_val, total()};
  }

  Tensor<float> gather_images(const std::vector<int>& idx) const;
  Mask gather_masks(const std::vector<int>& idx) const;

  void save(const std::string& path) const;
  static Dataset load(const std::string& path);
};

Dataset generate(const SyntheticTaskConfig& config);

/// Reward of the constant predictor that labels every pixel with one class,
/// maximised over classes. Lower bound any trained model should clear.
double trivial_predictor_reward(const Dataset& data, Split split);

// --- Encoder stub ----------------------------------------------------------

/// Four stride-2 conv/BN/ReLU stages emitting features at strides 2,4,8,16
/// with channels (8,16,24,32). Frozen after a brief supervised pre-fit.
class EncoderStub {
 public:
  static constexpr std::array<int, 4> kChannels{8, 16, 24, 32};

  struct Cache {
    std::array<Tensor<float>, 4> inputs;
    std::array<BatchNormCache<float>, 4> bn;
    std::array<Tensor<float>, 4> outputs;
  };

  EncoderStub();

  ParamStore<float>& params() { return store_; }
  const ParamStore<float>& params() const { return store_; }

  void init(Rng& rng);
  std::array<FeatureDesc, 4> feature_descs(int image_size) const;

  std::array<Tensor<float>, 4> forward(const Tensor<float>& images, bool training,
                                       Cache* cache);
  /// Accumulates parameter gradients; input gradients are discarded.
  void backward(const Cache& cache, std::array<Tensor<float>, 4> dfeatures);

  /// When frozen, batch norm keeps running statistics even in training mode.
  void set_bn_frozen(bool frozen) { bn_frozen_ = frozen; }

  std::uint64_t fingerprint() const;

 private:
  ParamStore<float> store_;
  std::array<int, 4> conv_w_, bn_g_, bn_b_, bn_rm_, bn_rv_;
  bool bn_frozen_ = false;
};

/// Random init plus a brief supervised pre-fit with throwaway linear heads,
/// trained on meta-train; heads are dropped afterwards.
EncoderStub build_encoder_stub(const Dataset& data, std::uint64_t seed,
                               int prefit_epochs = 12, int batch_size = 16);

// --- Caches ----------------------------------------------------------------

/// Eval-mode encoder outputs for every dataset image, keyed to the stub.
struct FeatureCache {
  std::array<Tensor<float>, 4> features;  // [N, C_s, H_s, W_s]
  std::uint64_t stub_fingerprint = 0;

  std::array<Tensor<float>, 4> gather(const std::vector<int>& idx) const;

  void save(const std::string& path) const;
  static FeatureCache load(const std::string& path, std::uint64_t expected_fingerprint);
};

FeatureCache precompute_encoder(const Dataset& data, EncoderStub& stub);

// --- Teacher ---------------------------------------------------------------

/// Fixed FCN-style decoder over the frozen stub features.
GraphIR teacher_graph(const std::array<FeatureDesc, 4>& sources, int channels,
                      int num_classes);

struct Teacher {
  DecoderNet<float> net;
  Tensor<float> logits;  // meta-train logits at mask resolution
  double holdout_reward = 0;
  int epochs_trained = 0;
};

/// Trains the fixed decoder on meta-train until the holdout reward clears
/// `threshold`; throws with diagnostics when max_epochs is exhausted first.
Teacher build_teacher(const Dataset& data, const FeatureCache& cache,
                      std::uint64_t seed, double threshold = 0.75,
                      int max_epochs = 120, int batch_size = 16);

// --- Bundled context -------------------------------------------------------

struct TaskContext {
  SyntheticTaskConfig task;
  Dataset data;
  EncoderStub stub;
  FeatureCache features;
  Tensor<float> teacher_logits;
  double teacher_holdout_reward = 0;
  std::array<FeatureDesc, 4> source_descs;
};

/// Builds (or loads from `work_dir`, when given) the dataset, pre-fit stub,
/// feature cache and teacher.
TaskContext build_task_context(const SyntheticTaskConfig& config,
                               const std::string& work_dir = "",
                               bool verbose = false);

}  // namespace segnas
