#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lsc/layers.hpp"
#include "lsc/ops.hpp"

// The two texture classifiers: a pixel-domain ResNet-50 variant whose stem is
// three 3x3 convs (64, 64, 128; first at stride 2), and the compressed-domain
// cResNet-39, which drops the stem and conv_2x stage and instead feeds the
// quantized latent and its scale map through two independent stride-1
// bottleneck stems whose outputs concatenate to 256 channels.
namespace lsc::cls {

// One residual bottleneck: 1x1,w1 -> 3x3,w2 (carries the stride) -> 1x1,w3,
// with a projection shortcut whenever shape changes.
struct BottleneckSpec {
  int w1 = 0, w2 = 0, w3 = 0;
  int stride = 1;
  bool project = false;
};

struct ClassifierConfig {
  enum class Variant { resnet50, cresnet39 };
  Variant variant = Variant::resnet50;
  int num_classes = 23;
  // 3 for the pixel variant; latent channel count per stem for cresnet39.
  int input_channels = 3;

  void validate() const;  // throws ConfigError
};

struct Bottleneck {
  BottleneckSpec spec;
  nn::Conv2dLayer c1, c2, c3, proj;
  nn::BatchNormLayer b1, b2, b3, bproj;

  Bottleneck() = default;
  Bottleneck(const std::string& name, int c_in, const BottleneckSpec& spec, Rng& rng);
  ad::Node* forward(ad::Tape& t, ad::Node* x, bool training);
  void collect(std::vector<ad::Param*>& out);
};

class Classifier {
 public:
  Classifier(const ClassifierConfig& cfg, uint64_t seed);
  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;
  Classifier(Classifier&&) = default;
  Classifier& operator=(Classifier&&) = default;

  const ClassifierConfig& config() const { return cfg_; }
  std::vector<ad::Param*> params();

  // Pixel variant: image [N,3,H,W] -> logits [N,num_classes].
  ad::Node* forward(ad::Tape& t, ad::Node* image, bool training);
  // Compressed variant: y_hat and sigma_hat [N,C,h,w] -> logits. sigma_hat is
  // conditioned as standardized log(sigma) using the stored per-channel stats.
  ad::Node* forward(ad::Tape& t, ad::Node* y_hat, ad::Node* sigma_hat, bool training);

  // Training-set statistics of log(sigma_hat) per channel; non-trainable
  // parameters so checkpoints carry them.
  void set_sigma_stats(const std::vector<double>& mean, const std::vector<double>& stddev);

  // Weighted-layer count per stage (projection shortcuts not counted),
  // in network order; the census test pins these against the architecture.
  std::vector<std::pair<std::string, int>> layer_census() const;

 private:
  ClassifierConfig cfg_;
  // resnet50 stem
  nn::Conv2dLayer stem_conv_[3];
  nn::BatchNormLayer stem_bn_[3];
  // cresnet39 stems
  Bottleneck stem_latent_, stem_sigma_;
  ad::Param sigma_scale_, sigma_shift_;  // log-sigma standardization
  // shared trunk
  std::vector<Bottleneck> conv2x_, conv3x_, conv4x_, conv5x_;
  nn::LinearLayer fc_;
};

// Ranked class indices per row: descending logit, ties by ascending index.
std::vector<std::vector<int>> predict_topk(const Tensor& logits, int k);

// One training or evaluation unit. sigma stays empty for the pixel variant.
struct Batch {
  Tensor x;
  Tensor sigma;
  std::vector<int> labels;
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_top1 = 0.0, train_top5 = 0.0;
  double val_top1 = 0.0, val_top5 = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct ClassifierTrainOptions {
  int epochs = 30;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  // epoch -> divisor; defaults divide by 10 at epochs 10 and 20.
  std::vector<std::pair<int, double>> lr_schedule = {{10, 10.0}, {20, 10.0}};
  uint64_t seed = 1;
  // Stop once validation Top-1 reaches this percentage (negative disables).
  double stop_at_val_top1 = -1.0;
  std::function<void(const EpochLog&)> on_epoch;
};

struct ClassifierTrainResult {
  std::vector<EpochLog> epochs;
  double best_val_top1 = 0.0;
  int best_epoch = 0;  // 0 = never validated
};

// Cross-entropy SGD training. train_batches(epoch) supplies that epoch's
// (possibly re-augmented) batches; epoch is 0-based so implementations can
// derive per-epoch augmentation streams. The model is left holding the
// parameters of its best validation epoch.
ClassifierTrainResult train_classifier(
    Classifier& model, const std::function<std::vector<Batch>(int)>& train_batches,
    const std::vector<Batch>& val_batches, const ClassifierTrainOptions& opts);

// Evaluation helper: ranked top-k indices for every sample in the batches.
std::vector<std::vector<int>> classify_all(Classifier& model, const std::vector<Batch>& batches,
                                           int k);

// Checkpoints carry variant, class count, channels, and sigma stats.
void save_classifier(const std::string& path, Classifier& model);
Classifier load_classifier(const std::string& path);

}  // namespace lsc::cls
