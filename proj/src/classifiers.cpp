#include "lsc/classifiers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "lsc/checkpoint.hpp"
#include "lsc/metrics.hpp"
#include "lsc/optimizer.hpp"

namespace lsc::cls {

namespace {
constexpr double kReluGain = 1.4142135623730951;  // sqrt(2) fan-in gain

std::string variant_name(ClassifierConfig::Variant v) {
  return v == ClassifierConfig::Variant::resnet50 ? "resnet50" : "cresnet39";
}

std::vector<Bottleneck> make_stage(const std::string& prefix, int c_in, int w1, int w3,
                                   int count, int first_stride, Rng& rng) {
  std::vector<Bottleneck> stage;
  stage.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    BottleneckSpec spec;
    spec.w1 = w1;
    spec.w2 = w1;
    spec.w3 = w3;
    spec.stride = i == 0 ? first_stride : 1;
    spec.project = i == 0 && (first_stride != 1 || c_in != w3);
    stage.emplace_back(prefix + ".block" + std::to_string(i + 1), i == 0 ? c_in : w3, spec,
                       rng);
  }
  return stage;
}
}  // namespace

void ClassifierConfig::validate() const {
  if (num_classes < 2) throw ConfigError("classifier needs at least two classes");
  if (variant == Variant::resnet50 && input_channels != 3)
    throw ConfigError("pixel classifier consumes RGB input; input_channels must be 3");
  if (input_channels < 1) throw ConfigError("input_channels must be positive");
}

Bottleneck::Bottleneck(const std::string& name, int c_in, const BottleneckSpec& s, Rng& rng)
    : spec(s) {
  if (s.stride != 1 && s.stride != 2)
    throw ConfigError("bottleneck stride must be 1 or 2, got " + std::to_string(s.stride));
  if (s.stride == 2 && !s.project)
    throw ConfigError("stride-2 bottlenecks must project their shortcut");
  if (!s.project && c_in != s.w3)
    throw ConfigError("identity shortcut requires matching channels (" +
                      std::to_string(c_in) + " vs " + std::to_string(s.w3) + ")");
  c1 = nn::Conv2dLayer(name + ".conv1", c_in, s.w1, 1, 1, 0, rng, kReluGain, false);
  b1 = nn::BatchNormLayer(name + ".bn1", s.w1);
  c2 = nn::Conv2dLayer(name + ".conv2", s.w1, s.w2, 3, s.stride, 1, rng, kReluGain, false);
  b2 = nn::BatchNormLayer(name + ".bn2", s.w2);
  c3 = nn::Conv2dLayer(name + ".conv3", s.w2, s.w3, 1, 1, 0, rng, kReluGain, false);
  b3 = nn::BatchNormLayer(name + ".bn3", s.w3);
  if (s.project) {
    proj = nn::Conv2dLayer(name + ".proj", c_in, s.w3, 1, s.stride, 0, rng, kReluGain, false);
    bproj = nn::BatchNormLayer(name + ".bn_proj", s.w3);
  }
}

ad::Node* Bottleneck::forward(ad::Tape& t, ad::Node* x, bool training) {
  ad::Node* h = ops::relu(t, b1.forward(t, c1.forward(t, x), training));
  h = ops::relu(t, b2.forward(t, c2.forward(t, h), training));
  h = b3.forward(t, c3.forward(t, h), training);
  ad::Node* shortcut = spec.project ? bproj.forward(t, proj.forward(t, x), training) : x;
  return ops::relu(t, ops::add(t, h, shortcut));
}

void Bottleneck::collect(std::vector<ad::Param*>& out) {
  c1.collect(out);
  b1.collect(out);
  c2.collect(out);
  b2.collect(out);
  c3.collect(out);
  b3.collect(out);
  if (spec.project) {
    proj.collect(out);
    bproj.collect(out);
  }
}

Classifier::Classifier(const ClassifierConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng::derive(seed, 0xC1A55ull);
  if (cfg_.variant == ClassifierConfig::Variant::resnet50) {
    const int stem_w[3] = {64, 64, 128};
    int c_in = 3;
    for (int i = 0; i < 3; ++i) {
      stem_conv_[i] = nn::Conv2dLayer("stem.conv" + std::to_string(i + 1), c_in, stem_w[i], 3,
                                      i == 0 ? 2 : 1, 1, rng, kReluGain, false);
      stem_bn_[i] = nn::BatchNormLayer("stem.bn" + std::to_string(i + 1), stem_w[i]);
      c_in = stem_w[i];
    }
    conv2x_ = make_stage("conv_2x", 128, 64, 256, 3, 1, rng);
    conv3x_ = make_stage("conv_3x", 256, 128, 512, 4, 2, rng);
    conv4x_ = make_stage("conv_4x", 512, 256, 1024, 6, 2, rng);
    conv5x_ = make_stage("conv_5x", 1024, 512, 2048, 3, 2, rng);
  } else {
    BottleneckSpec stem_spec;
    stem_spec.w1 = 32;
    stem_spec.w2 = 32;
    stem_spec.w3 = 128;
    stem_spec.stride = 1;
    stem_spec.project = true;
    stem_latent_ = Bottleneck("stem_latent", cfg_.input_channels, stem_spec, rng);
    stem_sigma_ = Bottleneck("stem_sigma", cfg_.input_channels, stem_spec, rng);
    sigma_scale_ = ad::Param("sigma_stats.scale", Tensor({cfg_.input_channels}, 1.0f));
    sigma_scale_.trainable = false;
    sigma_shift_ = ad::Param("sigma_stats.shift", Tensor({cfg_.input_channels}));
    sigma_shift_.trainable = false;
    conv3x_ = make_stage("conv_3x", 256, 128, 512, 4, 2, rng);
    conv4x_ = make_stage("conv_4x", 512, 256, 1024, 6, 2, rng);
    conv5x_ = make_stage("conv_5x", 1024, 512, 2048, 3, 2, rng);
  }
  fc_ = nn::LinearLayer("fc", 2048, cfg_.num_classes, rng);
}

std::vector<ad::Param*> Classifier::params() {
  std::vector<ad::Param*> out;
  if (cfg_.variant == ClassifierConfig::Variant::resnet50) {
    for (int i = 0; i < 3; ++i) {
      stem_conv_[i].collect(out);
      stem_bn_[i].collect(out);
    }
    for (auto& b : conv2x_) b.collect(out);
  } else {
    stem_latent_.collect(out);
    stem_sigma_.collect(out);
    out.push_back(&sigma_scale_);
    out.push_back(&sigma_shift_);
  }
  for (auto& b : conv3x_) b.collect(out);
  for (auto& b : conv4x_) b.collect(out);
  for (auto& b : conv5x_) b.collect(out);
  fc_.collect(out);
  return out;
}

ad::Node* Classifier::forward(ad::Tape& t, ad::Node* image, bool training) {
  if (cfg_.variant != ClassifierConfig::Variant::resnet50)
    throw ConfigError("this classifier consumes latent+sigma inputs, not images");
  const auto& xs = image->val().shape;
  if (xs.size() != 4 || xs[1] != 3)
    throw ShapeError("pixel classifier expects [N,3,H,W], got " + image->val().shape_str());
  ad::Node* h = image;
  for (int i = 0; i < 3; ++i)
    h = ops::relu(t, stem_bn_[i].forward(t, stem_conv_[i].forward(t, h), training));
  h = ops::max_pool_3x3s2(t, h);
  for (auto& b : conv2x_) h = b.forward(t, h, training);
  for (auto& b : conv3x_) h = b.forward(t, h, training);
  for (auto& b : conv4x_) h = b.forward(t, h, training);
  for (auto& b : conv5x_) h = b.forward(t, h, training);
  return fc_.forward(t, ops::global_avg_pool(t, h));
}

ad::Node* Classifier::forward(ad::Tape& t, ad::Node* y_hat, ad::Node* sigma_hat,
                              bool training) {
  if (cfg_.variant != ClassifierConfig::Variant::cresnet39)
    throw ConfigError("this classifier consumes images, not latent+sigma inputs");
  if (!sigma_hat) throw ConfigError("compressed-domain classifier requires a sigma input");
  require_same_shape(y_hat->val(), sigma_hat->val(), "classifier latent inputs");
  const auto& xs = y_hat->val().shape;
  if (xs.size() != 4 || xs[1] != cfg_.input_channels)
    throw ShapeError("compressed classifier expects [N," + std::to_string(cfg_.input_channels) +
                     ",h,w], got " + y_hat->val().shape_str());
  ad::Node* a = stem_latent_.forward(t, y_hat, training);
  ad::Node* conditioned = ops::channel_affine(t, ops::log_op(t, sigma_hat),
                                              t.leaf_param(sigma_scale_),
                                              t.leaf_param(sigma_shift_));
  ad::Node* b = stem_sigma_.forward(t, conditioned, training);
  ad::Node* h = ops::concat_channels(t, a, b);
  for (auto& blk : conv3x_) h = blk.forward(t, h, training);
  for (auto& blk : conv4x_) h = blk.forward(t, h, training);
  for (auto& blk : conv5x_) h = blk.forward(t, h, training);
  return fc_.forward(t, ops::global_avg_pool(t, h));
}

void Classifier::set_sigma_stats(const std::vector<double>& mean,
                                 const std::vector<double>& stddev) {
  if (cfg_.variant != ClassifierConfig::Variant::cresnet39)
    throw ConfigError("sigma stats only apply to the compressed-domain variant");
  if (int(mean.size()) != cfg_.input_channels || int(stddev.size()) != cfg_.input_channels)
    throw ShapeError("sigma stats need one mean/std per latent channel");
  for (int c = 0; c < cfg_.input_channels; ++c) {
    const double sd = stddev[size_t(c)] > 1e-12 ? stddev[size_t(c)] : 1e-12;
    sigma_scale_.value.data[size_t(c)] = float(1.0 / sd);
    sigma_shift_.value.data[size_t(c)] = float(-mean[size_t(c)] / sd);
  }
}

std::vector<std::pair<std::string, int>> Classifier::layer_census() const {
  std::vector<std::pair<std::string, int>> census;
  if (cfg_.variant == ClassifierConfig::Variant::resnet50) {
    census.emplace_back("stem", 3);
    census.emplace_back("conv_2x", int(conv2x_.size()) * 3);
  } else {
    census.emplace_back("stem_latent", 3);
    census.emplace_back("stem_sigma", 3);
  }
  census.emplace_back("conv_3x", int(conv3x_.size()) * 3);
  census.emplace_back("conv_4x", int(conv4x_.size()) * 3);
  census.emplace_back("conv_5x", int(conv5x_.size()) * 3);
  census.emplace_back("fc", 1);
  return census;
}

std::vector<std::vector<int>> predict_topk(const Tensor& logits, int k) {
  if (logits.ndim() != 2)
    throw ShapeError("predict_topk expects [N,K] logits, got " + logits.shape_str());
  const int n = logits.dim(0), classes = logits.dim(1);
  if (k < 1 || k > classes)
    throw ConfigError("top-k rank " + std::to_string(k) + " outside [1," +
                      std::to_string(classes) + "]");
  std::vector<std::vector<int>> ranked;
  ranked.resize(size_t(n));
  std::vector<int> idx(static_cast<size_t>(classes), 0);
  for (int r = 0; r < n; ++r) {
    const float* row = logits.ptr() + size_t(r) * classes;
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [row](int a, int b) {
      if (row[a] != row[b]) return row[a] > row[b];
      return a < b;
    });
    ranked[size_t(r)].assign(idx.begin(), idx.begin() + k);
  }
  return ranked;
}

namespace {
ad::Node* forward_batch(Classifier& model, ad::Tape& t, const Batch& batch, bool training) {
  if (model.config().variant == ClassifierConfig::Variant::cresnet39) {
    if (batch.sigma.empty())
      throw ConfigError("compressed-domain classifier requires a sigma input");
    return model.forward(t, t.leaf(batch.x), t.leaf(batch.sigma), training);
  }
  return model.forward(t, t.leaf(batch.x), training);
}

struct AccuracyCounter {
  std::vector<std::vector<int>> ranked;
  std::vector<int> labels;
  void add(const Tensor& logits, const std::vector<int>& batch_labels, int k) {
    auto r = predict_topk(logits, k);
    ranked.insert(ranked.end(), r.begin(), r.end());
    labels.insert(labels.end(), batch_labels.begin(), batch_labels.end());
  }
  double top(int k) const { return met::accuracy_topk(ranked, labels, k); }
};
}  // namespace

std::vector<std::vector<int>> classify_all(Classifier& model, const std::vector<Batch>& batches,
                                           int k) {
  std::vector<std::vector<int>> out;
  for (const Batch& batch : batches) {
    ad::Tape t;
    t.grad_enabled = false;
    ad::Node* logits = forward_batch(model, t, batch, /*training=*/false);
    auto ranked = predict_topk(logits->val(), k);
    out.insert(out.end(), ranked.begin(), ranked.end());
  }
  return out;
}

ClassifierTrainResult train_classifier(
    Classifier& model, const std::function<std::vector<Batch>(int)>& train_batches,
    const std::vector<Batch>& val_batches, const ClassifierTrainOptions& opts) {
  if (opts.epochs < 0) throw ConfigError("epoch count cannot be negative");
  ClassifierTrainResult result;
  if (opts.epochs == 0) return result;

  std::vector<ad::Param*> params = model.params();
  opt::SgdConfig sgd_cfg;
  sgd_cfg.learning_rate = opts.learning_rate;
  sgd_cfg.momentum = opts.momentum;
  sgd_cfg.weight_decay = opts.weight_decay;
  sgd_cfg.schedule = opts.lr_schedule;
  opt::Sgd sgd(params, sgd_cfg);

  const int top_k = std::min(5, model.config().num_classes);
  std::vector<Tensor> best_snapshot;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    sgd.set_epoch(epoch);
    const std::vector<Batch> batches = train_batches(epoch);
    if (batches.empty()) throw DataError("training epoch produced no batches");

    double loss_sum = 0.0;
    int64_t seen = 0;
    AccuracyCounter train_acc;
    for (const Batch& batch : batches) {
      if (batch.labels.empty() || int(batch.labels.size()) != batch.x.dim(0))
        throw DataError("batch labels must match the batch extent");
      ad::Tape t;
      t.release_buffers = true;
      ad::Node* logits = forward_batch(model, t, batch, /*training=*/true);
      ad::Node* loss = ops::softmax_cross_entropy(t, logits, batch.labels);
      loss_sum += double(loss->val().data[0]) * double(batch.labels.size());
      seen += int64_t(batch.labels.size());
      train_acc.add(logits->val(), batch.labels, top_k);
      t.backward(loss);
      sgd.step();
    }

    EpochLog log;
    log.epoch = epoch + 1;
    log.train_loss = loss_sum / double(seen);
    log.train_top1 = train_acc.top(1);
    log.train_top5 = train_acc.top(top_k);
    log.learning_rate = sgd.learning_rate();

    if (!val_batches.empty()) {
      AccuracyCounter val_acc;
      for (const Batch& batch : val_batches) {
        ad::Tape t;
        t.grad_enabled = false;
        ad::Node* logits = forward_batch(model, t, batch, /*training=*/false);
        val_acc.add(logits->val(), batch.labels, top_k);
      }
      log.val_top1 = val_acc.top(1);
      log.val_top5 = val_acc.top(top_k);
      if (log.val_top1 > result.best_val_top1 || result.best_epoch == 0) {
        result.best_val_top1 = log.val_top1;
        result.best_epoch = log.epoch;
        best_snapshot.clear();
        for (const ad::Param* p : params) best_snapshot.push_back(p->value);
      }
    }

    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(log);
    if (opts.on_epoch) opts.on_epoch(log);
    if (opts.stop_at_val_top1 >= 0.0 && !val_batches.empty() &&
        log.val_top1 >= opts.stop_at_val_top1)
      break;
  }

  if (!best_snapshot.empty())
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_snapshot[i];
  return result;
}

void save_classifier(const std::string& path, Classifier& model) {
  const ClassifierConfig& c = model.config();
  nlohmann::json meta{{"kind", "classifier"},
                      {"variant", variant_name(c.variant)},
                      {"num_classes", c.num_classes},
                      {"input_channels", c.input_channels}};
  std::vector<ad::Param*> ps = model.params();
  ckpt::save(path, std::vector<const ad::Param*>(ps.begin(), ps.end()), meta.dump());
}

Classifier load_classifier(const std::string& path) {
  ckpt::Loaded loaded = ckpt::load(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(loaded.meta_json);
  } catch (const nlohmann::json::exception&) {
    throw DataError("checkpoint at " + path + " has unparseable metadata");
  }
  if (meta.value("kind", std::string()) != "classifier")
    throw DataError("checkpoint at " + path + " is not a classifier");
  ClassifierConfig cfg;
  try {
    const std::string variant = meta.at("variant").get<std::string>();
    if (variant == "resnet50") {
      cfg.variant = ClassifierConfig::Variant::resnet50;
    } else if (variant == "cresnet39") {
      cfg.variant = ClassifierConfig::Variant::cresnet39;
    } else {
      throw DataError("unknown classifier variant '" + variant + "'");
    }
    cfg.num_classes = meta.at("num_classes").get<int>();
    cfg.input_channels = meta.at("input_channels").get<int>();
  } catch (const nlohmann::json::exception&) {
    throw DataError("classifier checkpoint at " + path + " is missing config fields");
  }
  Classifier model(cfg, 0);
  ckpt::restore(loaded, model.params());
  return model;
}

}  // namespace lsc::cls
