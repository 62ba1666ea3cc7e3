#include "lsc/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "lsc/common.hpp"
#include "lsc/entropy.hpp"
#include "lsc/image_io.hpp"

namespace fs = std::filesystem;

namespace lsc::pipe {

namespace {

constexpr const char* kWorkflowNames[4] = {"anchor1", "anchor2", "anchor3", "compressed"};

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs an integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs a number, got '" + value + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    // std::stoull silently wraps negative input; only digits are acceptable.
    if (value.empty() || value[0] < '0' || value[0] > '9')
      throw std::invalid_argument(value);
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return uint64_t(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs an unsigned integer, got '" + value + "'");
  }
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

}  // namespace

const char* workflow_name(Workflow w) { return kWorkflowNames[static_cast<int>(w)]; }

Workflow workflow_from_name(const std::string& name) {
  for (int i = 0; i < 4; ++i)
    if (name == kWorkflowNames[i]) return static_cast<Workflow>(i);
  throw ConfigError("unknown workflow '" + name +
                    "' (expected anchor1, anchor2, anchor3, or compressed)");
}

void ExperimentConfig::validate() const {
  augment.validate();
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
  if (manifest_path.empty()) throw ConfigError("a manifest path is required");
  if (!fs::exists(manifest_path)) throw ConfigError("manifest does not exist: " + manifest_path);

  std::unordered_set<int> seen;
  for (int q : quality_indices) {
    if (q < 1 || q > 8)
      throw ConfigError("quality index " + std::to_string(q) + " outside [1, 8]");
    if (!seen.insert(q).second)
      throw ConfigError("quality index " + std::to_string(q) + " listed twice");
  }
  if (workflow == Workflow::anchor3) {
    if (!quality_indices.empty())
      throw ConfigError("anchor3 takes no quality indices (it never touches the codec)");
  } else if (quality_indices.empty()) {
    throw ConfigError(std::string(workflow_name(workflow)) +
                      " needs at least one quality index");
  }
  if (workflow == Workflow::anchor1 || workflow == Workflow::anchor2) {
    for (int q : quality_indices) {
      const auto it = codec_checkpoints.find(q);
      if (it == codec_checkpoints.end())
        throw ConfigError(std::string(workflow_name(workflow)) +
                          " needs a codec checkpoint for quality " + std::to_string(q));
      if (!fs::exists(it->second))
        throw ConfigError("codec checkpoint does not exist: " + it->second);
    }
  }
  if (workflow == Workflow::compressed && latent_store_dir.empty())
    throw ConfigError("the compressed workflow needs a latent store directory");
  if (!classifier_checkpoint.empty() && !fs::exists(classifier_checkpoint))
    throw ConfigError("classifier checkpoint does not exist: " + classifier_checkpoint);
}

ExperimentConfig ExperimentConfig::toy_defaults() {
  ExperimentConfig cfg;
  cfg.batch_size = 16;
  cfg.augment.pixel_resize = 64;
  cfg.augment.pixel_crop = 56;
  return cfg;
}

void apply_config_entry(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "workflow") {
    cfg.workflow = workflow_from_name(value);
  } else if (key == "qualities") {
    cfg.quality_indices.clear();
    for (const std::string& part : split_on(value, ','))
      cfg.quality_indices.push_back(parse_int(key, trim(part)));
  } else if (key.rfind("codec_checkpoint.", 0) == 0) {
    const int q = parse_int(key, key.substr(std::strlen("codec_checkpoint.")));
    cfg.codec_checkpoints[q] = value;
  } else if (key == "classifier_checkpoint") {
    cfg.classifier_checkpoint = value;
  } else if (key == "manifest") {
    cfg.manifest_path = value;
  } else if (key == "latent_store") {
    cfg.latent_store_dir = value;
  } else if (key == "output_dir") {
    cfg.output_dir = value;
  } else if (key == "seed") {
    cfg.seed = parse_u64(key, value);
  } else if (key == "epochs") {
    cfg.epochs = parse_int(key, value);
  } else if (key == "batch_size") {
    cfg.batch_size = parse_int(key, value);
  } else if (key == "learning_rate") {
    cfg.learning_rate = parse_double(key, value);
  } else if (key == "momentum") {
    cfg.momentum = parse_double(key, value);
  } else if (key == "weight_decay") {
    cfg.weight_decay = parse_double(key, value);
  } else if (key == "stop_at_val_top1") {
    cfg.stop_at_val_top1 = parse_double(key, value);
  } else if (key == "lr_schedule") {
    cfg.lr_schedule.clear();
    for (const std::string& part : split_on(value, ',')) {
      const std::vector<std::string> kv = split_on(trim(part), ':');
      if (kv.size() != 2)
        throw ConfigError("lr_schedule entries are epoch:divisor, got '" + part + "'");
      cfg.lr_schedule.emplace_back(parse_int(key, trim(kv[0])), parse_double(key, trim(kv[1])));
    }
  } else if (key == "preset") {
    if (value == "toy")
      cfg = ExperimentConfig::toy_defaults();
    else if (value == "paper")
      cfg = ExperimentConfig();
    else
      throw ConfigError("unknown preset '" + value + "' (expected toy or paper)");
  } else if (key == "pixel_resize") {
    cfg.augment.pixel_resize = parse_int(key, value);
  } else if (key == "pixel_crop") {
    cfg.augment.pixel_crop = parse_int(key, value);
  } else if (key == "pixel_flip_prob") {
    cfg.augment.pixel_flip_prob = parse_double(key, value);
  } else if (key == "jitter_lo") {
    cfg.augment.jitter_lo = parse_double(key, value);
  } else if (key == "jitter_hi") {
    cfg.augment.jitter_hi = parse_double(key, value);
  } else if (key == "pca_noise_std") {
    cfg.augment.pca_noise_std = parse_double(key, value);
  } else if (key == "latent_resize") {
    cfg.augment.latent_resize = parse_int(key, value);
  } else if (key == "latent_crop") {
    cfg.augment.latent_crop = parse_int(key, value);
  } else if (key == "latent_flip_prob") {
    cfg.augment.latent_flip_prob = parse_double(key, value);
  } else {
    throw ConfigError("unknown config key: '" + key + "'");
  }
}

void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + " is not key = value: " +
                        path);
    apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

ExperimentConfig load_config_file(const std::string& path) {
  ExperimentConfig cfg;
  apply_config_file(cfg, path);
  return cfg;
}

void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* seed = std::getenv("LSC_SEED")) cfg.seed = parse_u64("LSC_SEED", seed);
}

void EvaluationRow::validate() const {
  auto pct = [](double v, const char* what) {
    if (std::isnan(v) || v < 0.0 || v > 100.0)
      throw DataError(std::string(what) + " must lie in [0, 100], got " + std::to_string(v));
  };
  pct(top1, "top1");
  pct(top5, "top5");
  if (top1 > top5 + 1e-9)
    throw DataError("top1 (" + std::to_string(top1) + ") exceeds top5 (" +
                    std::to_string(top5) + ")");
  if (samples < 0) throw DataError("negative sample count");
  if (quality_index < 0 || quality_index > 8)
    throw DataError("quality index " + std::to_string(quality_index) + " outside [0, 8]");
  if (!std::isnan(bpp) && bpp < 0.0) throw DataError("negative bpp");
}

std::string evaluation_csv_header() {
  return "workflow,quality_index,bpp,psnr_db,ssim,ms_ssim,top1_percent,top5_percent,samples";
}

std::string to_csv_row(const EvaluationRow& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << workflow_name(r.workflow) << ',' << r.quality_index << ',' << r.bpp << ',' << r.psnr_db
     << ',' << r.ssim << ',' << r.ms_ssim << ',' << r.top1 << ',' << r.top5 << ',' << r.samples;
  return os.str();
}

EvaluationRow evaluation_from_csv_row(const std::string& line) {
  const std::vector<std::string> f = split_on(line, ',');
  if (f.size() != 9)
    throw DataError("evaluation row needs 9 comma-separated fields, got " +
                    std::to_string(f.size()) + ": " + line);
  EvaluationRow r;
  try {
    r.workflow = workflow_from_name(f[0]);
    r.quality_index = std::stoi(f[1]);
    r.bpp = std::stod(f[2]);
    r.psnr_db = std::stod(f[3]);
    r.ssim = std::stod(f[4]);
    r.ms_ssim = std::stod(f[5]);
    r.top1 = std::stod(f[6]);
    r.top5 = std::stod(f[7]);
    r.samples = std::stoi(f[8]);
  } catch (const Error&) {
    throw DataError("unparseable evaluation row: " + line);
  } catch (const std::exception&) {
    throw DataError("unparseable evaluation row: " + line);
  }
  r.validate();
  return r;
}

void save_rows(const std::string& path, const std::vector<EvaluationRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write evaluation rows: " + path);
  os << evaluation_csv_header() << '\n';
  for (const EvaluationRow& r : rows) os << to_csv_row(r) << '\n';
  if (!os) throw DataError("write failure on evaluation rows: " + path);
}

std::vector<EvaluationRow> load_rows(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open evaluation rows: " + path);
  std::string line;
  if (!std::getline(is, line) || trim(line) != evaluation_csv_header())
    throw DataError("unexpected evaluation CSV header in " + path);
  std::vector<EvaluationRow> rows;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    rows.push_back(evaluation_from_csv_row(line));
  }
  return rows;
}

DirLock::DirLock(const std::string& dir) {
  fs::create_directories(dir);
  path_ = dir + "/.lsc-lock";
  fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd_ < 0) {
    if (errno == EEXIST)
      throw ConfigError("output directory is locked by another workflow (" + path_ +
                        "); remove the lock file if that run is dead");
    throw ConfigError("cannot create lock file " + path_ + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  if (::write(fd_, pid.data(), pid.size()) < 0) {
    // Lock still held; the pid note is best-effort diagnostics only.
  }
}

DirLock::~DirLock() {
  if (fd_ >= 0) {
    ::close(fd_);
    ::unlink(path_.c_str());
  }
}

namespace {

// ---------- split loading and batch assembly ----------

struct SplitData {
  std::vector<Tensor> images;  // [3,H,W]
  std::vector<int> labels;
  std::vector<std::string> paths;
};

SplitData load_split(const data::DatasetManifest& manifest, data::Split split) {
  SplitData out;
  for (int idx : manifest.split_indices(split)) {
    const data::ManifestRecord& rec = manifest.records[size_t(idx)];
    out.images.push_back(img::read_image(rec.path));
    out.labels.push_back(rec.label);
    out.paths.push_back(rec.path);
  }
  return out;
}

Tensor stack_chw(const std::vector<Tensor>& items, const std::vector<int>& order, size_t lo,
                 size_t hi) {
  const Tensor& first = items[size_t(order[lo])];
  Tensor out({int(hi - lo), first.dim(0), first.dim(1), first.dim(2)});
  const size_t per = first.numel();
  for (size_t i = lo; i < hi; ++i) {
    const Tensor& t = items[size_t(order[i])];
    if (t.shape != first.shape)
      throw ShapeError("cannot batch mixed shapes " + t.shape_str() + " vs " +
                       first.shape_str());
    std::copy(t.data.begin(), t.data.end(), out.data.begin() + std::ptrdiff_t((i - lo) * per));
  }
  return out;
}

constexpr uint64_t kPixelAugTag = 0xA7C3ull;
constexpr uint64_t kLatentAugTag = 0x1A7E4ull;

std::vector<cls::Batch> pixel_train_batches(const SplitData& split,
                                            const data::AugmentationConfig& aug,
                                            const data::PcaStats& pca, int batch_size,
                                            uint64_t seed, int epoch) {
  const int n = int(split.images.size());
  std::vector<cls::Batch> out;
  for (const std::vector<int>& idxs : data::epoch_batches(n, batch_size, seed, epoch)) {
    std::vector<Tensor> samples;
    cls::Batch b;
    for (int idx : idxs) {
      Rng rng = Rng::derive(seed, kPixelAugTag, uint64_t(epoch), uint64_t(idx));
      samples.push_back(data::augment_pixel(split.images[size_t(idx)], aug, pca, rng, true));
      b.labels.push_back(split.labels[size_t(idx)]);
    }
    std::vector<int> order(samples.size(), 0);
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    b.x = stack_chw(samples, order, 0, samples.size());
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<cls::Batch> pixel_eval_batches(const SplitData& split,
                                           const data::AugmentationConfig& aug,
                                           const data::PcaStats& pca, int batch_size) {
  const int n = int(split.images.size());
  std::vector<cls::Batch> out;
  Rng scratch(0);  // evaluation mode draws nothing
  for (int lo = 0; lo < n; lo += batch_size) {
    const int hi = std::min(n, lo + batch_size);
    std::vector<Tensor> samples;
    cls::Batch b;
    for (int i = lo; i < hi; ++i) {
      samples.push_back(data::augment_pixel(split.images[size_t(i)], aug, pca, scratch, false));
      b.labels.push_back(split.labels[size_t(i)]);
    }
    std::vector<int> order(samples.size(), 0);
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    b.x = stack_chw(samples, order, 0, samples.size());
    out.push_back(std::move(b));
  }
  return out;
}

struct LatentSplit {
  std::vector<cdc::LatentPair> pairs;  // [C,h,w] each
  std::vector<int> labels;
  std::vector<double> bpp;  // stored stream bits / true pixel count
};

LatentSplit load_latent_split(const data::DatasetManifest& manifest, data::Split split,
                              const data::LatentStore& store, int quality) {
  LatentSplit out;
  for (int idx : manifest.split_indices(split)) {
    const data::ManifestRecord& rec = manifest.records[size_t(idx)];
    if (!store.has(rec.path, quality))
      throw DataError("latent store is missing " + rec.path + " at quality " +
                      std::to_string(quality) + "; run precompute-latents first");
    data::LatentEntry e = store.get(rec.path, quality);
    out.bpp.push_back(double(e.stream_bytes) * 8.0 / (double(e.true_h) * e.true_w));
    out.pairs.push_back({std::move(e.y_hat), std::move(e.sigma_hat)});
    out.labels.push_back(rec.label);
  }
  return out;
}

cls::Batch latent_batch(const LatentSplit& split, const std::vector<int>& idxs,
                        const data::AugmentationConfig& aug, uint64_t seed, int epoch,
                        bool training) {
  std::vector<Tensor> ys, sigmas;
  cls::Batch b;
  for (int idx : idxs) {
    Rng rng = Rng::derive(seed, kLatentAugTag, uint64_t(epoch), uint64_t(idx));
    cdc::LatentPair p = data::augment_latent(split.pairs[size_t(idx)], aug, rng, training);
    ys.push_back(std::move(p.y_hat));
    sigmas.push_back(std::move(p.sigma_hat));
    b.labels.push_back(split.labels[size_t(idx)]);
  }
  std::vector<int> order(ys.size(), 0);
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  b.x = stack_chw(ys, order, 0, ys.size());
  b.sigma = stack_chw(sigmas, order, 0, sigmas.size());
  return b;
}

std::vector<cls::Batch> latent_train_batches(const LatentSplit& split,
                                             const data::AugmentationConfig& aug, int batch_size,
                                             uint64_t seed, int epoch) {
  std::vector<cls::Batch> out;
  for (const std::vector<int>& idxs :
       data::epoch_batches(int(split.pairs.size()), batch_size, seed, epoch))
    out.push_back(latent_batch(split, idxs, aug, seed, epoch, true));
  return out;
}

std::vector<cls::Batch> latent_eval_batches(const LatentSplit& split,
                                            const data::AugmentationConfig& aug,
                                            int batch_size) {
  std::vector<cls::Batch> out;
  const int n = int(split.pairs.size());
  for (int lo = 0; lo < n; lo += batch_size) {
    std::vector<int> idxs;
    for (int i = lo; i < std::min(n, lo + batch_size); ++i) idxs.push_back(i);
    out.push_back(latent_batch(split, idxs, aug, /*seed=*/0, /*epoch=*/0, false));
  }
  return out;
}

// ---------- evaluation and logging ----------

std::pair<double, double> eval_top15(cls::Classifier& model,
                                     const std::vector<cls::Batch>& batches,
                                     const std::vector<int>& labels) {
  const int k = std::min(5, model.config().num_classes);
  const std::vector<std::vector<int>> ranked = cls::classify_all(model, batches, k);
  return {met::accuracy_topk(ranked, labels, 1), met::accuracy_topk(ranked, labels, k)};
}

class JsonlLogger {
 public:
  explicit JsonlLogger(const std::string& path) : os_(path, std::ios::trunc) {
    if (!os_) throw DataError("cannot open log file: " + path);
  }
  void operator()(const cls::EpochLog& e) {
    nlohmann::json train{{"epoch", e.epoch},   {"split", "train"},
                         {"loss", e.train_loss}, {"top1", e.train_top1},
                         {"top5", e.train_top5}, {"lr", e.learning_rate},
                         {"seconds", e.seconds}};
    nlohmann::json val{{"epoch", e.epoch}, {"split", "val"},        {"top1", e.val_top1},
                       {"top5", e.val_top5}, {"lr", e.learning_rate}, {"seconds", e.seconds}};
    os_ << train.dump() << '\n' << val.dump() << '\n';
    os_.flush();
  }

 private:
  std::ofstream os_;
};

cls::ClassifierTrainOptions train_options(const ExperimentConfig& cfg, uint64_t run_seed,
                                          JsonlLogger* logger) {
  cls::ClassifierTrainOptions opts;
  opts.epochs = cfg.epochs;
  opts.learning_rate = cfg.learning_rate;
  opts.momentum = cfg.momentum;
  opts.weight_decay = cfg.weight_decay;
  opts.lr_schedule = cfg.lr_schedule;
  opts.seed = run_seed;
  opts.stop_at_val_top1 = cfg.stop_at_val_top1;
  if (logger) opts.on_epoch = [logger](const cls::EpochLog& e) { (*logger)(e); };
  return opts;
}

// Per-image real-bitstream round trip with rate and distortion bookkeeping.
struct DecodedSplit {
  std::vector<Tensor> images;  // [3,H,W] decoded
  std::vector<int> labels;
  double bpp = 0.0;  // means over the split
  double psnr_db = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
};

DecodedSplit decode_split(cdc::CodecModel& codec, const SplitData& split) {
  DecodedSplit out;
  out.labels = split.labels;
  double bpp = 0.0, psnr = 0.0, ssim = 0.0, msssim = 0.0;
  for (const Tensor& img : split.images) {
    Tensor x = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
    const cdc::EncodedImage enc = cdc::encode_image(codec, x);
    Tensor dec = cdc::decode_image(codec, enc.stream);
    const double pixels = double(img.dim(1)) * img.dim(2);
    bpp += double(enc.stream.size()) * 8.0 / pixels;
    psnr += met::psnr(x, dec);
    ssim += met::ssim(x, dec);
    msssim += met::ms_ssim(x, dec);
    out.images.push_back(dec.reshaped({img.dim(0), img.dim(1), img.dim(2)}));
  }
  const double n = double(split.images.size());
  if (n > 0) {
    out.bpp = bpp / n;
    out.psnr_db = psnr / n;
    out.ssim = ssim / n;
    out.ms_ssim = msssim / n;
  }
  return out;
}

SplitData as_split(DecodedSplit&& d) {
  SplitData s;
  s.images = std::move(d.images);
  s.labels = std::move(d.labels);
  return s;
}

uint64_t quality_seed(uint64_t seed, Workflow w, int quality) {
  return Rng::derive(seed, uint64_t(static_cast<int>(w)) + 0xF10Full, uint64_t(quality))
      .next_u64();
}

std::string rows_path(const ExperimentConfig& cfg) {
  return cfg.output_dir + "/" + workflow_name(cfg.workflow) + "_rows.csv";
}

}  // namespace

std::vector<EvaluationRow> run_anchor(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.workflow == Workflow::compressed)
    throw ConfigError("run_anchor does not handle the compressed workflow");
  if (cfg.workflow == Workflow::anchor1 && cfg.classifier_checkpoint.empty())
    throw ConfigError("anchor1 evaluates an existing classifier; provide its checkpoint");
  DirLock lock(cfg.output_dir);

  const data::DatasetManifest manifest = data::load_manifest(cfg.manifest_path);
  const int num_classes = int(manifest.class_names.size());
  const SplitData train = load_split(manifest, data::Split::train);
  const SplitData val = load_split(manifest, data::Split::val);
  const SplitData test = load_split(manifest, data::Split::test);
  if (train.images.empty() || test.images.empty())
    throw DataError("manifest has an empty train or test split");

  std::vector<EvaluationRow> rows;

  if (cfg.workflow == Workflow::anchor3) {
    const data::PcaStats pca = data::compute_pca_stats(train.images);
    cls::ClassifierConfig ccfg;
    ccfg.variant = cls::ClassifierConfig::Variant::resnet50;
    ccfg.num_classes = num_classes;
    cls::Classifier model(ccfg, cfg.seed);
    JsonlLogger logger(cfg.output_dir + "/anchor3_train_log.jsonl");
    const auto train_fn = [&](int epoch) {
      return pixel_train_batches(train, cfg.augment, pca, cfg.batch_size, cfg.seed, epoch);
    };
    const std::vector<cls::Batch> val_batches =
        pixel_eval_batches(val, cfg.augment, pca, cfg.batch_size);
    cls::train_classifier(model, train_fn, val_batches, train_options(cfg, cfg.seed, &logger));
    cls::save_classifier(cfg.output_dir + "/anchor3_classifier.lscp", model);

    const auto [top1, top5] =
        eval_top15(model, pixel_eval_batches(test, cfg.augment, pca, cfg.batch_size),
                   test.labels);
    EvaluationRow row;
    row.workflow = Workflow::anchor3;
    row.quality_index = ExperimentConfig::kNoQuality;
    row.bpp = 24.0;  // uncompressed 8-bit RGB source
    row.psnr_db = std::numeric_limits<double>::infinity();
    row.ssim = 1.0;
    row.ms_ssim = 1.0;
    row.top1 = top1;
    row.top5 = top5;
    row.samples = int(test.labels.size());
    row.validate();
    rows.push_back(row);
  } else if (cfg.workflow == Workflow::anchor1) {
    cls::Classifier model = cls::load_classifier(cfg.classifier_checkpoint);
    if (model.config().num_classes != num_classes)
      throw ConfigError("classifier was trained for " +
                        std::to_string(model.config().num_classes) + " classes; manifest has " +
                        std::to_string(num_classes));
    for (int q : cfg.quality_indices) {
      cdc::CodecModel codec = cdc::load_codec(cfg.codec_checkpoints.at(q));
      DecodedSplit dec = decode_split(codec, test);
      EvaluationRow row;
      row.workflow = Workflow::anchor1;
      row.quality_index = q;
      row.bpp = dec.bpp;
      row.psnr_db = dec.psnr_db;
      row.ssim = dec.ssim;
      row.ms_ssim = dec.ms_ssim;
      const SplitData dec_test = as_split(std::move(dec));
      const data::PcaStats pca = data::compute_pca_stats(dec_test.images);
      const auto [top1, top5] = eval_top15(
          model, pixel_eval_batches(dec_test, cfg.augment, pca, cfg.batch_size),
          dec_test.labels);
      row.top1 = top1;
      row.top5 = top5;
      row.samples = int(dec_test.labels.size());
      row.validate();
      rows.push_back(row);
    }
  } else {  // anchor2: retrain per quality on decoded images
    for (int q : cfg.quality_indices) {
      cdc::CodecModel codec = cdc::load_codec(cfg.codec_checkpoints.at(q));
      const SplitData dec_train = as_split(decode_split(codec, train));
      const SplitData dec_val = as_split(decode_split(codec, val));
      DecodedSplit dec = decode_split(codec, test);

      const data::PcaStats pca = data::compute_pca_stats(dec_train.images);
      cls::ClassifierConfig ccfg;
      ccfg.variant = cls::ClassifierConfig::Variant::resnet50;
      ccfg.num_classes = num_classes;
      const uint64_t run_seed = quality_seed(cfg.seed, Workflow::anchor2, q);
      cls::Classifier model(ccfg, run_seed);
      JsonlLogger logger(cfg.output_dir + "/anchor2_q" + std::to_string(q) +
                         "_train_log.jsonl");
      const auto train_fn = [&](int epoch) {
        return pixel_train_batches(dec_train, cfg.augment, pca, cfg.batch_size, run_seed, epoch);
      };
      const std::vector<cls::Batch> val_batches =
          pixel_eval_batches(dec_val, cfg.augment, pca, cfg.batch_size);
      cls::train_classifier(model, train_fn, val_batches,
                            train_options(cfg, run_seed, &logger));
      cls::save_classifier(
          cfg.output_dir + "/anchor2_q" + std::to_string(q) + "_classifier.lscp", model);

      EvaluationRow row;
      row.workflow = Workflow::anchor2;
      row.quality_index = q;
      row.bpp = dec.bpp;
      row.psnr_db = dec.psnr_db;
      row.ssim = dec.ssim;
      row.ms_ssim = dec.ms_ssim;
      const SplitData dec_test = as_split(std::move(dec));
      const auto [top1, top5] = eval_top15(
          model, pixel_eval_batches(dec_test, cfg.augment, pca, cfg.batch_size),
          dec_test.labels);
      row.top1 = top1;
      row.top5 = top5;
      row.samples = int(dec_test.labels.size());
      row.validate();
      rows.push_back(row);
    }
  }

  save_rows(rows_path(cfg), rows);
  return rows;
}

namespace {

// Per-channel mean and stddev of log(sigma) over a latent split; conditions
// the classifier's scale-map input.
void sigma_log_stats(const LatentSplit& split, std::vector<double>& mean,
                     std::vector<double>& stddev) {
  if (split.pairs.empty()) throw DataError("cannot compute sigma statistics of an empty split");
  const int c = split.pairs[0].sigma_hat.dim(0);
  std::vector<double> sum(size_t(c), 0.0), sq(size_t(c), 0.0);
  std::vector<int64_t> count(size_t(c), 0);
  for (const cdc::LatentPair& p : split.pairs) {
    const Tensor& s = p.sigma_hat;
    const size_t plane = size_t(s.dim(1)) * s.dim(2);
    for (int ch = 0; ch < c; ++ch) {
      const float* ptr = s.ptr() + size_t(ch) * plane;
      for (size_t i = 0; i < plane; ++i) {
        const double lg = std::log(std::max(double(ptr[i]), 1e-12));
        sum[size_t(ch)] += lg;
        sq[size_t(ch)] += lg * lg;
      }
      count[size_t(ch)] += int64_t(plane);
    }
  }
  mean.assign(size_t(c), 0.0);
  stddev.assign(size_t(c), 1.0);
  for (int ch = 0; ch < c; ++ch) {
    const double m = sum[size_t(ch)] / double(count[size_t(ch)]);
    const double var = std::max(0.0, sq[size_t(ch)] / double(count[size_t(ch)]) - m * m);
    mean[size_t(ch)] = m;
    stddev[size_t(ch)] = std::max(std::sqrt(var), 1e-6);
  }
}

EvaluationRow compressed_row(int quality, const LatentSplit& test, double top1, double top5) {
  EvaluationRow row;
  row.workflow = Workflow::compressed;
  row.quality_index = quality;
  double bpp = 0.0;
  for (double b : test.bpp) bpp += b;
  row.bpp = test.bpp.empty() ? 0.0 : bpp / double(test.bpp.size());
  // Distortion is unmeasurable without running the synthesis transform;
  // curves borrow these axes from anchor rows at the same quality.
  row.psnr_db = std::numeric_limits<double>::quiet_NaN();
  row.ssim = std::numeric_limits<double>::quiet_NaN();
  row.ms_ssim = std::numeric_limits<double>::quiet_NaN();
  row.top1 = top1;
  row.top5 = top5;
  row.samples = int(test.labels.size());
  row.validate();
  return row;
}

}  // namespace

std::vector<EvaluationRow> run_compressed(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.workflow != Workflow::compressed)
    throw ConfigError("run_compressed requires workflow = compressed");
  DirLock lock(cfg.output_dir);

  const data::DatasetManifest manifest = data::load_manifest(cfg.manifest_path);
  const int num_classes = int(manifest.class_names.size());
  const data::LatentStore store(cfg.latent_store_dir);

  std::vector<EvaluationRow> rows;
  for (int q : cfg.quality_indices) {
    cdc::reset_synthesis_call_count();
    const LatentSplit train = load_latent_split(manifest, data::Split::train, store, q);
    const LatentSplit val = load_latent_split(manifest, data::Split::val, store, q);
    const LatentSplit test = load_latent_split(manifest, data::Split::test, store, q);
    if (train.pairs.empty() || test.pairs.empty())
      throw DataError("manifest has an empty train or test split");

    cls::ClassifierConfig ccfg;
    ccfg.variant = cls::ClassifierConfig::Variant::cresnet39;
    ccfg.num_classes = num_classes;
    ccfg.input_channels = train.pairs[0].y_hat.dim(0);
    const uint64_t run_seed = quality_seed(cfg.seed, Workflow::compressed, q);
    cls::Classifier model(ccfg, run_seed);
    std::vector<double> mean, stddev;
    sigma_log_stats(train, mean, stddev);
    model.set_sigma_stats(mean, stddev);

    JsonlLogger logger(cfg.output_dir + "/compressed_q" + std::to_string(q) +
                       "_train_log.jsonl");
    const auto train_fn = [&](int epoch) {
      return latent_train_batches(train, cfg.augment, cfg.batch_size, run_seed, epoch);
    };
    const std::vector<cls::Batch> val_batches =
        latent_eval_batches(val, cfg.augment, cfg.batch_size);
    cls::train_classifier(model, train_fn, val_batches, train_options(cfg, run_seed, &logger));
    cls::save_classifier(
        cfg.output_dir + "/compressed_q" + std::to_string(q) + "_classifier.lscp", model);

    const auto [top1, top5] =
        eval_top15(model, latent_eval_batches(test, cfg.augment, cfg.batch_size), test.labels);
    if (cdc::synthesis_call_count() != 0)
      throw Error("decoder-bypass violated: the synthesis transform ran " +
                  std::to_string(cdc::synthesis_call_count()) +
                  " times during the compressed workflow");
    rows.push_back(compressed_row(q, test, top1, top5));
  }

  save_rows(rows_path(cfg), rows);
  return rows;
}

std::vector<EvaluationRow> run_evaluation(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.classifier_checkpoint.empty())
    throw ConfigError("evaluate needs a classifier checkpoint");
  DirLock lock(cfg.output_dir);

  const data::DatasetManifest manifest = data::load_manifest(cfg.manifest_path);
  cls::Classifier model = cls::load_classifier(cfg.classifier_checkpoint);
  if (model.config().num_classes != int(manifest.class_names.size()))
    throw ConfigError("classifier was trained for " +
                      std::to_string(model.config().num_classes) + " classes; manifest has " +
                      std::to_string(manifest.class_names.size()));

  std::vector<EvaluationRow> rows;
  if (cfg.workflow == Workflow::compressed) {
    const data::LatentStore store(cfg.latent_store_dir);
    for (int q : cfg.quality_indices) {
      cdc::reset_synthesis_call_count();
      const LatentSplit test = load_latent_split(manifest, data::Split::test, store, q);
      const auto [top1, top5] = eval_top15(
          model, latent_eval_batches(test, cfg.augment, cfg.batch_size), test.labels);
      if (cdc::synthesis_call_count() != 0)
        throw Error("decoder-bypass violated during compressed evaluation");
      rows.push_back(compressed_row(q, test, top1, top5));
    }
  } else {
    const SplitData test = load_split(manifest, data::Split::test);
    if (cfg.workflow == Workflow::anchor3) {
      const data::PcaStats pca = data::compute_pca_stats(test.images);
      const auto [top1, top5] = eval_top15(
          model, pixel_eval_batches(test, cfg.augment, pca, cfg.batch_size), test.labels);
      EvaluationRow row;
      row.workflow = Workflow::anchor3;
      row.bpp = 24.0;
      row.psnr_db = std::numeric_limits<double>::infinity();
      row.ssim = 1.0;
      row.ms_ssim = 1.0;
      row.top1 = top1;
      row.top5 = top5;
      row.samples = int(test.labels.size());
      row.validate();
      rows.push_back(row);
    } else {
      for (int q : cfg.quality_indices) {
        cdc::CodecModel codec = cdc::load_codec(cfg.codec_checkpoints.at(q));
        DecodedSplit dec = decode_split(codec, test);
        EvaluationRow row;
        row.workflow = cfg.workflow;
        row.quality_index = q;
        row.bpp = dec.bpp;
        row.psnr_db = dec.psnr_db;
        row.ssim = dec.ssim;
        row.ms_ssim = dec.ms_ssim;
        const SplitData dec_test = as_split(std::move(dec));
        const data::PcaStats pca = data::compute_pca_stats(dec_test.images);
        const auto [top1, top5] = eval_top15(
            model, pixel_eval_batches(dec_test, cfg.augment, pca, cfg.batch_size),
            dec_test.labels);
        row.top1 = top1;
        row.top5 = top5;
        row.samples = int(dec_test.labels.size());
        row.validate();
        rows.push_back(row);
      }
    }
  }

  save_rows(cfg.output_dir + "/evaluate_rows.csv", rows);
  return rows;
}

std::vector<std::string> emit_curves(const std::vector<EvaluationRow>& rows,
                                     const std::string& out_dir) {
  fs::create_directories(out_dir);
  struct Axis {
    const char* name;
    double EvaluationRow::*field;
  };
  const Axis axes[3] = {{"bpp", &EvaluationRow::bpp},
                        {"psnr", &EvaluationRow::psnr_db},
                        {"ssim", &EvaluationRow::ssim}};

  // A row with an unmeasured axis borrows the value from a sibling row at the
  // same quality index (anchors decode, so they always measure distortion).
  const auto axis_value = [&rows](const EvaluationRow& r, const Axis& axis) {
    double v = r.*(axis.field);
    if (!std::isnan(v)) return v;
    for (const EvaluationRow& other : rows)
      if (other.quality_index == r.quality_index && other.workflow != r.workflow &&
          !std::isnan(other.*(axis.field)))
        return other.*(axis.field);
    return std::numeric_limits<double>::quiet_NaN();
  };

  std::vector<std::string> written;
  for (int w = 0; w < 4; ++w) {
    const Workflow wf = static_cast<Workflow>(w);
    std::vector<const EvaluationRow*> group;
    for (const EvaluationRow& r : rows)
      if (r.workflow == wf) group.push_back(&r);
    if (group.empty()) continue;
    for (const Axis& axis : axes) {
      struct Point {
        double x, acc;
        int quality;
      };
      for (int k : {1, 5}) {
        std::vector<Point> pts;
        for (const EvaluationRow* r : group) {
          const double x = axis_value(*r, axis);
          if (std::isnan(x)) {
            std::cerr << "warning: no " << axis.name << " value available for "
                      << workflow_name(wf) << " quality " << r->quality_index
                      << "; point dropped\n";
            continue;
          }
          pts.push_back({x, k == 1 ? r->top1 : r->top5, r->quality_index});
        }
        if (pts.empty()) continue;
        std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
          return a.x != b.x ? a.x < b.x : a.quality < b.quality;
        });
        const std::string path = out_dir + "/curve_" + workflow_name(wf) + "_" + axis.name +
                                 "_top" + std::to_string(k) + ".csv";
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw DataError("cannot write curve file: " + path);
        os << axis.name << ",top" << k << "_percent,quality_index\n";
        os << std::setprecision(17);
        for (const Point& p : pts)
          os << p.x << ',' << p.acc << ',' << p.quality << '\n';
        if (!os) throw DataError("write failure on curve file: " + path);
        if (pts.size() == 1)
          std::cerr << "warning: single-point series (no curve to draw): " << path << '\n';
        written.push_back(path);
      }
    }
  }
  return written;
}

size_t cmd_encode(const std::string& image_path, const std::string& codec_checkpoint,
                  const std::string& out_path) {
  cdc::CodecModel codec = cdc::load_codec(codec_checkpoint);
  const Tensor img = img::read_image(image_path);
  const cdc::EncodedImage enc =
      cdc::encode_image(codec, img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)}));
  std::ofstream os(out_path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write stream: " + out_path);
  os.write(reinterpret_cast<const char*>(enc.stream.data()),
           std::streamsize(enc.stream.size()));
  if (!os) throw DataError("write failure on stream: " + out_path);
  return enc.stream.size();
}

namespace {
std::vector<uint8_t> read_stream_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw DataError("cannot open stream: " + path);
  const std::streamsize size = is.tellg();
  is.seekg(0);
  std::vector<uint8_t> bytes(size_t(size), 0);
  is.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!is) throw DataError("read failure on stream: " + path);
  return bytes;
}
}  // namespace

DecodeOutcome cmd_decode(const std::string& lsc_path, const std::string& codec_checkpoint,
                         const std::string& out_png, const std::string& reference_image) {
  cdc::CodecModel codec = cdc::load_codec(codec_checkpoint);
  const std::vector<uint8_t> stream = read_stream_file(lsc_path);
  Tensor decoded;
  try {
    decoded = cdc::decode_image(codec, stream);
  } catch (const StreamError& e) {
    throw StreamError(e.kind, std::string(e.what()) + " (while decoding " + lsc_path + ")");
  }
  img::write_png(out_png, decoded.reshaped({decoded.dim(1), decoded.dim(2), decoded.dim(3)}));

  DecodeOutcome out;
  if (!reference_image.empty()) {
    const Tensor ref = img::read_image(reference_image);
    Tensor ref4 = ref.reshaped({1, ref.dim(0), ref.dim(1), ref.dim(2)});
    if (ref4.shape != decoded.shape)
      throw DataError("reference image is " + ref.shape_str() + " but the stream decodes to " +
                      decoded.shape_str());
    const ent::ParsedStream ps = ent::parse(stream.data(), stream.size());
    out.report.image_id = fs::path(lsc_path).filename().string();
    out.report.quality_index = int(ps.header.quality_index);
    out.report.bpp = double(stream.size()) * 8.0 / (double(ref.dim(1)) * ref.dim(2));
    out.report.psnr_db = met::psnr(ref4, decoded);
    out.report.ssim = met::ssim(ref4, decoded);
    out.report.ms_ssim = met::ms_ssim(ref4, decoded);
    out.has_report = true;
  }
  return out;
}

namespace {
// Channel sum -> min-max normalized [1,h,w] grayscale.
Tensor summary_panel(const Tensor& latent) {
  const int c = latent.dim(1), h = latent.dim(2), w = latent.dim(3);
  Tensor panel({1, h, w});
  for (int ch = 0; ch < c; ++ch) {
    const float* src = latent.ptr() + size_t(ch) * h * w;
    for (size_t i = 0; i < size_t(h) * w; ++i) panel.data[i] += src[i];
  }
  float lo = panel.data[0], hi = panel.data[0];
  for (float v : panel.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float scale = hi > lo ? 1.0f / (hi - lo) : 0.0f;
  for (float& v : panel.data) v = hi > lo ? (v - lo) * scale : 0.5f;
  return panel;
}
}  // namespace

void cmd_latent_summary(const std::string& lsc_path, const std::string& codec_checkpoint,
                        const std::string& out_prefix) {
  cdc::CodecModel codec = cdc::load_codec(codec_checkpoint);
  const std::vector<uint8_t> stream = read_stream_file(lsc_path);
  cdc::DecodedLatents lat;
  try {
    lat = cdc::decode_latents(codec, stream);
  } catch (const StreamError& e) {
    throw StreamError(e.kind, std::string(e.what()) + " (while decoding " + lsc_path + ")");
  }
  img::write_png(out_prefix + "_y.png", summary_panel(lat.y_hat));
  img::write_png(out_prefix + "_sigma.png", summary_panel(lat.sigma_hat));
}

}  // namespace lsc::pipe
