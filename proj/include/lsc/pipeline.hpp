#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lsc/classifiers.hpp"
#include "lsc/codec.hpp"
#include "lsc/data.hpp"
#include "lsc/metrics.hpp"

// Workflow orchestration: the three pixel-domain anchors, compressed-domain
// classification straight from stored latents, rate/quality/accuracy
// evaluation tables, and accuracy-vs-rate curve emission.
namespace lsc::pipe {

enum class Workflow { anchor1, anchor2, anchor3, compressed };

const char* workflow_name(Workflow w);
Workflow workflow_from_name(const std::string& name);  // throws ConfigError

struct ExperimentConfig {
  Workflow workflow = Workflow::anchor3;
  std::vector<int> quality_indices;               // unused by anchor3
  std::map<int, std::string> codec_checkpoints;   // quality -> checkpoint path
  std::string classifier_checkpoint;              // anchor1 / evaluate input
  std::string manifest_path;
  std::string latent_store_dir;                   // compressed workflow
  std::string output_dir = ".";
  uint64_t seed = 1;

  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::vector<std::pair<int, double>> lr_schedule = {{10, 10.0}, {20, 10.0}};
  double stop_at_val_top1 = -1.0;  // early stop threshold, negative disables

  data::AugmentationConfig augment;

  // Anchor-3 rows carry no quality index; this is its sentinel.
  static constexpr int kNoQuality = 0;

  void validate() const;  // throws ConfigError; checks referenced paths exist

  // Desk-scale defaults: batch 16 and crops sized for 64 px toy textures.
  static ExperimentConfig toy_defaults();
};

// `key = value` lines; '#' starts a comment. Unknown keys are errors so
// typos cannot silently fall back to defaults.
ExperimentConfig load_config_file(const std::string& path);
// Same parsing layered onto an existing config (presets and flags compose).
void apply_config_file(ExperimentConfig& cfg, const std::string& path);
void apply_config_entry(ExperimentConfig& cfg, const std::string& key, const std::string& value);
// LSC_SEED overrides cfg.seed when set.
void apply_env_overrides(ExperimentConfig& cfg);

// One evaluated operating point. Distortion fields are NaN when the workflow
// cannot measure them without decoding (compressed-domain rows); curves fill
// those x-axes from a sibling anchor row at the same quality.
struct EvaluationRow {
  Workflow workflow = Workflow::anchor3;
  int quality_index = ExperimentConfig::kNoQuality;
  double bpp = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
  double top1 = 0.0;  // percentages in [0, 100]
  double top5 = 0.0;
  int samples = 0;

  void validate() const;  // throws DataError on invariant violations
};

std::string evaluation_csv_header();
std::string to_csv_row(const EvaluationRow& r);
EvaluationRow evaluation_from_csv_row(const std::string& line);
void save_rows(const std::string& path, const std::vector<EvaluationRow>& rows);
std::vector<EvaluationRow> load_rows(const std::string& path);

// Holds <dir>/.lsc-lock exclusively for this process; a second workflow
// against the same directory fails fast instead of interleaving writes.
class DirLock {
 public:
  explicit DirLock(const std::string& dir);  // throws ConfigError if held
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

// Anchor 3: train the pixel classifier on originals and evaluate it.
// Anchor 1: evaluate an existing anchor-3 checkpoint on decoded images.
// Anchor 2: retrain the pixel classifier on decoded images per quality.
// Decoded images always come from real encode -> bitstream -> decode round
// trips, so anchor rows also carry bpp/PSNR/SSIM/MS-SSIM.
std::vector<EvaluationRow> run_anchor(const ExperimentConfig& cfg);

// Trains and evaluates the compressed-domain classifier on stored latent
// pairs; asserts the synthesis transform is never invoked.
std::vector<EvaluationRow> run_compressed(const ExperimentConfig& cfg);

// Evaluation of an existing classifier checkpoint, no training. Anchors
// decode the test split for metrics; compressed reads the latent store.
std::vector<EvaluationRow> run_evaluation(const ExperimentConfig& cfg);

// One CSV per (workflow, x-axis in {bpp, psnr, ssim}, k in {1, 5}), points
// sorted by ascending x; single-point series still emit, with a warning.
// Returns the written file paths.
std::vector<std::string> emit_curves(const std::vector<EvaluationRow>& rows,
                                     const std::string& out_dir);

// Compresses one image file to an .lsc stream; returns the byte count.
size_t cmd_encode(const std::string& image_path, const std::string& codec_checkpoint,
                  const std::string& out_path);

// Decompresses an .lsc stream to a PNG. With a reference image, also computes
// the rate/quality report against it.
struct DecodeOutcome {
  met::QualityReport report;
  bool has_report = false;
};
DecodeOutcome cmd_decode(const std::string& lsc_path, const std::string& codec_checkpoint,
                         const std::string& out_png, const std::string& reference_image = "");

// Channel-sum + min-max normalized grayscale panels of y_hat and sigma_hat,
// written as <out_prefix>_y.png and <out_prefix>_sigma.png. Never invokes
// the synthesis transform.
void cmd_latent_summary(const std::string& lsc_path, const std::string& codec_checkpoint,
                        const std::string& out_prefix);

}  // namespace lsc::pipe
