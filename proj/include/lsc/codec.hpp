#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lsc/entropy.hpp"
#include "lsc/layers.hpp"
#include "lsc/ops.hpp"
#include "lsc/rng.hpp"

// Scale-hyperprior image codec: a four-stage conv+GDN analysis transform to a
// 16x-downsampled latent, a hyper transform producing per-element scale maps
// for the latent's conditional Gaussian rate model, and the mirrored
// synthesis transforms back to pixels. Trained end to end on
// bits-per-pixel + lambda * (1 - MS-SSIM).
namespace lsc::cdc {

struct CodecConfig {
  int latent_channels = 0;   // C: channels of the coded latent
  int feature_channels = 0;  // width of the three leading analysis stages
  int hyper_channels = 0;
  int quality_index = 1;  // 1..8
  double lambda = 0.003;  // rate-distortion weight
  double sigma_floor = 0.05;

  void validate() const;  // throws ConfigError

  // Geometric quality ladder: 0.003 * 2^(q-1).
  static double lambda_for_quality(int q);
  static CodecConfig toy(int quality);   // F=32, C=32, hyper=16
  static CodecConfig full(int quality);  // F=192, C=192, hyper=128
};

// Quantized latent with its scale map; shapes match, sigma_hat >= sigma_floor.
struct LatentPair {
  Tensor y_hat;
  Tensor sigma_hat;
};

struct HyperLatent {
  Tensor z_hat;
};

class CodecModel {
 public:
  CodecModel(const CodecConfig& cfg, uint64_t seed);
  CodecModel(const CodecModel&) = delete;
  CodecModel& operator=(const CodecModel&) = delete;
  // Movable so factories can return by value; any param pointers collected
  // before a move are invalidated by it.
  CodecModel(CodecModel&&) = default;
  CodecModel& operator=(CodecModel&&) = default;

  const CodecConfig& config() const { return cfg_; }
  std::vector<ad::Param*> params();

  // x [N,3,H,W] with H, W divisible by 64 (callers pad) -> y [N,C,H/16,W/16].
  ad::Node* analysis(ad::Tape& t, ad::Node* x);
  // y_hat [N,C,h,w] -> x_hat [N,3,16h,16w]; inference clamps to [0,1].
  ad::Node* synthesis(ad::Tape& t, ad::Node* y_hat, bool training);
  // y [N,C,h,w] -> z [N,hyper,ceil(h/4),ceil(w/4)]; operates on |y|.
  ad::Node* hyper_analysis(ad::Tape& t, ad::Node* y);
  // z_hat -> sigma_hat cropped to [N,C,latent_h,latent_w]; >= sigma_floor.
  ad::Node* hyper_synthesis(ad::Tape& t, ad::Node* z_hat, int latent_h, int latent_w);
  // Per-channel scales of the factorized hyper-latent prior -> [hyper].
  ad::Node* z_sigma(ad::Tape& t);
  std::vector<double> z_sigma_values() const;

 private:
  CodecConfig cfg_;
  nn::Conv2dLayer enc_conv_[4];
  nn::GdnLayer enc_gdn_[3];
  nn::ConvTranspose2dLayer dec_conv_[4];
  nn::GdnLayer dec_gdn_[3];
  nn::Conv2dLayer hyp_enc_[3];
  nn::ConvTranspose2dLayer hyp_dec_up_[2];
  nn::Conv2dLayer hyp_dec_out_;
  ad::Param z_log_scale_;
};

// Count of synthesis-transform invocations since the last reset; the
// compressed-domain classification workflow asserts it stays at zero.
int64_t synthesis_call_count();
void reset_synthesis_call_count();

// Nearest integer, ties away from zero; output flagged integer-valued.
Tensor quantize_round(const Tensor& y);
// Training proxy: y + u with u ~ U[-0.5, 0.5) i.i.d.; gradient passes through.
ad::Node* quantize_noise(ad::Tape& t, ad::Node* y, Rng& rng);

constexpr double kRateProbFloor = 1.0 / 65536.0;  // p_min = 2^-16

// Graph rate term: total bits of values under zero-mean Gaussians with the
// per-element (continuous) sigma map; per-symbol probability floored.
ad::Node* rate_bits(ad::Tape& t, ad::Node* values, ad::Node* sigma);

// Plain estimates of the same quantity for evaluation paths.
double rate_estimate(const LatentPair& latents);
double rate_estimate(const HyperLatent& latents, const std::vector<double>& channel_sigma);

// loss = total_bits/num_pixels + lambda * (1 - MS-SSIM(x, x_hat)).
ad::Node* rd_loss(ad::Tape& t, ad::Node* x, ad::Node* x_hat, ad::Node* total_bits,
                  int64_t num_pixels, double lambda);

// Full compression of one [1,3,H,W] image to a self-describing byte stream
// (reflect-padded to multiples of 64 internally; true extents in the header).
// Returns the padded-grid latents alongside the stream so callers can store
// them without re-running the transforms.
struct EncodedImage {
  std::vector<uint8_t> stream;
  Tensor y_hat;
  Tensor sigma_hat;
};
EncodedImage encode_image(CodecModel& m, const Tensor& x);
// Exact inverse of the entropy-coded path; output clamped to [0,1] and
// cropped to the true extents recorded in the header.
Tensor decode_image(CodecModel& m, const std::vector<uint8_t>& stream);

// Entropy decode of the latents alone: runs the hyper path for sigma_hat but
// never the synthesis transform. Latent visualizations and stream audits
// build on this without breaking the decoder-bypass guarantee.
struct DecodedLatents {
  Tensor y_hat;      // [1,C,lh,lw], integer-valued
  Tensor sigma_hat;  // [1,C,lh,lw]
  int true_h = 0;
  int true_w = 0;
};
DecodedLatents decode_latents(CodecModel& m, const std::vector<uint8_t>& stream);

struct CodecEpochStats {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double mean_bpp = 0.0;
  double mean_ms_ssim = 0.0;
};

struct CodecTrainOptions {
  int epochs = 20;
  int batch_size = 8;
  double learning_rate = 1e-4;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<std::pair<int, double>> lr_schedule;  // epoch -> divisor
  uint64_t seed = 1;
  std::function<void(const CodecEpochStats&)> on_epoch;
};

struct CodecTrainResult {
  std::vector<CodecEpochStats> epochs;
  bool diverged = false;
};

// Noise-proxy rate-distortion training. A non-finite loss or gradient halts
// training and rolls the parameters back to the end of the last clean epoch.
CodecTrainResult train_codec(CodecModel& m, const std::vector<Tensor>& train_images,
                             const CodecTrainOptions& opts);

// Checkpoints carry the config as a JSON preamble, so load_codec can rebuild
// the model without external configuration.
void save_codec(const std::string& path, CodecModel& m);
CodecModel load_codec(const std::string& path);

}  // namespace lsc::cdc
