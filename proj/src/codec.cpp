#include "lsc/codec.hpp"

#include <atomic>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "lsc/checkpoint.hpp"
#include "lsc/kernels.hpp"
#include "lsc/metrics.hpp"
#include "lsc/optimizer.hpp"

namespace lsc::cdc {

void CodecConfig::validate() const {
  if (latent_channels < 1 || feature_channels < 1 || hyper_channels < 1)
    throw ConfigError("codec channel counts must be positive");
  if (quality_index < 1 || quality_index > 8)
    throw ConfigError("quality index must be in [1,8], got " + std::to_string(quality_index));
  if (lambda <= 0.0) throw ConfigError("lambda must be positive");
  if (sigma_floor <= 0.0) throw ConfigError("sigma floor must be positive");
}

double CodecConfig::lambda_for_quality(int q) {
  if (q < 1 || q > 8)
    throw ConfigError("quality index must be in [1,8], got " + std::to_string(q));
  return 0.003 * std::pow(2.0, q - 1);
}

CodecConfig CodecConfig::toy(int quality) {
  CodecConfig c;
  c.latent_channels = 32;
  c.feature_channels = 32;
  c.hyper_channels = 16;
  c.quality_index = quality;
  c.lambda = lambda_for_quality(quality);
  return c;
}

CodecConfig CodecConfig::full(int quality) {
  CodecConfig c;
  c.latent_channels = 192;
  c.feature_channels = 192;
  c.hyper_channels = 128;
  c.quality_index = quality;
  c.lambda = lambda_for_quality(quality);
  return c;
}

namespace {
std::atomic<int64_t> g_synthesis_calls{0};
}

int64_t synthesis_call_count() { return g_synthesis_calls.load(); }
void reset_synthesis_call_count() { g_synthesis_calls.store(0); }

CodecModel::CodecModel(const CodecConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng::derive(seed, 0xC0DECull);
  const int f = cfg_.feature_channels, c = cfg_.latent_channels, hc = cfg_.hyper_channels;

  const int enc_in[4] = {3, f, f, f};
  const int enc_out[4] = {f, f, f, c};
  for (int i = 0; i < 4; ++i)
    enc_conv_[i] = nn::Conv2dLayer("analysis.conv" + std::to_string(i + 1), enc_in[i],
                                   enc_out[i], 5, 2, 2, rng);
  for (int i = 0; i < 3; ++i)
    enc_gdn_[i] = nn::GdnLayer("analysis.gdn" + std::to_string(i + 1), f, /*inverse=*/false);

  // 6x6 kernels: with stride 2 and pad 2 the transpose output is exactly 2x
  // the input extent, mirroring the ceil-halving of the 5x5 analysis convs.
  const int dec_in[4] = {c, f, f, f};
  const int dec_out[4] = {f, f, f, 3};
  for (int i = 0; i < 4; ++i)
    dec_conv_[i] = nn::ConvTranspose2dLayer("synthesis.tconv" + std::to_string(i + 1),
                                            dec_in[i], dec_out[i], 6, 2, 2, rng);
  for (int i = 0; i < 3; ++i)
    dec_gdn_[i] = nn::GdnLayer("synthesis.igdn" + std::to_string(i + 1), f, /*inverse=*/true);

  hyp_enc_[0] = nn::Conv2dLayer("hyper_analysis.conv1", c, hc, 3, 1, 1, rng);
  hyp_enc_[1] = nn::Conv2dLayer("hyper_analysis.conv2", hc, hc, 5, 2, 2, rng);
  hyp_enc_[2] = nn::Conv2dLayer("hyper_analysis.conv3", hc, hc, 5, 2, 2, rng);

  hyp_dec_up_[0] = nn::ConvTranspose2dLayer("hyper_synthesis.tconv1", hc, hc, 6, 2, 2, rng);
  hyp_dec_up_[1] = nn::ConvTranspose2dLayer("hyper_synthesis.tconv2", hc, hc, 6, 2, 2, rng);
  hyp_dec_out_ = nn::Conv2dLayer("hyper_synthesis.conv_out", hc, c, 3, 1, 1, rng);

  z_log_scale_ = ad::Param("hyper_prior.log_scale", Tensor({hc}));
}

std::vector<ad::Param*> CodecModel::params() {
  std::vector<ad::Param*> out;
  for (auto& l : enc_conv_) l.collect(out);
  for (auto& l : enc_gdn_) l.collect(out);
  for (auto& l : dec_conv_) l.collect(out);
  for (auto& l : dec_gdn_) l.collect(out);
  for (auto& l : hyp_enc_) l.collect(out);
  for (auto& l : hyp_dec_up_) l.collect(out);
  hyp_dec_out_.collect(out);
  out.push_back(&z_log_scale_);
  return out;
}

ad::Node* CodecModel::analysis(ad::Tape& t, ad::Node* x) {
  const auto& xs = x->val().shape;
  if (xs.size() != 4 || xs[1] != 3)
    throw ShapeError("analysis expects RGB input [N,3,H,W], got " + x->val().shape_str());
  ad::Node* h = x;
  for (int i = 0; i < 4; ++i) {
    h = enc_conv_[i].forward(t, h);
    if (i < 3) h = enc_gdn_[i].forward(t, h);
  }
  return h;
}

ad::Node* CodecModel::synthesis(ad::Tape& t, ad::Node* y_hat, bool training) {
  g_synthesis_calls.fetch_add(1);
  const auto& ys = y_hat->val().shape;
  if (ys.size() != 4 || ys[1] != cfg_.latent_channels)
    throw ShapeError("synthesis expects [N," + std::to_string(cfg_.latent_channels) +
                     ",h,w], got " + y_hat->val().shape_str());
  ad::Node* h = y_hat;
  for (int i = 0; i < 4; ++i) {
    h = dec_conv_[i].forward(t, h);
    if (i < 3) h = dec_gdn_[i].forward(t, h);
  }
  if (!training) h = ops::min_with(t, ops::max_with(t, h, 0.0), 1.0);
  return h;
}

ad::Node* CodecModel::hyper_analysis(ad::Tape& t, ad::Node* y) {
  const auto& ys = y->val().shape;
  if (ys.size() != 4 || ys[1] != cfg_.latent_channels)
    throw ShapeError("hyper_analysis expects [N," + std::to_string(cfg_.latent_channels) +
                     ",h,w], got " + y->val().shape_str());
  ad::Node* h = ops::abs_val(t, y);
  h = ops::relu(t, hyp_enc_[0].forward(t, h));
  h = ops::relu(t, hyp_enc_[1].forward(t, h));
  return hyp_enc_[2].forward(t, h);
}

ad::Node* CodecModel::hyper_synthesis(ad::Tape& t, ad::Node* z_hat, int latent_h,
                                      int latent_w) {
  const auto& zs = z_hat->val().shape;
  if (zs.size() != 4 || zs[1] != cfg_.hyper_channels)
    throw ShapeError("hyper_synthesis expects [N," + std::to_string(cfg_.hyper_channels) +
                     ",h,w], got " + z_hat->val().shape_str());
  ad::Node* h = ops::relu(t, hyp_dec_up_[0].forward(t, z_hat));
  h = ops::relu(t, hyp_dec_up_[1].forward(t, h));
  h = hyp_dec_out_.forward(t, h);
  if (h->val().dim(2) < latent_h || h->val().dim(3) < latent_w)
    throw ShapeError("hyper_synthesis output " + h->val().shape_str() +
                     " cannot cover latent " + std::to_string(latent_h) + "x" +
                     std::to_string(latent_w));
  if (h->val().dim(2) != latent_h || h->val().dim(3) != latent_w)
    h = ops::crop_spatial(t, h, latent_h, latent_w);
  return ops::add_scalar(t, ops::exp_op(t, h), cfg_.sigma_floor);
}

ad::Node* CodecModel::z_sigma(ad::Tape& t) {
  return ops::add_scalar(t, ops::exp_op(t, t.leaf_param(z_log_scale_)), cfg_.sigma_floor);
}

std::vector<double> CodecModel::z_sigma_values() const {
  std::vector<double> out(z_log_scale_.value.data.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = cfg_.sigma_floor + std::exp(double(z_log_scale_.value.data[i]));
  return out;
}

Tensor quantize_round(const Tensor& y) { return round_half_away(y); }

ad::Node* quantize_noise(ad::Tape& t, ad::Node* y, Rng& rng) {
  Tensor v(y->val().shape);
  const float* py = y->val().ptr();
  for (size_t i = 0; i < v.data.size(); ++i)
    v.data[i] = py[i] + float(rng.uniform() - 0.5);
  ad::Node* n = t.make(std::move(v), {y}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, y](ad::Tape&) {
    const float* g = n->grad.ptr();
    float* gy = y->grad_buffer().data.data();
    kern::parallel_for(n->grad.numel(), [=](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) gy[i] += g[i];
    });
  };
  return n;
}

ad::Node* rate_bits(ad::Tape& t, ad::Node* values, ad::Node* sigma) {
  return ops::gaussian_bits(t, values, sigma, kRateProbFloor);
}

namespace {
double interval_bits(double v, double s) {
  const double p =
      ent::norm_cdf((v + 0.5) / s) - ent::norm_cdf((v - 0.5) / s);
  return -std::log2(p > kRateProbFloor ? p : kRateProbFloor);
}
}  // namespace

double rate_estimate(const LatentPair& latents) {
  require_same_shape(latents.y_hat, latents.sigma_hat, "rate_estimate");
  double bits = 0.0;
  for (size_t i = 0; i < latents.y_hat.data.size(); ++i)
    bits += interval_bits(double(latents.y_hat.data[i]), double(latents.sigma_hat.data[i]));
  return bits;
}

double rate_estimate(const HyperLatent& latents, const std::vector<double>& channel_sigma) {
  const auto& zs = latents.z_hat.shape;
  if (zs.size() != 4 || size_t(zs[1]) != channel_sigma.size())
    throw ShapeError("hyper-latent " + latents.z_hat.shape_str() + " does not match " +
                     std::to_string(channel_sigma.size()) + " channel scales");
  const int64_t plane = int64_t(zs[2]) * zs[3];
  double bits = 0.0;
  for (int n = 0; n < zs[0]; ++n)
    for (int c = 0; c < zs[1]; ++c) {
      const float* p = latents.z_hat.ptr() + (int64_t(n) * zs[1] + c) * plane;
      for (int64_t i = 0; i < plane; ++i)
        bits += interval_bits(double(p[i]), channel_sigma[size_t(c)]);
    }
  return bits;
}

ad::Node* rd_loss(ad::Tape& t, ad::Node* x, ad::Node* x_hat, ad::Node* total_bits,
                  int64_t num_pixels, double lambda) {
  if (num_pixels < 1) throw ConfigError("rd_loss needs a positive pixel count");
  ad::Node* bpp = ops::mul_scalar(t, total_bits, 1.0 / double(num_pixels));
  ad::Node* ms = met::ms_ssim_graph(t, x, x_hat);
  ad::Node* distortion =
      ops::mul_scalar(t, ops::add_scalar(t, ops::mul_scalar(t, ms, -1.0), 1.0), lambda);
  return ops::add(t, bpp, distortion);
}

namespace {
int round_up64(int v) { return (v + 63) / 64 * 64; }

int32_t to_symbol(float v) { return int32_t(std::llround(double(v))); }

// Table index per element: the hyper-latent uses one snapped scale per
// channel, the latent snaps its per-element sigma map.
std::vector<int> z_table_indices(int n, int channels, int64_t plane,
                                 const std::vector<double>& channel_sigma) {
  std::vector<int> idx(size_t(n) * channels * plane);
  size_t at = 0;
  for (int img = 0; img < n; ++img)
    for (int c = 0; c < channels; ++c) {
      const int snapped = ent::snap_sigma(channel_sigma[size_t(c)]);
      for (int64_t i = 0; i < plane; ++i) idx[at++] = snapped;
    }
  return idx;
}

std::vector<int> y_table_indices(const Tensor& sigma_hat) {
  std::vector<int> idx(sigma_hat.numel());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = ent::snap_sigma(double(sigma_hat.data[i]));
  return idx;
}
}  // namespace

EncodedImage encode_image(CodecModel& m, const Tensor& x) {
  const auto& xs = x.shape;
  if (xs.size() != 4 || xs[0] != 1 || xs[1] != 3)
    throw ShapeError("encode expects one [1,3,H,W] image, got " + x.shape_str());
  const int h = xs[2], w = xs[3];
  const int hp = round_up64(h), wp = round_up64(w);

  ad::Tape t;
  t.grad_enabled = false;
  ad::Node* xn = t.leaf(hp == h && wp == w ? x : reflect_pad_hw(x, 0, hp - h, 0, wp - w));
  ad::Node* y = m.analysis(t, xn);
  ad::Node* z = m.hyper_analysis(t, y);
  Tensor z_hat = quantize_round(z->val());
  const int lh = y->val().dim(2), lw = y->val().dim(3);
  ad::Node* sig = m.hyper_synthesis(t, t.leaf(z_hat), lh, lw);
  Tensor y_hat = quantize_round(y->val());
  Tensor sigma_hat = sig->val();

  const auto& zs = z_hat.shape;
  std::vector<int32_t> z_vals(z_hat.numel());
  for (size_t i = 0; i < z_vals.size(); ++i) z_vals[i] = to_symbol(z_hat.data[i]);
  const std::vector<uint8_t> z_payload = ent::encode_symbols(
      z_vals, z_table_indices(zs[0], zs[1], int64_t(zs[2]) * zs[3], m.z_sigma_values()));

  std::vector<int32_t> y_vals(y_hat.numel());
  for (size_t i = 0; i < y_vals.size(); ++i) y_vals[i] = to_symbol(y_hat.data[i]);
  const std::vector<uint8_t> y_payload =
      ent::encode_symbols(y_vals, y_table_indices(sigma_hat));

  ent::BitstreamHeader header;
  header.quality_index = uint8_t(m.config().quality_index);
  header.true_height = uint32_t(h);
  header.true_width = uint32_t(w);
  header.latent_channels = uint16_t(m.config().latent_channels);
  header.hyper_channels = uint16_t(m.config().hyper_channels);
  header.z_length = uint32_t(z_payload.size());
  header.y_length = uint32_t(y_payload.size());

  EncodedImage out;
  out.stream = ent::serialize(header, z_payload, y_payload);
  out.y_hat = std::move(y_hat);
  out.sigma_hat = std::move(sigma_hat);
  return out;
}

DecodedLatents decode_latents(CodecModel& m, const std::vector<uint8_t>& stream) {
  const ent::ParsedStream ps = ent::parse(stream.data(), stream.size());
  const ent::BitstreamHeader& hd = ps.header;
  if (hd.latent_channels != m.config().latent_channels ||
      hd.hyper_channels != m.config().hyper_channels)
    throw ConfigError("stream was coded with C=" + std::to_string(hd.latent_channels) +
                      ", hyper=" + std::to_string(hd.hyper_channels) + "; model has C=" +
                      std::to_string(m.config().latent_channels) + ", hyper=" +
                      std::to_string(m.config().hyper_channels));
  const int h = int(hd.true_height), w = int(hd.true_width);
  const int hp = round_up64(h), wp = round_up64(w);
  const int lh = hp / 16, lw = wp / 16;
  const int zh = hp / 64, zw = wp / 64;
  const int hc = hd.hyper_channels, lc = hd.latent_channels;

  const std::vector<int32_t> z_vals =
      ent::decode_symbols(ps.z_payload.data(), ps.z_payload.size(), size_t(hc) * zh * zw,
                          z_table_indices(1, hc, int64_t(zh) * zw, m.z_sigma_values()));
  Tensor z_hat({1, hc, zh, zw});
  for (size_t i = 0; i < z_vals.size(); ++i) z_hat.data[i] = float(z_vals[i]);
  z_hat.integer_valued = true;

  ad::Tape t;
  t.grad_enabled = false;
  ad::Node* sig = m.hyper_synthesis(t, t.leaf(std::move(z_hat)), lh, lw);
  const std::vector<int32_t> y_vals = ent::decode_symbols(
      ps.y_payload.data(), ps.y_payload.size(), size_t(lc) * lh * lw,
      y_table_indices(sig->val()));
  DecodedLatents out;
  out.y_hat = Tensor({1, lc, lh, lw});
  for (size_t i = 0; i < y_vals.size(); ++i) out.y_hat.data[i] = float(y_vals[i]);
  out.y_hat.integer_valued = true;
  out.sigma_hat = sig->val();
  out.true_h = h;
  out.true_w = w;
  return out;
}

Tensor decode_image(CodecModel& m, const std::vector<uint8_t>& stream) {
  DecodedLatents lat = decode_latents(m, stream);
  ad::Tape t;
  t.grad_enabled = false;
  ad::Node* xr = m.synthesis(t, t.leaf(std::move(lat.y_hat)), /*training=*/false);
  const int h = lat.true_h, w = lat.true_w;
  if (xr->val().dim(2) == h && xr->val().dim(3) == w) return xr->val();
  return crop_hw(xr->val(), 0, 0, h, w);
}

namespace {
std::vector<Tensor> snapshot_params(const std::vector<ad::Param*>& params) {
  std::vector<Tensor> snap;
  snap.reserve(params.size());
  for (const ad::Param* p : params) snap.push_back(p->value);
  return snap;
}

void restore_params(const std::vector<ad::Param*>& params, const std::vector<Tensor>& snap) {
  for (size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}
}  // namespace

CodecTrainResult train_codec(CodecModel& m, const std::vector<Tensor>& train_images,
                             const CodecTrainOptions& opts) {
  if (train_images.empty()) throw DataError("codec training needs at least one image");
  if (opts.epochs < 1 || opts.batch_size < 1)
    throw ConfigError("codec training needs positive epochs and batch size");
  const auto& shape0 = train_images[0].shape;
  if (shape0.size() != 3 || shape0[0] != 3)
    throw ShapeError("training images must be [3,H,W], got " + train_images[0].shape_str());
  for (const Tensor& img : train_images)
    if (img.shape != shape0)
      throw ShapeError("training images must share one shape; found " + img.shape_str() +
                       " vs " + train_images[0].shape_str());
  const int ih = shape0[1], iw = shape0[2];

  std::vector<ad::Param*> params = m.params();
  opt::SgdConfig sgd_cfg;
  sgd_cfg.learning_rate = opts.learning_rate;
  sgd_cfg.momentum = opts.momentum;
  sgd_cfg.weight_decay = opts.weight_decay;
  sgd_cfg.schedule = opts.lr_schedule;
  opt::Sgd sgd(params, sgd_cfg);

  std::vector<int> order(train_images.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Tensor> good = snapshot_params(params);

  CodecTrainResult res;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    sgd.set_epoch(epoch);
    Rng shuffle_rng = Rng::derive(opts.seed, 0x5C0DE01ull, uint64_t(epoch));
    shuffle_rng.shuffle(order);
    Rng noise_rng = Rng::derive(opts.seed, 0x5C0DE02ull, uint64_t(epoch));

    double sum_loss = 0.0, sum_bpp = 0.0, sum_ms = 0.0;
    int steps = 0;
    for (size_t begin = 0; begin < order.size(); begin += size_t(opts.batch_size)) {
      const size_t end = std::min(begin + size_t(opts.batch_size), order.size());
      const int b = int(end - begin);
      Tensor batch({b, 3, ih, iw});
      const size_t per = size_t(3) * ih * iw;
      for (size_t i = begin; i < end; ++i)
        std::copy(train_images[size_t(order[i])].data.begin(),
                  train_images[size_t(order[i])].data.end(),
                  batch.data.begin() + (i - begin) * per);

      ad::Tape t;
      t.release_buffers = true;
      ad::Node* xn = t.leaf(std::move(batch));
      ad::Node* y = m.analysis(t, xn);
      ad::Node* y_tilde = quantize_noise(t, y, noise_rng);
      ad::Node* z = m.hyper_analysis(t, y);
      ad::Node* z_tilde = quantize_noise(t, z, noise_rng);
      ad::Node* sigma = m.hyper_synthesis(t, z_tilde, y->val().dim(2), y->val().dim(3));
      ad::Node* bits_y = rate_bits(t, y_tilde, sigma);
      ad::Node* z_scale = ops::channel_broadcast(t, m.z_sigma(t), b, z->val().dim(2),
                                                 z->val().dim(3));
      ad::Node* bits_z = rate_bits(t, z_tilde, z_scale);
      ad::Node* total_bits = ops::add(t, bits_y, bits_z);
      ad::Node* x_hat = m.synthesis(t, y_tilde, /*training=*/true);

      const int64_t num_pixels = int64_t(b) * ih * iw;
      ad::Node* bpp = ops::mul_scalar(t, total_bits, 1.0 / double(num_pixels));
      ad::Node* ms = met::ms_ssim_graph(t, xn, x_hat);
      ad::Node* distortion = ops::mul_scalar(
          t, ops::add_scalar(t, ops::mul_scalar(t, ms, -1.0), 1.0), m.config().lambda);
      ad::Node* loss = ops::add(t, bpp, distortion);

      const double loss_v = double(loss->val().data[0]);
      const double bpp_v = double(bpp->val().data[0]);
      const double ms_v = double(ms->val().data[0]);
      if (!std::isfinite(loss_v)) {
        restore_params(params, good);
        res.diverged = true;
        return res;
      }
      t.backward(loss);
      try {
        sgd.step();
      } catch (const NumericError&) {
        restore_params(params, good);
        res.diverged = true;
        return res;
      }
      sum_loss += loss_v;
      sum_bpp += bpp_v;
      sum_ms += ms_v;
      ++steps;
    }

    CodecEpochStats stats;
    stats.epoch = epoch + 1;
    stats.mean_loss = sum_loss / steps;
    stats.mean_bpp = sum_bpp / steps;
    stats.mean_ms_ssim = sum_ms / steps;
    res.epochs.push_back(stats);
    if (opts.on_epoch) opts.on_epoch(stats);
    good = snapshot_params(params);
  }
  return res;
}

void save_codec(const std::string& path, CodecModel& m) {
  const CodecConfig& c = m.config();
  nlohmann::json meta{{"kind", "codec"},
                      {"quality_index", c.quality_index},
                      {"latent_channels", c.latent_channels},
                      {"feature_channels", c.feature_channels},
                      {"hyper_channels", c.hyper_channels},
                      {"lambda", c.lambda},
                      {"sigma_floor", c.sigma_floor}};
  std::vector<ad::Param*> ps = m.params();
  ckpt::save(path, std::vector<const ad::Param*>(ps.begin(), ps.end()), meta.dump());
}

CodecModel load_codec(const std::string& path) {
  ckpt::Loaded loaded = ckpt::load(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(loaded.meta_json);
  } catch (const nlohmann::json::exception&) {
    throw DataError("checkpoint at " + path + " has unparseable metadata");
  }
  if (meta.value("kind", std::string()) != "codec")
    throw DataError("checkpoint at " + path + " is not a codec model");
  CodecConfig cfg;
  try {
    cfg.quality_index = meta.at("quality_index").get<int>();
    cfg.latent_channels = meta.at("latent_channels").get<int>();
    cfg.feature_channels = meta.at("feature_channels").get<int>();
    cfg.hyper_channels = meta.at("hyper_channels").get<int>();
    cfg.lambda = meta.at("lambda").get<double>();
    cfg.sigma_floor = meta.at("sigma_floor").get<double>();
  } catch (const nlohmann::json::exception&) {
    throw DataError("codec checkpoint at " + path + " is missing config fields");
  }
  CodecModel m(cfg, 0);
  ckpt::restore(loaded, m.params());
  return m;
}

}  // namespace lsc::cdc
