#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "lsc/codec.hpp"
#include "lsc/entropy.hpp"
#include "lsc/rng.hpp"

using namespace lsc;

namespace {

Tensor unit_image(std::vector<int> shape, uint64_t seed) {
  Rng rng(seed);
  return random_tensor<float>(shape, rng, 0.0, 1.0);
}

std::filesystem::path temp_file(const std::string& stem) {
  return std::filesystem::temp_directory_path() / (stem + "_" + std::to_string(::getpid()));
}

}  // namespace

TEST_CASE("quality ladder doubles lambda per step") {
  CHECK(cdc::CodecConfig::lambda_for_quality(1) == doctest::Approx(0.003).epsilon(1e-12));
  CHECK(cdc::CodecConfig::lambda_for_quality(4) == doctest::Approx(0.024).epsilon(1e-12));
  CHECK(cdc::CodecConfig::lambda_for_quality(8) == doctest::Approx(0.384).epsilon(1e-12));

  cdc::CodecConfig toy = cdc::CodecConfig::toy(3);
  CHECK(toy.latent_channels == 32);
  CHECK(toy.feature_channels == 32);
  CHECK(toy.hyper_channels == 16);
  CHECK(toy.lambda == doctest::Approx(0.012));
  cdc::CodecConfig full = cdc::CodecConfig::full(1);
  CHECK(full.latent_channels == 192);
  CHECK(full.feature_channels == 192);
  CHECK(full.hyper_channels == 128);

  cdc::CodecConfig bad = toy;
  bad.quality_index = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.quality_index = 9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("transform stride ledger: pixels to latents and back") {
  cdc::CodecModel m(cdc::CodecConfig::toy(1), 7);
  ad::Tape t;
  t.grad_enabled = false;

  // 16x spatial reduction: 64 -> 4, 224 -> 14, 256 -> 16.
  struct Case {
    int in, latent;
  } cases[] = {{64, 4}, {224, 14}, {256, 16}};
  for (const auto& c : cases) {
    ad::Node* y = m.analysis(t, t.leaf(unit_image({1, 3, c.in, c.in}, 11)));
    CHECK(y->val().shape == std::vector<int>{1, 32, c.latent, c.latent});
  }

  // Hyper path: latent 16 -> hyper 4; sigma map restored to latent extents.
  Rng rng(12);
  ad::Node* y = t.leaf(random_tensor<float>({1, 32, 16, 16}, rng));
  ad::Node* z = m.hyper_analysis(t, y);
  CHECK(z->val().shape == std::vector<int>{1, 16, 4, 4});
  ad::Node* sigma = m.hyper_synthesis(t, z, 16, 16);
  CHECK(sigma->val().shape == std::vector<int>{1, 32, 16, 16});
  for (float s : sigma->val().data) CHECK(s >= float(m.config().sigma_floor));

  // Odd latent extents still recover exactly via the ceil/crop convention.
  ad::Node* y14 = t.leaf(random_tensor<float>({1, 32, 14, 14}, rng));
  ad::Node* z14 = m.hyper_analysis(t, y14);
  CHECK(z14->val().shape == std::vector<int>{1, 16, 4, 4});
  CHECK(m.hyper_synthesis(t, z14, 14, 14)->val().shape == std::vector<int>{1, 32, 14, 14});

  // Synthesis mirrors analysis and clamps in inference mode.
  cdc::reset_synthesis_call_count();
  ad::Node* x_hat = m.synthesis(t, t.leaf(random_tensor<float>({1, 32, 4, 4}, rng, -8.0, 8.0)),
                                false);
  CHECK(x_hat->val().shape == std::vector<int>{1, 3, 64, 64});
  for (float v : x_hat->val().data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(cdc::synthesis_call_count() == 1);
}

TEST_CASE("gdn and igdn invert each other when coupling is zero") {
  ad::Tape t;
  t.grad_enabled = false;
  Rng rng(21);
  Tensor x = random_tensor<float>({1, 4, 3, 3}, rng);
  Tensor beta({4});
  beta.data = {0.25f, 1.0f, 2.0f, 5.0f};
  Tensor gamma({4, 4});
  gamma.fill(0.0f);

  ad::Node* fwd = ops::gdn(t, t.leaf(x), t.leaf(beta), t.leaf(gamma), false);
  ad::Node* back = ops::gdn(t, fwd, t.leaf(beta), t.leaf(gamma), true);
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(back->val().data[i] == doctest::Approx(x.data[i]).epsilon(1e-6));
  // And the forward truly divides by sqrt(beta) elementwise.
  for (int c = 0; c < 4; ++c)
    CHECK(fwd->val().at(0, c, 0, 0) ==
          doctest::Approx(x.at(0, c, 0, 0) / std::sqrt(beta.data[size_t(c)])).epsilon(1e-6));
}

TEST_CASE("rounding quantizer takes ties away from zero and flags integers") {
  Tensor y({1, 1, 1, 8});
  y.data = {0.5f, -0.5f, 1.5f, -1.5f, 2.4f, -2.4f, 0.49f, 3.0f};
  Tensor q = cdc::quantize_round(y);
  CHECK(q.integer_valued);
  CHECK(q.data == std::vector<float>{1.0f, -1.0f, 2.0f, -2.0f, 2.0f, -2.0f, 0.0f, 3.0f});
}

TEST_CASE("noise quantizer adds bounded centered noise and passes gradients") {
  ad::Tape t;
  Rng rng(31);
  Tensor y({1, 1, 8, 8});
  y.fill(0.25f);
  ad::Node* leaf = t.leaf(y);
  double sum = 0.0;
  int draws = 200;
  for (int i = 0; i < draws; ++i) {
    ad::Node* q = cdc::quantize_noise(t, leaf, rng);
    for (size_t j = 0; j < q->val().data.size(); ++j) {
      double u = double(q->val().data[j]) - 0.25;
      CHECK(u >= -0.5);
      CHECK(u < 0.5);
      sum += u;
    }
  }
  CHECK(std::abs(sum / double(draws * 64)) < 0.01);

  ad::ParamT<float> p("y", y);
  ad::Tape t2;
  ad::Node* q = cdc::quantize_noise(t2, t2.leaf_param(p), rng);
  t2.backward(ops::sum_all(t2, q));
  for (float g : p.grad.data) CHECK(g == 1.0f);  // straight-through
}

TEST_CASE("gaussian rate matches the interval-probability formula") {
  // Zero symbols under sigma 0.2: -log2(Phi(2.5) - Phi(-2.5)) bits each.
  double p_in = ent::norm_cdf(2.5) - ent::norm_cdf(-2.5);
  double bits_per = -std::log2(p_in);
  CHECK(bits_per == doctest::Approx(0.018027).epsilon(1e-3));

  int n = 1000;
  Tensor v({1, 1, 1, n});
  v.fill(0.0f);
  Tensor sig({1, 1, 1, n});
  sig.fill(0.2f);

  cdc::LatentPair pair{v, sig};
  CHECK(cdc::rate_estimate(pair) == doctest::Approx(n * bits_per).epsilon(1e-4));

  ad::Tape t;
  t.grad_enabled = false;
  ad::Node* bits = cdc::rate_bits(t, t.leaf(v), t.leaf(sig));
  CHECK(bits->val().data[0] == doctest::Approx(n * bits_per).epsilon(1e-4));

  // Far outliers bottom out at the probability floor: exactly 16 bits each.
  Tensor far({1, 1, 1, 4});
  far.fill(1000.0f);
  Tensor tight({1, 1, 1, 4});
  tight.fill(0.05f);
  cdc::LatentPair floored{far, tight};
  CHECK(cdc::rate_estimate(floored) == doctest::Approx(4.0 * 16.0).epsilon(1e-9));
}

TEST_CASE("rate estimate tracks the actual coded payload") {
  Rng rng(41);
  const double* grid = ent::sigma_grid();
  int n = 6000;
  Tensor v({1, 1, 1, n}), sig({1, 1, 1, n});
  std::vector<int32_t> symbols;
  std::vector<int> tables;
  for (int i = 0; i < n; ++i) {
    int t = ent::snap_sigma(std::exp(rng.uniform(std::log(0.1), std::log(6.0))));
    double s = grid[t];
    int32_t val = int32_t(std::lround(rng.normal() * s));
    v.data[size_t(i)] = float(val);
    sig.data[size_t(i)] = float(s);
    symbols.push_back(val);
    tables.push_back(t);
  }
  double estimate = cdc::rate_estimate({v, sig});
  double actual = 8.0 * double(ent::encode_symbols(symbols, tables).size());
  CHECK(actual <= estimate * 1.01 + 64.0);
  CHECK(actual >= estimate * 0.95 - 64.0);
}

TEST_CASE("decode reproduces the direct quantize-synthesize path bit for bit") {
  cdc::CodecModel m(cdc::CodecConfig::toy(2), 99);
  Tensor x = unit_image({1, 3, 64, 64}, 51);

  cdc::EncodedImage enc = cdc::encode_image(m, x);
  CHECK(enc.y_hat.shape == std::vector<int>{1, 32, 4, 4});
  CHECK(enc.y_hat.integer_valued);
  CHECK(enc.sigma_hat.shape == enc.y_hat.shape);

  // The latents must be exactly what analysis + rounding produce.
  ad::Tape t;
  t.grad_enabled = false;
  ad::Node* y = m.analysis(t, t.leaf(x));
  Tensor y_hat = cdc::quantize_round(y->val());
  CHECK(y_hat.data == enc.y_hat.data);

  Tensor direct = m.synthesis(t, t.leaf(y_hat), false)->val();
  Tensor decoded = cdc::decode_image(m, enc.stream);
  CHECK(decoded.shape == std::vector<int>{1, 3, 64, 64});
  CHECK(decoded.data == direct.data);
}

TEST_CASE("latent-only decode is exact and never runs synthesis") {
  cdc::CodecModel m(cdc::CodecConfig::toy(5), 123);
  Tensor x = unit_image({1, 3, 100, 76}, 61);  // forces reflect padding to 128x128

  cdc::EncodedImage enc = cdc::encode_image(m, x);
  ent::ParsedStream parsed = ent::parse(enc.stream.data(), enc.stream.size());
  CHECK(parsed.header.quality_index == 5);
  CHECK(parsed.header.true_height == 100);
  CHECK(parsed.header.true_width == 76);
  CHECK(enc.y_hat.shape == std::vector<int>{1, 32, 8, 8});  // padded grid

  cdc::reset_synthesis_call_count();
  cdc::DecodedLatents lat = cdc::decode_latents(m, enc.stream);
  CHECK(cdc::synthesis_call_count() == 0);
  CHECK(lat.true_h == 100);
  CHECK(lat.true_w == 76);
  CHECK(lat.y_hat.integer_valued);
  CHECK(lat.y_hat.data == enc.y_hat.data);
  CHECK(lat.sigma_hat.data == enc.sigma_hat.data);

  Tensor full = cdc::decode_image(m, enc.stream);
  CHECK(cdc::synthesis_call_count() == 1);
  CHECK(full.shape == std::vector<int>{1, 3, 100, 76});
}

TEST_CASE("codec checkpoints rebuild an equivalent model") {
  auto path = temp_file("lsc_codec_ckpt");
  Tensor x = unit_image({1, 3, 64, 64}, 71);
  std::vector<uint8_t> stream;
  {
    cdc::CodecModel m(cdc::CodecConfig::toy(3), 2024);
    stream = cdc::encode_image(m, x).stream;
    cdc::save_codec(path.string(), m);
  }
  cdc::CodecModel loaded = cdc::load_codec(path.string());
  CHECK(loaded.config().quality_index == 3);
  CHECK(loaded.config().latent_channels == 32);
  CHECK(loaded.config().lambda == doctest::Approx(0.012));
  CHECK(cdc::encode_image(loaded, x).stream == stream);
  Tensor round = cdc::decode_image(loaded, stream);
  CHECK(round.shape == std::vector<int>{1, 3, 64, 64});
  std::filesystem::remove(path);

  CHECK_THROWS_AS(cdc::load_codec("/nonexistent/codec.lscp"), Error);
}

TEST_CASE("hyper-latent prior scales are exposed per channel") {
  cdc::CodecModel m(cdc::CodecConfig::toy(1), 5);
  std::vector<double> zs = m.z_sigma_values();
  CHECK(zs.size() == 16);
  for (double s : zs) CHECK(s > 0.0);

  // The factorized-prior rate estimate agrees with per-symbol table entropy
  // in shape terms: just check it is positive and finite for random latents.
  Rng rng(81);
  Tensor z = random_tensor<float>({1, 16, 4, 4}, rng, -3.0, 3.0);
  z = cdc::quantize_round(z);
  double bits = cdc::rate_estimate(cdc::HyperLatent{z}, zs);
  CHECK(std::isfinite(bits));
  CHECK(bits > 0.0);
}
