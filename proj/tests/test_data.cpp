#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "lsc/codec.hpp"
#include "lsc/data.hpp"
#include "lsc/image_io.hpp"
#include "lsc/rng.hpp"

using namespace lsc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& stem) {
  fs::path p = fs::temp_directory_path() / (stem + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

float at3(const lsc::Tensor& t, int c, int y, int x) {
  return t.data[(size_t(c) * size_t(t.dim(1)) + size_t(y)) * size_t(t.dim(2)) + size_t(x)];
}

std::vector<uint8_t> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                              std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("synthetic toy set: splits, names, determinism, decodability") {
  auto dir_a = temp_dir("lsc_toy_a");
  auto dir_b = temp_dir("lsc_toy_b");
  data::DatasetManifest a = data::synth_toy_textures(dir_a.string(), 3, 20, 64, 11);
  data::DatasetManifest b = data::synth_toy_textures(dir_b.string(), 3, 20, 64, 11);

  CHECK(a.class_names == std::vector<std::string>{"grating0", "checker0", "noise0"});
  CHECK(a.records.size() == 60);
  auto counts = a.split_counts();
  CHECK(counts[size_t(data::Split::train)] == 42);  // 70/15/15 with floor per class
  CHECK(counts[size_t(data::Split::val)] == 9);
  CHECK(counts[size_t(data::Split::test)] == 9);

  // Same seed, same bytes; the generator is part of the reproducibility story.
  REQUIRE(a.records.size() == b.records.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].label == b.records[i].label);
    CHECK(a.records[i].split == b.records[i].split);
    CHECK(slurp(a.records[i].path) == slurp(b.records[i].path));
  }

  // The manifest round-trips through its own save file.
  data::DatasetManifest loaded = data::load_manifest((dir_a / "manifest.tsv").string());
  CHECK(loaded.records.size() == a.records.size());
  CHECK(loaded.class_names == a.class_names);
  CHECK(loaded.provenance == a.provenance);

  Tensor img = img::read_image(a.records[0].path);
  CHECK(img.shape == std::vector<int>{3, 64, 64});
  for (float v : img.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  // A different seed must actually change the pixels.
  auto dir_c = temp_dir("lsc_toy_c");
  data::DatasetManifest c = data::synth_toy_textures(dir_c.string(), 3, 20, 64, 12);
  CHECK(slurp(a.records[0].path) != slurp(c.records[0].path));

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  fs::remove_all(dir_c);
}

TEST_CASE("manifest loader rejects malformed rows and missing sidecars") {
  auto dir = temp_dir("lsc_manifest");
  {
    std::ofstream f(dir / "bad.tsv");
    f << "a.png\t0\ttrain\tex\n";  // four fields
  }
  {
    std::ofstream f((dir / "bad.tsv").string() + ".json");
    f << "{\"class_names\":[\"x\"],\"provenance\":\"t\"}";
  }
  CHECK_THROWS_AS(data::load_manifest((dir / "bad.tsv").string()), DataError);

  {
    std::ofstream f(dir / "nosidecar.tsv");
    f << "a.png\t0\ttrain\n";
  }
  CHECK_THROWS_AS(data::load_manifest((dir / "nosidecar.tsv").string()), DataError);

  {
    std::ofstream f(dir / "badlabel.tsv");
    f << "a.png\tzero\ttrain\n";
    std::ofstream j((dir / "badlabel.tsv").string() + ".json");
    j << "{\"class_names\":[\"x\"],\"provenance\":\"t\"}";
  }
  CHECK_THROWS_AS(data::load_manifest((dir / "badlabel.tsv").string()), DataError);
  fs::remove_all(dir);
}

TEST_CASE("miniature ingest tree maps listings to labeled split records") {
  std::string root = std::string(LSC_TEST_DIR) + "/fixtures/minc_mini";
  data::DatasetManifest m = data::ingest_minc(root);
  CHECK(m.class_names == data::minc_class_names());
  CHECK(m.class_names.size() == 23);
  CHECK(m.records.size() == 30);

  auto counts = m.split_counts();
  CHECK(counts[size_t(data::Split::train)] == 18);
  CHECK(counts[size_t(data::Split::val)] == 6);
  CHECK(counts[size_t(data::Split::test)] == 6);
  CHECK(m.provenance.find("partial") != std::string::npos);

  std::set<int> labels;
  for (const auto& r : m.records) {
    labels.insert(r.label);
    CHECK(fs::exists(r.path));
    Tensor img = img::read_image(r.path);
    CHECK(img.shape == std::vector<int>{3, 16, 16});
  }
  // brick, fabric, wood in the canonical alphabet
  CHECK(labels == std::set<int>{0, 3, 22});

  CHECK_THROWS_AS(data::ingest_minc((fs::temp_directory_path() / "nothere").string()),
                  DataError);
}

TEST_CASE("bilinear resize conventions: identity, corners, interior values") {
  Rng rng(21);
  Tensor x = random_tensor<float>({2, 5, 7}, rng, 0.0, 1.0);
  for (bool corners : {false, true}) {
    Tensor same = data::resize_bilinear(x, 5, 7, corners);
    CHECK(same.data == x.data);
  }

  // Aligned corners: the four corners transfer exactly at any scale.
  Tensor up = data::resize_bilinear(x, 32, 32, true);
  CHECK(at3(up, 0, 0, 0) == at3(x, 0, 0, 0));
  CHECK(at3(up, 0, 0, 31) == at3(x, 0, 0, 6));
  CHECK(at3(up, 0, 31, 0) == at3(x, 0, 4, 0));
  CHECK(at3(up, 1, 31, 31) == at3(x, 1, 4, 6));

  // Half-pixel centers: 2x upsampling of a constant plane stays constant...
  Tensor flat({1, 2, 2});
  flat.fill(0.75f);
  Tensor flat2 = data::resize_bilinear(flat, 4, 4, false);
  for (float v : flat2.data) CHECK(v == doctest::Approx(0.75));
  // ...and downsampling a horizontal ramp averages neighbor pairs.
  Tensor ramp({1, 1, 4});
  ramp.data = {0.0f, 1.0f, 2.0f, 3.0f};
  Tensor half = data::resize_bilinear(ramp, 1, 2, false);
  CHECK(half.data[0] == doctest::Approx(0.5));
  CHECK(half.data[1] == doctest::Approx(2.5));
}

TEST_CASE("horizontal flip is an involution and mirrors columns") {
  Rng rng(31);
  Tensor x = random_tensor<float>({3, 4, 6}, rng);
  Tensor f = data::hflip(x);
  CHECK(at3(f, 0, 0, 0) == at3(x, 0, 0, 5));
  CHECK(at3(f, 2, 3, 1) == at3(x, 2, 3, 4));
  CHECK(data::hflip(f).data == x.data);
}

TEST_CASE("pca lighting statistics satisfy the eigensystem equations") {
  Rng rng(41);
  std::vector<Tensor> images;
  for (int i = 0; i < 4; ++i) {
    Tensor img({3, 8, 8});
    for (int p = 0; p < 64; ++p) {
      double t = rng.uniform(0.0, 1.0);
      img.data[size_t(p)] = float(0.2 + 0.6 * t + rng.uniform(-0.05, 0.05));
      img.data[64 + size_t(p)] = float(0.1 + 0.5 * t + rng.uniform(-0.05, 0.05));
      img.data[128 + size_t(p)] = float(rng.uniform(0.0, 1.0));
    }
    images.push_back(img);
  }
  data::PcaStats stats = data::compute_pca_stats(images);

  // Mean matches a direct computation.
  for (int c = 0; c < 3; ++c) {
    double want = 0.0;
    for (const auto& img : images)
      for (int p = 0; p < 64; ++p) want += double(img.data[size_t(c) * 64 + p]);
    want /= 4.0 * 64.0;
    CHECK(stats.mean[size_t(c)] == doctest::Approx(want).epsilon(1e-6));
  }

  // Rebuild the covariance and check Cov v = lambda v, orthonormality, trace.
  double cov[3][3] = {};
  for (const auto& img : images)
    for (int p = 0; p < 64; ++p)
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          cov[a][b] += (double(img.data[size_t(a) * 64 + p]) - stats.mean[size_t(a)]) *
                       (double(img.data[size_t(b) * 64 + p]) - stats.mean[size_t(b)]) /
                       (4.0 * 64.0);
  double trace = cov[0][0] + cov[1][1] + cov[2][2];
  CHECK(stats.eigenvalues[0] + stats.eigenvalues[1] + stats.eigenvalues[2] ==
        doctest::Approx(trace).epsilon(1e-9));
  CHECK(stats.eigenvalues[0] >= stats.eigenvalues[1]);
  CHECK(stats.eigenvalues[1] >= stats.eigenvalues[2]);
  for (int k = 0; k < 3; ++k) {
    double norm = 0.0;
    for (int a = 0; a < 3; ++a) {
      double av = 0.0;
      for (int b = 0; b < 3; ++b) av += cov[a][b] * stats.eigenvectors[size_t(b)][size_t(k)];
      CHECK(av == doctest::Approx(stats.eigenvalues[size_t(k)] *
                                  stats.eigenvectors[size_t(a)][size_t(k)])
                      .epsilon(1e-6)
                      .scale(1.0));
      norm += stats.eigenvectors[size_t(a)][size_t(k)] *
              stats.eigenvectors[size_t(a)][size_t(k)];
    }
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("pixel augmentation: exact eval crop, reproducible training draws") {
  Rng gen(51);
  Tensor img = random_tensor<float>({3, 20, 24}, gen, 0.0, 1.0);
  data::AugmentationConfig cfg = data::AugmentationConfig::pixels_only(16, 12);
  data::PcaStats pca;  // zero noise directions
  cfg.pca_noise_std = 0.1;

  // Evaluation: resize to 16 then take the exact center 12x12, no draws.
  Rng eval_rng(1);
  Tensor eval = data::augment_pixel(img, cfg, pca, eval_rng, false);
  CHECK(eval.shape == std::vector<int>{3, 12, 12});
  Tensor resized = data::resize_bilinear(img, 16, 16, false);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x)
        CHECK(at3(eval, c, y, x) == at3(resized, c, y + 2, x + 2));
  CHECK(eval_rng.next_u64() == Rng(1).next_u64());  // untouched stream

  // Training with the same stream replays identically; different seeds move.
  Rng r1(7), r2(7), r3(8);
  Tensor t1 = data::augment_pixel(img, cfg, pca, r1, true);
  Tensor t2 = data::augment_pixel(img, cfg, pca, r2, true);
  Tensor t3 = data::augment_pixel(img, cfg, pca, r3, true);
  CHECK(t1.data == t2.data);
  CHECK(t1.shape == std::vector<int>{3, 12, 12});
  CHECK(t1.data != t3.data);
  for (float v : t1.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  // An in-size image evaluates to itself: resize and center crop are exact.
  data::AugmentationConfig exact = data::AugmentationConfig::pixels_only(20, 20);
  Tensor square = random_tensor<float>({3, 20, 20}, gen, 0.0, 1.0);
  Rng er(2);
  CHECK(data::augment_pixel(square, exact, pca, er, false).data == square.data);

  data::AugmentationConfig bad = cfg;
  bad.pixel_crop = 99;  // crop larger than resize
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("latent augmentation applies one shared transform to both maps") {
  Rng gen(61);
  cdc::LatentPair pair;
  pair.y_hat = random_tensor<float>({6, 9, 9}, gen, -4.0, 4.0);
  pair.y_hat = cdc::quantize_round(pair.y_hat);
  pair.sigma_hat = pair.y_hat;  // identical inputs expose any transform skew
  for (auto& v : pair.sigma_hat.data) v = std::abs(v) + 0.05f;
  pair.y_hat = pair.sigma_hat;

  data::AugmentationConfig cfg;
  cfg.latent_resize = 12;
  cfg.latent_crop = 10;

  Rng r1(3), r2(3);
  cdc::LatentPair a = data::augment_latent(pair, cfg, r1, true);
  cdc::LatentPair b = data::augment_latent(pair, cfg, r2, true);
  CHECK(a.y_hat.shape == std::vector<int>{6, 10, 10});
  CHECK(a.sigma_hat.shape == a.y_hat.shape);
  CHECK(a.y_hat.data == a.sigma_hat.data);  // same crop, flip, and resize
  CHECK(a.y_hat.data == b.y_hat.data);

  Rng re(4);
  cdc::LatentPair e = data::augment_latent(pair, cfg, re, false);
  CHECK(e.y_hat.shape == std::vector<int>{6, 10, 10});
  CHECK(e.y_hat.data == e.sigma_hat.data);
  // Center crop of the aligned-corner resize, computed directly.
  Tensor resized = data::resize_bilinear(pair.y_hat, 12, 12, true);
  CHECK(at3(e.y_hat, 0, 0, 0) == at3(resized, 0, 1, 1));
}

TEST_CASE("latent store: layout, write-once, round trip, corruption") {
  auto dir = temp_dir("lsc_store");
  data::LatentStore store(dir.string());

  Rng rng(71);
  data::LatentEntry entry;
  entry.y_hat = cdc::quantize_round(random_tensor<float>({1, 8, 4, 4}, rng, -5.0, 5.0));
  entry.sigma_hat = random_tensor<float>({1, 8, 4, 4}, rng, 0.05, 3.0);
  entry.stream_bytes = 321;
  entry.true_h = 37;
  entry.true_w = 41;

  const std::string key = "images/cat.png";
  CHECK_FALSE(store.has(key, 4));
  store.put(key, 4, entry);
  CHECK(store.has(key, 4));
  CHECK_FALSE(store.has(key, 5));  // quality is part of the identity

  data::LatentEntry back = store.get(key, 4);
  CHECK(back.y_hat.data == entry.y_hat.data);
  CHECK(back.y_hat.integer_valued);
  CHECK(back.sigma_hat.data == entry.sigma_hat.data);
  CHECK(back.stream_bytes == 321);
  CHECK(back.true_h == 37);
  CHECK(back.true_w == 41);

  // Two-level fan-out keeps directories small.
  fs::path file = store.file_for(key, 4);
  CHECK(file.parent_path().parent_path() == dir);
  CHECK(file.parent_path().filename().string().size() == 2);

  // Write-once: a second put with different payload leaves the first intact.
  data::LatentEntry other = entry;
  other.stream_bytes = 999;
  store.put(key, 4, other);
  CHECK(store.get(key, 4).stream_bytes == 321);

  // Unstored keys and damaged files surface as errors, not garbage.
  CHECK_THROWS_AS(store.get("missing.png", 4), DataError);
  {
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(30);
    f.put(char(0x7F));
  }
  CHECK_THROWS_AS(store.get(key, 4), StreamError);

  // Non-integer latents are a caller bug the store refuses to persist.
  data::LatentEntry fractional = entry;
  fractional.y_hat.data[0] += 0.25f;
  fractional.y_hat.integer_valued = false;
  CHECK_THROWS_AS(store.put("other.png", 4, fractional), Error);
  fs::remove_all(dir);
}

TEST_CASE("precomputing latents fills the store once and then only skips") {
  auto toy_dir = temp_dir("lsc_pre_toy");
  auto store_dir = temp_dir("lsc_pre_store");
  data::DatasetManifest manifest = data::synth_toy_textures(toy_dir.string(), 2, 4, 64, 5);
  cdc::CodecModel codec(cdc::CodecConfig::toy(2), 42);
  data::LatentStore store(store_dir.string());

  data::PrecomputeResult first = data::precompute_latents(manifest, codec, store);
  CHECK(first.computed == int(manifest.records.size()));
  CHECK(first.skipped == 0);
  CHECK(first.failures.empty());

  data::PrecomputeResult second = data::precompute_latents(manifest, codec, store);
  CHECK(second.computed == 0);
  CHECK(second.skipped == int(manifest.records.size()));

  // Stored latents decode against a fresh encode of the same image.
  const auto& rec = manifest.records[0];
  data::LatentEntry entry = store.get(rec.path, 2);
  cdc::EncodedImage enc = cdc::encode_image(codec, img::read_image(rec.path).reshaped(
                                                       {1, 3, 64, 64}));
  CHECK(entry.y_hat.data == enc.y_hat.data);
  CHECK(entry.sigma_hat.data == enc.sigma_hat.data);
  CHECK(entry.stream_bytes == int64_t(enc.stream.size()));
  CHECK(entry.true_h == 64);
  CHECK(entry.true_w == 64);

  // A manifest entry pointing nowhere lands in failures, not an abort.
  data::DatasetManifest broken = manifest;
  broken.records[0].path = toy_dir.string() + "/definitely_missing.png";
  data::PrecomputeResult third = data::precompute_latents(broken, codec, store);
  CHECK(third.failures.size() == 1);
  CHECK(third.skipped == int(manifest.records.size()) - 1);
  fs::remove_all(toy_dir);
  fs::remove_all(store_dir);
}

TEST_CASE("epoch batching: full permutations, deterministic, reshuffled") {
  auto b0 = data::epoch_batches(10, 4, 99, 0);
  REQUIRE(b0.size() == 3);  // 4 + 4 + 2
  CHECK(b0[0].size() == 4);
  CHECK(b0[2].size() == 2);
  std::vector<int> seen;
  for (const auto& batch : b0)
    for (size_t idx : batch) seen.push_back(int(idx));
  std::vector<int> sorted = seen;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> want(10);
  std::iota(want.begin(), want.end(), 0);
  CHECK(sorted == want);

  CHECK(data::epoch_batches(10, 4, 99, 0) == b0);   // same seed, same epoch
  CHECK(data::epoch_batches(10, 4, 99, 1) != b0);   // epochs reshuffle
  CHECK(data::epoch_batches(10, 4, 100, 0) != b0);  // seeds diverge
}
