#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <stdlib.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "lsc/classifiers.hpp"
#include "lsc/codec.hpp"
#include "lsc/data.hpp"
#include "lsc/image_io.hpp"
#include "lsc/pipeline.hpp"

using namespace lsc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& stem) {
  fs::path p = fs::temp_directory_path() / (stem + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

pipe::EvaluationRow make_row(pipe::Workflow wf, int q, double bpp, double psnr, double ssim,
                             double ms, double top1, double top5, int samples) {
  pipe::EvaluationRow r;
  r.workflow = wf;
  r.quality_index = q;
  r.bpp = bpp;
  r.psnr_db = psnr;
  r.ssim = ssim;
  r.ms_ssim = ms;
  r.top1 = top1;
  r.top5 = top5;
  r.samples = samples;
  return r;
}

// Field-by-field equality where NaN == NaN and inf == inf.
bool same_value(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
  return a == b;
}

bool same_row(const pipe::EvaluationRow& a, const pipe::EvaluationRow& b) {
  return a.workflow == b.workflow && a.quality_index == b.quality_index &&
         same_value(a.bpp, b.bpp) && same_value(a.psnr_db, b.psnr_db) &&
         same_value(a.ssim, b.ssim) && same_value(a.ms_ssim, b.ms_ssim) &&
         same_value(a.top1, b.top1) && same_value(a.top5, b.top5) && a.samples == b.samples;
}

struct CerrCapture {
  std::ostringstream out;
  std::streambuf* old;
  CerrCapture() : old(std::cerr.rdbuf(out.rdbuf())) {}
  ~CerrCapture() { std::cerr.rdbuf(old); }
};

// Parses one curve CSV into (x, accuracy, quality) triples past the header.
struct CurvePoint {
  double x, acc;
  int quality;
};
std::vector<CurvePoint> read_curve(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is.good());
  std::string line;
  REQUIRE(std::getline(is, line));  // header
  std::vector<CurvePoint> pts;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    REQUIRE(std::getline(ss, a, ','));
    REQUIRE(std::getline(ss, b, ','));
    REQUIRE(std::getline(ss, c, ','));
    pts.push_back({std::stod(a), std::stod(b), std::stoi(c)});
  }
  return pts;
}

}  // namespace

TEST_CASE("workflow names round-trip; unknown names are config errors") {
  using pipe::Workflow;
  const Workflow all[4] = {Workflow::anchor1, Workflow::anchor2, Workflow::anchor3,
                           Workflow::compressed};
  const char* names[4] = {"anchor1", "anchor2", "anchor3", "compressed"};
  for (int i = 0; i < 4; ++i) {
    CHECK(std::string(pipe::workflow_name(all[i])) == names[i]);
    CHECK(pipe::workflow_from_name(names[i]) == all[i]);
  }
  CHECK_THROWS_AS(pipe::workflow_from_name("anchor4"), ConfigError);
  CHECK_THROWS_AS(pipe::workflow_from_name(""), ConfigError);
}

TEST_CASE("evaluation rows enforce their invariants") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  pipe::EvaluationRow ok =
      make_row(pipe::Workflow::anchor2, 4, 0.5, 25.0, 0.9, 0.93, 60.0, 95.0, 40);
  ok.validate();

  pipe::EvaluationRow r = ok;
  r.top1 = 101.0;
  CHECK_THROWS_AS(r.validate(), DataError);
  r = ok;
  r.top1 = nan;
  CHECK_THROWS_AS(r.validate(), DataError);
  r = ok;
  r.top1 = 96.0;  // above top5
  CHECK_THROWS_AS(r.validate(), DataError);
  r = ok;
  r.quality_index = 9;
  CHECK_THROWS_AS(r.validate(), DataError);
  r = ok;
  r.samples = -1;
  CHECK_THROWS_AS(r.validate(), DataError);
  r = ok;
  r.bpp = -0.5;
  CHECK_THROWS_AS(r.validate(), DataError);

  // Unmeasured axes are legitimate: compressed rows carry NaN distortion.
  r = ok;
  r.psnr_db = nan;
  r.ssim = nan;
  r.ms_ssim = nan;
  r.validate();
}

TEST_CASE("evaluation rows survive CSV round trips including non-finite fields") {
  const double inf = std::numeric_limits<double>::infinity();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  // Anchor-3 sentinel: uncompressed source, lossless "distortion".
  pipe::EvaluationRow a3 = make_row(pipe::Workflow::anchor3, 0, 24.0, inf, 1.0, 1.0,
                                    81.5, 97.58, 2500);
  CHECK(same_row(pipe::evaluation_from_csv_row(pipe::to_csv_row(a3)), a3));

  // Compressed rows never measure distortion.
  pipe::EvaluationRow cm = make_row(pipe::Workflow::compressed, 3, 0.4375, nan, nan, nan,
                                    72.25, 93.0, 1600);
  CHECK(same_row(pipe::evaluation_from_csv_row(pipe::to_csv_row(cm)), cm));

  // 17 significant digits round-trip doubles exactly.
  pipe::EvaluationRow a2 = make_row(pipe::Workflow::anchor2, 7, 0.12345678901234567,
                                    30.000000000000004, 0.9999999999999999, 0.875, 50.0,
                                    90.0, 7);
  CHECK(same_row(pipe::evaluation_from_csv_row(pipe::to_csv_row(a2)), a2));

  auto dir = temp_dir("lsc_rows");
  const std::string path = (dir / "rows.csv").string();
  const std::vector<pipe::EvaluationRow> rows = {a3, cm, a2};
  pipe::save_rows(path, rows);
  const std::vector<pipe::EvaluationRow> back = pipe::load_rows(path);
  REQUIRE(back.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) CHECK(same_row(back[i], rows[i]));

  // Malformed rows are data errors, not silent zeros.
  CHECK_THROWS_AS(pipe::evaluation_from_csv_row("anchor3,0,24,inf,1,1,81.5,97.58"), DataError);
  CHECK_THROWS_AS(pipe::evaluation_from_csv_row("anchor9,0,24,inf,1,1,81.5,97.58,10"),
                  DataError);
  CHECK_THROWS_AS(pipe::evaluation_from_csv_row("anchor3,0,24,inf,1,1,eighty,97.58,10"),
                  DataError);

  {
    std::ofstream os(dir / "bad_header.csv");
    os << "workflow,quality\nanchor3,0\n";
  }
  CHECK_THROWS_AS(pipe::load_rows((dir / "bad_header.csv").string()), DataError);
  CHECK_THROWS_AS(pipe::load_rows((dir / "missing.csv").string()), DataError);
  fs::remove_all(dir);
}

TEST_CASE("config entries parse, layer, and reject unknown keys") {
  pipe::ExperimentConfig cfg;
  CHECK(cfg.workflow == pipe::Workflow::anchor3);
  CHECK(cfg.epochs == 30);
  CHECK(cfg.batch_size == 32);
  CHECK(cfg.learning_rate == 0.01);
  CHECK(cfg.lr_schedule == std::vector<std::pair<int, double>>{{10, 10.0}, {20, 10.0}});

  pipe::apply_config_entry(cfg, "workflow", "compressed");
  pipe::apply_config_entry(cfg, "qualities", "1, 4,8");
  pipe::apply_config_entry(cfg, "codec_checkpoint.3", "/tmp/q3.lscp");
  pipe::apply_config_entry(cfg, "epochs", "12");
  pipe::apply_config_entry(cfg, "learning_rate", "0.125");
  pipe::apply_config_entry(cfg, "lr_schedule", "4:10, 16:2.5");
  pipe::apply_config_entry(cfg, "seed", "9001");
  pipe::apply_config_entry(cfg, "pixel_crop", "48");
  CHECK(cfg.workflow == pipe::Workflow::compressed);
  CHECK(cfg.quality_indices == std::vector<int>{1, 4, 8});
  CHECK(cfg.codec_checkpoints.at(3) == "/tmp/q3.lscp");
  CHECK(cfg.epochs == 12);
  CHECK(cfg.learning_rate == 0.125);
  CHECK(cfg.lr_schedule == std::vector<std::pair<int, double>>{{4, 10.0}, {16, 2.5}});
  CHECK(cfg.seed == 9001);
  CHECK(cfg.augment.pixel_crop == 48);

  // Presets replace the whole config, so they come first in a file.
  pipe::apply_config_entry(cfg, "preset", "toy");
  CHECK(cfg.batch_size == 16);
  CHECK(cfg.augment.pixel_resize == 64);
  CHECK(cfg.augment.pixel_crop == 56);
  CHECK(cfg.epochs == 30);  // the earlier override is gone
  pipe::apply_config_entry(cfg, "preset", "paper");
  CHECK(cfg.batch_size == 32);
  CHECK(cfg.augment.pixel_resize == 256);

  CHECK_THROWS_AS(pipe::apply_config_entry(cfg, "preset", "huge"), ConfigError);
  CHECK_THROWS_AS(pipe::apply_config_entry(cfg, "epoch", "3"), ConfigError);
  CHECK_THROWS_AS(pipe::apply_config_entry(cfg, "epochs", "three"), ConfigError);
  CHECK_THROWS_AS(pipe::apply_config_entry(cfg, "seed", "-1"), ConfigError);
  CHECK_THROWS_AS(pipe::apply_config_entry(cfg, "lr_schedule", "5"), ConfigError);
  CHECK_THROWS_AS(pipe::apply_config_entry(cfg, "codec_checkpoint.x", "p"), ConfigError);
}

TEST_CASE("config files: comments, layering, and the seed env override") {
  auto dir = temp_dir("lsc_cfg");
  {
    std::ofstream os(dir / "exp.cfg");
    os << "# compressed-domain run at three rates\n"
       << "preset = toy\n"
       << "workflow = compressed\n"
       << "qualities = 1,4,8   # codec operating points\n"
       << "\n"
       << "latent_store = /tmp/store\n"
       << "epochs = 2\n";
  }
  pipe::ExperimentConfig cfg = pipe::load_config_file((dir / "exp.cfg").string());
  CHECK(cfg.workflow == pipe::Workflow::compressed);
  CHECK(cfg.quality_indices == std::vector<int>{1, 4, 8});
  CHECK(cfg.latent_store_dir == "/tmp/store");
  CHECK(cfg.epochs == 2);
  CHECK(cfg.batch_size == 16);  // from the toy preset

  // Layering a second file only touches the keys it names.
  {
    std::ofstream os(dir / "override.cfg");
    os << "epochs = 7\n";
  }
  pipe::apply_config_file(cfg, (dir / "override.cfg").string());
  CHECK(cfg.epochs == 7);
  CHECK(cfg.quality_indices == std::vector<int>{1, 4, 8});

  {
    std::ofstream os(dir / "broken.cfg");
    os << "epochs 7\n";
  }
  CHECK_THROWS_AS(pipe::apply_config_file(cfg, (dir / "broken.cfg").string()), ConfigError);
  CHECK_THROWS_AS(pipe::load_config_file((dir / "absent.cfg").string()), ConfigError);

  ::setenv("LSC_SEED", "777", 1);
  pipe::apply_env_overrides(cfg);
  CHECK(cfg.seed == 777);
  ::unsetenv("LSC_SEED");
  cfg.seed = 5;
  pipe::apply_env_overrides(cfg);  // unset leaves the config alone
  CHECK(cfg.seed == 5);
  ::setenv("LSC_SEED", "not-a-seed", 1);
  CHECK_THROWS_AS(pipe::apply_env_overrides(cfg), ConfigError);
  ::unsetenv("LSC_SEED");
  fs::remove_all(dir);
}

TEST_CASE("experiment config validation catches inconsistent setups") {
  auto dir = temp_dir("lsc_val");
  const std::string manifest = (dir / "manifest.tsv").string();
  const std::string ckpt = (dir / "codec.lscp").string();
  {
    std::ofstream(manifest) << "placeholder";
    std::ofstream(ckpt) << "placeholder";
  }

  pipe::ExperimentConfig base;
  base.manifest_path = manifest;
  base.validate();  // anchor3 with no qualities is the simplest legal config

  pipe::ExperimentConfig c = base;
  c.manifest_path = (dir / "absent.tsv").string();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = base;
  c.manifest_path.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = base;
  c.quality_indices = {3};  // anchor3 never touches the codec
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = base;
  c.workflow = pipe::Workflow::anchor1;
  CHECK_THROWS_AS(c.validate(), ConfigError);  // needs at least one quality
  c.quality_indices = {9};
  CHECK_THROWS_AS(c.validate(), ConfigError);  // outside [1, 8]
  c.quality_indices = {2, 2};
  CHECK_THROWS_AS(c.validate(), ConfigError);  // duplicate
  c.quality_indices = {2};
  CHECK_THROWS_AS(c.validate(), ConfigError);  // no checkpoint for q2
  c.codec_checkpoints[2] = (dir / "absent.lscp").string();
  CHECK_THROWS_AS(c.validate(), ConfigError);  // checkpoint path must exist
  c.codec_checkpoints[2] = ckpt;
  c.validate();

  c = base;
  c.workflow = pipe::Workflow::compressed;
  c.quality_indices = {1};
  CHECK_THROWS_AS(c.validate(), ConfigError);  // no latent store
  c.latent_store_dir = dir.string();
  c.validate();

  c = base;
  c.epochs = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = base;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = base;
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = base;
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = base;
  c.weight_decay = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = base;
  c.classifier_checkpoint = (dir / "absent2.lscp").string();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("directory lock is exclusive and releases on destruction") {
  auto dir = temp_dir("lsc_lock");
  const fs::path lock_file = dir / ".lsc-lock";
  {
    pipe::DirLock lock(dir.string());
    CHECK(fs::exists(lock_file));
    CHECK_THROWS_AS(pipe::DirLock(dir.string()), ConfigError);
  }
  CHECK(!fs::exists(lock_file));
  pipe::DirLock again(dir.string());  // re-acquire after release
  fs::remove_all(dir);
}

TEST_CASE("curves: sorted points, borrowed axes, dropped points, warnings") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<pipe::EvaluationRow> rows = {
      // Deliberately out of rate order; files must come out sorted by x.
      make_row(pipe::Workflow::anchor2, 8, 0.9, 30.0, 0.95, 0.97, 70.0, 98.0, 40),
      make_row(pipe::Workflow::anchor2, 1, 0.2, 20.0, 0.80, 0.85, 50.0, 90.0, 40),
      make_row(pipe::Workflow::anchor2, 4, 0.5, 25.0, 0.90, 0.93, 60.0, 95.0, 40),
      // Compressed rows borrow distortion axes from the anchor at the same
      // quality; q6 has no sibling, so its psnr/ssim points drop.
      make_row(pipe::Workflow::compressed, 1, 0.19, nan, nan, nan, 45.0, 88.0, 40),
      make_row(pipe::Workflow::compressed, 4, 0.48, nan, nan, nan, 58.0, 94.0, 40),
      make_row(pipe::Workflow::compressed, 6, 0.60, nan, nan, nan, 62.0, 95.0, 40),
      make_row(pipe::Workflow::anchor3, 0, 24.0, inf, 1.0, 1.0, 75.0, 99.0, 40),
  };

  auto dir = temp_dir("lsc_curves");
  CerrCapture capture;
  const std::vector<std::string> written = pipe::emit_curves(rows, dir.string());
  const std::string warnings = capture.out.str();

  // 3 workflows x 3 axes x {top1, top5}; anchor1 contributed nothing.
  CHECK(written.size() == 18);
  for (const std::string& path : written) CHECK(fs::exists(path));

  const auto a2_bpp = read_curve((dir / "curve_anchor2_bpp_top1.csv").string());
  REQUIRE(a2_bpp.size() == 3);
  CHECK(a2_bpp[0].x == doctest::Approx(0.2));
  CHECK(a2_bpp[1].x == doctest::Approx(0.5));
  CHECK(a2_bpp[2].x == doctest::Approx(0.9));
  CHECK(a2_bpp[0].acc == 50.0);
  CHECK(a2_bpp[2].quality == 8);

  const auto a2_top5 = read_curve((dir / "curve_anchor2_ssim_top5.csv").string());
  REQUIRE(a2_top5.size() == 3);
  CHECK(a2_top5[0].acc == 90.0);

  // Borrowed x: compressed psnr points equal the anchor2 measurements.
  const auto cm_psnr = read_curve((dir / "curve_compressed_psnr_top1.csv").string());
  REQUIRE(cm_psnr.size() == 2);
  CHECK(cm_psnr[0].x == 20.0);
  CHECK(cm_psnr[0].acc == 45.0);
  CHECK(cm_psnr[1].x == 25.0);
  CHECK(cm_psnr[1].quality == 4);
  // Rate never needed borrowing.
  const auto cm_bpp = read_curve((dir / "curve_compressed_bpp_top1.csv").string());
  CHECK(cm_bpp.size() == 3);

  const auto a3 = read_curve((dir / "curve_anchor3_psnr_top1.csv").string());
  REQUIRE(a3.size() == 1);
  CHECK(std::isinf(a3[0].x));

  CHECK(warnings.find("no psnr value available for compressed quality 6") !=
        std::string::npos);
  CHECK(warnings.find("single-point series") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("anchor3 pipeline trains, writes artifacts, and re-evaluates identically") {
  auto root = temp_dir("lsc_pipe_a3");
  data::synth_toy_textures((root / "toy").string(), 2, 8, 64, 7);

  pipe::ExperimentConfig cfg = pipe::ExperimentConfig::toy_defaults();
  cfg.workflow = pipe::Workflow::anchor3;
  cfg.manifest_path = (root / "toy" / "manifest.tsv").string();
  cfg.output_dir = (root / "out").string();
  cfg.epochs = 1;
  cfg.batch_size = 5;
  cfg.seed = 5;

  const std::vector<pipe::EvaluationRow> rows = pipe::run_anchor(cfg);
  REQUIRE(rows.size() == 1);
  const pipe::EvaluationRow& r = rows[0];
  CHECK(r.workflow == pipe::Workflow::anchor3);
  CHECK(r.quality_index == pipe::ExperimentConfig::kNoQuality);
  CHECK(r.bpp == 24.0);  // uncompressed 8-bit RGB
  CHECK(std::isinf(r.psnr_db));
  CHECK(r.ssim == 1.0);
  CHECK(r.ms_ssim == 1.0);
  CHECK(r.samples == 4);      // 2 test images per class
  CHECK(r.top5 == 100.0);     // top-5 clamps to the 2-class count

  const auto loaded = pipe::load_rows((root / "out" / "anchor3_rows.csv").string());
  REQUIRE(loaded.size() == 1);
  CHECK(same_row(loaded[0], r));
  CHECK(fs::exists(root / "out" / "anchor3_classifier.lscp"));
  {
    std::ifstream log(root / "out" / "anchor3_train_log.jsonl");
    REQUIRE(log.good());
    std::string line;
    REQUIRE(std::getline(log, line));
    CHECK(line.find("\"epoch\"") != std::string::npos);
  }
  CHECK(!fs::exists(root / "out" / ".lsc-lock"));  // released on return

  // Evaluate-only on the saved checkpoint reproduces the measurement.
  pipe::ExperimentConfig ev = cfg;
  ev.classifier_checkpoint = (root / "out" / "anchor3_classifier.lscp").string();
  ev.output_dir = (root / "out_eval").string();
  const std::vector<pipe::EvaluationRow> erows = pipe::run_evaluation(ev);
  REQUIRE(erows.size() == 1);
  CHECK(erows[0].top1 == r.top1);
  CHECK(erows[0].top5 == r.top5);
  CHECK(erows[0].samples == r.samples);
  CHECK(fs::exists(root / "out_eval" / "evaluate_rows.csv"));
  fs::remove_all(root);
}

TEST_CASE("anchor1 and compressed workflows measure rate and bypass synthesis") {
  auto root = temp_dir("lsc_pipe_q");
  const data::DatasetManifest manifest =
      data::synth_toy_textures((root / "toy").string(), 2, 8, 64, 9);
  const std::string manifest_path = (root / "toy" / "manifest.tsv").string();

  cdc::CodecModel codec(cdc::CodecConfig::toy(2), 21);
  const std::string codec_ckpt = (root / "codec_q2.lscp").string();
  cdc::save_codec(codec_ckpt, codec);

  // Anchor 1 evaluates an existing pixel classifier on decoded images; an
  // untrained one suffices to exercise the decode-and-measure path.
  cls::ClassifierConfig ccfg;
  ccfg.variant = cls::ClassifierConfig::Variant::resnet50;
  ccfg.num_classes = 2;
  cls::Classifier pixel_model(ccfg, 3);
  const std::string pixel_ckpt = (root / "pixel.lscp").string();
  cls::save_classifier(pixel_ckpt, pixel_model);

  pipe::ExperimentConfig a1 = pipe::ExperimentConfig::toy_defaults();
  a1.workflow = pipe::Workflow::anchor1;
  a1.quality_indices = {2};
  a1.codec_checkpoints[2] = codec_ckpt;
  a1.classifier_checkpoint = pixel_ckpt;
  a1.manifest_path = manifest_path;
  a1.output_dir = (root / "out_a1").string();
  const std::vector<pipe::EvaluationRow> a1_rows = pipe::run_anchor(a1);
  REQUIRE(a1_rows.size() == 1);
  CHECK(a1_rows[0].quality_index == 2);
  CHECK(a1_rows[0].bpp > 0.0);
  CHECK(std::isfinite(a1_rows[0].psnr_db));
  CHECK(a1_rows[0].psnr_db > 0.0);
  CHECK(a1_rows[0].ssim <= 1.0);
  CHECK(a1_rows[0].ms_ssim <= 1.0);
  CHECK(a1_rows[0].samples == 4);

  // Compressed workflow: latents come from the store, synthesis never runs
  // (run_compressed throws if the decoder-bypass counter moves).
  data::LatentStore store((root / "store").string());
  const data::PrecomputeResult pre = data::precompute_latents(manifest, codec, store);
  REQUIRE(pre.failures.empty());
  CHECK(pre.computed == int(manifest.records.size()));

  pipe::ExperimentConfig cm = pipe::ExperimentConfig::toy_defaults();
  cm.workflow = pipe::Workflow::compressed;
  cm.quality_indices = {2};
  cm.latent_store_dir = (root / "store").string();
  cm.manifest_path = manifest_path;
  cm.output_dir = (root / "out_cm").string();
  cm.epochs = 1;
  cm.batch_size = 5;
  cm.seed = 5;
  cm.augment.latent_resize = 12;  // toy latents are 4x4 before augmentation
  cm.augment.latent_crop = 10;
  const std::vector<pipe::EvaluationRow> cm_rows = pipe::run_compressed(cm);
  REQUIRE(cm_rows.size() == 1);
  CHECK(cm_rows[0].quality_index == 2);
  CHECK(cm_rows[0].bpp > 0.0);
  CHECK(std::isnan(cm_rows[0].psnr_db));
  CHECK(std::isnan(cm_rows[0].ssim));
  CHECK(std::isnan(cm_rows[0].ms_ssim));
  CHECK(cm_rows[0].samples == 4);
  CHECK(fs::exists(root / "out_cm" / "compressed_q2_classifier.lscp"));
  CHECK(fs::exists(root / "out_cm" / "compressed_rows.csv"));

  // The real rows compose into curves: the compressed psnr point borrows the
  // anchor1 measurement at the same quality.
  std::vector<pipe::EvaluationRow> all = a1_rows;
  all.insert(all.end(), cm_rows.begin(), cm_rows.end());
  const auto written = pipe::emit_curves(all, (root / "curves").string());
  const auto pts = read_curve((root / "curves" / "curve_compressed_psnr_top1.csv").string());
  REQUIRE(pts.size() == 1);
  CHECK(pts[0].x == a1_rows[0].psnr_db);
  fs::remove_all(root);
}

TEST_CASE("stream commands: encode file, decode with report, latent panels") {
  auto root = temp_dir("lsc_pipe_cmd");
  const data::DatasetManifest m =
      data::synth_toy_textures((root / "toy").string(), 1, 1, 64, 3);
  const std::string image = m.records[0].path;

  cdc::CodecModel codec(cdc::CodecConfig::toy(3), 11);
  const std::string ckpt = (root / "codec.lscp").string();
  cdc::save_codec(ckpt, codec);

  const std::string lsc = (root / "img.lsc").string();
  const size_t bytes = pipe::cmd_encode(image, ckpt, lsc);
  CHECK(bytes == fs::file_size(lsc));

  const pipe::DecodeOutcome plain =
      pipe::cmd_decode(lsc, ckpt, (root / "plain.png").string());
  CHECK(!plain.has_report);
  const Tensor decoded = img::read_image((root / "plain.png").string());
  CHECK(decoded.shape == std::vector<int>{3, 64, 64});

  const pipe::DecodeOutcome rep =
      pipe::cmd_decode(lsc, ckpt, (root / "ref.png").string(), image);
  REQUIRE(rep.has_report);
  CHECK(rep.report.quality_index == 3);
  CHECK(rep.report.bpp == doctest::Approx(double(bytes) * 8.0 / (64.0 * 64.0)));
  CHECK(std::isfinite(rep.report.psnr_db));
  CHECK(rep.report.psnr_db > 0.0);
  CHECK(rep.report.ssim <= 1.0);
  CHECK(rep.report.ms_ssim <= 1.0);

  // Both decodes wrote the same pixels.
  const Tensor again = img::read_image((root / "ref.png").string());
  CHECK(again.data == decoded.data);

  // Latent panels: one grayscale pixel per latent cell, never synthesized.
  // read_image normalizes to RGB, replicating the gray plane.
  pipe::cmd_latent_summary(lsc, ckpt, (root / "panel").string());
  const Tensor py = img::read_image((root / "panel_y.png").string());
  const Tensor ps = img::read_image((root / "panel_sigma.png").string());
  CHECK(py.shape == std::vector<int>{3, 4, 4});  // 64 px -> 4x4 latent grid
  CHECK(ps.shape == std::vector<int>{3, 4, 4});
  const size_t plane = 16;
  for (size_t i = 0; i < plane; ++i) {
    CHECK(py.data[i] >= 0.0f);
    CHECK(py.data[i] <= 1.0f);
    CHECK(py.data[i] == py.data[plane + i]);
    CHECK(py.data[i] == py.data[2 * plane + i]);
  }

  // A truncated stream is a stream error, with the file named in the message.
  std::vector<char> raw(bytes, 0);
  {
    std::ifstream is(lsc, std::ios::binary);
    is.read(raw.data(), std::streamsize(bytes));
  }
  const std::string trunc = (root / "trunc.lsc").string();
  {
    std::ofstream os(trunc, std::ios::binary);
    os.write(raw.data(), std::streamsize(bytes / 2));
  }
  CHECK_THROWS_AS(pipe::cmd_decode(trunc, ckpt, (root / "bad.png").string()), StreamError);
  fs::remove_all(root);
}
