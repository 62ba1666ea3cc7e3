#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "lsc/classifiers.hpp"
#include "lsc/codec.hpp"
#include "lsc/common.hpp"
#include "lsc/data.hpp"
#include "lsc/image_io.hpp"
#include "lsc/metrics.hpp"
#include "lsc/pipeline.hpp"

namespace {

using lsc::pipe::ExperimentConfig;

// Every experiment flag funnels into the same key=value channel the config
// file uses, applied in command-line order, so flags and files cannot drift.
struct ExperimentCli {
  std::vector<std::pair<std::string, std::string>> overrides;

  void add_options(CLI::App* sc) {
    const auto kv = [this](std::string key) {
      return [this, key = std::move(key)](const std::string& value) {
        overrides.emplace_back(key, value);
        return true;
      };
    };
    sc->add_option_function<std::string>("--config", kv("__file"),
                                         "key = value config file, applied where it appears");
    sc->add_option_function<std::string>(
        "--preset", kv("preset"), "toy or paper; resets defaults, so pass it first");
    sc->add_option_function<std::string>("--workflow", kv("workflow"),
                                         "anchor1 | anchor2 | anchor3 | compressed");
    sc->add_option_function<std::string>("--manifest", kv("manifest"), "dataset manifest TSV");
    sc->add_option_function<std::string>("--qualities", kv("qualities"),
                                         "comma-separated quality indices in [1,8]");
    sc->add_option_function<std::string>(
          "--codec", [this](const std::string& s) {
            const size_t eq = s.find('=');
            if (eq == std::string::npos)
              throw CLI::ValidationError("--codec", "expected <quality>=<checkpoint>");
            overrides.emplace_back("codec_checkpoint." + s.substr(0, eq), s.substr(eq + 1));
            return true;
          },
          "per-quality codec checkpoint as <quality>=<path> (repeatable)")
        ->take_all();
    sc->add_option_function<std::string>("--classifier", kv("classifier_checkpoint"),
                                         "classifier checkpoint (anchor1/evaluate input)");
    sc->add_option_function<std::string>("--store", kv("latent_store"),
                                         "latent store directory (compressed workflow)");
    sc->add_option_function<std::string>("--output-dir", kv("output_dir"),
                                         "directory for checkpoints, logs, and row CSVs");
    sc->add_option_function<std::string>("--seed", kv("seed"), "global seed");
    sc->add_option_function<std::string>("--epochs", kv("epochs"), "training epochs");
    sc->add_option_function<std::string>("--batch-size", kv("batch_size"), "minibatch size");
    sc->add_option_function<std::string>("--lr", kv("learning_rate"), "initial learning rate");
    sc->add_option_function<std::string>("--lr-schedule", kv("lr_schedule"),
                                         "epoch:divisor list, e.g. 10:10,20:10");
    sc->add_option_function<std::string>("--momentum", kv("momentum"), "SGD momentum");
    sc->add_option_function<std::string>("--weight-decay", kv("weight_decay"), "L2 coefficient");
    sc->add_option_function<std::string>(
        "--stop-at-val-top1", kv("stop_at_val_top1"),
        "stop once validation Top-1 reaches this percentage (negative disables)");
    sc->add_option_function<std::string>(
          "--set", [this](const std::string& s) {
            const size_t eq = s.find('=');
            if (eq == std::string::npos)
              throw CLI::ValidationError("--set", "expected key=value");
            overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
            return true;
          },
          "any config key as key=value (repeatable)")
        ->take_all();
  }

  ExperimentConfig build() const {
    ExperimentConfig cfg;
    for (const auto& [key, value] : overrides) {
      if (key == "__file")
        lsc::pipe::apply_config_file(cfg, value);
      else
        lsc::pipe::apply_config_entry(cfg, key, value);
    }
    lsc::pipe::apply_env_overrides(cfg);
    return cfg;
  }
};

void print_rows(const std::vector<lsc::pipe::EvaluationRow>& rows) {
  std::cout << lsc::pipe::evaluation_csv_header() << '\n';
  for (const auto& r : rows) std::cout << lsc::pipe::to_csv_row(r) << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"scale-hyperprior image codec with compressed-domain texture classification"};
  app.require_subcommand(1);

  // ---- train-codec ----
  auto* tc = app.add_subcommand("train-codec", "rate-distortion training of the codec");
  struct {
    std::string manifest, out = "codec.lscp", log, preset = "toy";
    int quality = 1, epochs = 20, batch_size = 8, max_images = 0;
    double lr = 1e-4;
    uint64_t seed = 1;
  } tcv;
  tc->add_option("--manifest", tcv.manifest, "dataset manifest; trains on its train split")
      ->required();
  tc->add_option("--quality", tcv.quality, "quality index in [1,8]")->required();
  tc->add_option("--preset", tcv.preset, "toy (F=C=32) or full (F=C=192)");
  tc->add_option("--epochs", tcv.epochs, "training epochs");
  tc->add_option("--batch-size", tcv.batch_size, "minibatch size");
  tc->add_option("--lr", tcv.lr, "learning rate");
  tc->add_option("--seed", tcv.seed, "global seed");
  tc->add_option("--max-images", tcv.max_images, "cap on training images (0 = all)");
  tc->add_option("--out", tcv.out, "checkpoint output path");
  tc->add_option("--log", tcv.log, "JSONL epoch log path");
  tc->callback([&tcv] {
    if (const char* seed = std::getenv("LSC_SEED")) tcv.seed = std::stoull(seed);
    lsc::cdc::CodecConfig ccfg;
    if (tcv.preset == "toy")
      ccfg = lsc::cdc::CodecConfig::toy(tcv.quality);
    else if (tcv.preset == "full")
      ccfg = lsc::cdc::CodecConfig::full(tcv.quality);
    else
      throw lsc::ConfigError("unknown codec preset '" + tcv.preset + "'");
    lsc::cdc::CodecModel model(ccfg, tcv.seed);

    const lsc::data::DatasetManifest manifest = lsc::data::load_manifest(tcv.manifest);
    std::vector<lsc::Tensor> images;
    for (int idx : manifest.split_indices(lsc::data::Split::train)) {
      if (tcv.max_images > 0 && int(images.size()) >= tcv.max_images) break;
      images.push_back(lsc::img::read_image(manifest.records[size_t(idx)].path));
    }

    std::ofstream log;
    if (!tcv.log.empty()) {
      log.open(tcv.log, std::ios::trunc);
      if (!log) throw lsc::DataError("cannot open log file: " + tcv.log);
    }
    lsc::cdc::CodecTrainOptions opts;
    opts.epochs = tcv.epochs;
    opts.batch_size = tcv.batch_size;
    opts.learning_rate = tcv.lr;
    opts.seed = tcv.seed;
    opts.on_epoch = [&log](const lsc::cdc::CodecEpochStats& s) {
      std::cout << "epoch " << s.epoch << ": loss " << s.mean_loss << ", bpp " << s.mean_bpp
                << ", ms-ssim " << s.mean_ms_ssim << '\n';
      if (log.is_open()) {
        nlohmann::json j{{"epoch", s.epoch},
                         {"split", "train"},
                         {"loss", s.mean_loss},
                         {"bpp", s.mean_bpp},
                         {"ms_ssim", s.mean_ms_ssim}};
        log << j.dump() << '\n';
        log.flush();
      }
    };
    const lsc::cdc::CodecTrainResult result = lsc::cdc::train_codec(model, images, opts);
    if (result.diverged)
      std::cerr << "warning: training diverged; parameters rolled back to the last clean "
                   "epoch\n";
    lsc::cdc::save_codec(tcv.out, model);
    std::cout << "saved codec checkpoint: " << tcv.out << '\n';
  });

  // ---- encode ----
  auto* en = app.add_subcommand("encode", "compress one image to an .lsc stream");
  struct {
    std::string image, codec, out = "out.lsc";
  } env;
  en->add_option("image", env.image, "PNG or JPEG input")->required();
  en->add_option("--codec", env.codec, "codec checkpoint")->required();
  en->add_option("--out", env.out, "output stream path");
  en->callback([&env] {
    const size_t bytes = lsc::pipe::cmd_encode(env.image, env.codec, env.out);
    std::cout << env.out << ": " << bytes << " bytes\n";
  });

  // ---- decode ----
  auto* de = app.add_subcommand("decode", "decompress an .lsc stream to PNG");
  struct {
    std::string stream, codec, out = "out.png", reference;
  } dev;
  de->add_option("stream", dev.stream, ".lsc input")->required();
  de->add_option("--codec", dev.codec, "codec checkpoint")->required();
  de->add_option("--out", dev.out, "output PNG path");
  de->add_option("--reference", dev.reference,
                 "original image; prints a rate/quality report against it");
  de->callback([&dev] {
    const lsc::pipe::DecodeOutcome outcome =
        lsc::pipe::cmd_decode(dev.stream, dev.codec, dev.out, dev.reference);
    std::cout << "wrote " << dev.out << '\n';
    if (outcome.has_report) {
      std::cout << lsc::met::quality_csv_header() << '\n'
                << lsc::met::to_csv_row(outcome.report) << '\n';
    }
  });

  // ---- precompute-latents ----
  auto* pl = app.add_subcommand("precompute-latents",
                                "encode every manifest record and store its latents");
  struct {
    std::string manifest, codec, store;
  } plv;
  pl->add_option("--manifest", plv.manifest, "dataset manifest")->required();
  pl->add_option("--codec", plv.codec, "codec checkpoint (fixes the quality index)")
      ->required();
  pl->add_option("--store", plv.store, "latent store directory")->required();
  pl->callback([&plv] {
    lsc::cdc::CodecModel codec = lsc::cdc::load_codec(plv.codec);
    lsc::data::LatentStore store(plv.store);
    const lsc::data::DatasetManifest manifest = lsc::data::load_manifest(plv.manifest);
    const lsc::data::PrecomputeResult result =
        lsc::data::precompute_latents(manifest, codec, store);
    std::cout << "computed " << result.computed << ", already stored " << result.skipped
              << ", failed " << result.failures.size() << '\n';
    for (const std::string& f : result.failures) std::cerr << "failed: " << f << '\n';
  });

  // ---- train-classifier ----
  auto* tr = app.add_subcommand("train-classifier",
                                "train and evaluate a workflow's classifier");
  ExperimentCli trv;
  trv.add_options(tr);
  tr->callback([&trv] {
    const ExperimentConfig cfg = trv.build();
    const std::vector<lsc::pipe::EvaluationRow> rows =
        cfg.workflow == lsc::pipe::Workflow::compressed ? lsc::pipe::run_compressed(cfg)
                                                        : lsc::pipe::run_anchor(cfg);
    print_rows(rows);
  });

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate",
                                "evaluate an existing classifier checkpoint, no training");
  ExperimentCli evv;
  evv.add_options(ev);
  ev->callback([&evv] { print_rows(lsc::pipe::run_evaluation(evv.build())); });

  // ---- curves ----
  auto* cu = app.add_subcommand("curves", "accuracy-vs-rate/PSNR/SSIM curve CSVs");
  struct {
    std::vector<std::string> row_files;
    std::string out_dir = ".";
  } cuv;
  cu->add_option("rows", cuv.row_files, "evaluation row CSVs to merge")->required();
  cu->add_option("--out-dir", cuv.out_dir, "directory for curve CSVs");
  cu->callback([&cuv] {
    std::vector<lsc::pipe::EvaluationRow> rows;
    for (const std::string& f : cuv.row_files) {
      const std::vector<lsc::pipe::EvaluationRow> part = lsc::pipe::load_rows(f);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    for (const std::string& path : lsc::pipe::emit_curves(rows, cuv.out_dir))
      std::cout << "wrote " << path << '\n';
  });

  // ---- latent-summary ----
  auto* ls = app.add_subcommand("latent-summary",
                                "grayscale channel-sum panels of a stream's latents");
  struct {
    std::string stream, codec, out_prefix = "latent";
  } lsv;
  ls->add_option("stream", lsv.stream, ".lsc input")->required();
  ls->add_option("--codec", lsv.codec, "codec checkpoint")->required();
  ls->add_option("--out-prefix", lsv.out_prefix, "writes <prefix>_y.png and <prefix>_sigma.png");
  ls->callback([&lsv] {
    lsc::pipe::cmd_latent_summary(lsv.stream, lsv.codec, lsv.out_prefix);
    std::cout << "wrote " << lsv.out_prefix << "_y.png and " << lsv.out_prefix
              << "_sigma.png\n";
  });

  // ---- synth-toy ----
  auto* st = app.add_subcommand("synth-toy", "generate the synthetic toy texture dataset");
  struct {
    std::string out_dir = "toy";
    int classes = 3, per_class = 100, size = 64;
    uint64_t seed = 1;
  } stv;
  st->add_option("--out-dir", stv.out_dir, "output directory");
  st->add_option("--classes", stv.classes, "number of texture classes");
  st->add_option("--per-class", stv.per_class, "images per class");
  st->add_option("--size", stv.size, "image side length (multiple of 64)");
  st->add_option("--seed", stv.seed, "generation seed");
  st->callback([&stv] {
    if (const char* seed = std::getenv("LSC_SEED")) stv.seed = std::stoull(seed);
    const lsc::data::DatasetManifest m = lsc::data::synth_toy_textures(
        stv.out_dir, stv.classes, stv.per_class, stv.size, stv.seed);
    const auto counts = m.split_counts();
    std::cout << "wrote " << m.records.size() << " images (" << counts[0] << '/' << counts[1]
              << '/' << counts[2] << " train/val/test), manifest: " << stv.out_dir
              << "/manifest.tsv\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const lsc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const lsc::StreamError& e) {
    std::cerr << "stream error: " << e.what() << '\n';
    return 3;
  } catch (const lsc::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const lsc::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
