#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lsc/codec.hpp"
#include "lsc/rng.hpp"
#include "lsc/tensor.hpp"

// Dataset manifests, pixel- and latent-domain augmentation, synthetic toy
// textures, batch index iteration, and the content-addressed latent store
// used by the compressed-domain classification workflow.
namespace lsc::data {

enum class Split { train, val, test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);  // throws DataError

struct ManifestRecord {
  std::string path;
  int label = 0;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> class_names;
  std::string provenance;

  // Label range and path uniqueness; throws DataError on violation.
  void validate() const;
  std::vector<int> split_indices(Split s) const;
  // Records per split, ordered train/val/test.
  std::array<int, 3> split_counts() const;
};

// TSV records `path<TAB>label<TAB>split` plus a `<path>.json` sidecar holding
// class names and provenance.
void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

// The 23 MINC-2500 material categories in canonical (alphabetical) order.
const std::vector<std::string>& minc_class_names();

// Reads labels/{train,validate,test}1.txt under the dataset root. Class
// labels come from each listed path's directory name. When every class holds
// the full 2125/125/250 split the manifest is marked complete; smaller
// datasets ingest with a warning on stderr and actual counts in provenance.
DatasetManifest ingest_minc(const std::string& root);

// Deterministic procedural texture classes (oriented gratings, checkerboards,
// and low-pass-filtered noise; parameter band shifts every three classes),
// written as PNG files under out_dir/<class_name>/ with a manifest saved to
// out_dir/manifest.tsv. Split is 70/15/15 by floor division. size must be a
// multiple of 64 so images pass through the codec without padding.
DatasetManifest synth_toy_textures(const std::string& out_dir, int num_classes, int per_class,
                                   int size, uint64_t seed);

struct AugmentationConfig {
  int pixel_resize = 256;
  int pixel_crop = 224;
  double pixel_flip_prob = 0.5;
  double jitter_lo = 0.6;  // per-channel multiplicative color jitter bounds
  double jitter_hi = 1.4;
  double pca_noise_std = 0.1;
  int latent_resize = 32;
  int latent_crop = 28;
  double latent_flip_prob = 0.5;

  void validate() const;  // throws ConfigError

  static AugmentationConfig pixels_only(int resize, int crop);
};

// Per-channel bilinear resampling of [C,H,W]. align_corners=true maps corner
// samples onto corner samples (used for latents); false uses half-pixel
// centers (used for images).
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w, bool align_corners);

// Horizontal mirror of [C,H,W].
Tensor hflip(const Tensor& x);

// RGB pixel covariance eigensystem of a training set, for lighting noise.
// Columns of eigenvectors are unit eigenvectors, eigenvalues descending.
struct PcaStats {
  std::array<double, 3> mean{};
  std::array<double, 3> eigenvalues{};
  std::array<std::array<double, 3>, 3> eigenvectors{};  // [channel][component]
};
PcaStats compute_pca_stats(const std::vector<Tensor>& images);

// Training: resize, random crop, random flip, per-channel jitter, PCA
// lighting noise, clamp to [0,1]. Evaluation: resize + center crop only and
// no RNG draws. The training draw order is fixed (crop y, crop x, flip,
// jitter r/g/b, lighting alphas) so samples replay from a derived stream.
Tensor augment_pixel(const Tensor& image, const AugmentationConfig& cfg, const PcaStats& pca,
                     Rng& rng, bool training);

// Identical geometric transform for both halves of the pair: aligned-corner
// resize, then a shared random crop and flip (training) or center crop
// (evaluation). Resized y_hat is real-valued; integrality is not restored.
cdc::LatentPair augment_latent(const cdc::LatentPair& pair, const AugmentationConfig& cfg,
                               Rng& rng, bool training);

// One stored encode result: padded-grid latents plus the coded stream length
// and the true pixel extents of the source image.
struct LatentEntry {
  Tensor y_hat;
  Tensor sigma_hat;
  int64_t stream_bytes = 0;
  int true_h = 0;
  int true_w = 0;
};

// Write-once files keyed by a content hash of (source path, quality index),
// sharded by the hash's leading byte. Concurrent writers are safe: entries
// are deterministic, and publication is an atomic rename.
class LatentStore {
 public:
  explicit LatentStore(std::string root);

  const std::string& root() const { return root_; }
  bool has(const std::string& source_path, int quality) const;
  void put(const std::string& source_path, int quality, const LatentEntry& entry);
  LatentEntry get(const std::string& source_path, int quality) const;  // DataError if absent

  std::string file_for(const std::string& source_path, int quality) const;

 private:
  std::string root_;
};

struct PrecomputeResult {
  int computed = 0;
  int skipped = 0;                     // store hits
  std::vector<std::string> failures;  // "path: reason", run continues past them
};

// Full-resolution encode of every manifest record at the codec's quality,
// storing (y_hat, sigma_hat, stream length). Idempotent via store lookups.
PrecomputeResult precompute_latents(const DatasetManifest& manifest, cdc::CodecModel& codec,
                                    LatentStore& store);

// Seeded permutation of [0, n) split into batches (last one partial); the
// permutation is reshuffled per epoch and reproducible.
std::vector<std::vector<int>> epoch_batches(int n, int batch_size, uint64_t seed, int epoch);

}  // namespace lsc::data
