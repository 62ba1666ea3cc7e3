#include "lsc/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_set>

#include <unistd.h>

#include "json.hpp"

#include "lsc/common.hpp"
#include "lsc/image_io.hpp"

namespace fs = std::filesystem;

namespace lsc::data {

namespace {

constexpr const char* kSplitNames[3] = {"train", "val", "test"};

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

const char* split_name(Split s) { return kSplitNames[static_cast<int>(s)]; }

Split split_from_name(const std::string& name) {
  for (int i = 0; i < 3; ++i)
    if (name == kSplitNames[i]) return static_cast<Split>(i);
  throw DataError("unknown split name: '" + name + "'");
}

void DatasetManifest::validate() const {
  const int n_classes = int(class_names.size());
  std::unordered_set<std::string> seen;
  seen.reserve(records.size());
  for (const ManifestRecord& r : records) {
    if (r.label < 0 || r.label >= n_classes)
      throw DataError("manifest label " + std::to_string(r.label) + " outside [0, " +
                      std::to_string(n_classes) + ") for " + r.path);
    if (!seen.insert(r.path).second) throw DataError("duplicate manifest path: " + r.path);
  }
}

std::vector<int> DatasetManifest::split_indices(Split s) const {
  std::vector<int> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].split == s) out.push_back(int(i));
  return out;
}

std::array<int, 3> DatasetManifest::split_counts() const {
  std::array<int, 3> c{};
  for (const ManifestRecord& r : records) ++c[static_cast<size_t>(r.split)];
  return c;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write manifest: " + path);
  for (const ManifestRecord& r : m.records) {
    if (r.path.find('\t') != std::string::npos || r.path.find('\n') != std::string::npos)
      throw DataError("manifest path contains a tab or newline: " + r.path);
    os << r.path << '\t' << r.label << '\t' << split_name(r.split) << '\n';
  }
  if (!os) throw DataError("write failure on manifest: " + path);
  nlohmann::json side;
  side["class_names"] = m.class_names;
  side["provenance"] = m.provenance;
  std::ofstream js(path + ".json", std::ios::trunc);
  if (!js) throw DataError("cannot write manifest sidecar: " + path + ".json");
  js << side.dump(2) << '\n';
  if (!js) throw DataError("write failure on manifest sidecar: " + path + ".json");
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest: " + path);
  DatasetManifest m;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t t1 = line.find('\t');
    const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw DataError("manifest line " + std::to_string(line_no) +
                      " is not `path<TAB>label<TAB>split`: " + path);
    ManifestRecord r;
    r.path = line.substr(0, t1);
    try {
      size_t used = 0;
      const std::string field = line.substr(t1 + 1, t2 - t1 - 1);
      r.label = std::stoi(field, &used);
      if (used != field.size()) throw std::invalid_argument(field);
    } catch (const std::exception&) {
      throw DataError("manifest line " + std::to_string(line_no) + " has a non-integer label: " +
                      path);
    }
    r.split = split_from_name(line.substr(t2 + 1));
    m.records.push_back(std::move(r));
  }
  std::ifstream js(path + ".json");
  if (!js) throw DataError("missing manifest sidecar: " + path + ".json");
  try {
    nlohmann::json side = nlohmann::json::parse(js);
    m.class_names = side.at("class_names").get<std::vector<std::string>>();
    m.provenance = side.value("provenance", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest sidecar " + path + ".json: " + e.what());
  }
  m.validate();
  return m;
}

const std::vector<std::string>& minc_class_names() {
  static const std::vector<std::string> names = {
      "brick",  "carpet",        "ceramic", "fabric",    "foliage", "food",
      "glass",  "hair",          "leather", "metal",     "mirror",  "other",
      "painted", "paper",        "plastic", "polishedstone", "skin", "sky",
      "stone",  "tile",          "wallpaper", "water",   "wood"};
  return names;
}

DatasetManifest ingest_minc(const std::string& root) {
  const std::vector<std::string>& classes = minc_class_names();
  DatasetManifest m;
  m.class_names = classes;

  // Per-class record counts indexed [class][split].
  std::vector<std::array<int, 3>> counts(classes.size(), std::array<int, 3>{});
  const std::pair<const char*, Split> listings[3] = {
      {"train1.txt", Split::train}, {"validate1.txt", Split::val}, {"test1.txt", Split::test}};
  for (const auto& [file, split] : listings) {
    const std::string listing = root + "/labels/" + file;
    std::ifstream is(listing);
    if (!is) throw DataError("cannot open split listing: " + listing);
    std::string line;
    while (std::getline(is, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty()) continue;
      const std::string cls = fs::path(line).parent_path().filename().string();
      const auto it = std::find(classes.begin(), classes.end(), cls);
      if (it == classes.end())
        throw DataError("unknown class '" + cls + "' in listing " + listing);
      ManifestRecord r;
      r.path = root + "/" + line;
      r.label = int(it - classes.begin());
      r.split = split;
      m.records.push_back(std::move(r));
      ++counts[size_t(it - classes.begin())][static_cast<size_t>(split)];
    }
  }
  if (m.records.empty()) throw DataError("no records found under MINC root: " + root);

  bool full = true;
  for (const auto& c : counts) full = full && c[0] == 2125 && c[1] == 125 && c[2] == 250;
  if (full) {
    m.provenance = "minc-2500 split 1 (complete: 2125/125/250 per class)";
  } else {
    const auto total = m.records.size();
    std::cerr << "warning: MINC ingest found " << total
              << " records; the complete dataset has 57500 (2125/125/250 per class)\n";
    std::ostringstream prov;
    prov << "minc-2500 split 1 (partial: " << total << " records; per-class train/val/test =";
    for (size_t k = 0; k < classes.size(); ++k)
      if (counts[k][0] + counts[k][1] + counts[k][2] > 0)
        prov << ' ' << classes[k] << ':' << counts[k][0] << '/' << counts[k][1] << '/'
             << counts[k][2];
    prov << ')';
    m.provenance = prov.str();
  }
  m.validate();
  return m;
}

namespace {

// Two box-blur passes per axis give an approximately triangular low-pass
// response whose cutoff drops as the radius grows.
void box_blur_rows(std::vector<double>& img, std::vector<double>& tmp, int size, int radius) {
  const double inv = 1.0 / (2 * radius + 1);
  for (int y = 0; y < size; ++y) {
    const double* row = img.data() + size_t(y) * size;
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        int xx = x + k;
        xx = xx < 0 ? -xx : (xx >= size ? 2 * size - 2 - xx : xx);
        acc += row[xx];
      }
      tmp[size_t(y) * size + x] = acc * inv;
    }
  }
  img.swap(tmp);
}

void box_blur_cols(std::vector<double>& img, std::vector<double>& tmp, int size, int radius) {
  const double inv = 1.0 / (2 * radius + 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        int yy = y + k;
        yy = yy < 0 ? -yy : (yy >= size ? 2 * size - 2 - yy : yy);
        acc += img[size_t(yy) * size + x];
      }
      tmp[size_t(y) * size + x] = acc * inv;
    }
  img.swap(tmp);
}

// Single-channel pattern in [0,1]; per-image randomness stays mild so the
// classes remain separable by construction.
std::vector<double> toy_pattern(int family, int band, int size, Rng& rng) {
  std::vector<double> v(size_t(size) * size);
  if (family == 0) {  // oriented sinusoidal grating
    const double freq = 4.0 + 3.0 * band;
    const double theta = 0.35 + 0.45 * band + rng.uniform(-0.06, 0.06);
    const double phase = rng.uniform(-0.4, 0.4);
    const double kx = std::cos(theta) * 2.0 * 3.14159265358979323846 * freq / size;
    const double ky = std::sin(theta) * 2.0 * 3.14159265358979323846 * freq / size;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        v[size_t(y) * size + x] = 0.5 + 0.35 * std::sin(kx * x + ky * y + phase);
  } else if (family == 1) {  // checkerboard
    const double cell = double(size) / (8 + 4 * band);
    const double offx = rng.uniform(0.0, cell / 3.0);
    const double offy = rng.uniform(0.0, cell / 3.0);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const long long cx = (long long)std::floor((x + offx) / cell);
        const long long cy = (long long)std::floor((y + offy) / cell);
        v[size_t(y) * size + x] = ((cx + cy) & 1) ? 0.8 : 0.2;
      }
  } else {  // low-pass-filtered noise
    for (double& p : v) p = rng.uniform();
    std::vector<double> tmp(v.size());
    const int radius = 1 + band;
    for (int pass = 0; pass < 2; ++pass) {
      box_blur_rows(v, tmp, size, radius);
      box_blur_cols(v, tmp, size, radius);
    }
    double mean = 0.0, sq = 0.0;
    for (double p : v) mean += p;
    mean /= double(v.size());
    for (double p : v) sq += (p - mean) * (p - mean);
    const double stddev = std::sqrt(sq / double(v.size()));
    const double gain = stddev > 1e-12 ? 0.15 / stddev : 0.0;
    for (double& p : v) p = clamp01(0.5 + (p - mean) * gain);
  }
  return v;
}

}  // namespace

DatasetManifest synth_toy_textures(const std::string& out_dir, int num_classes, int per_class,
                                   int size, uint64_t seed) {
  if (num_classes < 1 || per_class < 1)
    throw ConfigError("synth_toy_textures needs num_classes >= 1 and per_class >= 1");
  if (size < 64 || size % 64 != 0)
    throw ConfigError("toy texture size must be a positive multiple of 64, got " +
                      std::to_string(size));
  static const char* kFamilies[3] = {"grating", "checker", "noise"};
  DatasetManifest m;
  for (int cls = 0; cls < num_classes; ++cls)
    m.class_names.push_back(std::string(kFamilies[cls % 3]) + std::to_string(cls / 3));
  std::ostringstream prov;
  prov << "synthetic toy textures (seed=" << seed << ", size=" << size << ", per_class="
       << per_class << ")";
  m.provenance = prov.str();

  const int n_train = per_class * 70 / 100;
  const int n_val = per_class * 15 / 100;
  for (int cls = 0; cls < num_classes; ++cls) {
    const std::string dir = out_dir + "/" + m.class_names[size_t(cls)];
    fs::create_directories(dir);
    for (int idx = 0; idx < per_class; ++idx) {
      Rng rng = Rng::derive(seed, 0x70D5EEDull, uint64_t(cls), uint64_t(idx));
      double gain[3];
      for (double& g : gain) g = rng.uniform(0.75, 1.0);
      const std::vector<double> pattern = toy_pattern(cls % 3, cls / 3, size, rng);
      Tensor img({3, size, size});
      for (int c = 0; c < 3; ++c)
        for (size_t i = 0; i < pattern.size(); ++i)
          img.data[size_t(c) * pattern.size() + i] = float(clamp01(pattern[i] * gain[c]));
      std::ostringstream name;
      name << dir << "/img_";
      name.width(5);
      name.fill('0');
      name << idx;
      name << ".png";
      img::write_png(name.str(), img);
      ManifestRecord r;
      r.path = name.str();
      r.label = cls;
      r.split = idx < n_train ? Split::train : (idx < n_train + n_val ? Split::val : Split::test);
      m.records.push_back(std::move(r));
    }
  }
  m.validate();
  save_manifest(out_dir + "/manifest.tsv", m);
  return m;
}

void AugmentationConfig::validate() const {
  if (pixel_resize < 1 || latent_resize < 1)
    throw ConfigError("augmentation resize targets must be positive");
  if (pixel_crop < 1 || pixel_crop > pixel_resize)
    throw ConfigError("pixel crop must lie in [1, resize]; got crop " +
                      std::to_string(pixel_crop) + ", resize " + std::to_string(pixel_resize));
  if (latent_crop < 1 || latent_crop > latent_resize)
    throw ConfigError("latent crop must lie in [1, resize]; got crop " +
                      std::to_string(latent_crop) + ", resize " + std::to_string(latent_resize));
  if (pixel_flip_prob < 0.0 || pixel_flip_prob > 1.0 || latent_flip_prob < 0.0 ||
      latent_flip_prob > 1.0)
    throw ConfigError("flip probabilities must lie in [0, 1]");
  if (jitter_lo <= 0.0 || jitter_hi < jitter_lo)
    throw ConfigError("color jitter bounds must satisfy 0 < lo <= hi");
  if (pca_noise_std < 0.0) throw ConfigError("pca_noise_std must be nonnegative");
}

AugmentationConfig AugmentationConfig::pixels_only(int resize, int crop) {
  AugmentationConfig cfg;
  cfg.pixel_resize = resize;
  cfg.pixel_crop = crop;
  return cfg;
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w, bool align_corners) {
  if (x.ndim() != 3) throw ShapeError("resize_bilinear expects [C,H,W], got " + x.shape_str());
  if (out_h < 1 || out_w < 1) throw ConfigError("resize target must be positive");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({c, out_h, out_w});
  // Precomputed per-axis source taps; shared by every channel.
  std::vector<int> y0(size_t(out_h), 0), y1(size_t(out_h), 0);
  std::vector<int> x0(size_t(out_w), 0), x1(size_t(out_w), 0);
  std::vector<double> fy(size_t(out_h), 0.0), fx(size_t(out_w), 0.0);
  auto taps = [align_corners](int out_n, int in_n, std::vector<int>& i0, std::vector<int>& i1,
                              std::vector<double>& f) {
    for (int o = 0; o < out_n; ++o) {
      double s;
      if (align_corners)
        s = out_n == 1 ? 0.0 : double(o) * (in_n - 1) / double(out_n - 1);
      else {
        s = (o + 0.5) * double(in_n) / double(out_n) - 0.5;
        s = s < 0.0 ? 0.0 : (s > in_n - 1 ? double(in_n - 1) : s);
      }
      const int lo = int(std::floor(s));
      i0[size_t(o)] = lo;
      i1[size_t(o)] = lo + 1 < in_n ? lo + 1 : in_n - 1;
      f[size_t(o)] = s - lo;
    }
  };
  taps(out_h, h, y0, y1, fy);
  taps(out_w, w, x0, x1, fx);
  for (int ch = 0; ch < c; ++ch) {
    const float* src = x.ptr() + size_t(ch) * h * w;
    float* dst = out.ptr() + size_t(ch) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const float* r0 = src + size_t(y0[size_t(oy)]) * w;
      const float* r1 = src + size_t(y1[size_t(oy)]) * w;
      const double gy = fy[size_t(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const double gx = fx[size_t(ox)];
        const double top = r0[x0[size_t(ox)]] * (1.0 - gx) + r0[x1[size_t(ox)]] * gx;
        const double bot = r1[x0[size_t(ox)]] * (1.0 - gx) + r1[x1[size_t(ox)]] * gx;
        dst[size_t(oy) * out_w + ox] = float(top * (1.0 - gy) + bot * gy);
      }
    }
  }
  return out;
}

Tensor hflip(const Tensor& x) {
  if (x.ndim() != 3) throw ShapeError("hflip expects [C,H,W], got " + x.shape_str());
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out = x;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const float* src = x.ptr() + (size_t(ch) * h + y) * w;
      float* dst = out.ptr() + (size_t(ch) * h + y) * w;
      for (int xx = 0; xx < w; ++xx) dst[xx] = src[w - 1 - xx];
    }
  return out;
}

PcaStats compute_pca_stats(const std::vector<Tensor>& images) {
  if (images.empty()) throw DataError("compute_pca_stats needs at least one image");
  double sum[3] = {}, prod[3][3] = {};
  size_t count = 0;
  for (const Tensor& img : images) {
    if (img.ndim() != 3 || img.dim(0) != 3)
      throw DataError("compute_pca_stats expects RGB [3,H,W] images, got " + img.shape_str());
    const size_t plane = size_t(img.dim(1)) * img.dim(2);
    const float* p = img.ptr();
    for (size_t i = 0; i < plane; ++i) {
      const double rgb[3] = {p[i], p[plane + i], p[2 * plane + i]};
      for (int a = 0; a < 3; ++a) {
        sum[a] += rgb[a];
        for (int b = 0; b < 3; ++b) prod[a][b] += rgb[a] * rgb[b];
      }
    }
    count += plane;
  }
  PcaStats stats;
  double cov[3][3];
  for (int a = 0; a < 3; ++a) stats.mean[size_t(a)] = sum[a] / double(count);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      cov[a][b] = prod[a][b] / double(count) - stats.mean[size_t(a)] * stats.mean[size_t(b)];

  // Cyclic Jacobi sweeps on the symmetric 3x3; v accumulates the rotations.
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::abs(cov[0][1]) + std::abs(cov[0][2]) + std::abs(cov[1][2]);
    if (off < 1e-18) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(cov[p][q]) < 1e-30) continue;
        const double theta = 0.5 * std::atan2(2.0 * cov[p][q], cov[q][q] - cov[p][p]);
        const double c = std::cos(theta), s = std::sin(theta);
        for (int k = 0; k < 3; ++k) {
          const double akp = cov[k][p], akq = cov[k][q];
          cov[k][p] = c * akp - s * akq;
          cov[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = cov[p][k], aqk = cov[q][k];
          cov[p][k] = c * apk - s * aqk;
          cov[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  int order[3] = {0, 1, 2};
  std::sort(order, order + 3, [&](int a, int b) { return cov[a][a] > cov[b][b]; });
  for (int k = 0; k < 3; ++k) {
    stats.eigenvalues[size_t(k)] = std::max(0.0, cov[order[k]][order[k]]);
    for (int ch = 0; ch < 3; ++ch)
      stats.eigenvectors[size_t(ch)][size_t(k)] = v[ch][order[k]];
  }
  return stats;
}

Tensor augment_pixel(const Tensor& image, const AugmentationConfig& cfg, const PcaStats& pca,
                     Rng& rng, bool training) {
  cfg.validate();
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw DataError("augment_pixel expects an RGB [3,H,W] image, got " + image.shape_str());
  Tensor resized = resize_bilinear(image, cfg.pixel_resize, cfg.pixel_resize, false);
  const int span = cfg.pixel_resize - cfg.pixel_crop;
  if (!training) return crop_hw(resized, span / 2, span / 2, cfg.pixel_crop, cfg.pixel_crop);

  const int cy = int(rng.below(uint64_t(span) + 1));
  const int cx = int(rng.below(uint64_t(span) + 1));
  const bool flip = rng.coin(cfg.pixel_flip_prob);
  double gain[3], alpha[3];
  for (double& g : gain) g = rng.uniform(cfg.jitter_lo, cfg.jitter_hi);
  for (double& a : alpha) a = rng.normal() * cfg.pca_noise_std;

  Tensor out = crop_hw(resized, cy, cx, cfg.pixel_crop, cfg.pixel_crop);
  if (flip) out = hflip(out);
  const size_t plane = size_t(cfg.pixel_crop) * cfg.pixel_crop;
  for (int ch = 0; ch < 3; ++ch) {
    double shift = 0.0;
    for (int k = 0; k < 3; ++k)
      shift += pca.eigenvectors[size_t(ch)][size_t(k)] * alpha[k] *
               std::sqrt(pca.eigenvalues[size_t(k)]);
    float* p = out.ptr() + size_t(ch) * plane;
    for (size_t i = 0; i < plane; ++i) p[i] = float(clamp01(p[i] * gain[ch] + shift));
  }
  return out;
}

cdc::LatentPair augment_latent(const cdc::LatentPair& pair, const AugmentationConfig& cfg,
                               Rng& rng, bool training) {
  cfg.validate();
  require_same_shape(pair.y_hat, pair.sigma_hat, "augment_latent pair");
  if (pair.y_hat.ndim() != 3)
    throw ShapeError("augment_latent expects [C,h,w] latents, got " + pair.y_hat.shape_str());
  Tensor y = resize_bilinear(pair.y_hat, cfg.latent_resize, cfg.latent_resize, true);
  Tensor s = resize_bilinear(pair.sigma_hat, cfg.latent_resize, cfg.latent_resize, true);
  const int span = cfg.latent_resize - cfg.latent_crop;
  int cy = span / 2, cx = span / 2;
  bool flip = false;
  if (training) {
    cy = int(rng.below(uint64_t(span) + 1));
    cx = int(rng.below(uint64_t(span) + 1));
    flip = rng.coin(cfg.latent_flip_prob);
  }
  cdc::LatentPair out;
  out.y_hat = crop_hw(y, cy, cx, cfg.latent_crop, cfg.latent_crop);
  out.sigma_hat = crop_hw(s, cy, cx, cfg.latent_crop, cfg.latent_crop);
  if (flip) {
    out.y_hat = hflip(out.y_hat);
    out.sigma_hat = hflip(out.sigma_hat);
  }
  return out;
}

namespace {

constexpr char kLatentMagic[4] = {'L', 'S', 'C', 'L'};
constexpr uint32_t kLatentVersion = 1;

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

void put_u32(std::ostream& os, uint32_t v) {
  const uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, uint32_t(v));
  put_u32(os, uint32_t(v >> 32));
}
uint32_t get_u32(std::istream& is) {
  uint8_t b[4] = {};
  is.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}
uint64_t get_u64(std::istream& is) {
  const uint64_t lo = get_u32(is);
  return lo | (uint64_t(get_u32(is)) << 32);
}

void put_tensor(std::ostream& os, const Tensor& t) {
  os.put(char(uint8_t(t.shape.size())));
  for (int d : t.shape) put_u32(os, uint32_t(d));
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data.data()), std::streamsize(t.numel() * 4));
  } else {
    for (float f : t.data) put_u32(os, std::bit_cast<uint32_t>(f));
  }
}

Tensor get_tensor(std::istream& is, const std::string& path) {
  const int ndim = is.get();
  if (ndim < 0 || ndim > 8)
    throw StreamError(StreamError::Kind::corrupt, "bad tensor rank in latent file: " + path);
  std::vector<int> shape;
  for (int i = 0; i < ndim; ++i) {
    const uint32_t d = get_u32(is);
    if (d == 0 || d > (1u << 24))
      throw StreamError(StreamError::Kind::corrupt, "bad tensor extent in latent file: " + path);
    shape.push_back(int(d));
  }
  Tensor t(shape);
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(t.numel() * 4));
  } else {
    for (float& f : t.data) f = std::bit_cast<float>(get_u32(is));
  }
  if (!is)
    throw StreamError(StreamError::Kind::truncated, "latent file ends early: " + path);
  return t;
}

}  // namespace

LatentStore::LatentStore(std::string root) : root_(std::move(root)) {
  fs::create_directories(root_);
}

std::string LatentStore::file_for(const std::string& source_path, int quality) const {
  const uint64_t h = fnv1a64(source_path + "\n" + std::to_string(quality));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return root_ + "/" + std::string(buf, 2) + "/" + buf + ".lat";
}

bool LatentStore::has(const std::string& source_path, int quality) const {
  return fs::exists(file_for(source_path, quality));
}

void LatentStore::put(const std::string& source_path, int quality, const LatentEntry& entry) {
  require_same_shape(entry.y_hat, entry.sigma_hat, "latent store entry");
  if (!entry.y_hat.is_whole_valued())
    throw DataError("latent store rejects non-integer y_hat for " + source_path);
  const std::string target = file_for(source_path, quality);
  if (fs::exists(target)) return;  // write-once; entries are deterministic
  fs::create_directories(fs::path(target).parent_path());
  const std::string tmp = target + ".tmp." + std::to_string(fnv1a64(source_path)) + "." +
                          std::to_string(uint64_t(::getpid()));
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write latent file: " + tmp);
    os.write(kLatentMagic, 4);
    put_u32(os, kLatentVersion);
    put_u32(os, uint32_t(quality));
    put_u32(os, uint32_t(entry.true_h));
    put_u32(os, uint32_t(entry.true_w));
    put_u64(os, uint64_t(entry.stream_bytes));
    put_tensor(os, entry.y_hat);
    put_tensor(os, entry.sigma_hat);
    put_u32(os, uint32_t(source_path.size()));
    os.write(source_path.data(), std::streamsize(source_path.size()));
    if (!os) throw DataError("write failure on latent file: " + tmp);
  }
  fs::rename(tmp, target);
}

LatentEntry LatentStore::get(const std::string& source_path, int quality) const {
  const std::string file = file_for(source_path, quality);
  std::ifstream is(file, std::ios::binary);
  if (!is)
    throw DataError("latent store has no entry for " + source_path + " at quality " +
                    std::to_string(quality));
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kLatentMagic, 4) != 0)
    throw StreamError(StreamError::Kind::bad_magic, "not a latent file: " + file);
  if (get_u32(is) != kLatentVersion)
    throw StreamError(StreamError::Kind::bad_version, "unsupported latent file version: " + file);
  LatentEntry e;
  const uint32_t stored_quality = get_u32(is);
  e.true_h = int(get_u32(is));
  e.true_w = int(get_u32(is));
  e.stream_bytes = int64_t(get_u64(is));
  e.y_hat = get_tensor(is, file);
  e.y_hat.integer_valued = true;
  e.sigma_hat = get_tensor(is, file);
  const uint32_t path_len = get_u32(is);
  std::string echoed(path_len, '\0');
  is.read(echoed.data(), std::streamsize(path_len));
  if (!is) throw StreamError(StreamError::Kind::truncated, "latent file ends early: " + file);
  if (echoed != source_path || int(stored_quality) != quality)
    throw StreamError(StreamError::Kind::corrupt,
                      "latent file " + file + " belongs to (" + echoed + ", q" +
                          std::to_string(stored_quality) + "), requested (" + source_path +
                          ", q" + std::to_string(quality) + ")");
  return e;
}

PrecomputeResult precompute_latents(const DatasetManifest& manifest, cdc::CodecModel& codec,
                                    LatentStore& store) {
  const int quality = codec.config().quality_index;
  PrecomputeResult result;
  for (const ManifestRecord& rec : manifest.records) {
    if (store.has(rec.path, quality)) {
      ++result.skipped;
      continue;
    }
    try {
      const Tensor img = img::read_image(rec.path);
      Tensor x = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
      cdc::EncodedImage enc = cdc::encode_image(codec, x);
      LatentEntry e;
      const auto& ys = enc.y_hat.shape;
      e.y_hat = enc.y_hat.reshaped({ys[1], ys[2], ys[3]});
      e.sigma_hat = enc.sigma_hat.reshaped({ys[1], ys[2], ys[3]});
      e.stream_bytes = int64_t(enc.stream.size());
      e.true_h = img.dim(1);
      e.true_w = img.dim(2);
      store.put(rec.path, quality, e);
      ++result.computed;
    } catch (const Error& err) {
      result.failures.push_back(rec.path + ": " + err.what());
    }
  }
  return result;
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, uint64_t seed, int epoch) {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (n < 0) throw ConfigError("epoch_batches needs n >= 0");
  std::vector<int> order(size_t(n), 0);
  for (int i = 0; i < n; ++i) order[size_t(i)] = i;
  Rng rng = Rng::derive(seed, 0xBA7C4ull, uint64_t(epoch));
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (int lo = 0; lo < n; lo += batch_size) {
    const int hi = std::min(n, lo + batch_size);
    batches.emplace_back(order.begin() + lo, order.begin() + hi);
  }
  return batches;
}

}  // namespace lsc::data
