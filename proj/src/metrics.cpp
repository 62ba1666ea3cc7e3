#include "lsc/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "lsc/common.hpp"

namespace lsc::met {

namespace {
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;
constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kScaleWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr double kPowFloor = 1e-6;

const std::vector<double>& window_taps() {
  static const std::vector<double> taps = [] {
    std::vector<double> t(kWindow);
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
      const double d = i - (kWindow - 1) / 2.0;
      t[size_t(i)] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
      sum += t[size_t(i)];
    }
    for (double& v : t) v /= sum;
    return t;
  }();
  return taps;
}

template <typename T>
ad::NodeT<T>* blur(ad::TapeT<T>& t, ad::NodeT<T>* x) {
  ad::NodeT<T>* h = ops::filter1d(t, x, window_taps(), /*along_w=*/true);
  return ops::filter1d(t, h, window_taps(), /*along_w=*/false);
}

template <typename T>
struct SsimTerms {
  ad::NodeT<T>* luminance;   // (2 mu_x mu_y + C1) / (mu_x^2 + mu_y^2 + C1)
  ad::NodeT<T>* contrast;    // (2 sigma_xy + C2) / (sigma_x^2 + sigma_y^2 + C2)
};

template <typename T>
SsimTerms<T> ssim_terms(ad::TapeT<T>& t, ad::NodeT<T>* x, ad::NodeT<T>* y) {
  constexpr double c1 = kK1 * kK1;  // peak is 1 for unit-range images
  constexpr double c2 = kK2 * kK2;
  ad::NodeT<T>* mu_x = blur(t, x);
  ad::NodeT<T>* mu_y = blur(t, y);
  ad::NodeT<T>* var_x = ops::sub(t, blur(t, ops::square(t, x)), ops::square(t, mu_x));
  ad::NodeT<T>* var_y = ops::sub(t, blur(t, ops::square(t, y)), ops::square(t, mu_y));
  ad::NodeT<T>* cov = ops::sub(t, blur(t, ops::mul(t, x, y)), ops::mul(t, mu_x, mu_y));
  SsimTerms<T> out;
  out.luminance =
      ops::div(t, ops::add_scalar(t, ops::mul_scalar(t, ops::mul(t, mu_x, mu_y), 2.0), c1),
               ops::add_scalar(t, ops::add(t, ops::square(t, mu_x), ops::square(t, mu_y)), c1));
  out.contrast =
      ops::div(t, ops::add_scalar(t, ops::mul_scalar(t, cov, 2.0), c2),
               ops::add_scalar(t, ops::add(t, var_x, var_y), c2));
  return out;
}

template <typename T>
void check_pair(const ad::NodeT<T>* x, const ad::NodeT<T>* y) {
  const auto& xs = x->val().shape;
  if (xs.size() != 4)
    throw ShapeError("structural similarity expects [N,C,H,W], got " + x->val().shape_str());
  require_same_shape(x->val(), y->val(), "structural similarity");
  if (xs[2] < kWindow || xs[3] < kWindow)
    throw ShapeError("image " + x->val().shape_str() + " is smaller than the " +
                     std::to_string(kWindow) + "-tap similarity window");
}

// Number of dyadic scales whose spatial extent still fits the window, given
// that each 2x2 average pool floors odd extents.
int usable_scales(int h, int w) {
  int scales = 1;
  while (scales < 5 && (h / 2) >= kWindow && (w / 2) >= kWindow) {
    h /= 2;
    w /= 2;
    ++scales;
  }
  return scales;
}
}  // namespace

template <typename T>
ad::NodeT<T>* ssim_graph(ad::TapeT<T>& t, ad::NodeT<T>* x, ad::NodeT<T>* y) {
  check_pair(x, y);
  SsimTerms<T> terms = ssim_terms(t, x, y);
  return ops::mean_all(t, ops::mul(t, terms.luminance, terms.contrast));
}

template <typename T>
ad::NodeT<T>* ms_ssim_graph(ad::TapeT<T>& t, ad::NodeT<T>* x, ad::NodeT<T>* y) {
  check_pair(x, y);
  const int scales = usable_scales(x->val().shape[2], x->val().shape[3]);
  double weight_sum = 0.0;
  for (int s = 0; s < scales; ++s) weight_sum += kScaleWeights[s];

  ad::NodeT<T>* product = nullptr;
  for (int s = 0; s < scales; ++s) {
    SsimTerms<T> terms = ssim_terms(t, x, y);
    ad::NodeT<T>* map = (s == scales - 1)
                            ? ops::mul(t, terms.luminance, terms.contrast)
                            : terms.contrast;
    ad::NodeT<T>* mean_c = ops::mean_per_channel(t, map);
    ad::NodeT<T>* powed =
        ops::pow_scalar(t, ops::max_with(t, mean_c, kPowFloor), kScaleWeights[s] / weight_sum);
    product = product ? ops::mul(t, product, powed) : powed;
    if (s + 1 < scales) {
      x = ops::avg_pool_2x2(t, x);
      y = ops::avg_pool_2x2(t, y);
    }
  }
  return ops::mean_all(t, product);
}

template ad::NodeT<float>* ssim_graph<float>(ad::TapeT<float>&, ad::NodeT<float>*,
                                             ad::NodeT<float>*);
template ad::NodeT<double>* ssim_graph<double>(ad::TapeT<double>&, ad::NodeT<double>*,
                                               ad::NodeT<double>*);
template ad::NodeT<float>* ms_ssim_graph<float>(ad::TapeT<float>&, ad::NodeT<float>*,
                                                ad::NodeT<float>*);
template ad::NodeT<double>* ms_ssim_graph<double>(ad::TapeT<double>&, ad::NodeT<double>*,
                                                  ad::NodeT<double>*);

double psnr(const Tensor& x, const Tensor& x_hat, double peak) {
  require_same_shape(x, x_hat, "psnr");
  if (x.empty()) throw ShapeError("psnr of empty tensors");
  double se = 0.0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double d = double(x.data[i]) - double(x_hat.data[i]);
    se += d * d;
  }
  const double mse = se / double(x.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {
double scalar_similarity(const Tensor& x, const Tensor& y, bool multi_scale) {
  ad::TapeT<double> tape;
  tape.grad_enabled = false;
  ad::NodeT<double>* a = tape.leaf(cast_tensor<double>(x));
  ad::NodeT<double>* b = tape.leaf(cast_tensor<double>(y));
  ad::NodeT<double>* r = multi_scale ? ms_ssim_graph(tape, a, b) : ssim_graph(tape, a, b);
  return r->val().data[0];
}
}  // namespace

double ssim(const Tensor& x, const Tensor& x_hat) {
  return scalar_similarity(x, x_hat, false);
}

double ms_ssim(const Tensor& x, const Tensor& x_hat) {
  return scalar_similarity(x, x_hat, true);
}

double accuracy_topk(const std::vector<std::vector<int>>& ranked,
                     const std::vector<int>& labels, int k) {
  if (ranked.size() != labels.size())
    throw DataError("accuracy_topk: " + std::to_string(ranked.size()) + " prediction rows vs " +
                    std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw DataError("accuracy_topk over zero samples");
  if (k < 1) throw DataError("accuracy_topk rank must be positive");
  size_t hits = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (ranked[i].size() < size_t(k))
      throw DataError("accuracy_topk: ranked row " + std::to_string(i) + " has only " +
                      std::to_string(ranked[i].size()) + " entries, need " + std::to_string(k));
    for (int j = 0; j < k; ++j)
      if (ranked[i][size_t(j)] == labels[i]) {
        ++hits;
        break;
      }
  }
  return 100.0 * double(hits) / double(labels.size());
}

std::string quality_csv_header() { return "image_id,quality_index,bpp,psnr_db,ssim,ms_ssim"; }

std::string to_csv_row(const QualityReport& r) {
  if (r.image_id.find_first_of(",\n") != std::string::npos)
    throw DataError("image id '" + r.image_id + "' cannot appear in a CSV row");
  std::ostringstream os;
  os << std::setprecision(17) << r.image_id << ',' << r.quality_index << ',' << r.bpp << ','
     << r.psnr_db << ',' << r.ssim << ',' << r.ms_ssim;
  return os.str();
}

QualityReport quality_from_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(cur);
  if (fields.size() != 6)
    throw DataError("quality row needs 6 fields, got " + std::to_string(fields.size()) + ": " +
                    line);
  QualityReport r;
  try {
    r.image_id = fields[0];
    r.quality_index = std::stoi(fields[1]);
    r.bpp = std::stod(fields[2]);
    r.psnr_db = std::stod(fields[3]);
    r.ssim = std::stod(fields[4]);
    r.ms_ssim = std::stod(fields[5]);
  } catch (const std::exception&) {
    throw DataError("unparseable quality row: " + line);
  }
  return r;
}

}  // namespace lsc::met
