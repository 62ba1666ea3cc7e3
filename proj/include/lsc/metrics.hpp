#pragma once

#include <string>
#include <vector>

#include "lsc/ops.hpp"
#include "lsc/tensor.hpp"

// Image quality metrics (PSNR, SSIM, MS-SSIM), classification accuracy, and
// the per-image quality report row. SSIM and MS-SSIM exist both as graph
// builders (for use inside training losses) and as plain scalar conveniences.
namespace lsc::met {

// 10*log10(peak^2 / MSE) over all pixels and channels jointly; identical
// inputs yield +infinity rather than an error.
double psnr(const Tensor& x, const Tensor& x_hat, double peak = 1.0);

// Gaussian-windowed structural similarity on [N,C,H,W] unit-range images,
// computed per channel and averaged. 11x11 window (sigma 1.5), valid
// convolution, K1 = 0.01, K2 = 0.03. Inputs narrower than the window are
// rejected.
template <typename T>
ad::NodeT<T>* ssim_graph(ad::TapeT<T>& t, ad::NodeT<T>* x, ad::NodeT<T>* y);

// Multi-scale SSIM: contrast-structure means at every scale, luminance folded
// in at the coarsest, combined as a weighted geometric mean with weights
// [0.0448, 0.2856, 0.3001, 0.2363, 0.1333]. Scales halve via 2x2 average
// pooling; images too small for five scales use fewer with the leading
// weights renormalized to sum 1 (full depth needs min(H,W) >= 176). Per-scale
// means are clamped at 1e-6 before the fractional powers so the result stays
// differentiable.
template <typename T>
ad::NodeT<T>* ms_ssim_graph(ad::TapeT<T>& t, ad::NodeT<T>* x, ad::NodeT<T>* y);

double ssim(const Tensor& x, const Tensor& x_hat);
double ms_ssim(const Tensor& x, const Tensor& x_hat);

// Percentage of samples whose label appears in the first k ranked indices.
// Every ranked row must hold at least k entries.
double accuracy_topk(const std::vector<std::vector<int>>& ranked,
                     const std::vector<int>& labels, int k);

struct QualityReport {
  std::string image_id;
  int quality_index = 0;
  double bpp = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
};

std::string quality_csv_header();
std::string to_csv_row(const QualityReport& r);
QualityReport quality_from_csv_row(const std::string& line);

}  // namespace lsc::met
