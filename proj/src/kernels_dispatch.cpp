#include <algorithm>
#include <atomic>
#include <cstring>
#include <vector>

#include <cblas.h>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "lsc/kernels.hpp"

namespace lsc::kern {

namespace {
std::atomic<bool> g_parallel{true};
std::atomic<ConvBackend> g_backend{ConvBackend::gemm};

// cols[(ci*k*k + kh*k + kw) * (h_out*w_out) + oh*w_out + ow] = padded x; one image.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const int64_t out_plane = int64_t(g.h_out) * g.w_out;
  parallel_for(int64_t(g.c_in) * g.k * g.k, [&](int64_t lo, int64_t hi) {
    for (int64_t r = lo; r < hi; ++r) {
      const int ci = int(r / (g.k * g.k));
      const int kh = int(r / g.k % g.k);
      const int kw = int(r % g.k);
      const T* xp = x + int64_t(ci) * g.h * g.w;
      T* out = cols + r * out_plane;
      for (int oh = 0; oh < g.h_out; ++oh) {
        const int ih = oh * g.stride - g.pad + kh;
        if (ih < 0 || ih >= g.h) {
          std::fill(out + int64_t(oh) * g.w_out, out + int64_t(oh + 1) * g.w_out, T(0));
          continue;
        }
        for (int ow = 0; ow < g.w_out; ++ow) {
          const int iw = ow * g.stride - g.pad + kw;
          out[int64_t(oh) * g.w_out + ow] =
              (iw < 0 || iw >= g.w) ? T(0) : xp[int64_t(ih) * g.w + iw];
        }
      }
    }
  });
}

// Adjoint of im2col: scatter-add columns back into one image's gradient.
// Serial over rows since distinct (kh,kw) rows can hit the same input cell.
template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* gx) {
  const int64_t out_plane = int64_t(g.h_out) * g.w_out;
  for (int64_t r = 0; r < int64_t(g.c_in) * g.k * g.k; ++r) {
    const int ci = int(r / (g.k * g.k));
    const int kh = int(r / g.k % g.k);
    const int kw = int(r % g.k);
    T* xp = gx + int64_t(ci) * g.h * g.w;
    const T* in = cols + r * out_plane;
    for (int oh = 0; oh < g.h_out; ++oh) {
      const int ih = oh * g.stride - g.pad + kh;
      if (ih < 0 || ih >= g.h) continue;
      for (int ow = 0; ow < g.w_out; ++ow) {
        const int iw = ow * g.stride - g.pad + kw;
        if (iw < 0 || iw >= g.w) continue;
        xp[int64_t(ih) * g.w + iw] += in[int64_t(oh) * g.w_out + ow];
      }
    }
  }
}

void blas_gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
               const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
              n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
void blas_gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
               const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
              n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }
ConvBackend conv_backend() { return g_backend.load(std::memory_order_relaxed); }
void set_conv_backend(ConvBackend b) { g_backend.store(b, std::memory_order_relaxed); }

void parallel_for(int64_t count, const std::function<void(int64_t, int64_t)>& body) {
  if (count <= 0) return;
#ifdef _OPENMP
  if (parallel_enabled() && count > 1) {
#pragma omp parallel
    {
      const int nt = omp_get_num_threads();
      const int tid = omp_get_thread_num();
      const int64_t chunk = (count + nt - 1) / nt;
      const int64_t lo = int64_t(tid) * chunk;
      const int64_t hi = std::min(count, lo + chunk);
      if (lo < hi) body(lo, hi);
    }
    return;
  }
#endif
  body(0, count);
}

template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc) {
  blas_gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvGeom& g) {
  if (conv_backend() == ConvBackend::direct) {
    if (parallel_enabled())
      omp::conv2d_forward(x, w, bias, y, g);
    else
      serial::conv2d_forward(x, w, bias, y, g);
    return;
  }
  const int64_t out_plane = int64_t(g.h_out) * g.w_out;
  const int64_t ck = int64_t(g.c_in) * g.k * g.k;
  std::vector<T> cols(size_t(ck) * out_plane);
  for (int n = 0; n < g.n; ++n) {
    im2col(x + int64_t(n) * g.c_in * g.h * g.w, g, cols.data());
    T* yn = y + int64_t(n) * g.c_out * out_plane;
    gemm(false, false, g.c_out, int(out_plane), int(ck), T(1), w, int(ck), cols.data(),
         int(out_plane), T(0), yn, int(out_plane));
    if (bias) {
      parallel_for(g.c_out, [&](int64_t lo, int64_t hi) {
        for (int64_t co = lo; co < hi; ++co) {
          T* p = yn + co * out_plane;
          for (int64_t i = 0; i < out_plane; ++i) p[i] += bias[co];
        }
      });
    }
  }
}

template <typename T>
void conv2d_backward_data(const T* gy, const T* w, T* gx, const ConvGeom& g) {
  if (conv_backend() == ConvBackend::direct) {
    if (parallel_enabled())
      omp::conv2d_backward_data(gy, w, gx, g);
    else
      serial::conv2d_backward_data(gy, w, gx, g);
    return;
  }
  const int64_t out_plane = int64_t(g.h_out) * g.w_out;
  const int64_t ck = int64_t(g.c_in) * g.k * g.k;
  std::vector<T> cols(size_t(ck) * out_plane);
  for (int n = 0; n < g.n; ++n) {
    gemm(true, false, int(ck), int(out_plane), g.c_out, T(1), w, int(ck),
         gy + int64_t(n) * g.c_out * out_plane, int(out_plane), T(0), cols.data(),
         int(out_plane));
    col2im_add(cols.data(), g, gx + int64_t(n) * g.c_in * g.h * g.w);
  }
}

template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, const ConvGeom& g) {
  if (conv_backend() == ConvBackend::direct) {
    if (parallel_enabled())
      omp::conv2d_backward_weight(x, gy, gw, g);
    else
      serial::conv2d_backward_weight(x, gy, gw, g);
    return;
  }
  const int64_t out_plane = int64_t(g.h_out) * g.w_out;
  const int64_t ck = int64_t(g.c_in) * g.k * g.k;
  std::vector<T> cols(size_t(ck) * out_plane);
  for (int n = 0; n < g.n; ++n) {
    im2col(x + int64_t(n) * g.c_in * g.h * g.w, g, cols.data());
    gemm(false, true, g.c_out, int(ck), int(out_plane), T(1),
         gy + int64_t(n) * g.c_out * out_plane, int(out_plane), cols.data(), int(out_plane),
         T(1), gw, int(ck));
  }
}

template <typename T>
void conv2d_backward_bias(const T* gy, T* gb, const ConvGeom& g) {
  if (parallel_enabled())
    omp::conv2d_backward_bias(gy, gb, g);
  else
    serial::conv2d_backward_bias(gy, gb, g);
}

template <typename T>
void gdn_forward(const T* x, const T* beta, const T* gamma, bool inverse, T* y, T* u, int n,
                 int c, int hw) {
  if (parallel_enabled())
    omp::gdn_forward(x, beta, gamma, inverse, y, u, n, c, hw);
  else
    serial::gdn_forward(x, beta, gamma, inverse, y, u, n, c, hw);
}

template <typename T>
void gdn_backward(const T* x, const T* gamma, const T* u, const T* gy, bool inverse, T* gx,
                  T* gbeta, T* ggamma, int n, int c, int hw) {
  if (parallel_enabled())
    omp::gdn_backward(x, gamma, u, gy, inverse, gx, gbeta, ggamma, n, c, hw);
  else
    serial::gdn_backward(x, gamma, u, gy, inverse, gx, gbeta, ggamma, n, c, hw);
}

template <typename T>
void maxpool_forward(const T* x, T* y, int32_t* argmax, int n, int c, int h, int w, int k,
                     int stride, int pad, int h_out, int w_out) {
  if (parallel_enabled())
    omp::maxpool_forward(x, y, argmax, n, c, h, w, k, stride, pad, h_out, w_out);
  else
    serial::maxpool_forward(x, y, argmax, n, c, h, w, k, stride, pad, h_out, w_out);
}

template <typename T>
void maxpool_backward(const T* gy, const int32_t* argmax, T* gx, int n, int c, int h, int w,
                      int h_out, int w_out) {
  if (parallel_enabled())
    omp::maxpool_backward(gy, argmax, gx, n, c, h, w, h_out, w_out);
  else
    serial::maxpool_backward(gy, argmax, gx, n, c, h, w, h_out, w_out);
}

template <typename T>
void avgpool2_forward(const T* x, T* y, int n, int c, int h, int w) {
  if (parallel_enabled())
    omp::avgpool2_forward(x, y, n, c, h, w);
  else
    serial::avgpool2_forward(x, y, n, c, h, w);
}

template <typename T>
void avgpool2_backward(const T* gy, T* gx, int n, int c, int h, int w) {
  if (parallel_enabled())
    omp::avgpool2_backward(gy, gx, n, c, h, w);
  else
    serial::avgpool2_backward(gy, gx, n, c, h, w);
}

template <typename T>
void filter1d_valid_forward(const T* x, const double* taps, int ntaps, bool along_w, T* y,
                            int n, int c, int h, int w) {
  if (parallel_enabled())
    omp::filter1d_valid_forward(x, taps, ntaps, along_w, y, n, c, h, w);
  else
    serial::filter1d_valid_forward(x, taps, ntaps, along_w, y, n, c, h, w);
}

template <typename T>
void filter1d_valid_backward(const T* gy, const double* taps, int ntaps, bool along_w, T* gx,
                             int n, int c, int h, int w) {
  if (parallel_enabled())
    omp::filter1d_valid_backward(gy, taps, ntaps, along_w, gx, n, c, h, w);
  else
    serial::filter1d_valid_backward(gy, taps, ntaps, along_w, gx, n, c, h, w);
}

#define LSC_INSTANTIATE_DISPATCH(T)                                                            \
  template void conv2d_forward<T>(const T*, const T*, const T*, T*, const ConvGeom&);          \
  template void conv2d_backward_data<T>(const T*, const T*, T*, const ConvGeom&);              \
  template void conv2d_backward_weight<T>(const T*, const T*, T*, const ConvGeom&);            \
  template void conv2d_backward_bias<T>(const T*, T*, const ConvGeom&);                        \
  template void gdn_forward<T>(const T*, const T*, const T*, bool, T*, T*, int, int, int);     \
  template void gdn_backward<T>(const T*, const T*, const T*, const T*, bool, T*, T*, T*, int, \
                                int, int);                                                     \
  template void maxpool_forward<T>(const T*, T*, int32_t*, int, int, int, int, int, int, int,  \
                                   int, int);                                                  \
  template void maxpool_backward<T>(const T*, const int32_t*, T*, int, int, int, int, int,     \
                                    int);                                                      \
  template void avgpool2_forward<T>(const T*, T*, int, int, int, int);                         \
  template void avgpool2_backward<T>(const T*, T*, int, int, int, int);                        \
  template void filter1d_valid_forward<T>(const T*, const double*, int, bool, T*, int, int,    \
                                          int, int);                                           \
  template void filter1d_valid_backward<T>(const T*, const double*, int, bool, T*, int, int,   \
                                           int, int);                                          \
  template void gemm<T>(bool, bool, int, int, int, T, const T*, int, const T*, int, T, T*, int);

LSC_INSTANTIATE_DISPATCH(float)
LSC_INSTANTIATE_DISPATCH(double)
#undef LSC_INSTANTIATE_DISPATCH

}  // namespace lsc::kern
