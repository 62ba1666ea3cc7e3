#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lsc/tensor.hpp"

// Compute kernels. Every hot loop exists twice: kern::serial holds the plain
// reference implementation, kern::omp the OpenMP version. The unqualified
// functions dispatch on the process-wide switches below. Parallel variants
// partition work so that each output element is produced by exactly one
// thread with the same inner accumulation order as the serial code, so the
// two paths agree bit for bit and results do not depend on thread count.
// Convolutions additionally have a GEMM backend (im2col + BLAS) which is the
// default; it matches the direct path to float tolerance, not bitwise.
namespace lsc::kern {

bool parallel_enabled();
void set_parallel(bool on);

enum class ConvBackend { gemm, direct };
ConvBackend conv_backend();
void set_conv_backend(ConvBackend b);

struct ConvGeom {
  int n = 0, c_in = 0, h = 0, w = 0;
  int c_out = 0, k = 0;
  int stride = 1, pad = 0;
  int h_out = 0, w_out = 0;
};

// Validates shapes and computes output extents, throwing ShapeError with the
// offending axes named.
ConvGeom conv_geometry(const std::vector<int>& x_shape, const std::vector<int>& w_shape,
                       int stride, int pad);

// Output extents of the adjoint (transposed) convolution for an input that
// has the geometry's *output* shape.
inline int tconv_out_h(const ConvGeom& g) { return (g.h_out - 1) * g.stride - 2 * g.pad + g.k; }
inline int tconv_out_w(const ConvGeom& g) { return (g.w_out - 1) * g.stride - 2 * g.pad + g.k; }

// ---- dispatching entry points ----

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvGeom& g);
template <typename T>
void conv2d_backward_data(const T* gy, const T* w, T* gx, const ConvGeom& g);
template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, const ConvGeom& g);
template <typename T>
void conv2d_backward_bias(const T* gy, T* gb, const ConvGeom& g);

// u_i = beta_i + sum_j gamma_ij x_j^2 per spatial site; y = x * u^(-1/2),
// or x * u^(1/2) when inverse. u (size n*c*hw) is kept for the backward pass.
template <typename T>
void gdn_forward(const T* x, const T* beta, const T* gamma, bool inverse, T* y, T* u, int n,
                 int c, int hw);
template <typename T>
void gdn_backward(const T* x, const T* gamma, const T* u, const T* gy, bool inverse, T* gx,
                  T* gbeta, T* ggamma, int n, int c, int hw);

template <typename T>
void maxpool_forward(const T* x, T* y, int32_t* argmax, int n, int c, int h, int w, int k,
                     int stride, int pad, int h_out, int w_out);
template <typename T>
void maxpool_backward(const T* gy, const int32_t* argmax, T* gx, int n, int c, int h, int w,
                      int h_out, int w_out);

template <typename T>
void avgpool2_forward(const T* x, T* y, int n, int c, int h, int w);
template <typename T>
void avgpool2_backward(const T* gy, T* gx, int n, int c, int h, int w);

// Separable valid 1-d filter along W (along_w) or H, per channel.
template <typename T>
void filter1d_valid_forward(const T* x, const double* taps, int ntaps, bool along_w, T* y,
                            int n, int c, int h, int w);
template <typename T>
void filter1d_valid_backward(const T* gy, const double* taps, int ntaps, bool along_w, T* gx,
                             int n, int c, int h, int w);

// C = alpha * op(A) * op(B) + beta * C, row-major. BLAS-backed in dispatch.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc);

// ---- reference implementations ----

namespace serial {
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvGeom& g);
template <typename T>
void conv2d_backward_data(const T* gy, const T* w, T* gx, const ConvGeom& g);
template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, const ConvGeom& g);
template <typename T>
void conv2d_backward_bias(const T* gy, T* gb, const ConvGeom& g);
template <typename T>
void gdn_forward(const T* x, const T* beta, const T* gamma, bool inverse, T* y, T* u, int n,
                 int c, int hw);
template <typename T>
void gdn_backward(const T* x, const T* gamma, const T* u, const T* gy, bool inverse, T* gx,
                  T* gbeta, T* ggamma, int n, int c, int hw);
template <typename T>
void maxpool_forward(const T* x, T* y, int32_t* argmax, int n, int c, int h, int w, int k,
                     int stride, int pad, int h_out, int w_out);
template <typename T>
void maxpool_backward(const T* gy, const int32_t* argmax, T* gx, int n, int c, int h, int w,
                      int h_out, int w_out);
template <typename T>
void avgpool2_forward(const T* x, T* y, int n, int c, int h, int w);
template <typename T>
void avgpool2_backward(const T* gy, T* gx, int n, int c, int h, int w);
template <typename T>
void filter1d_valid_forward(const T* x, const double* taps, int ntaps, bool along_w, T* y,
                            int n, int c, int h, int w);
template <typename T>
void filter1d_valid_backward(const T* gy, const double* taps, int ntaps, bool along_w, T* gx,
                             int n, int c, int h, int w);
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc);
}  // namespace serial

namespace omp {
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvGeom& g);
template <typename T>
void conv2d_backward_data(const T* gy, const T* w, T* gx, const ConvGeom& g);
template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, const ConvGeom& g);
template <typename T>
void conv2d_backward_bias(const T* gy, T* gb, const ConvGeom& g);
template <typename T>
void gdn_forward(const T* x, const T* beta, const T* gamma, bool inverse, T* y, T* u, int n,
                 int c, int hw);
template <typename T>
void gdn_backward(const T* x, const T* gamma, const T* u, const T* gy, bool inverse, T* gx,
                  T* gbeta, T* ggamma, int n, int c, int hw);
template <typename T>
void maxpool_forward(const T* x, T* y, int32_t* argmax, int n, int c, int h, int w, int k,
                     int stride, int pad, int h_out, int w_out);
template <typename T>
void maxpool_backward(const T* gy, const int32_t* argmax, T* gx, int n, int c, int h, int w,
                      int h_out, int w_out);
template <typename T>
void avgpool2_forward(const T* x, T* y, int n, int c, int h, int w);
template <typename T>
void avgpool2_backward(const T* gy, T* gx, int n, int c, int h, int w);
template <typename T>
void filter1d_valid_forward(const T* x, const double* taps, int ntaps, bool along_w, T* y,
                            int n, int c, int h, int w);
template <typename T>
void filter1d_valid_backward(const T* gy, const double* taps, int ntaps, bool along_w, T* gx,
                             int n, int c, int h, int w);
}  // namespace omp

// Simple index-parallel loop used by elementwise ops; identical results with
// parallelism on or off since iterations are independent.
void parallel_for(int64_t count, const std::function<void(int64_t, int64_t)>& body);

}  // namespace lsc::kern
