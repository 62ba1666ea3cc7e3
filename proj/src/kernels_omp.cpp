#include <cmath>
#include <vector>

#include "lsc/kernels.hpp"

// Mirrors kernels_serial.cpp with OpenMP pragmas. Work is split so each
// output element is produced by exactly one thread using the same inner
// accumulation order as the serial code, so both paths agree bit for bit.
namespace lsc::kern::omp {

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvGeom& g) {
  const int64_t in_plane = int64_t(g.h) * g.w;
  const int64_t out_plane = int64_t(g.h_out) * g.w_out;
#pragma omp parallel for collapse(3) schedule(static)
  for (int n = 0; n < g.n; ++n) {
    for (int co = 0; co < g.c_out; ++co) {
      for (int oh = 0; oh < g.h_out; ++oh) {
        const T* xn = x + int64_t(n) * g.c_in * in_plane;
        const T* wc = w + int64_t(co) * g.c_in * g.k * g.k;
        T* yrow = y + (int64_t(n) * g.c_out + co) * out_plane + int64_t(oh) * g.w_out;
        for (int ow = 0; ow < g.w_out; ++ow) {
          T acc = bias ? bias[co] : T(0);
          for (int ci = 0; ci < g.c_in; ++ci) {
            const T* xp = xn + ci * in_plane;
            const T* wp = wc + int64_t(ci) * g.k * g.k;
            for (int kh = 0; kh < g.k; ++kh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.h) continue;
              for (int kw = 0; kw < g.k; ++kw) {
                const int iw = ow * g.stride - g.pad + kw;
                if (iw < 0 || iw >= g.w) continue;
                acc += xp[int64_t(ih) * g.w + iw] * wp[kh * g.k + kw];
              }
            }
          }
          yrow[ow] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_data(const T* gy, const T* w, T* gx, const ConvGeom& g) {
  const int64_t in_plane = int64_t(g.h) * g.w;
  const int64_t out_plane = int64_t(g.h_out) * g.w_out;
#pragma omp parallel for collapse(3) schedule(static)
  for (int n = 0; n < g.n; ++n) {
    for (int ci = 0; ci < g.c_in; ++ci) {
      for (int ih = 0; ih < g.h; ++ih) {
        const T* gyn = gy + int64_t(n) * g.c_out * out_plane;
        T* gxrow = gx + (int64_t(n) * g.c_in + ci) * in_plane + int64_t(ih) * g.w;
        for (int iw = 0; iw < g.w; ++iw) {
          T acc = T(0);
          for (int co = 0; co < g.c_out; ++co) {
            const T* wp = w + (int64_t(co) * g.c_in + ci) * g.k * g.k;
            const T* gp = gyn + int64_t(co) * out_plane;
            for (int kh = 0; kh < g.k; ++kh) {
              const int oh_num = ih + g.pad - kh;
              if (oh_num < 0 || oh_num % g.stride != 0) continue;
              const int oh = oh_num / g.stride;
              if (oh >= g.h_out) continue;
              for (int kw = 0; kw < g.k; ++kw) {
                const int ow_num = iw + g.pad - kw;
                if (ow_num < 0 || ow_num % g.stride != 0) continue;
                const int ow = ow_num / g.stride;
                if (ow >= g.w_out) continue;
                acc += gp[int64_t(oh) * g.w_out + ow] * wp[kh * g.k + kw];
              }
            }
          }
          gxrow[iw] += acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, const ConvGeom& g) {
  const int64_t in_plane = int64_t(g.h) * g.w;
  const int64_t out_plane = int64_t(g.h_out) * g.w_out;
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < g.c_out; ++co) {
    for (int ci = 0; ci < g.c_in; ++ci) {
      for (int kh = 0; kh < g.k; ++kh) {
        for (int kw = 0; kw < g.k; ++kw) {
          T acc = T(0);
          for (int n = 0; n < g.n; ++n) {
            const T* xp = x + (int64_t(n) * g.c_in + ci) * in_plane;
            const T* gp = gy + (int64_t(n) * g.c_out + co) * out_plane;
            for (int oh = 0; oh < g.h_out; ++oh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.h) continue;
              for (int ow = 0; ow < g.w_out; ++ow) {
                const int iw = ow * g.stride - g.pad + kw;
                if (iw < 0 || iw >= g.w) continue;
                acc += xp[int64_t(ih) * g.w + iw] * gp[int64_t(oh) * g.w_out + ow];
              }
            }
          }
          gw[((int64_t(co) * g.c_in + ci) * g.k + kh) * g.k + kw] += acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_bias(const T* gy, T* gb, const ConvGeom& g) {
  const int64_t out_plane = int64_t(g.h_out) * g.w_out;
#pragma omp parallel for schedule(static)
  for (int co = 0; co < g.c_out; ++co) {
    T acc = T(0);
    for (int n = 0; n < g.n; ++n) {
      const T* gp = gy + (int64_t(n) * g.c_out + co) * out_plane;
      for (int64_t i = 0; i < out_plane; ++i) acc += gp[i];
    }
    gb[co] += acc;
  }
}

template <typename T>
void gdn_forward(const T* x, const T* beta, const T* gamma, bool inverse, T* y, T* u, int n,
                 int c, int hw) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < c; ++i) {
      const T* xb = x + int64_t(b) * c * hw;
      T* yb = y + int64_t(b) * c * hw;
      T* ub = u + int64_t(b) * c * hw;
      const T* gi = gamma + int64_t(i) * c;
      for (int s = 0; s < hw; ++s) {
        T acc = beta[i];
        for (int j = 0; j < c; ++j) {
          const T xj = xb[int64_t(j) * hw + s];
          acc += gi[j] * xj * xj;
        }
        ub[int64_t(i) * hw + s] = acc;
        const T r = std::sqrt(acc);
        yb[int64_t(i) * hw + s] = inverse ? xb[int64_t(i) * hw + s] * r
                                          : xb[int64_t(i) * hw + s] / r;
      }
    }
  }
}

template <typename T>
void gdn_backward(const T* x, const T* gamma, const T* u, const T* gy, bool inverse, T* gx,
                  T* gbeta, T* ggamma, int n, int c, int hw) {
  std::vector<T> w(size_t(n) * c * hw);
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < c; ++i) {
      const int64_t base = int64_t(b) * c * hw;
      for (int s = 0; s < hw; ++s) {
        const int64_t at = base + int64_t(i) * hw + s;
        const T r = std::sqrt(u[at]);
        w[at] = inverse ? gy[at] * x[at] / r : gy[at] * x[at] / (u[at] * r);
      }
    }
  }
  if (gx) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < n; ++b) {
      for (int k = 0; k < c; ++k) {
        const int64_t base = int64_t(b) * c * hw;
        for (int s = 0; s < hw; ++s) {
          const int64_t at = base + int64_t(k) * hw + s;
          T dot = T(0);
          for (int i = 0; i < c; ++i) dot += gamma[int64_t(i) * c + k] * w[base + int64_t(i) * hw + s];
          const T r = std::sqrt(u[at]);
          if (inverse)
            gx[at] += gy[at] * r + x[at] * dot;
          else
            gx[at] += gy[at] / r - x[at] * dot;
        }
      }
    }
  }
  const T sign = inverse ? T(0.5) : T(-0.5);
  if (gbeta) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < c; ++i) {
      T acc = T(0);
      for (int b = 0; b < n; ++b)
        for (int s = 0; s < hw; ++s) acc += w[(int64_t(b) * c + i) * hw + s];
      gbeta[i] += sign * acc;
    }
  }
  if (ggamma) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int i = 0; i < c; ++i) {
      for (int j = 0; j < c; ++j) {
        T acc = T(0);
        for (int b = 0; b < n; ++b) {
          const T* wb = w.data() + (int64_t(b) * c + i) * hw;
          const T* xb = x + (int64_t(b) * c + j) * hw;
          for (int s = 0; s < hw; ++s) acc += wb[s] * xb[s] * xb[s];
        }
        ggamma[int64_t(i) * c + j] += sign * acc;
      }
    }
  }
}

template <typename T>
void maxpool_forward(const T* x, T* y, int32_t* argmax, int n, int c, int h, int w, int k,
                     int stride, int pad, int h_out, int w_out) {
  const int64_t in_plane = int64_t(h) * w;
  const int64_t out_plane = int64_t(h_out) * w_out;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < int64_t(n) * c; ++p) {
    const T* xp = x + p * in_plane;
    T* yp = y + p * out_plane;
    int32_t* ap = argmax + p * out_plane;
    for (int oh = 0; oh < h_out; ++oh) {
      for (int ow = 0; ow < w_out; ++ow) {
        T best = T(0);
        int32_t best_at = -1;
        for (int kh = 0; kh < k; ++kh) {
          const int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= h) continue;
          for (int kw = 0; kw < k; ++kw) {
            const int iw = ow * stride - pad + kw;
            if (iw < 0 || iw >= w) continue;
            const T v = xp[int64_t(ih) * w + iw];
            if (best_at < 0 || v > best) {
              best = v;
              best_at = int32_t(ih * w + iw);
            }
          }
        }
        yp[int64_t(oh) * w_out + ow] = best;
        ap[int64_t(oh) * w_out + ow] = best_at;
      }
    }
  }
}

template <typename T>
void maxpool_backward(const T* gy, const int32_t* argmax, T* gx, int n, int c, int h, int w,
                      int h_out, int w_out) {
  const int64_t in_plane = int64_t(h) * w;
  const int64_t out_plane = int64_t(h_out) * w_out;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < int64_t(n) * c; ++p) {
    const T* gp = gy + p * out_plane;
    const int32_t* ap = argmax + p * out_plane;
    T* xp = gx + p * in_plane;
    for (int64_t i = 0; i < out_plane; ++i)
      if (ap[i] >= 0) xp[ap[i]] += gp[i];
  }
}

template <typename T>
void avgpool2_forward(const T* x, T* y, int n, int c, int h, int w) {
  const int h_out = h / 2, w_out = w / 2;
  const int64_t in_plane = int64_t(h) * w;
  const int64_t out_plane = int64_t(h_out) * w_out;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < int64_t(n) * c; ++p) {
    const T* xp = x + p * in_plane;
    T* yp = y + p * out_plane;
    for (int oh = 0; oh < h_out; ++oh)
      for (int ow = 0; ow < w_out; ++ow) {
        const T* r0 = xp + int64_t(2 * oh) * w + 2 * ow;
        yp[int64_t(oh) * w_out + ow] = (r0[0] + r0[1] + r0[w] + r0[w + 1]) * T(0.25);
      }
  }
}

template <typename T>
void avgpool2_backward(const T* gy, T* gx, int n, int c, int h, int w) {
  const int h_out = h / 2, w_out = w / 2;
  const int64_t in_plane = int64_t(h) * w;
  const int64_t out_plane = int64_t(h_out) * w_out;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < int64_t(n) * c; ++p) {
    const T* gp = gy + p * out_plane;
    T* xp = gx + p * in_plane;
    for (int oh = 0; oh < h_out; ++oh)
      for (int ow = 0; ow < w_out; ++ow) {
        const T v = gp[int64_t(oh) * w_out + ow] * T(0.25);
        T* r0 = xp + int64_t(2 * oh) * w + 2 * ow;
        r0[0] += v;
        r0[1] += v;
        r0[w] += v;
        r0[w + 1] += v;
      }
  }
}

template <typename T>
void filter1d_valid_forward(const T* x, const double* taps, int ntaps, bool along_w, T* y,
                            int n, int c, int h, int w) {
  const int h_out = along_w ? h : h - ntaps + 1;
  const int w_out = along_w ? w - ntaps + 1 : w;
  const int64_t in_plane = int64_t(h) * w;
  const int64_t out_plane = int64_t(h_out) * w_out;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < int64_t(n) * c; ++p) {
    const T* xp = x + p * in_plane;
    T* yp = y + p * out_plane;
    for (int oh = 0; oh < h_out; ++oh)
      for (int ow = 0; ow < w_out; ++ow) {
        T acc = T(0);
        if (along_w) {
          const T* row = xp + int64_t(oh) * w + ow;
          for (int t = 0; t < ntaps; ++t) acc += row[t] * T(taps[t]);
        } else {
          const T* col = xp + int64_t(oh) * w + ow;
          for (int t = 0; t < ntaps; ++t) acc += col[int64_t(t) * w] * T(taps[t]);
        }
        yp[int64_t(oh) * w_out + ow] = acc;
      }
  }
}

template <typename T>
void filter1d_valid_backward(const T* gy, const double* taps, int ntaps, bool along_w, T* gx,
                             int n, int c, int h, int w) {
  const int h_out = along_w ? h : h - ntaps + 1;
  const int w_out = along_w ? w - ntaps + 1 : w;
  const int64_t in_plane = int64_t(h) * w;
  const int64_t out_plane = int64_t(h_out) * w_out;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < int64_t(n) * c; ++p) {
    const T* gp = gy + p * out_plane;
    T* xp = gx + p * in_plane;
    for (int ih = 0; ih < h; ++ih)
      for (int iw = 0; iw < w; ++iw) {
        T acc = T(0);
        for (int t = 0; t < ntaps; ++t) {
          const int oh = along_w ? ih : ih - t;
          const int ow = along_w ? iw - t : iw;
          if (oh < 0 || oh >= h_out || ow < 0 || ow >= w_out) continue;
          acc += gp[int64_t(oh) * w_out + ow] * T(taps[t]);
        }
        xp[int64_t(ih) * w + iw] += acc;
      }
  }
}

#define LSC_INSTANTIATE_OMP(T)                                                                 \
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
                                           int, int);

LSC_INSTANTIATE_OMP(float)
LSC_INSTANTIATE_OMP(double)
#undef LSC_INSTANTIATE_OMP

}  // namespace lsc::kern::omp
