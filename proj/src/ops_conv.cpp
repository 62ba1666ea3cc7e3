#include <utility>
#include <vector>

#include "lsc/kernels.hpp"
#include "lsc/ops.hpp"

namespace lsc::ops {

using kern::ConvGeom;
using kern::parallel_for;

template <typename T>
NodeT<T>* conv2d(TapeT<T>& t, NodeT<T>* x, NodeT<T>* w, NodeT<T>* bias, int stride, int pad) {
  const ConvGeom g = kern::conv_geometry(x->val().shape, w->val().shape, stride, pad);
  if (bias && bias->val().numel() != g.c_out)
    throw ShapeError("conv bias must have one entry per output channel");
  TensorT<T> y({g.n, g.c_out, g.h_out, g.w_out});
  kern::conv2d_forward(x->val().ptr(), w->val().ptr(), bias ? bias->val().ptr() : nullptr,
                       y.data.data(), g);
  std::vector<NodeT<T>*> parents{x, w};
  if (bias) parents.push_back(bias);
  NodeT<T>* n = t.make(std::move(y), std::move(parents), nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, w, bias, g](TapeT<T>&) {
    const T* gy = n->grad.ptr();
    kern::conv2d_backward_data(gy, w->val().ptr(), x->grad_buffer().data.data(), g);
    kern::conv2d_backward_weight(x->val().ptr(), gy, w->grad_buffer().data.data(), g);
    if (bias) kern::conv2d_backward_bias(gy, bias->grad_buffer().data.data(), g);
  };
  return n;
}

template <typename T>
NodeT<T>* conv2d_transpose(TapeT<T>& t, NodeT<T>* x, NodeT<T>* w, NodeT<T>* bias, int stride,
                           int pad) {
  const auto& xs = x->val().shape;
  const auto& ws = w->val().shape;
  if (xs.size() != 4 || ws.size() != 4 || ws[2] != ws[3])
    throw ShapeError("conv_transpose needs 4-d input and square 4-d kernel, got " +
                     x->val().shape_str() + " and " + w->val().shape_str());
  if (xs[1] != ws[0])
    throw ShapeError("conv_transpose channel mismatch: input " + x->val().shape_str() +
                     " vs kernel " + w->val().shape_str());
  ConvGeom g;
  g.n = xs[0];
  g.c_out = ws[0];
  g.c_in = ws[1];
  g.k = ws[2];
  g.stride = stride;
  g.pad = pad;
  g.h_out = xs[2];
  g.w_out = xs[3];
  g.h = (xs[2] - 1) * stride - 2 * pad + g.k;
  g.w = (xs[3] - 1) * stride - 2 * pad + g.k;
  if (g.h < 1 || g.w < 1) throw ShapeError("conv_transpose output would be empty");
  if (bias && bias->val().numel() != g.c_in)
    throw ShapeError("conv_transpose bias must have one entry per output channel");
  TensorT<T> y({g.n, g.c_in, g.h, g.w});
  kern::conv2d_backward_data(x->val().ptr(), w->val().ptr(), y.data.data(), g);
  if (bias) {
    const int64_t plane = int64_t(g.h) * g.w;
    const T* pb = bias->val().ptr();
    T* py = y.data.data();
    const int cb = g.c_in;
    parallel_for(int64_t(g.n) * cb, [=](int64_t lo, int64_t hi) {
      for (int64_t p = lo; p < hi; ++p) {
        const T b = pb[p % cb];
        for (int64_t i = 0; i < plane; ++i) py[p * plane + i] += b;
      }
    });
  }
  std::vector<NodeT<T>*> parents{x, w};
  if (bias) parents.push_back(bias);
  NodeT<T>* n = t.make(std::move(y), std::move(parents), nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, w, bias, g](TapeT<T>&) {
    const T* gy = n->grad.ptr();
    // Adjoint pair: gradient w.r.t. the input is a plain convolution of the
    // output gradient with the same kernel.
    TensorT<T> tmp(x->val().shape);
    kern::conv2d_forward(gy, w->val().ptr(), static_cast<const T*>(nullptr), tmp.data.data(),
                         g);
    T* gx = x->grad_buffer().data.data();
    const T* pt = tmp.ptr();
    parallel_for(tmp.numel(), [=](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) gx[i] += pt[i];
    });
    kern::conv2d_backward_weight(gy, x->val().ptr(), w->grad_buffer().data.data(), g);
    if (bias) {
      T* gb = bias->grad_buffer().data.data();
      const int64_t plane = int64_t(g.h) * g.w;
      const int cb = g.c_in;
      parallel_for(cb, [=, nbatch = g.n](int64_t lo, int64_t hi) {
        for (int64_t ch = lo; ch < hi; ++ch) {
          T acc = T(0);
          for (int b = 0; b < nbatch; ++b) {
            const T* gp = gy + (int64_t(b) * cb + ch) * plane;
            for (int64_t i = 0; i < plane; ++i) acc += gp[i];
          }
          gb[ch] += acc;
        }
      });
    }
  };
  return n;
}

template <typename T>
NodeT<T>* gdn(TapeT<T>& t, NodeT<T>* x, NodeT<T>* beta, NodeT<T>* gamma, bool inverse) {
  const auto& xs = x->val().shape;
  if (xs.size() != 4) throw ShapeError("gdn input must be 4-d, got " + x->val().shape_str());
  const int c = xs[1];
  if (beta->val().numel() != c || gamma->val().numel() != int64_t(c) * c)
    throw ShapeError("gdn beta must be [C] and gamma [C,C] for C=" + std::to_string(c));
  const int n_ = xs[0];
  const int hw = xs[2] * xs[3];
  TensorT<T> y(xs);
  TensorT<T> u(xs);
  kern::gdn_forward(x->val().ptr(), beta->val().ptr(), gamma->val().ptr(), inverse,
                    y.data.data(), u.data.data(), n_, c, hw);
  NodeT<T>* n = t.make(std::move(y), {x, beta, gamma}, nullptr);
  if (t.grad_enabled)
    n->backward_fn = [n, x, beta, gamma, inverse, n_, c, hw, u = std::move(u)](TapeT<T>&) {
      kern::gdn_backward(x->val().ptr(), gamma->val().ptr(), u.ptr(), n->grad.ptr(), inverse,
                         x->grad_buffer().data.data(), beta->grad_buffer().data.data(),
                         gamma->grad_buffer().data.data(), n_, c, hw);
    };
  return n;
}

template <typename T>
NodeT<T>* max_pool_3x3s2(TapeT<T>& t, NodeT<T>* x) {
  const auto& xs = x->val().shape;
  if (xs.size() != 4) throw ShapeError("max_pool input must be 4-d, got " + x->val().shape_str());
  const int n_ = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int h_out = (h + 2 - 3) / 2 + 1;
  const int w_out = (w + 2 - 3) / 2 + 1;
  TensorT<T> y({n_, c, h_out, w_out});
  std::vector<int32_t> argmax(size_t(n_) * c * h_out * w_out);
  kern::maxpool_forward(x->val().ptr(), y.data.data(), argmax.data(), n_, c, h, w, 3, 2, 1,
                        h_out, w_out);
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled)
    n->backward_fn = [n, x, n_, c, h, w, h_out, w_out, argmax = std::move(argmax)](TapeT<T>&) {
      kern::maxpool_backward(n->grad.ptr(), argmax.data(), x->grad_buffer().data.data(), n_, c,
                             h, w, h_out, w_out);
    };
  return n;
}

template <typename T>
NodeT<T>* avg_pool_2x2(TapeT<T>& t, NodeT<T>* x) {
  const auto& xs = x->val().shape;
  if (xs.size() != 4) throw ShapeError("avg_pool input must be 4-d, got " + x->val().shape_str());
  const int n_ = xs[0], c = xs[1], h = xs[2], w = xs[3];
  if (h < 2 || w < 2) throw ShapeError("avg_pool input too small: " + x->val().shape_str());
  TensorT<T> y({n_, c, h / 2, w / 2});
  kern::avgpool2_forward(x->val().ptr(), y.data.data(), n_, c, h, w);
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, n_, c, h, w](TapeT<T>&) {
    kern::avgpool2_backward(n->grad.ptr(), x->grad_buffer().data.data(), n_, c, h, w);
  };
  return n;
}

template <typename T>
NodeT<T>* global_avg_pool(TapeT<T>& t, NodeT<T>* x) {
  const auto& xs = x->val().shape;
  if (xs.size() != 4)
    throw ShapeError("global_avg_pool input must be 4-d, got " + x->val().shape_str());
  const int n_ = xs[0], c = xs[1];
  const int64_t plane = int64_t(xs[2]) * xs[3];
  TensorT<T> y({n_, c});
  const T* px = x->val().ptr();
  T* py = y.data.data();
  parallel_for(int64_t(n_) * c, [=](int64_t lo, int64_t hi) {
    for (int64_t p = lo; p < hi; ++p) {
      T acc = T(0);
      for (int64_t i = 0; i < plane; ++i) acc += px[p * plane + i];
      py[p] = acc / T(plane);
    }
  });
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, n_, c, plane](TapeT<T>&) {
    const T* g = n->grad.ptr();
    T* gx = x->grad_buffer().data.data();
    parallel_for(int64_t(n_) * c, [=](int64_t lo, int64_t hi) {
      for (int64_t p = lo; p < hi; ++p) {
        const T v = g[p] / T(plane);
        for (int64_t i = 0; i < plane; ++i) gx[p * plane + i] += v;
      }
    });
  };
  return n;
}

template <typename T>
NodeT<T>* filter1d(TapeT<T>& t, NodeT<T>* x, const std::vector<double>& taps, bool along_w) {
  const auto& xs = x->val().shape;
  if (xs.size() != 4) throw ShapeError("filter1d input must be 4-d, got " + x->val().shape_str());
  const int n_ = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int ntaps = int(taps.size());
  const int h_out = along_w ? h : h - ntaps + 1;
  const int w_out = along_w ? w - ntaps + 1 : w;
  if (h_out < 1 || w_out < 1)
    throw ShapeError("filter1d input " + x->val().shape_str() + " smaller than filter");
  TensorT<T> y({n_, c, h_out, w_out});
  kern::filter1d_valid_forward(x->val().ptr(), taps.data(), ntaps, along_w, y.data.data(), n_,
                               c, h, w);
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled)
    n->backward_fn = [n, x, taps, along_w, ntaps, n_, c, h, w](TapeT<T>&) {
      kern::filter1d_valid_backward(n->grad.ptr(), taps.data(), ntaps, along_w,
                                    x->grad_buffer().data.data(), n_, c, h, w);
    };
  return n;
}

#define LSC_INSTANTIATE_CONV(T)                                                               \
  template NodeT<T>* conv2d<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*, NodeT<T>*, int, int);         \
  template NodeT<T>* conv2d_transpose<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*, NodeT<T>*, int,     \
                                         int);                                               \
  template NodeT<T>* gdn<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*, NodeT<T>*, bool);               \
  template NodeT<T>* max_pool_3x3s2<T>(TapeT<T>&, NodeT<T>*);                                \
  template NodeT<T>* avg_pool_2x2<T>(TapeT<T>&, NodeT<T>*);                                  \
  template NodeT<T>* global_avg_pool<T>(TapeT<T>&, NodeT<T>*);                               \
  template NodeT<T>* filter1d<T>(TapeT<T>&, NodeT<T>*, const std::vector<double>&, bool);

LSC_INSTANTIATE_CONV(float)
LSC_INSTANTIATE_CONV(double)
#undef LSC_INSTANTIATE_CONV

}  // namespace lsc::ops
