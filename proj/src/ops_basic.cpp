#include <algorithm>
#include <cmath>

#include "lsc/kernels.hpp"
#include "lsc/ops.hpp"

namespace lsc::ops {

using kern::parallel_for;

namespace {
template <typename T, typename F>
void ew(int64_t count, F&& body) {
  parallel_for(count, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) body(i);
  });
}
}  // namespace

template <typename T>
NodeT<T>* add(TapeT<T>& t, NodeT<T>* a, NodeT<T>* b) {
  require_same_shape(a->val(), b->val(), "add");
  TensorT<T> y(a->val().shape);
  const T* pa = a->val().ptr();
  const T* pb = b->val().ptr();
  T* py = y.data.data();
  ew<T>(y.numel(), [=](int64_t i) { py[i] = pa[i] + pb[i]; });
  NodeT<T>* n = t.make(std::move(y), {a, b}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, a, b](TapeT<T>&) {
    const T* g = n->grad.ptr();
    T* ga = a->grad_buffer().data.data();
    T* gb = b->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) {
      ga[i] += g[i];
      gb[i] += g[i];
    });
  };
  return n;
}

template <typename T>
NodeT<T>* sub(TapeT<T>& t, NodeT<T>* a, NodeT<T>* b) {
  require_same_shape(a->val(), b->val(), "sub");
  TensorT<T> y(a->val().shape);
  const T* pa = a->val().ptr();
  const T* pb = b->val().ptr();
  T* py = y.data.data();
  ew<T>(y.numel(), [=](int64_t i) { py[i] = pa[i] - pb[i]; });
  NodeT<T>* n = t.make(std::move(y), {a, b}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, a, b](TapeT<T>&) {
    const T* g = n->grad.ptr();
    T* ga = a->grad_buffer().data.data();
    T* gb = b->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    });
  };
  return n;
}

template <typename T>
NodeT<T>* mul(TapeT<T>& t, NodeT<T>* a, NodeT<T>* b) {
  require_same_shape(a->val(), b->val(), "mul");
  TensorT<T> y(a->val().shape);
  const T* pa = a->val().ptr();
  const T* pb = b->val().ptr();
  T* py = y.data.data();
  ew<T>(y.numel(), [=](int64_t i) { py[i] = pa[i] * pb[i]; });
  NodeT<T>* n = t.make(std::move(y), {a, b}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, a, b](TapeT<T>&) {
    const T* g = n->grad.ptr();
    const T* pa = a->val().ptr();
    const T* pb = b->val().ptr();
    T* ga = a->grad_buffer().data.data();
    T* gb = b->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) {
      ga[i] += g[i] * pb[i];
      gb[i] += g[i] * pa[i];
    });
  };
  return n;
}

template <typename T>
NodeT<T>* div(TapeT<T>& t, NodeT<T>* a, NodeT<T>* b) {
  require_same_shape(a->val(), b->val(), "div");
  TensorT<T> y(a->val().shape);
  const T* pa = a->val().ptr();
  const T* pb = b->val().ptr();
  T* py = y.data.data();
  ew<T>(y.numel(), [=](int64_t i) { py[i] = pa[i] / pb[i]; });
  NodeT<T>* n = t.make(std::move(y), {a, b}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, a, b](TapeT<T>&) {
    const T* g = n->grad.ptr();
    const T* pa = a->val().ptr();
    const T* pb = b->val().ptr();
    T* ga = a->grad_buffer().data.data();
    T* gb = b->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) {
      ga[i] += g[i] / pb[i];
      gb[i] -= g[i] * pa[i] / (pb[i] * pb[i]);
    });
  };
  return n;
}

template <typename T>
NodeT<T>* add_scalar(TapeT<T>& t, NodeT<T>* x, double c) {
  TensorT<T> y(x->val().shape);
  const T* px = x->val().ptr();
  T* py = y.data.data();
  const T tc = T(c);
  ew<T>(y.numel(), [=](int64_t i) { py[i] = px[i] + tc; });
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x](TapeT<T>&) {
    const T* g = n->grad.ptr();
    T* gx = x->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) { gx[i] += g[i]; });
  };
  return n;
}

template <typename T>
NodeT<T>* mul_scalar(TapeT<T>& t, NodeT<T>* x, double c) {
  TensorT<T> y(x->val().shape);
  const T* px = x->val().ptr();
  T* py = y.data.data();
  const T tc = T(c);
  ew<T>(y.numel(), [=](int64_t i) { py[i] = px[i] * tc; });
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, tc](TapeT<T>&) {
    const T* g = n->grad.ptr();
    T* gx = x->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) { gx[i] += tc * g[i]; });
  };
  return n;
}

template <typename T>
NodeT<T>* square(TapeT<T>& t, NodeT<T>* x) {
  TensorT<T> y(x->val().shape);
  const T* px = x->val().ptr();
  T* py = y.data.data();
  ew<T>(y.numel(), [=](int64_t i) { py[i] = px[i] * px[i]; });
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x](TapeT<T>&) {
    const T* g = n->grad.ptr();
    const T* px = x->val().ptr();
    T* gx = x->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) { gx[i] += T(2) * px[i] * g[i]; });
  };
  return n;
}

template <typename T>
NodeT<T>* abs_val(TapeT<T>& t, NodeT<T>* x) {
  TensorT<T> y(x->val().shape);
  const T* px = x->val().ptr();
  T* py = y.data.data();
  ew<T>(y.numel(), [=](int64_t i) { py[i] = px[i] < T(0) ? -px[i] : px[i]; });
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x](TapeT<T>&) {
    const T* g = n->grad.ptr();
    const T* px = x->val().ptr();
    T* gx = x->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) {
      if (px[i] > T(0))
        gx[i] += g[i];
      else if (px[i] < T(0))
        gx[i] -= g[i];
    });
  };
  return n;
}

template <typename T>
NodeT<T>* exp_op(TapeT<T>& t, NodeT<T>* x) {
  TensorT<T> y(x->val().shape);
  const T* px = x->val().ptr();
  T* py = y.data.data();
  ew<T>(y.numel(), [=](int64_t i) { py[i] = std::exp(px[i]); });
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x](TapeT<T>&) {
    const T* g = n->grad.ptr();
    const T* py = n->value.ptr();
    T* gx = x->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) { gx[i] += g[i] * py[i]; });
  };
  return n;
}

template <typename T>
NodeT<T>* log_op(TapeT<T>& t, NodeT<T>* x) {
  TensorT<T> y(x->val().shape);
  const T* px = x->val().ptr();
  T* py = y.data.data();
  ew<T>(y.numel(), [=](int64_t i) { py[i] = std::log(px[i]); });
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x](TapeT<T>&) {
    const T* g = n->grad.ptr();
    const T* px = x->val().ptr();
    T* gx = x->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) { gx[i] += g[i] / px[i]; });
  };
  return n;
}

template <typename T>
NodeT<T>* pow_scalar(TapeT<T>& t, NodeT<T>* x, double p) {
  TensorT<T> y(x->val().shape);
  const T* px = x->val().ptr();
  T* py = y.data.data();
  ew<T>(y.numel(), [=](int64_t i) { py[i] = T(std::pow(double(px[i]), p)); });
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, p](TapeT<T>&) {
    const T* g = n->grad.ptr();
    const T* px = x->val().ptr();
    T* gx = x->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) {
      gx[i] += g[i] * T(p * std::pow(double(px[i]), p - 1.0));
    });
  };
  return n;
}

template <typename T>
NodeT<T>* max_with(TapeT<T>& t, NodeT<T>* x, double c) {
  TensorT<T> y(x->val().shape);
  const T* px = x->val().ptr();
  T* py = y.data.data();
  const T tc = T(c);
  ew<T>(y.numel(), [=](int64_t i) { py[i] = px[i] < tc ? tc : px[i]; });
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, tc](TapeT<T>&) {
    const T* g = n->grad.ptr();
    const T* px = x->val().ptr();
    T* gx = x->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) {
      if (px[i] >= tc) gx[i] += g[i];
    });
  };
  return n;
}

template <typename T>
NodeT<T>* min_with(TapeT<T>& t, NodeT<T>* x, double c) {
  TensorT<T> y(x->val().shape);
  const T* px = x->val().ptr();
  T* py = y.data.data();
  const T tc = T(c);
  ew<T>(y.numel(), [=](int64_t i) { py[i] = px[i] > tc ? tc : px[i]; });
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, tc](TapeT<T>&) {
    const T* g = n->grad.ptr();
    const T* px = x->val().ptr();
    T* gx = x->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) {
      if (px[i] <= tc) gx[i] += g[i];
    });
  };
  return n;
}

template <typename T>
NodeT<T>* relu(TapeT<T>& t, NodeT<T>* x) {
  TensorT<T> y(x->val().shape);
  const T* px = x->val().ptr();
  T* py = y.data.data();
  ew<T>(y.numel(), [=](int64_t i) { py[i] = px[i] > T(0) ? px[i] : T(0); });
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x](TapeT<T>&) {
    const T* g = n->grad.ptr();
    const T* px = x->val().ptr();
    T* gx = x->grad_buffer().data.data();
    ew<T>(n->grad.numel(), [=](int64_t i) {
      if (px[i] > T(0)) gx[i] += g[i];
    });
  };
  return n;
}

template <typename T>
NodeT<T>* sum_all(TapeT<T>& t, NodeT<T>* x) {
  T acc = T(0);
  const T* px = x->val().ptr();
  const int64_t m = x->val().numel();
  for (int64_t i = 0; i < m; ++i) acc += px[i];  // serial: order-stable reduction
  TensorT<T> y({1});
  y.data[0] = acc;
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, m](TapeT<T>&) {
    const T g = n->grad.data[0];
    T* gx = x->grad_buffer().data.data();
    ew<T>(m, [=](int64_t i) { gx[i] += g; });
  };
  return n;
}

template <typename T>
NodeT<T>* mean_all(TapeT<T>& t, NodeT<T>* x) {
  T acc = T(0);
  const T* px = x->val().ptr();
  const int64_t m = x->val().numel();
  for (int64_t i = 0; i < m; ++i) acc += px[i];
  TensorT<T> y({1});
  y.data[0] = acc / T(m);
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, m](TapeT<T>&) {
    const T g = n->grad.data[0] / T(m);
    T* gx = x->grad_buffer().data.data();
    ew<T>(m, [=](int64_t i) { gx[i] += g; });
  };
  return n;
}

template <typename T>
NodeT<T>* mean_per_channel(TapeT<T>& t, NodeT<T>* x) {
  const auto& xs = x->val().shape;
  if (xs.size() != 4)
    throw ShapeError("mean_per_channel input must be 4-d, got " + x->val().shape_str());
  const int64_t n_img = xs[0], c = xs[1], hw = int64_t(xs[2]) * xs[3];
  const int64_t per = n_img * hw;
  const T* px = x->val().ptr();
  TensorT<T> y({int(c)});
  for (int64_t ch = 0; ch < c; ++ch) {
    T acc = T(0);
    for (int64_t img = 0; img < n_img; ++img) {
      const T* p = px + (img * c + ch) * hw;
      for (int64_t i = 0; i < hw; ++i) acc += p[i];
    }
    y.data[size_t(ch)] = acc / T(per);
  }
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, n_img, c, hw, per](TapeT<T>&) {
    const T* g = n->grad.ptr();
    T* gx = x->grad_buffer().data.data();
    ew<T>(n_img * c, [=](int64_t plane) {
      const T gc = g[plane % c] / T(per);
      T* p = gx + plane * hw;
      for (int64_t i = 0; i < hw; ++i) p[i] += gc;
    });
  };
  return n;
}

template <typename T>
NodeT<T>* channel_broadcast(TapeT<T>& t, NodeT<T>* s, int n, int h, int w) {
  if (s->val().ndim() != 1)
    throw ShapeError("channel_broadcast expects a [C] vector, got " + s->val().shape_str());
  const int c = s->val().dim(0);
  const int64_t hw = int64_t(h) * w;
  const T* ps = s->val().ptr();
  TensorT<T> y({n, c, h, w});
  T* py = y.data.data();
  ew<T>(int64_t(n) * c, [=](int64_t plane) {
    const T v = ps[plane % c];
    T* p = py + plane * hw;
    for (int64_t i = 0; i < hw; ++i) p[i] = v;
  });
  NodeT<T>* node = t.make(std::move(y), {s}, nullptr);
  if (t.grad_enabled) node->backward_fn = [node, s, n, c, hw](TapeT<T>&) {
    const T* g = node->grad.ptr();
    T* gs = s->grad_buffer().data.data();
    for (int64_t ch = 0; ch < c; ++ch) {
      T acc = T(0);
      for (int64_t img = 0; img < n; ++img) {
        const T* p = g + (img * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i) acc += p[i];
      }
      gs[ch] += acc;
    }
  };
  return node;
}

template <typename T>
NodeT<T>* crop_spatial(TapeT<T>& t, NodeT<T>* x, int h, int w) {
  const auto& xs = x->val().shape;
  if (xs.size() != 4)
    throw ShapeError("crop_spatial input must be 4-d, got " + x->val().shape_str());
  if (h < 1 || w < 1 || h > xs[2] || w > xs[3])
    throw ShapeError("crop_spatial to " + std::to_string(h) + "x" + std::to_string(w) +
                     " does not fit in " + x->val().shape_str());
  const int64_t planes = int64_t(xs[0]) * xs[1];
  const int64_t xh = xs[2], xw = xs[3];
  const T* px = x->val().ptr();
  TensorT<T> y({xs[0], xs[1], h, w});
  T* py = y.data.data();
  ew<T>(planes, [=](int64_t plane) {
    const T* src = px + plane * xh * xw;
    T* dst = py + plane * int64_t(h) * w;
    for (int64_t i = 0; i < h; ++i)
      std::copy(src + i * xw, src + i * xw + w, dst + i * w);
  });
  NodeT<T>* n = t.make(std::move(y), {x}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, planes, xh, xw, h, w](TapeT<T>&) {
    const T* g = n->grad.ptr();
    T* gx = x->grad_buffer().data.data();
    ew<T>(planes, [=](int64_t plane) {
      const T* src = g + plane * int64_t(h) * w;
      T* dst = gx + plane * xh * xw;
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) dst[i * xw + j] += src[i * w + j];
    });
  };
  return n;
}

template <typename T>
NodeT<T>* channel_affine(TapeT<T>& t, NodeT<T>* x, NodeT<T>* scale, NodeT<T>* shift) {
  const auto& xs = x->val().shape;
  if (xs.size() != 4) throw ShapeError("channel_affine input must be 4-d, got " + x->val().shape_str());
  const int c = xs[1];
  if (scale->val().numel() != c || shift->val().numel() != c)
    throw ShapeError("channel_affine scale/shift must have one entry per channel");
  const int n_ = xs[0];
  const int64_t plane = int64_t(xs[2]) * xs[3];
  TensorT<T> y(xs);
  const T* px = x->val().ptr();
  const T* ps = scale->val().ptr();
  const T* pb = shift->val().ptr();
  T* py = y.data.data();
  parallel_for(int64_t(n_) * c, [=](int64_t lo, int64_t hi) {
    for (int64_t p = lo; p < hi; ++p) {
      const int ch = int(p % c);
      for (int64_t i = 0; i < plane; ++i)
        py[p * plane + i] = px[p * plane + i] * ps[ch] + pb[ch];
    }
  });
  NodeT<T>* n = t.make(std::move(y), {x, scale, shift}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, scale, shift, n_, c, plane](TapeT<T>&) {
    const T* g = n->grad.ptr();
    const T* px = x->val().ptr();
    const T* ps = scale->val().ptr();
    T* gx = x->grad_buffer().data.data();
    parallel_for(int64_t(n_) * c, [=](int64_t lo, int64_t hi) {
      for (int64_t p = lo; p < hi; ++p) {
        const int ch = int(p % c);
        for (int64_t i = 0; i < plane; ++i) gx[p * plane + i] += g[p * plane + i] * ps[ch];
      }
    });
    T* gs = scale->grad_buffer().data.data();
    T* gb = shift->grad_buffer().data.data();
    parallel_for(c, [=](int64_t lo, int64_t hi) {
      for (int64_t ch = lo; ch < hi; ++ch) {
        T as = T(0), ab = T(0);
        for (int b = 0; b < n_; ++b) {
          const int64_t base = (int64_t(b) * c + ch) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            as += g[base + i] * px[base + i];
            ab += g[base + i];
          }
        }
        gs[ch] += as;
        gb[ch] += ab;
      }
    });
  };
  return n;
}

template <typename T>
NodeT<T>* concat_channels(TapeT<T>& t, NodeT<T>* a, NodeT<T>* b) {
  const auto& as = a->val().shape;
  const auto& bs = b->val().shape;
  if (as.size() != 4 || bs.size() != 4 || as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    throw ShapeError("concat_channels needs matching batch and spatial extents, got " +
                     a->val().shape_str() + " and " + b->val().shape_str());
  const int n_ = as[0], ca = as[1], cb = bs[1];
  const int64_t plane = int64_t(as[2]) * as[3];
  TensorT<T> y({n_, ca + cb, as[2], as[3]});
  const T* pa = a->val().ptr();
  const T* pb = b->val().ptr();
  T* py = y.data.data();
  parallel_for(n_, [=](int64_t lo, int64_t hi) {
    for (int64_t bi = lo; bi < hi; ++bi) {
      std::copy(pa + bi * ca * plane, pa + (bi + 1) * ca * plane,
                py + bi * (ca + cb) * plane);
      std::copy(pb + bi * cb * plane, pb + (bi + 1) * cb * plane,
                py + bi * (ca + cb) * plane + ca * plane);
    }
  });
  NodeT<T>* n = t.make(std::move(y), {a, b}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, a, b, n_, ca, cb, plane](TapeT<T>&) {
    const T* g = n->grad.ptr();
    T* ga = a->grad_buffer().data.data();
    T* gb = b->grad_buffer().data.data();
    parallel_for(n_, [=](int64_t lo, int64_t hi) {
      for (int64_t bi = lo; bi < hi; ++bi) {
        const T* gsrc = g + bi * (ca + cb) * plane;
        for (int64_t i = 0; i < ca * plane; ++i) ga[bi * ca * plane + i] += gsrc[i];
        for (int64_t i = 0; i < cb * plane; ++i) gb[bi * cb * plane + i] += gsrc[ca * plane + i];
      }
    });
  };
  return n;
}

#define LSC_INSTANTIATE_BASIC(T)                                                     \
  template NodeT<T>* add<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*);                        \
  template NodeT<T>* sub<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*);                        \
  template NodeT<T>* mul<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*);                        \
  template NodeT<T>* div<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*);                        \
  template NodeT<T>* add_scalar<T>(TapeT<T>&, NodeT<T>*, double);                    \
  template NodeT<T>* mul_scalar<T>(TapeT<T>&, NodeT<T>*, double);                    \
  template NodeT<T>* square<T>(TapeT<T>&, NodeT<T>*);                                \
  template NodeT<T>* abs_val<T>(TapeT<T>&, NodeT<T>*);                               \
  template NodeT<T>* exp_op<T>(TapeT<T>&, NodeT<T>*);                                \
  template NodeT<T>* log_op<T>(TapeT<T>&, NodeT<T>*);                                \
  template NodeT<T>* pow_scalar<T>(TapeT<T>&, NodeT<T>*, double);                    \
  template NodeT<T>* max_with<T>(TapeT<T>&, NodeT<T>*, double);                      \
  template NodeT<T>* min_with<T>(TapeT<T>&, NodeT<T>*, double);                      \
  template NodeT<T>* relu<T>(TapeT<T>&, NodeT<T>*);                                  \
  template NodeT<T>* sum_all<T>(TapeT<T>&, NodeT<T>*);                               \
  template NodeT<T>* mean_all<T>(TapeT<T>&, NodeT<T>*);                              \
  template NodeT<T>* mean_per_channel<T>(TapeT<T>&, NodeT<T>*);                      \
  template NodeT<T>* channel_affine<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*, NodeT<T>*);  \
  template NodeT<T>* concat_channels<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*);            \
  template NodeT<T>* channel_broadcast<T>(TapeT<T>&, NodeT<T>*, int, int, int);      \
  template NodeT<T>* crop_spatial<T>(TapeT<T>&, NodeT<T>*, int, int);

LSC_INSTANTIATE_BASIC(float)
LSC_INSTANTIATE_BASIC(double)
#undef LSC_INSTANTIATE_BASIC

}  // namespace lsc::ops
