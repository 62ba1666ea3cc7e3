#include <cmath>
#include <utility>
#include <vector>

#include "lsc/entropy.hpp"
#include "lsc/kernels.hpp"
#include "lsc/ops.hpp"

namespace lsc::ops {

using kern::parallel_for;

template <typename T>
NodeT<T>* linear(TapeT<T>& t, NodeT<T>* x, NodeT<T>* w, NodeT<T>* bias) {
  const auto& xs = x->val().shape;
  const auto& ws = w->val().shape;
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    throw ShapeError("linear needs x [N,D] and w [K,D] with matching D, got " +
                     x->val().shape_str() + " and " + w->val().shape_str());
  const int n_ = xs[0], d = xs[1], k = ws[0];
  if (bias && bias->val().numel() != k)
    throw ShapeError("linear bias must have one entry per output feature");
  TensorT<T> y({n_, k});
  kern::gemm(false, true, n_, k, d, T(1), x->val().ptr(), d, w->val().ptr(), d, T(0),
             y.data.data(), k);
  if (bias) {
    const T* pb = bias->val().ptr();
    T* py = y.data.data();
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < k; ++j) py[int64_t(i) * k + j] += pb[j];
  }
  std::vector<NodeT<T>*> parents{x, w};
  if (bias) parents.push_back(bias);
  NodeT<T>* n = t.make(std::move(y), std::move(parents), nullptr);
  if (t.grad_enabled) n->backward_fn = [n, x, w, bias, n_, d, k](TapeT<T>&) {
    const T* g = n->grad.ptr();
    kern::gemm(false, false, n_, d, k, T(1), g, k, w->val().ptr(), d, T(1),
               x->grad_buffer().data.data(), d);
    kern::gemm(true, false, k, d, n_, T(1), g, k, x->val().ptr(), d, T(1),
               w->grad_buffer().data.data(), d);
    if (bias) {
      T* gb = bias->grad_buffer().data.data();
      for (int j = 0; j < k; ++j) {
        T acc = T(0);
        for (int i = 0; i < n_; ++i) acc += g[int64_t(i) * k + j];
        gb[j] += acc;
      }
    }
  };
  return n;
}

template <typename T>
NodeT<T>* batch_norm(TapeT<T>& t, NodeT<T>* x, NodeT<T>* gamma, NodeT<T>* beta,
                     ParamT<T>& running_mean, ParamT<T>& running_var, bool training,
                     double eps, double momentum) {
  const auto& xs = x->val().shape;
  if (xs.size() != 4) throw ShapeError("batch_norm input must be 4-d, got " + x->val().shape_str());
  const int nb = xs[0], c = xs[1];
  const int64_t plane = int64_t(xs[2]) * xs[3];
  const int64_t m = int64_t(nb) * plane;  // samples per channel
  if (gamma->val().numel() != c || beta->val().numel() != c ||
      running_mean.value.numel() != c || running_var.value.numel() != c)
    throw ShapeError("batch_norm per-channel tensors must have " + std::to_string(c) +
                     " entries");

  std::vector<T> mean(c), invstd(c);
  if (training) {
    const T* px = x->val().ptr();
    parallel_for(c, [&](int64_t lo, int64_t hi) {
      for (int64_t ch = lo; ch < hi; ++ch) {
        double s = 0.0, s2 = 0.0;
        for (int b = 0; b < nb; ++b) {
          const T* p = px + (int64_t(b) * c + ch) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            s += p[i];
            s2 += double(p[i]) * p[i];
          }
        }
        const double mu = s / double(m);
        const double var = s2 / double(m) - mu * mu;  // biased
        mean[ch] = T(mu);
        invstd[ch] = T(1.0 / std::sqrt(var + eps));
        running_mean.value.data[ch] =
            T(momentum * running_mean.value.data[ch] + (1.0 - momentum) * mu);
        running_var.value.data[ch] =
            T(momentum * running_var.value.data[ch] + (1.0 - momentum) * var);
      }
    });
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean.value.data[ch];
      invstd[ch] = T(1.0 / std::sqrt(double(running_var.value.data[ch]) + eps));
    }
  }

  TensorT<T> y(xs);
  {
    const T* px = x->val().ptr();
    const T* pg = gamma->val().ptr();
    const T* pb = beta->val().ptr();
    T* py = y.data.data();
    parallel_for(int64_t(nb) * c, [&](int64_t lo, int64_t hi) {
      for (int64_t p = lo; p < hi; ++p) {
        const int ch = int(p % c);
        const T mu = mean[ch], is = invstd[ch], ga = pg[ch], be = pb[ch];
        for (int64_t i = 0; i < plane; ++i)
          py[p * plane + i] = (px[p * plane + i] - mu) * is * ga + be;
      }
    });
  }
  NodeT<T>* n = t.make(std::move(y), {x, gamma, beta}, nullptr);
  if (t.grad_enabled)
    n->backward_fn = [n, x, gamma, beta, nb, c, plane, m, training, mean = std::move(mean),
                      invstd = std::move(invstd)](TapeT<T>&) {
      const T* g = n->grad.ptr();
      const T* px = x->val().ptr();
      const T* pg = gamma->val().ptr();
      T* gx = x->grad_buffer().data.data();
      T* gga = gamma->grad_buffer().data.data();
      T* gbe = beta->grad_buffer().data.data();
      parallel_for(c, [&](int64_t lo, int64_t hi) {
        for (int64_t ch = lo; ch < hi; ++ch) {
          const T mu = mean[ch], is = invstd[ch];
          double sg = 0.0, sgx = 0.0;
          for (int b = 0; b < nb; ++b) {
            const int64_t base = (int64_t(b) * c + ch) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              const T xh = (px[base + i] - mu) * is;
              sg += g[base + i];
              sgx += double(g[base + i]) * xh;
            }
          }
          gga[ch] += T(sgx);
          gbe[ch] += T(sg);
          const T k1 = pg[ch] * is;
          if (training) {
            const T mg = T(sg / double(m));
            const T mgx = T(sgx / double(m));
            for (int b = 0; b < nb; ++b) {
              const int64_t base = (int64_t(b) * c + ch) * plane;
              for (int64_t i = 0; i < plane; ++i) {
                const T xh = (px[base + i] - mu) * is;
                gx[base + i] += k1 * (g[base + i] - mg - xh * mgx);
              }
            }
          } else {
            for (int b = 0; b < nb; ++b) {
              const int64_t base = (int64_t(b) * c + ch) * plane;
              for (int64_t i = 0; i < plane; ++i) gx[base + i] += k1 * g[base + i];
            }
          }
        }
      });
    };
  return n;
}

template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& logits) {
  if (logits.shape.size() != 2)
    throw ShapeError("softmax needs a 2-d [N,K] tensor, got " + logits.shape_str());
  const int n = logits.shape[0], k = logits.shape[1];
  if (k < 1) throw ShapeError("softmax over an empty axis");
  TensorT<T> p(logits.shape);
  for (int i = 0; i < n; ++i) {
    const T* row = logits.ptr() + int64_t(i) * k;
    T* prow = p.data.data() + int64_t(i) * k;
    T mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      prow[j] = std::exp(row[j] - mx);
      sum += prow[j];
    }
    for (int j = 0; j < k; ++j) prow[j] = T(prow[j] / sum);
  }
  return p;
}

template <typename T>
NodeT<T>* softmax_cross_entropy(TapeT<T>& t, NodeT<T>* logits, std::vector<int> labels) {
  const auto& ls = logits->val().shape;
  if (ls.size() != 2 || size_t(ls[0]) != labels.size())
    throw ShapeError("softmax_cross_entropy needs [N,K] logits and N labels");
  const int n = ls[0], k = ls[1];
  for (int lb : labels)
    if (lb < 0 || lb >= k)
      throw DataError("label " + std::to_string(lb) + " outside [0, " + std::to_string(k) + ")");
  TensorT<T> probs = softmax_rows(logits->val());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const T p = probs.data[size_t(i) * k + labels[i]];
    loss -= std::log(std::max(double(p), 1e-30));
  }
  TensorT<T> y({1});
  y.data[0] = T(loss / n);
  NodeT<T>* node = t.make(std::move(y), {logits}, nullptr);
  if (t.grad_enabled)
    node->backward_fn = [node, logits, labels = std::move(labels), n, k,
                         probs = std::move(probs)](TapeT<T>&) {
      const T g = node->grad.data[0] / T(n);
      T* gl = logits->grad_buffer().data.data();
      for (int i = 0; i < n; ++i) {
        const T* prow = probs.ptr() + int64_t(i) * k;
        T* grow = gl + int64_t(i) * k;
        for (int j = 0; j < k; ++j) grow[j] += g * prow[j];
        grow[labels[i]] -= g;
      }
    };
  return node;
}

namespace {
inline double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) * 0.39894228040143267794;  // 1/sqrt(2*pi)
}
constexpr double kLn2 = 0.69314718055994530942;
}  // namespace

template <typename T>
NodeT<T>* gaussian_bits(TapeT<T>& t, NodeT<T>* v, NodeT<T>* sigma, double p_floor) {
  require_same_shape(v->val(), sigma->val(), "gaussian_bits");
  const int64_t m = v->val().numel();
  const T* pv = v->val().ptr();
  const T* ps = sigma->val().ptr();
  double bits = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    const double s = ps[i];
    const double p = ent::norm_cdf((double(pv[i]) + 0.5) / s) -
                     ent::norm_cdf((double(pv[i]) - 0.5) / s);
    bits -= std::log2(std::max(p, p_floor));
  }
  TensorT<T> y({1});
  y.data[0] = T(bits);
  NodeT<T>* n = t.make(std::move(y), {v, sigma}, nullptr);
  if (t.grad_enabled) n->backward_fn = [n, v, sigma, p_floor, m](TapeT<T>&) {
    const T g = n->grad.data[0];
    const T* pv = v->val().ptr();
    const T* ps = sigma->val().ptr();
    T* gv = v->grad_buffer().data.data();
    T* gs = sigma->grad_buffer().data.data();
    parallel_for(m, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        const double s = ps[i];
        const double au = (double(pv[i]) + 0.5) / s;
        const double al = (double(pv[i]) - 0.5) / s;
        const double p = ent::norm_cdf(au) - ent::norm_cdf(al);
        if (p <= p_floor) continue;  // clamped region is flat
        const double du = norm_pdf(au), dl = norm_pdf(al);
        const double scale = 1.0 / (p * kLn2 * s);
        gv[i] += g * T(-(du - dl) * scale);
        gs[i] += g * T((au * du - al * dl) * scale);
      }
    });
  };
  return n;
}

#define LSC_INSTANTIATE_DENSE(T)                                                            \
  template NodeT<T>* linear<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*, NodeT<T>*);                 \
  template NodeT<T>* batch_norm<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*, NodeT<T>*, ParamT<T>&, \
                                   ParamT<T>&, bool, double, double);                       \
  template TensorT<T> softmax_rows<T>(const TensorT<T>&);                                   \
  template NodeT<T>* softmax_cross_entropy<T>(TapeT<T>&, NodeT<T>*, std::vector<int>);      \
  template NodeT<T>* gaussian_bits<T>(TapeT<T>&, NodeT<T>*, NodeT<T>*, double);

LSC_INSTANTIATE_DENSE(float)
LSC_INSTANTIATE_DENSE(double)
#undef LSC_INSTANTIATE_DENSE

}  // namespace lsc::ops
