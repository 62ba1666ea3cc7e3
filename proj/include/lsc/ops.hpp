#pragma once

#include <vector>

#include "lsc/autodiff.hpp"

// Differentiable graph ops. Each op appends one node to the tape; backward
// closures accumulate (+=) into parent gradient buffers. Binary elementwise
// ops require identical shapes; broadcasting is limited to the explicit
// per-channel and scalar variants.
namespace lsc::ops {

using ad::NodeT;
using ad::ParamT;
using ad::TapeT;

template <typename T>
NodeT<T>* add(TapeT<T>& t, NodeT<T>* a, NodeT<T>* b);
template <typename T>
NodeT<T>* sub(TapeT<T>& t, NodeT<T>* a, NodeT<T>* b);
template <typename T>
NodeT<T>* mul(TapeT<T>& t, NodeT<T>* a, NodeT<T>* b);
template <typename T>
NodeT<T>* div(TapeT<T>& t, NodeT<T>* a, NodeT<T>* b);

template <typename T>
NodeT<T>* add_scalar(TapeT<T>& t, NodeT<T>* x, double c);
template <typename T>
NodeT<T>* mul_scalar(TapeT<T>& t, NodeT<T>* x, double c);
template <typename T>
NodeT<T>* square(TapeT<T>& t, NodeT<T>* x);
template <typename T>
NodeT<T>* abs_val(TapeT<T>& t, NodeT<T>* x);
template <typename T>
NodeT<T>* exp_op(TapeT<T>& t, NodeT<T>* x);
template <typename T>
NodeT<T>* log_op(TapeT<T>& t, NodeT<T>* x);
// y = x^p; requires x > 0.
template <typename T>
NodeT<T>* pow_scalar(TapeT<T>& t, NodeT<T>* x, double p);
// y = max(x, c); gradient passes where x >= c.
template <typename T>
NodeT<T>* max_with(TapeT<T>& t, NodeT<T>* x, double c);
// y = min(x, c); gradient passes where x <= c.
template <typename T>
NodeT<T>* min_with(TapeT<T>& t, NodeT<T>* x, double c);
template <typename T>
NodeT<T>* relu(TapeT<T>& t, NodeT<T>* x);

template <typename T>
NodeT<T>* sum_all(TapeT<T>& t, NodeT<T>* x);  // -> [1]
template <typename T>
NodeT<T>* mean_all(TapeT<T>& t, NodeT<T>* x);  // -> [1]
template <typename T>
NodeT<T>* mean_per_channel(TapeT<T>& t, NodeT<T>* x);  // [N,C,H,W] -> [C]

// y[n,c,h,w] = x[n,c,h,w] * scale[c] + shift[c]
template <typename T>
NodeT<T>* channel_affine(TapeT<T>& t, NodeT<T>* x, NodeT<T>* scale, NodeT<T>* shift);
template <typename T>
NodeT<T>* concat_channels(TapeT<T>& t, NodeT<T>* a, NodeT<T>* b);
// s [C] -> [n,C,h,w] with y[i,c,:,:] = s[c]
template <typename T>
NodeT<T>* channel_broadcast(TapeT<T>& t, NodeT<T>* s, int n, int h, int w);
// Top-left spatial crop of a [N,C,H,W] tensor to [N,C,h,w].
template <typename T>
NodeT<T>* crop_spatial(TapeT<T>& t, NodeT<T>* x, int h, int w);

// x [N,Ci,H,W], w [Co,Ci,k,k], optional bias [Co].
template <typename T>
NodeT<T>* conv2d(TapeT<T>& t, NodeT<T>* x, NodeT<T>* w, NodeT<T>* bias, int stride, int pad);
// Adjoint convolution. x [N,A,h,w], w [A,B,k,k], optional bias [B];
// output [N,B,(h-1)s-2p+k,(w-1)s-2p+k].
template <typename T>
NodeT<T>* conv2d_transpose(TapeT<T>& t, NodeT<T>* x, NodeT<T>* w, NodeT<T>* bias, int stride,
                           int pad);

// y_i = x_i * (beta_i + sum_j gamma_ij x_j^2)^(-1/2), or ^(+1/2) when inverse.
// beta [C] and gamma [C,C] are the effective coefficients; callers compose any
// reparameterization (floors, squares) in-graph before this op.
template <typename T>
NodeT<T>* gdn(TapeT<T>& t, NodeT<T>* x, NodeT<T>* beta, NodeT<T>* gamma, bool inverse);

template <typename T>
NodeT<T>* max_pool_3x3s2(TapeT<T>& t, NodeT<T>* x);  // pad 1, ties to first scan hit
template <typename T>
NodeT<T>* avg_pool_2x2(TapeT<T>& t, NodeT<T>* x);  // stride 2, floor extents
template <typename T>
NodeT<T>* global_avg_pool(TapeT<T>& t, NodeT<T>* x);  // [N,C,H,W] -> [N,C]

// Valid 1-d filter along W (along_w) or H; taps are fixed coefficients.
template <typename T>
NodeT<T>* filter1d(TapeT<T>& t, NodeT<T>* x, const std::vector<double>& taps, bool along_w);

// x [N,D], w [K,D], bias [K] -> [N,K]
template <typename T>
NodeT<T>* linear(TapeT<T>& t, NodeT<T>* x, NodeT<T>* w, NodeT<T>* bias);

// Per-channel batch norm. Training mode normalizes with biased batch moments
// and folds them into the running stats (new = momentum*old + (1-momentum)*batch);
// eval mode uses the running stats.
template <typename T>
NodeT<T>* batch_norm(TapeT<T>& t, NodeT<T>* x, NodeT<T>* gamma, NodeT<T>* beta,
                     ParamT<T>& running_mean, ParamT<T>& running_var, bool training,
                     double eps = 1e-5, double momentum = 0.9);

// Mean negative log softmax over the batch -> [1].
template <typename T>
NodeT<T>* softmax_cross_entropy(TapeT<T>& t, NodeT<T>* logits, std::vector<int> labels);

// Plain softmax over the last axis of a [N,K] tensor; not a graph op.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& logits);

// Total code length in bits of values under zero-mean Gaussians: sum over
// elements of -log2(max(Phi((v+1/2)/sigma) - Phi((v-1/2)/sigma), p_floor)),
// differentiable in both v and sigma. -> [1]
template <typename T>
NodeT<T>* gaussian_bits(TapeT<T>& t, NodeT<T>* v, NodeT<T>* sigma, double p_floor);

}  // namespace lsc::ops
