#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lsc/ops.hpp"
#include "lsc/rng.hpp"

// Parameter-owning layer blocks shared by the codec and classifier networks.
// Construction draws every weight from the caller's RNG in a fixed order, so
// a fixed seed rebuilds bit-identical models. collect() appends the layer's
// parameters in a stable order for optimizers and checkpoints.
namespace lsc::nn {

inline Tensor normal_init(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = float(rng.normal() * stddev);
  return t;
}

struct Conv2dLayer {
  ad::Param weight, bias;
  int stride = 1, pad = 0;
  bool has_bias = true;

  Conv2dLayer() = default;
  // gain 1 suits the codec's quasi-linear stacks; sqrt(2) suits ReLU nets.
  Conv2dLayer(const std::string& name, int c_in, int c_out, int k, int stride_, int pad_,
              Rng& rng, double gain = 1.0, bool with_bias = true)
      : stride(stride_), pad(pad_), has_bias(with_bias) {
    const double stddev = gain / std::sqrt(double(c_in) * k * k);
    weight = ad::Param(name + ".weight", normal_init({c_out, c_in, k, k}, stddev, rng));
    if (has_bias) bias = ad::Param(name + ".bias", Tensor({c_out}));
  }

  ad::Node* forward(ad::Tape& t, ad::Node* x) {
    return ops::conv2d(t, x, t.leaf_param(weight), has_bias ? t.leaf_param(bias) : nullptr,
                       stride, pad);
  }
  void collect(std::vector<ad::Param*>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
  }
};

struct ConvTranspose2dLayer {
  ad::Param weight, bias;  // weight [c_in, c_out, k, k]
  int stride = 1, pad = 0;

  ConvTranspose2dLayer() = default;
  ConvTranspose2dLayer(const std::string& name, int c_in, int c_out, int k, int stride_,
                       int pad_, Rng& rng, double gain = 1.0)
      : stride(stride_), pad(pad_) {
    const double stddev = gain / std::sqrt(double(c_in) * k * k);
    weight = ad::Param(name + ".weight", normal_init({c_in, c_out, k, k}, stddev, rng));
    bias = ad::Param(name + ".bias", Tensor({c_out}));
  }

  ad::Node* forward(ad::Tape& t, ad::Node* x) {
    return ops::conv2d_transpose(t, x, t.leaf_param(weight), t.leaf_param(bias), stride, pad);
  }
  void collect(std::vector<ad::Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

// Generalized divisive normalization with positivity by squared-offset
// reparameterization: beta = 1e-6 + b^2 (init b = 1), gamma = c^2
// (init gamma = 0.1 on the diagonal). The inverse flag selects IGDN.
struct GdnLayer {
  ad::Param b_raw, c_raw;
  bool inverse = false;

  GdnLayer() = default;
  GdnLayer(const std::string& name, int channels, bool inverse_) : inverse(inverse_) {
    b_raw = ad::Param(name + ".beta_raw", Tensor({channels}, 1.0f));
    Tensor c({channels, channels});
    const float diag = float(std::sqrt(0.1));
    for (int i = 0; i < channels; ++i) c.data[size_t(i) * channels + i] = diag;
    c_raw = ad::Param(name + ".gamma_raw", std::move(c));
  }

  ad::Node* forward(ad::Tape& t, ad::Node* x) {
    ad::Node* beta = ops::add_scalar(t, ops::square(t, t.leaf_param(b_raw)), 1e-6);
    ad::Node* gamma = ops::square(t, t.leaf_param(c_raw));
    return ops::gdn(t, x, beta, gamma, inverse);
  }
  void collect(std::vector<ad::Param*>& out) {
    out.push_back(&b_raw);
    out.push_back(&c_raw);
  }
};

struct LinearLayer {
  ad::Param weight, bias;  // weight [K, D]

  LinearLayer() = default;
  LinearLayer(const std::string& name, int in_dim, int out_dim, Rng& rng, double gain = 1.0) {
    const double stddev = gain / std::sqrt(double(in_dim));
    weight = ad::Param(name + ".weight", normal_init({out_dim, in_dim}, stddev, rng));
    bias = ad::Param(name + ".bias", Tensor({out_dim}));
  }

  ad::Node* forward(ad::Tape& t, ad::Node* x) {
    return ops::linear(t, x, t.leaf_param(weight), t.leaf_param(bias));
  }
  void collect(std::vector<ad::Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

// Batch norm with learnable scale/shift and non-trainable running statistics.
// The running stats still live in Params so checkpoints carry them.
struct BatchNormLayer {
  ad::Param gamma, beta, running_mean, running_var;

  BatchNormLayer() = default;
  BatchNormLayer(const std::string& name, int channels) {
    gamma = ad::Param(name + ".gamma", Tensor({channels}, 1.0f));
    beta = ad::Param(name + ".beta", Tensor({channels}));
    running_mean = ad::Param(name + ".running_mean", Tensor({channels}));
    running_mean.trainable = false;
    running_var = ad::Param(name + ".running_var", Tensor({channels}, 1.0f));
    running_var.trainable = false;
  }

  ad::Node* forward(ad::Tape& t, ad::Node* x, bool training) {
    return ops::batch_norm(t, x, t.leaf_param(gamma), t.leaf_param(beta), running_mean,
                           running_var, training);
  }
  void collect(std::vector<ad::Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
    out.push_back(&running_mean);
    out.push_back(&running_var);
  }
};

}  // namespace lsc::nn
