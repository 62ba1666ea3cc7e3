#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsc/common.hpp"
#include "lsc/rng.hpp"

namespace lsc {

// Dense n-d array, row-major, NCHW for feature maps. The integer_valued flag
// marks quantized latents; it is advisory metadata, storage stays floating.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;
  bool integer_valued = false;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
    data.assign(check_extents(shape), T(0));
  }
  TensorT(std::vector<int> s, T fill) : shape(std::move(s)) {
    data.assign(check_extents(shape), fill);
  }

  static size_t check_extents(const std::vector<int>& s);

  size_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool empty() const { return data.empty(); }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  // 4-d accessor (N, C, H, W); used by tests and slow paths only.
  T& at(int n, int c, int h, int w) {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T at(int n, int c, int h, int w) const {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  void fill(T v) { data.assign(data.size(), v); }

  TensorT reshaped(std::vector<int> s) const;

  // Whole-number check for the integer_valued invariant.
  bool is_whole_valued() const;

  std::string shape_str() const;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

std::string shape_to_string(const std::vector<int>& s);

// Throws ShapeError naming the context if shapes differ.
template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what);

template <typename T>
TensorT<T> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0);

template <typename T>
TensorT<T> random_normal_tensor(std::vector<int> shape, Rng& rng, double stddev = 1.0);

// Nearest integer, ties away from zero; result flagged integer_valued.
template <typename T>
TensorT<T> round_half_away(const TensorT<T>& t);

template <typename T, typename U>
TensorT<T> cast_tensor(const TensorT<U>& t) {
  TensorT<T> out;
  out.shape = t.shape;
  out.integer_valued = t.integer_valued;
  out.data.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<T>(t.data[i]);
  return out;
}

// Spatial helpers on single-image tensors [C,H,W] or batched [N,C,H,W].
template <typename T>
TensorT<T> reflect_pad_hw(const TensorT<T>& x, int top, int bottom, int left, int right);

template <typename T>
TensorT<T> crop_hw(const TensorT<T>& x, int top, int left, int out_h, int out_w);

}  // namespace lsc
