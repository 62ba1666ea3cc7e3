#include "lsc/tensor.hpp"

#include <cmath>
#include <sstream>

namespace lsc {

template <typename T>
size_t TensorT<T>::check_extents(const std::vector<int>& s) {
  size_t n = 1;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] <= 0) {
      std::ostringstream os;
      os << "tensor extent at axis " << i << " must be positive, got " << s[i];
      throw ShapeError(os.str());
    }
    n *= static_cast<size_t>(s[i]);
  }
  return n;
}

template <typename T>
TensorT<T> TensorT<T>::reshaped(std::vector<int> s) const {
  size_t n = check_extents(s);
  if (n != numel()) {
    throw ShapeError("reshape from " + shape_str() + " to " + shape_to_string(s) +
                     " changes element count");
  }
  TensorT out;
  out.shape = std::move(s);
  out.data = data;
  out.integer_valued = integer_valued;
  return out;
}

template <typename T>
bool TensorT<T>::is_whole_valued() const {
  for (T v : data) {
    if (std::rint(static_cast<double>(v)) != static_cast<double>(v)) return false;
  }
  return true;
}

template <typename T>
std::string TensorT<T>::shape_str() const {
  return shape_to_string(shape);
}

std::string shape_to_string(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

template <typename T>
TensorT<T> random_tensor(std::vector<int> shape, Rng& rng, double lo, double hi) {
  TensorT<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
TensorT<T> random_normal_tensor(std::vector<int> shape, Rng& rng, double stddev) {
  TensorT<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
TensorT<T> round_half_away(const TensorT<T>& t) {
  TensorT<T> out = t;
  for (auto& v : out.data) v = static_cast<T>(std::round(static_cast<double>(v)));
  out.integer_valued = true;
  return out;
}

template <typename T>
TensorT<T> reflect_pad_hw(const TensorT<T>& x, int top, int bottom, int left, int right) {
  if (x.ndim() != 4) throw ShapeError("reflect_pad_hw expects [N,C,H,W], got " + x.shape_str());
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (top >= h || bottom >= h || left >= w || right >= w) {
    throw ShapeError("reflect padding larger than input extent for " + x.shape_str());
  }
  TensorT<T> out({n, c, h + top + bottom, w + left + right});
  int oh = h + top + bottom, ow = w + left + right;
  for (int in = 0; in < n; ++in) {
    for (int ic = 0; ic < c; ++ic) {
      for (int y = 0; y < oh; ++y) {
        int sy = y - top;
        if (sy < 0) sy = -sy;
        if (sy >= h) sy = 2 * (h - 1) - sy;
        for (int xw = 0; xw < ow; ++xw) {
          int sx = xw - left;
          if (sx < 0) sx = -sx;
          if (sx >= w) sx = 2 * (w - 1) - sx;
          out.at(in, ic, y, xw) = x.at(in, ic, sy, sx);
        }
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> crop_hw(const TensorT<T>& x, int top, int left, int out_h, int out_w) {
  // Crops the trailing two axes; output keeps the input's rank.
  if (x.ndim() != 3 && x.ndim() != 4)
    throw ShapeError("crop_hw expects [C,H,W] or [N,C,H,W], got " + x.shape_str());
  const bool batched = x.ndim() == 4;
  const int planes = batched ? x.dim(0) * x.dim(1) : x.dim(0);
  const int h = x.dim(batched ? 2 : 1), w = x.dim(batched ? 3 : 2);
  if (top < 0 || left < 0 || top + out_h > h || left + out_w > w) {
    throw ShapeError("crop window exceeds input " + x.shape_str());
  }
  TensorT<T> out(batched ? std::vector<int>{x.dim(0), x.dim(1), out_h, out_w}
                         : std::vector<int>{x.dim(0), out_h, out_w});
  out.integer_valued = x.integer_valued;
  for (int p = 0; p < planes; ++p) {
    const T* src = x.ptr() + size_t(p) * h * w;
    T* dst = out.ptr() + size_t(p) * out_h * out_w;
    for (int y = 0; y < out_h; ++y)
      for (int xw = 0; xw < out_w; ++xw)
        dst[size_t(y) * out_w + xw] = src[size_t(top + y) * w + (left + xw)];
  }
  return out;
}

template struct TensorT<float>;
template struct TensorT<double>;
template void require_same_shape(const TensorT<float>&, const TensorT<float>&, const char*);
template void require_same_shape(const TensorT<double>&, const TensorT<double>&, const char*);
template TensorT<float> random_tensor(std::vector<int>, Rng&, double, double);
template TensorT<double> random_tensor(std::vector<int>, Rng&, double, double);
template TensorT<float> random_normal_tensor(std::vector<int>, Rng&, double);
template TensorT<double> random_normal_tensor(std::vector<int>, Rng&, double);
template TensorT<float> round_half_away(const TensorT<float>&);
template TensorT<double> round_half_away(const TensorT<double>&);
template TensorT<float> reflect_pad_hw(const TensorT<float>&, int, int, int, int);
template TensorT<double> reflect_pad_hw(const TensorT<double>&, int, int, int, int);
template TensorT<float> crop_hw(const TensorT<float>&, int, int, int, int);
template TensorT<double> crop_hw(const TensorT<double>&, int, int, int, int);

}  // namespace lsc
