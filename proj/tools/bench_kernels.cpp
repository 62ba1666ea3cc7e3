#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "lsc/kernels.hpp"
#include "lsc/rng.hpp"
#include "lsc/tensor.hpp"

// Times the serial reference kernels against the OpenMP and GEMM variants on
// shapes taken from the codec and classifier hot paths, and cross-checks the
// outputs while at it: serial and OpenMP must agree bitwise, GEMM to float
// tolerance.
namespace {

using lsc::Tensor;
namespace kern = lsc::kern;

double time_best_ms(const std::function<void()>& fn, int repeats) {
  fn();  // warm up caches and thread pools
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

struct ConvCase {
  const char* label;
  int n, c_in, h, w, c_out, k, stride, pad;
};

void bench_conv(const ConvCase& cs, int repeats) {
  lsc::Rng rng(7);
  Tensor x = lsc::random_tensor<float>({cs.n, cs.c_in, cs.h, cs.w}, rng);
  Tensor wt = lsc::random_tensor<float>({cs.c_out, cs.c_in, cs.k, cs.k}, rng);
  Tensor b = lsc::random_tensor<float>({cs.c_out}, rng);
  const kern::ConvGeom g = kern::conv_geometry(x.shape, wt.shape, cs.stride, cs.pad);
  Tensor y_serial({cs.n, cs.c_out, g.h_out, g.w_out});
  Tensor y_omp = y_serial, y_gemm = y_serial;

  const double ms_serial = time_best_ms(
      [&] { kern::serial::conv2d_forward(x.ptr(), wt.ptr(), b.ptr(), y_serial.ptr(), g); },
      repeats);
  const double ms_omp = time_best_ms(
      [&] { kern::omp::conv2d_forward(x.ptr(), wt.ptr(), b.ptr(), y_omp.ptr(), g); }, repeats);
  kern::set_conv_backend(kern::ConvBackend::gemm);
  const double ms_gemm = time_best_ms(
      [&] { kern::conv2d_forward(x.ptr(), wt.ptr(), b.ptr(), y_gemm.ptr(), g); }, repeats);
  kern::set_conv_backend(kern::ConvBackend::direct);

  bool bitwise = true;
  float max_diff = 0.0f;
  for (size_t i = 0; i < y_serial.numel(); ++i) {
    bitwise = bitwise && y_serial.data[i] == y_omp.data[i];
    max_diff = std::max(max_diff, std::fabs(y_serial.data[i] - y_gemm.data[i]));
  }
  std::printf("%-28s %9.3f %9.3f %9.3f  %5.2fx %6.2fx   %s  %.2e\n", cs.label, ms_serial,
              ms_omp, ms_gemm, ms_serial / ms_omp, ms_serial / ms_gemm,
              bitwise ? "yes" : "NO ", double(max_diff));
}

void bench_gdn(int n, int c, int hw, int repeats) {
  lsc::Rng rng(11);
  Tensor x = lsc::random_tensor<float>({n, c, hw}, rng);
  Tensor beta = lsc::random_tensor<float>({c}, rng, 0.5, 1.5);
  Tensor gamma = lsc::random_tensor<float>({c, c}, rng, 0.0, 0.1);
  Tensor y({n, c, hw}), u({n, c, hw});
  const double ms_serial = time_best_ms(
      [&] {
        kern::serial::gdn_forward(x.ptr(), beta.ptr(), gamma.ptr(), false, y.ptr(), u.ptr(), n,
                                  c, hw);
      },
      repeats);
  Tensor y2 = y;
  const double ms_omp = time_best_ms(
      [&] {
        kern::omp::gdn_forward(x.ptr(), beta.ptr(), gamma.ptr(), false, y2.ptr(), u.ptr(), n, c,
                               hw);
      },
      repeats);
  bool bitwise = true;
  for (size_t i = 0; i < y.numel(); ++i) bitwise = bitwise && y.data[i] == y2.data[i];
  char label[64];
  std::snprintf(label, sizeof label, "gdn %dx%dx%d", n, c, hw);
  std::printf("%-28s %9.3f %9.3f %9s  %5.2fx %6s   %s\n", label, ms_serial, ms_omp, "-",
              ms_serial / ms_omp, "-", bitwise ? "yes" : "NO ");
}

}  // namespace

int main(int argc, char** argv) {
  int repeats = 5;
  if (argc > 1) repeats = std::max(1, std::atoi(argv[1]));

  std::printf("conv2d forward (ms, best of %d)\n", repeats);
  std::printf("%-28s %9s %9s %9s  %6s %6s   %s\n", "case", "serial", "omp", "gemm", "omp+",
              "gemm+", "serial==omp  |serial-gemm|");
  const ConvCase cases[] = {
      {"stem 5x5 s2  8x3x64x64", 8, 3, 64, 64, 32, 5, 2, 2},
      {"analysis 5x5 s2 8x32x32x32", 8, 32, 32, 32, 32, 5, 2, 2},
      {"trunk 3x3 s1 8x64x28x28", 8, 64, 28, 28, 64, 3, 1, 1},
      {"proj 1x1 s1  8x256x14x14", 8, 256, 14, 14, 128, 1, 1, 0},
  };
  for (const ConvCase& cs : cases) bench_conv(cs, repeats);

  std::printf("\ngdn forward (ms, best of %d)\n", repeats);
  bench_gdn(8, 32, 32 * 32, repeats);
  bench_gdn(2, 192, 16 * 16, repeats);
  return 0;
}
