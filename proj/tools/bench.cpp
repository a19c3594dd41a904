// SPDX-License-Identifier: Apache-2.0
// Compares the parallel kernels against the serial reference: wall time and
// max abs deviation (matmul must match bit-for-bit, conv/pool to 1e-12).
#include <chrono>
#include <cstdio>

#include "normprop/kernels.hpp"
#include "normprop/rng.hpp"
#include "normprop/serial.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace normprop;

namespace {

Tensor random_tensor(const std::vector<std::size_t>& shape, Rng& rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<real>(rng.normal());
  return t;
}

template <typename F>
double time_ms(F&& f, int reps) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) f();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
  std::printf("openmp: disabled\n");
#endif
  std::printf("%-28s %12s %12s %9s %12s\n", "kernel", "serial ms", "parallel ms", "speedup",
              "max |diff|");

  Rng rng(42);

  {
    const Tensor a = random_tensor({384, 384}, rng);
    const Tensor b = random_tensor({384, 384}, rng);
    Tensor rs, rp;
    const double ts = time_ms([&] { rs = serial::matmul(a, b); }, 3);
    const double tp = time_ms([&] { rp = kernels::matmul(a, b); }, 3);
    std::printf("%-28s %12.2f %12.2f %8.2fx %12.3e\n", "matmul 384x384x384", ts, tp, ts / tp,
                double(max_abs_diff(rs, rp)));
  }
  {
    const Tensor x = random_tensor({8, 16, 32, 32}, rng);
    const Tensor w = random_tensor({32, 16, 3, 3}, rng);
    Tensor rs, rp;
    const double ts = time_ms([&] { rs = serial::conv2d(x, w, 1, 1); }, 3);
    const double tp = time_ms([&] { rp = kernels::conv2d(x, w, 1, 1); }, 3);
    std::printf("%-28s %12.2f %12.2f %8.2fx %12.3e\n", "conv2d 8x16x32x32 k3", ts, tp, ts / tp,
                double(max_abs_diff(rs, rp)));
  }
  {
    const Tensor x = random_tensor({16, 32, 64, 64}, rng);
    Tensor rs, rp;
    const double ts = time_ms([&] { rs = serial::pool2d(x, 3, 2, 1, kernels::PoolMode::max); }, 3);
    const double tp = time_ms([&] { rp = kernels::pool2d(x, 3, 2, 1, kernels::PoolMode::max); }, 3);
    std::printf("%-28s %12.2f %12.2f %8.2fx %12.3e\n", "maxpool 16x32x64x64 k3", ts, tp, ts / tp,
                double(max_abs_diff(rs, rp)));
  }
  {
    const Tensor x = random_tensor({16, 32, 64, 64}, rng);
    Tensor rs, rp;
    const double ts = time_ms([&] { rs = serial::pool2d(x, 3, 2, 1, kernels::PoolMode::avg); }, 3);
    const double tp = time_ms([&] { rp = kernels::pool2d(x, 3, 2, 1, kernels::PoolMode::avg); }, 3);
    std::printf("%-28s %12.2f %12.2f %8.2fx %12.3e\n", "avgpool 16x32x64x64 k3", ts, tp, ts / tp,
                double(max_abs_diff(rs, rp)));
  }
  {
    const Tensor w = random_tensor({256, 2048}, rng);
    Tensor rs, rp;
    const double ts = time_ms([&] { rs = serial::row_l2_norms(w); }, 10);
    const double tp = time_ms([&] { rp = kernels::row_l2_norms(w); }, 10);
    std::printf("%-28s %12.2f %12.2f %8.2fx %12.3e\n", "row_l2_norms 256x2048", ts, tp, ts / tp,
                double(max_abs_diff(rs, rp)));
  }
  return 0;
}
