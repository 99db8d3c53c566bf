// Compares the serial reference matmul against the OpenMP kernel and
// checks they agree to machine precision.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "symlab/tensor.hpp"

using namespace symlab;
using symlab::kernels::matmul;
using symlab::kernels::matmul_serial;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::printf("%8s %12s %12s %10s %12s\n", "n", "serial(ms)", "openmp(ms)", "speedup", "max|diff|");
  for (std::size_t n : {64, 128, 256, 512}) {
    Tensor a({n, n}), b({n, n});
    for (double& x : a.data) x = dist(rng);
    for (double& x : b.data) x = dist(rng);
    Tensor c_serial, c_par;
    const double ts = time_ms([&] { c_serial = matmul_serial(a, b); }, 3);
    const double tp = time_ms([&] { c_par = matmul(a, b); }, 3);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < c_serial.data.size(); ++i)
      max_diff = std::max(max_diff, std::abs(c_serial.data[i] - c_par.data[i]));
    std::printf("%8zu %12.3f %12.3f %9.2fx %12.3e\n", n, ts, tp, ts / tp, max_diff);
  }
  return 0;
}
