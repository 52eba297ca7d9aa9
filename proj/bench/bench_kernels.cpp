// Timing harness for the raw compute kernels: the OpenMP implementations in
// eqpose::kernels against the naive serial oracles in eqpose::ref. Outputs
// are compared bit-for-bit before timing, so the speed numbers are only ever
// printed for implementations that agree exactly.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "eqpose/kernels.hpp"
#include "eqpose/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace eqpose;

namespace {

using Clock = std::chrono::steady_clock;

template <typename Fn>
double time_best_of(int reps, Fn fn) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    auto t0 = Clock::now();
    fn();
    auto t1 = Clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

std::vector<double> randvec(Rng& rng, long long n) {
  std::vector<double> v((size_t)n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void bench_conv(Rng& rng, int ci, int hw, int co, int k) {
  int pad = k / 2, stride = 1, ho = hw, wo = hw;
  auto in = randvec(rng, (long long)ci * hw * hw);
  auto w = randvec(rng, (long long)co * ci * k * k);
  std::vector<double> out_k((size_t)co * ho * wo), out_r(out_k.size());

  kernels::conv2d_fwd(in.data(), w.data(), out_k.data(), ci, hw, hw, co, k, k, pad, stride, ho,
                      wo);
  ref::conv2d(in.data(), w.data(), out_r.data(), ci, hw, hw, co, k, k, pad, stride, ho, wo);
  bool same = std::memcmp(out_k.data(), out_r.data(), out_k.size() * sizeof(double)) == 0;

  double tk = time_best_of(5, [&] {
    kernels::conv2d_fwd(in.data(), w.data(), out_k.data(), ci, hw, hw, co, k, k, pad, stride, ho,
                        wo);
  });
  double tr = time_best_of(5, [&] {
    ref::conv2d(in.data(), w.data(), out_r.data(), ci, hw, hw, co, k, k, pad, stride, ho, wo);
  });
  double macs = 2.0 * co * ho * wo * ci * k * k;
  std::printf("conv2d  %3dx%-3d ci=%-3d co=%-3d k=%d | ref %8.3f ms  omp %8.3f ms  x%-5.2f  "
              "%6.2f GFLOP/s  %s\n",
              hw, hw, ci, co, k, tr * 1e3, tk * 1e3, tr / tk, macs / tk * 1e-9,
              same ? "bitwise-equal" : "MISMATCH");
}

void bench_linear(Rng& rng, int m, int n) {
  auto x = randvec(rng, n);
  auto w = randvec(rng, (long long)m * n);
  auto b = randvec(rng, m);
  std::vector<double> out_k((size_t)m), out_r((size_t)m);
  kernels::linear_fwd(x.data(), w.data(), b.data(), out_k.data(), m, n);
  ref::linear(x.data(), w.data(), b.data(), out_r.data(), m, n);
  bool same = std::memcmp(out_k.data(), out_r.data(), out_k.size() * sizeof(double)) == 0;
  double tk = time_best_of(20, [&] {
    kernels::linear_fwd(x.data(), w.data(), b.data(), out_k.data(), m, n);
  });
  double tr = time_best_of(20, [&] {
    ref::linear(x.data(), w.data(), b.data(), out_r.data(), m, n);
  });
  std::printf("linear  %5dx%-6d              | ref %8.3f ms  omp %8.3f ms  x%-5.2f  "
              "%6.2f GFLOP/s  %s\n",
              m, n, tr * 1e3, tk * 1e3, tr / tk, 2.0 * m * n / tk * 1e-9,
              same ? "bitwise-equal" : "MISMATCH");
}

void bench_maxpool(Rng& rng, int c, int hw) {
  int k = 2, stride = 2, ho = hw / 2, wo = hw / 2;
  auto in = randvec(rng, (long long)c * hw * hw);
  std::vector<double> out_k((size_t)c * ho * wo), out_r(out_k.size());
  std::vector<int> arg(out_k.size());
  kernels::maxpool_fwd(in.data(), out_k.data(), arg.data(), c, hw, hw, k, stride, ho, wo);
  ref::maxpool(in.data(), out_r.data(), c, hw, hw, k, stride, ho, wo);
  bool same = std::memcmp(out_k.data(), out_r.data(), out_k.size() * sizeof(double)) == 0;
  double tk = time_best_of(20, [&] {
    kernels::maxpool_fwd(in.data(), out_k.data(), arg.data(), c, hw, hw, k, stride, ho, wo);
  });
  double tr = time_best_of(20, [&] {
    ref::maxpool(in.data(), out_r.data(), c, hw, hw, k, stride, ho, wo);
  });
  std::printf("maxpool %3dx%-3d c=%-4d           | ref %8.3f ms  omp %8.3f ms  x%-5.2f  "
              "%s\n",
              hw, hw, c, tr * 1e3, tk * 1e3, tr / tk, same ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP: %d thread(s)\n", omp_get_max_threads());
#else
  std::printf("OpenMP: compiled out (serial build)\n");
#endif
  Rng rng(123);

  // Shapes matching the training pipeline (32px Study10 stages) plus a couple
  // of larger ones where parallelism has room to stretch.
  bench_conv(rng, 16, 32, 16, 3);
  bench_conv(rng, 16, 32, 16, 5);
  bench_conv(rng, 32, 16, 32, 5);
  bench_conv(rng, 64, 64, 64, 3);
  bench_linear(rng, 128, 512);
  bench_linear(rng, 1024, 4096);
  bench_maxpool(rng, 32, 32);
  bench_maxpool(rng, 128, 128);
  return 0;
}
