// Serial-reference vs OpenMP kernel benchmark. Verifies bit-identical
// results on the way, then reports throughput for the shapes the training
// loop actually hits.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "minimm/kernels.hpp"
#include "minimm/rng.hpp"

using namespace minimm;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> random_vec(size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

template <typename F>
double time_loop(F&& f, int reps) {
    f(); // warm up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) f();
    return seconds_since(t0) / reps;
}

void bench_gemm(int m, int k, int n, int reps) {
    Rng rng(7);
    auto a = random_vec(size_t(m) * k, rng);
    auto b = random_vec(size_t(k) * n, rng);
    std::vector<double> c1(size_t(m) * n), c2(size_t(m) * n);

    kern::ref::gemm_nn(m, k, n, a.data(), b.data(), c1.data(), false);
    kern::gemm_nn(m, k, n, a.data(), b.data(), c2.data(), false);
    if (std::memcmp(c1.data(), c2.data(), c1.size() * 8) != 0) {
        std::printf("gemm %dx%dx%d: MISMATCH between serial and parallel\n", m, k, n);
        return;
    }

    const double ts = time_loop(
        [&] { kern::ref::gemm_nn(m, k, n, a.data(), b.data(), c1.data(), false); }, reps);
    const double tp =
        time_loop([&] { kern::gemm_nn(m, k, n, a.data(), b.data(), c2.data(), false); }, reps);
    const double flops = 2.0 * m * k * n;
    std::printf("gemm_nn %4dx%4dx%4d  serial %8.3f us (%6.2f GF/s)  parallel %8.3f us "
                "(%6.2f GF/s)  speedup %.2fx\n",
                m, k, n, ts * 1e6, flops / ts / 1e9, tp * 1e6, flops / tp / 1e9, ts / tp);
}

void bench_rows(const char* name, int rows, int cols, int reps,
                void (*serial)(const double*, double*, int, int),
                void (*parallel)(const double*, double*, int, int)) {
    Rng rng(9);
    auto x = random_vec(size_t(rows) * cols, rng);
    std::vector<double> y1(x.size()), y2(x.size());
    serial(x.data(), y1.data(), rows, cols);
    parallel(x.data(), y2.data(), rows, cols);
    if (std::memcmp(y1.data(), y2.data(), y1.size() * 8) != 0) {
        std::printf("%s: MISMATCH\n", name);
        return;
    }
    const double ts = time_loop([&] { serial(x.data(), y1.data(), rows, cols); }, reps);
    const double tp = time_loop([&] { parallel(x.data(), y2.data(), rows, cols); }, reps);
    std::printf("%-12s %5dx%-4d  serial %8.3f us  parallel %8.3f us  speedup %.2fx\n", name,
                rows, cols, ts * 1e6, tp * 1e6, ts / tp);
}

} // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("built without openmp; parallel entry points run serially\n");
#endif

    bench_gemm(96, 64, 64, 200);
    bench_gemm(96, 64, 256, 100);
    bench_gemm(96, 96, 96, 100);
    bench_gemm(256, 256, 256, 30);
    bench_gemm(512, 512, 512, 10);

    bench_rows("softmax", 512, 512, 200, &kern::ref::softmax_rows, &kern::softmax_rows);
    bench_rows("softmax", 96, 96, 500, &kern::ref::softmax_rows, &kern::softmax_rows);

    {
        Rng rng(3);
        const size_t n = 1 << 20;
        auto x = random_vec(n, rng);
        std::vector<double> y1(n), y2(n);
        kern::ref::gelu(x.data(), y1.data(), n);
        kern::gelu(x.data(), y2.data(), n);
        if (std::memcmp(y1.data(), y2.data(), n * 8) != 0) {
            std::printf("gelu: MISMATCH\n");
            return 1;
        }
        const double ts = time_loop([&] { kern::ref::gelu(x.data(), y1.data(), n); }, 20);
        const double tp = time_loop([&] { kern::gelu(x.data(), y2.data(), n); }, 20);
        std::printf("gelu         %zu elems  serial %8.3f us  parallel %8.3f us  speedup %.2fx\n",
                    n, ts * 1e6, tp * 1e6, ts / tp);
    }
    return 0;
}
