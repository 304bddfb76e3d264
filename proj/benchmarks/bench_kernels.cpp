#include "gigp/metrics.hpp"
#include "gigp/moments.hpp"
#include "gigp/segnet.hpp"
#include "gigp/ssm.hpp"
#include "gigp/tensor.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace gigp;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = d(rng);
    return Tensor::from_values(shape, v);
}

void BM_Conv3dForward(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const int c = static_cast<int>(state.range(1));
    const Tensor x = random_tensor({2, c, n, n, n}, 1);
    const Tensor k = random_tensor({c, c, 3, 3, 3}, 2);
    const Tensor b = random_tensor({c}, 3);
    for (auto _ : state) {
        NoGradGuard guard;
        benchmark::DoNotOptimize(conv3d(x, k, b, {{1, 1, 1}, {1, 1, 1}}));
    }
}
BENCHMARK(BM_Conv3dForward)->Args({24, 8})->Args({12, 16})->Args({6, 32})->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const int c = static_cast<int>(state.range(1));
    Tensor x = random_tensor({2, c, n, n, n}, 1);
    Tensor k = random_tensor({c, c, 3, 3, 3}, 2);
    x.set_requires_grad(true);
    k.set_requires_grad(true);
    for (auto _ : state) {
        sum(conv3d(x, k, Tensor(), {{1, 1, 1}, {1, 1, 1}})).backward();
    }
}
BENCHMARK(BM_Conv3dBackward)->Args({24, 8})->Args({12, 16})->Unit(benchmark::kMillisecond);

void BM_SelectiveScan(benchmark::State& state) {
    const int len = static_cast<int>(state.range(0));
    std::mt19937_64 rng(4);
    const auto p = ssm::init_ssm_params(8, 32, rng);
    const Tensor x = random_tensor({4, len, 32}, 5);
    for (auto _ : state) {
        NoGradGuard guard;
        benchmark::DoNotOptimize(ssm::selective_scan(x, p));
    }
    state.SetItemsProcessed(state.iterations() * 4 * len);
}
BENCHMARK(BM_SelectiveScan)->Arg(64)->Arg(216)->Arg(1024);

void BM_NormalizedMoments(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Tensor f = random_tensor({1, 1, n, n, n}, 6);
    for (auto _ : state) {
        NoGradGuard guard;
        benchmark::DoNotOptimize(moments::normalized_moments(f));
    }
}
BENCHMARK(BM_NormalizedMoments)->Arg(12)->Arg(24);

void BM_SurfaceMetrics(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    metrics::BinaryMask a({n, n, n});
    metrics::BinaryMask b({n, n, n});
    const double r = n / 4.0;
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double dz = z - n / 2.0, dy = y - n / 2.0, dx = x - n / 2.0;
                a.at(z, y, x) = dz * dz + dy * dy + dx * dx <= r * r;
                b.at(z, y, x) = (dz - 1) * (dz - 1) + dy * dy + dx * dx <= 1.1 * r * r;
            }
    for (auto _ : state) benchmark::DoNotOptimize(metrics::evaluate(a, b));
}
BENCHMARK(BM_SurfaceMetrics)->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);

void BM_NetworkForward(benchmark::State& state) {
    net::NetConfig cfg;
    const ParameterSet p = net::build_network(cfg, 7);
    const Tensor x = random_tensor({2, 1, 24, 24, 24}, 8);
    for (auto _ : state) benchmark::DoNotOptimize(net::forward(cfg, p, x, net::Mode::teacher, 1));
}
BENCHMARK(BM_NetworkForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
