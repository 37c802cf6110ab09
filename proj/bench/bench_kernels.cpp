#include "doa/kernels.hpp"

#include <benchmark/benchmark.h>
#include <omp.h>

namespace {

using namespace doa;

struct Layer {
    Mat<float> w, x, dz, dw, dx;
    Vec<float> b, db;
    Mat<float> z;

    Layer(Eigen::Index out, Eigen::Index in, Eigen::Index batch) {
        w = Mat<float>::Random(out, in);
        b = Vec<float>::Random(out);
        x = Mat<float>::Random(in, batch);
        dz = Mat<float>::Random(out, batch);
    }
};

void set_threads(const benchmark::State& state) { omp_set_num_threads(static_cast<int>(state.range(1))); }

void BM_AffineForwardParallel(benchmark::State& state) {
    set_threads(state);
    Layer l(256, 256, state.range(0));
    for (auto _ : state) {
        kernels::affine_forward(l.w, l.b, l.x, l.z);
        benchmark::DoNotOptimize(l.z.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_AffineForwardSerial(benchmark::State& state) {
    Layer l(256, 256, state.range(0));
    for (auto _ : state) {
        kernels::reference::affine_forward(l.w, l.b, l.x, l.z);
        benchmark::DoNotOptimize(l.z.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_AffineBackwardParallel(benchmark::State& state) {
    set_threads(state);
    Layer l(256, 256, state.range(0));
    for (auto _ : state) {
        kernels::affine_backward(l.w, l.x, l.dz, l.dw, l.db, &l.dx);
        benchmark::DoNotOptimize(l.dw.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_AffineBackwardSerial(benchmark::State& state) {
    Layer l(256, 256, state.range(0));
    for (auto _ : state) {
        kernels::reference::affine_backward(l.w, l.x, l.dz, l.dw, l.db, &l.dx);
        benchmark::DoNotOptimize(l.dw.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

SampleGenerator bench_generator() {
    SampleGenerator g;
    g.selection = SubarraySelection::table2_scheme();
    g.distribution.num_sources = 2;
    g.distribution.grid = SectorGrid{72};
    return g;
}

void BM_GenerateParallel(benchmark::State& state) {
    set_threads(state);
    const auto gen = bench_generator();
    std::uint64_t first = 0;
    for (auto _ : state) {
        auto s = kernels::generate_samples(gen, 1, 0, first, static_cast<std::size_t>(state.range(0)));
        benchmark::DoNotOptimize(s.data());
        first += static_cast<std::uint64_t>(state.range(0));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_GenerateSerial(benchmark::State& state) {
    const auto gen = bench_generator();
    std::uint64_t first = 0;
    for (auto _ : state) {
        auto s = kernels::reference::generate_samples(gen, 1, 0, first, static_cast<std::size_t>(state.range(0)));
        benchmark::DoNotOptimize(s.data());
        first += static_cast<std::uint64_t>(state.range(0));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

const int kMaxThreads = omp_get_max_threads();

}  // namespace

BENCHMARK(BM_AffineForwardSerial)->Arg(256);
BENCHMARK(BM_AffineForwardParallel)->ArgsProduct({{256}, benchmark::CreateRange(1, kMaxThreads, 2)});
BENCHMARK(BM_AffineBackwardSerial)->Arg(256);
BENCHMARK(BM_AffineBackwardParallel)->ArgsProduct({{256}, benchmark::CreateRange(1, kMaxThreads, 2)});
BENCHMARK(BM_GenerateSerial)->Arg(256);
BENCHMARK(BM_GenerateParallel)->ArgsProduct({{256}, benchmark::CreateRange(1, kMaxThreads, 2)});

BENCHMARK_MAIN();
