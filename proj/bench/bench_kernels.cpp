// Serial reference vs OpenMP batch kernels on default-grid images.

#include <benchmark/benchmark.h>

#include "mlk/autoencoder.hpp"
#include "mlk/core_model.hpp"
#include "mlk/kernels.hpp"
#include "mlk/random.hpp"

using namespace mlk;
using kernels::Exec;

namespace {

struct Data {
    FDataset ds;
    std::vector<std::span<const double>> images;
    AEModel model;
    std::vector<double> latents;
    std::vector<std::vector<double>> recons;
    std::vector<std::span<const double>> recon_views;
    std::vector<ConstraintSystem> systems;

    explicit Data(std::size_t nodes) : ds(gen_synthetic(1, nodes, default_grid(), SyntheticParams{})) {
        for (std::size_t i = 0; i < ds.n_images(); ++i) images.push_back(ds.image(i));
        model = init_model(4, ds.image_size(), fit_normalizer(images), 1);
        latents = kernels::encode_batch(model, images, Exec::serial);
        Rng rng(7);
        for (const auto& img : images) {
            auto& r = recons.emplace_back(img.begin(), img.end());
            for (double& v : r) v *= 1.0 + rng.uniform(-0.01, 0.01);
            systems.push_back(build_constraints(ds.grid, compute_qoi(img, ds.grid)));
        }
        recon_views.assign(recons.begin(), recons.end());
    }
};

const Data& data() {
    static const Data d(2048);
    return d;
}

Exec exec_of(const benchmark::State& state) { return state.range(0) == 0 ? Exec::serial : Exec::parallel; }

void label(benchmark::State& state) {
    state.SetLabel(state.range(0) == 0 ? "serial" : "parallel");
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(data().images.size()));
}

void BM_Encode(benchmark::State& state) {
    const auto& d = data();
    for (auto _ : state) benchmark::DoNotOptimize(kernels::encode_batch(d.model, d.images, exec_of(state)));
    label(state);
}

void BM_Decode(benchmark::State& state) {
    const auto& d = data();
    for (auto _ : state) benchmark::DoNotOptimize(kernels::decode_batch(d.model, d.latents, exec_of(state)));
    label(state);
}

void BM_Qoi(benchmark::State& state) {
    const auto& d = data();
    for (auto _ : state) benchmark::DoNotOptimize(kernels::qoi_batch(d.images, d.ds.grid, exec_of(state)));
    label(state);
}

void BM_Nrmse(benchmark::State& state) {
    const auto& d = data();
    for (auto _ : state) benchmark::DoNotOptimize(kernels::nrmse_batch(d.images, d.recon_views, exec_of(state)));
    label(state);
}

void BM_Project(benchmark::State& state) {
    const auto& d = data();
    for (auto _ : state)
        benchmark::DoNotOptimize(kernels::project_batch(d.recon_views, d.systems, NewtonOptions{}, exec_of(state)));
    label(state);
}

}  // namespace

BENCHMARK(BM_Encode)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Decode)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Qoi)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Nrmse)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Project)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
