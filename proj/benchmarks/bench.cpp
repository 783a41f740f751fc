// Micro benchmarks at the toy benchmark's sizes: 128x96 images, 64x64 scene
// plane, K = 5 views.

#include <benchmark/benchmark.h>

#include <random>

#include "cvcs/model.hpp"
#include "cvcs/sim.hpp"
#include "cvcs/train.hpp"

namespace {

using namespace cvcs;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : t.mutable_data()) v = u(rng);
    return t;
}

const sim::Scene& scene() {
    static const sim::Scene s = [] {
        sim::SceneSpec spec;
        spec.seed = 3;
        spec.n_frames = 1;
        return sim::generate_scene(0, spec);
    }();
    return s;
}

void BM_Conv2dForward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const Tensor x = random_tensor({1, c, 96, 128}, 1), k = random_tensor({c, c, 3, 3}, 2);
    const Tensor b = random_tensor({c}, 3);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, b, 1, 1));
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    Tensor x = random_tensor({1, c, 96, 128}, 1), k = random_tensor({c, c, 3, 3}, 2);
    Tensor b = random_tensor({c}, 3);
    for (Tensor* t : {&x, &k, &b}) t->set_requires_grad(true);
    for (auto _ : state) {
        Tape tape;
        tape.backward(reduce_sum(conv2d(x, k, b, 1, 1)));
    }
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_BilinearSample(benchmark::State& state) {
    const auto& s = scene();
    const Tensor f = random_tensor({1, 16, 24, 32}, 4);
    const SamplingGrid grid = geom::plane_sampling_grid(s.cameras[0], s.grid, 4);
    for (auto _ : state) benchmark::DoNotOptimize(bilinear_sample(f, grid));
}
BENCHMARK(BM_BilinearSample)->Unit(benchmark::kMicrosecond);

void BM_DistanceMap(benchmark::State& state) {
    const auto& s = scene();
    for (auto _ : state) benchmark::DoNotOptimize(geom::distance_map(s.cameras[0], s.grid, 24, 32));
}
BENCHMARK(BM_DistanceMap)->Unit(benchmark::kMicrosecond);

constexpr std::size_t kViews[] = {0, 3, 6, 9, 12};

net::ModelConfig model_config(net::CamSel camsel, net::NoiseType noise) {
    net::ModelConfig c;
    c.extractor_channels = {8, 8, 16, 16};
    c.decoder_channels = {16, 8, 1};
    c.camsel = camsel;
    c.noise = noise;
    return c;
}

void BM_ForwardEval(benchmark::State& state) {
    const auto camsel = static_cast<net::CamSel>(state.range(0));
    const net::Model m = net::init_model(model_config(camsel, net::NoiseType::Off), 1);
    const auto& s = scene();
    const auto views = train::gather_views(s, s.frames[0], kViews);
    for (auto _ : state) {
        net::Rng rng(0);
        benchmark::DoNotOptimize(net::forward(m, views, s.grid, {}, rng));
    }
}
BENCHMARK(BM_ForwardEval)
    ->Arg(static_cast<int>(net::CamSel::None))
    ->Arg(static_cast<int>(net::CamSel::Conv1x1))
    ->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
    net::Model m = net::init_model(model_config(net::CamSel::Conv1x1, net::NoiseType::D), 1);
    const auto& s = scene();
    const auto views = train::gather_views(s, s.frames[0], kViews);
    const train::Rect patches[] = {{0, 0, 32, 32}, {32, 32, 32, 32}};
    train::Optimizer opt(train::parameters(m), train::TrainConfig{});
    net::Rng rng(0);
    for (auto _ : state) {
        Tape tape;
        const Tensor pred = net::forward(m, views, s.grid, {net::Mode::Train, net::NoiseType::D}, rng);
        tape.backward(train::mse_loss(pred, s.frames[0].density, patches));
        opt.step(1e-4);
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

// Own main: the distro's libbenchmark_main.a carries LTO bytecode from another
// compiler release and fails to link.
BENCHMARK_MAIN();
