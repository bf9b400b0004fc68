// Microbenchmarks for the hot paths: tape primitives, flow
// forward/backward, measurement operators, and posterior sampling.

#include <benchmark/benchmark.h>

#include "flowrecon/infer.hpp"
#include "flowrecon/model.hpp"
#include "flowrecon/operators.hpp"
#include "flowrecon/phantoms.hpp"

using namespace flowrecon;

namespace {

Tensor random_image(int64_t c, int64_t n, uint64_t seed) {
    Rng rng(seed);
    return Tensor::randn({c, n, n}, rng);
}

void bench_conv2d(benchmark::State& state) {
    int64_t n = state.range(0);
    Tensor x = random_image(8, n, 1);
    Rng rng(2);
    Tensor w = Tensor::randn({8, 8, 3, 3}, rng, 0.1);
    for (auto _ : state) {
        Tape t;
        Ref out = conv2d(t, t.leaf(x), t.leaf(w));
        benchmark::DoNotOptimize(out->value.data());
    }
}
BENCHMARK(bench_conv2d)->Arg(16)->Arg(32);

void bench_flow_forward(benchmark::State& state) {
    ParameterStore params;
    MultiScaleSpec spec;
    spec.input_shape = {1, state.range(0), state.range(0)};
    spec.scales = 2;
    spec.hidden = 8;
    spec.dense_hidden = 32;
    spec.dtype = Dtype::Float64;
    FlowModel m = build_multiscale(spec, params);
    Tensor x = random_image(1, state.range(0), 3);
    for (auto _ : state) {
        Tape t;
        FlowForward f = m.forward(t, params, t.leaf(x));
        benchmark::DoNotOptimize(f.z->value.data());
    }
}
BENCHMARK(bench_flow_forward)->Arg(16)->Arg(32);

void bench_nll_backward(benchmark::State& state) {
    ParameterStore params;
    MultiScaleSpec spec;
    spec.input_shape = {1, 16, 16};
    spec.scales = 2;
    spec.hidden = 8;
    spec.dense_hidden = 32;
    spec.dtype = Dtype::Float64;
    FlowModel m = build_multiscale(spec, params);
    Tensor x = random_image(1, 16, 4);
    for (auto _ : state) {
        Tape t;
        Ref ll = m.log_likelihood_ref(t, params, t.leaf(x));
        t.backward(ll);
        params.collect_grads(t);
        params.zero_grad();
    }
}
BENCHMARK(bench_nll_backward);

void bench_flow_inverse(benchmark::State& state) {
    ParameterStore params;
    MultiScaleSpec spec;
    spec.input_shape = {1, 16, 16};
    spec.scales = 2;
    spec.hidden = 8;
    spec.dense_hidden = 32;
    spec.dtype = Dtype::Float64;
    FlowModel m = build_multiscale(spec, params);
    Rng rng(5);
    Tensor z = m.base().sample(rng);
    for (auto _ : state) {
        Tensor x = m.inverse(z, params);
        benchmark::DoNotOptimize(x.data());
    }
}
BENCHMARK(bench_flow_inverse);

void bench_radon_forward(benchmark::State& state) {
    int64_t n = state.range(0);
    RadonModel op(60, 2 * n + 1, n);
    Rng rng(6);
    Tensor x = make_phantom(PhantomKind::Ellipses, n, rng);
    for (auto _ : state) {
        Tensor y = op.forward(x);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(bench_radon_forward)->Arg(32)->Arg(64);

void bench_fbp(benchmark::State& state) {
    int64_t n = state.range(0);
    RadonModel op(60, 2 * n + 1, n);
    Rng rng(7);
    Tensor sino = op.forward(make_phantom(PhantomKind::Ellipses, n, rng));
    for (auto _ : state) {
        Tensor x = op.fbp(sino);
        benchmark::DoNotOptimize(x.data());
    }
}
BENCHMARK(bench_fbp)->Arg(32)->Arg(64);

void bench_tv_inverse(benchmark::State& state) {
    GaussianMatrixModel op(64, 256, 8, Shape{1, 16, 16});
    Rng rng(9);
    Tensor y = op.forward(random_image(1, 16, 10));
    for (auto _ : state) {
        Tensor x = op.tv_inverse(y, 0.05);
        benchmark::DoNotOptimize(x.data());
    }
}
BENCHMARK(bench_tv_inverse);

void bench_posterior_samples(benchmark::State& state) {
    ParameterStore params;
    MultiScaleSpec spec;
    spec.input_shape = {1, 16, 16};
    spec.scales = 2;
    spec.hidden = 8;
    spec.dense_hidden = 32;
    spec.dtype = Dtype::Float64;
    FlowModel m = build_multiscale(spec, params);
    for (auto _ : state) {
        PosteriorSummary s =
            posterior_samples(m, nullptr, params, nullptr, 16, 11, /*keep_samples=*/false);
        benchmark::DoNotOptimize(s.mean.data());
    }
}
BENCHMARK(bench_posterior_samples);

}  // namespace

BENCHMARK_MAIN();
