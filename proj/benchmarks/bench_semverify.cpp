#include <semverify/boundprop.hpp>
#include <semverify/compose.hpp>
#include <semverify/eval.hpp>
#include <semverify/falsify.hpp>
#include <semverify/fixtures.hpp>
#include <semverify/noisebounds.hpp>
#include <semverify/verify.hpp>

#include <benchmark/benchmark.h>

#include <random>

using namespace semverify;

namespace {

NetworkGraph mlp(const std::vector<std::size_t> &widths, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> w(0.0f, 1.0f);
    GraphBuilder b;
    auto x = b.input("x", {widths[0]});
    for (std::size_t l = 1; l < widths.size(); ++l) {
        const float scale = 1.0f / std::sqrt(static_cast<float>(widths[l - 1]));
        std::vector<float> weights(widths[l] * widths[l - 1]), bias(widths[l]);
        for (auto &v : weights)
            v = scale * w(rng);
        for (auto &v : bias)
            v = 0.1f * w(rng);
        x = b.affine(x, widths[l], std::move(weights), std::move(bias));
        if (l + 1 < widths.size())
            x = b.relu(x);
    }
    return b.build(x);
}

PipelineProperty fixture_property(const std::string &name, std::size_t index = 0) {
    auto f = build_fixture(name);
    VScanConfig cfg;
    cfg.timeout_s = 30.0;
    return run_vscan(f.models.view(), f.properties.at(index).spec, cfg).property;
}

void BM_Forward(benchmark::State &state) {
    const auto width = static_cast<std::size_t>(state.range(0));
    auto g = mlp({16, width, width, 16}, 1);
    std::vector<float> x(16, 0.25f);
    for (auto _ : state)
        benchmark::DoNotOptimize(forward_flat(g, x));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(128)->Arg(512);

void BM_Backward(benchmark::State &state) {
    auto g = mlp({16, 32, 32, 16}, 2);
    std::vector<float> x(16, 0.25f);
    std::vector<double> cot(16, 1.0);
    for (auto _ : state)
        benchmark::DoNotOptimize(backward_flat(g, x, cot));
}
BENCHMARK(BM_Backward);

void BM_LinearBounds(benchmark::State &state) {
    auto g = mlp({16, 32, 32, 16}, 3);
    const Box box = Box::uniform(16, -0.1, 0.1);
    const PhaseAssignment phases(g);
    for (auto _ : state)
        benchmark::DoNotOptimize(linear_bounds(g, box, phases));
}
BENCHMARK(BM_LinearBounds);

void BM_NoiseBoundsSmall(benchmark::State &state) {
    auto g = mlp({2, 4, 2}, 4);
    const Box box = Box::uniform(2, -1.0, 1.0);
    NoiseBoundsOptions opt;
    opt.tol = 1e-6;
    for (auto _ : state)
        benchmark::DoNotOptimize(compute_noise_bounds(g, box, PowerSpec::from_rho(100.0), opt));
}
BENCHMARK(BM_NoiseBoundsSmall);

void BM_NoiseBoundsFixture(benchmark::State &state) {
    auto f = build_fixture("robust-4d");
    const auto &spec = f.properties[0].spec;
    const auto &gen = f.models.generator.graph;
    const Box box = spec.trigger_box(gen.input_dim());
    const auto power = spec.power(f.models.view().latent_power);
    for (auto _ : state)
        benchmark::DoNotOptimize(compute_noise_bounds(gen, box, power));
}
BENCHMARK(BM_NoiseBoundsFixture)->Unit(benchmark::kMillisecond);

void BM_PgdAttack(benchmark::State &state) {
    auto prop = fixture_property("planted-sat-4d");
    for (auto _ : state)
        benchmark::DoNotOptimize(pgd_attack(prop, AttackConfig{}));
}
BENCHMARK(BM_PgdAttack)->Unit(benchmark::kMillisecond);

void BM_VerifyRobust(benchmark::State &state) {
    auto prop = fixture_property("robust-4d");
    for (auto _ : state)
        benchmark::DoNotOptimize(verify(prop, VerifyBudget{}));
}
BENCHMARK(BM_VerifyRobust)->Unit(benchmark::kMillisecond);

void BM_RunVscanRhoTrend(benchmark::State &state) {
    auto f = build_fixture("rho-trend");
    const auto models = f.models.view();
    VScanConfig cfg;
    cfg.timeout_s = 30.0;
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(run_vscan(models, f.properties[i].spec, cfg));
        i = (i + 1) % f.properties.size();
    }
}
BENCHMARK(BM_RunVscanRhoTrend)->Unit(benchmark::kMillisecond);

void BM_ModelRoundTrip(benchmark::State &state) {
    auto g = mlp({16, 128, 128, 16}, 5);
    ModelMetadata meta;
    meta.role = ModelRole::Generator;
    meta.latent_dim = 16;
    for (auto _ : state) {
        auto manifest = model_manifest_json(g, meta);
        benchmark::DoNotOptimize(parse_model(manifest, model_blob(g)));
    }
}
BENCHMARK(BM_ModelRoundTrip)->Unit(benchmark::kMicrosecond);

} // namespace

BENCHMARK_MAIN();
