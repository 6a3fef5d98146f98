#include <benchmark/benchmark.h>

#include "attnpca/attention.hpp"
#include "attnpca/covariance.hpp"
#include "attnpca/linalg.hpp"
#include "attnpca/optim.hpp"
#include "attnpca/risk.hpp"
#include "attnpca/rng.hpp"

namespace {

using namespace attnpca;

void BM_NormalDraws(benchmark::State& state) {
    RngStream rng(1, 2);
    double sink = 0.0;
    for (auto _ : state) {
        for (int i = 0; i < 1024; ++i) sink += rng.normal();
        benchmark::DoNotOptimize(sink);
    }
    state.SetItemsProcessed(state.iterations() * 1024);
}
BENCHMARK(BM_NormalDraws);

void BM_JacobiEigendecompose(benchmark::State& state) {
    const std::size_t d = static_cast<std::size_t>(state.range(0));
    const CovarianceModel cov = build_experiment_covariance(d, RngStream(3, 0));
    for (auto _ : state) {
        auto eig = jacobi_eigendecompose(cov.matrix());
        benchmark::DoNotOptimize(eig.eigenvalues.data());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_JacobiEigendecompose)->Arg(5)->Arg(20)->Arg(50)->Arg(100)->Complexity();

void BM_SamplePrompt(benchmark::State& state) {
    const std::size_t L = static_cast<std::size_t>(state.range(0));
    const CovarianceModel cov = build_experiment_covariance(5, RngStream(3, 0));
    RngStream rng(7, 1);
    std::vector<double> tokens(L * 5);
    for (auto _ : state) {
        sample_tokens_into(cov, L, rng, tokens.data());
        benchmark::DoNotOptimize(tokens.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SamplePrompt)->Arg(10)->Arg(100)->Arg(1000);

void BM_SoftmaxAttention(benchmark::State& state) {
    const std::size_t L = static_cast<std::size_t>(state.range(0));
    const CovarianceModel cov = build_experiment_covariance(5, RngStream(3, 0));
    const Prompt prompt = sample_prompt(cov, L, RngStream(7, 2));
    const AttnParam param(sample_unit_sphere(5, RngStream(7, 3)), 0.1);
    for (auto _ : state) {
        auto out = softmax_attention(prompt, param, 0);
        benchmark::DoNotOptimize(out.value.data());
    }
}
BENCHMARK(BM_SoftmaxAttention)->Arg(10)->Arg(100)->Arg(1000);

void BM_SoftPromptGradient(benchmark::State& state) {
    const std::size_t L = static_cast<std::size_t>(state.range(0));
    const CovarianceModel cov = build_experiment_covariance(5, RngStream(3, 0));
    const Prompt prompt = sample_prompt(cov, L, RngStream(7, 2));
    const AttnParam param(sample_unit_sphere(5, RngStream(7, 3)), 0.1);
    Vec grad(5);
    for (auto _ : state) {
        const double loss = soft_prompt_loss_grad(prompt, param, grad);
        benchmark::DoNotOptimize(loss);
        benchmark::DoNotOptimize(grad.data());
    }
}
BENCHMARK(BM_SoftPromptGradient)->Arg(10)->Arg(100)->Arg(1000);

void BM_RiskSoftInfGradient(benchmark::State& state) {
    const std::size_t d = static_cast<std::size_t>(state.range(0));
    const CovarianceModel cov = build_experiment_covariance(d, RngStream(3, 0));
    const AttnParam param(sample_unit_sphere(d, RngStream(7, 3)), 0.1);
    for (auto _ : state) {
        auto eval = risk_soft_inf(param, cov);
        benchmark::DoNotOptimize(eval.value);
    }
}
BENCHMARK(BM_RiskSoftInfGradient)->Arg(5)->Arg(20)->Arg(100);

}  // namespace

BENCHMARK_MAIN();
