#include <benchmark/benchmark.h>

#include <random>

#include "covexplain/baselines.hpp"
#include "covexplain/explain.hpp"
#include "covexplain/model.hpp"
#include "covexplain/random.hpp"

using namespace covexplain;

namespace {

embed::FeatureMatrix random_rows(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<float> nd;
    embed::FeatureMatrix x(rows, cols);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(gen);
    return x;
}

void BM_HashEmbed(benchmark::State& state) {
    const std::string text = "finally got my second dose at the county clinic this morning #covid19 https://t.co/x1";
    const auto dim = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(embed::hash_embed(text, dim, 7));
}
BENCHMARK(BM_HashEmbed)->Arg(256)->Arg(1024);

void BM_ForwardBackward(benchmark::State& state) {
    const auto hidden = static_cast<std::size_t>(state.range(0));
    const auto params = model::init_params(512, hidden, 1);
    const auto x = random_rows(256, 512, 2);
    std::vector<corpus::StanceLabel> y(256);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 2 ? corpus::StanceLabel::Pro : corpus::StanceLabel::Anti;
    const auto targets = model::one_hot<float>(y);
    model::Architecture arch;
    Rng rng(3);
    for (auto _ : state) {
        model::ForwardTape<float> tape;
        const auto probs = model::forward(params, x, model::Mode::Train, arch, &rng, &tape);
        benchmark::DoNotOptimize(model::backward(params, tape, targets, arch));
        benchmark::DoNotOptimize(probs.data());
    }
}
BENCHMARK(BM_ForwardBackward)->Arg(128)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_ShapleyExact(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    explain::CoalitionGame game;
    game.n_players = n;
    game.value = [](const explain::Coalition& c) {
        double s = 0;
        for (std::size_t i = 0; i < c.size(); ++i) s += c[i] ? 1.0 / double(i + 1) : 0.0;
        return s * s;
    };
    for (auto _ : state) benchmark::DoNotOptimize(explain::shapley_exact(game));
}
BENCHMARK(BM_ShapleyExact)->Arg(6)->Arg(12)->Unit(benchmark::kMicrosecond);

void BM_SvmSmo(benchmark::State& state) {
    const auto n = state.range(0);
    const auto xf = random_rows(n, 8, 4);
    const baselines::Matrix x = xf.cast<double>();
    std::vector<corpus::StanceLabel> y(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        y[static_cast<std::size_t>(i)] = x(i, 0) + 0.5 * x(i, 1) > 0 ? corpus::StanceLabel::Pro : corpus::StanceLabel::Anti;
    for (auto _ : state) benchmark::DoNotOptimize(baselines::fit_svm_rbf(x, y));
}
BENCHMARK(BM_SvmSmo)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
