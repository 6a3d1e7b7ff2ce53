#include <benchmark/benchmark.h>

#include <random>

#include "cdiff/dag_io.hpp"
#include "cdiff/placebo.hpp"
#include "cdiff/regress.hpp"
#include "cdiff/sim_lab.hpp"

using namespace cdiff;

namespace {

Design random_design(std::mt19937_64& rng, Eigen::Index n, Eigen::Index k)
{
    std::normal_distribution<double> z;
    Design d;
    d.x.resize(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        d.x(i, 0) = 1.0;
        for (Eigen::Index j = 1; j < k; ++j) d.x(i, j) = z(rng);
    }
    for (Eigen::Index j = 0; j < k; ++j) d.names.push_back("x" + std::to_string(j));
    return d;
}

Eigen::VectorXd linear_response(std::mt19937_64& rng, const Design& d)
{
    std::normal_distribution<double> z;
    Eigen::VectorXd beta = Eigen::VectorXd::LinSpaced(d.x.cols(), 0.5, -0.5);
    Eigen::VectorXd y = d.x * beta;
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += z(rng);
    return y;
}

void BM_DSeparationAllPairs(benchmark::State& state)
{
    const CausalDag dag = unroll_template(builtin_template("combined"), static_cast<int>(state.range(0)));
    const NodeSet& z = dag.always_conditioned();
    const auto n = static_cast<std::uint32_t>(dag.size());
    for (auto _ : state) {
        int separated = 0;
        for (std::uint32_t a = 0; a < n; ++a)
            for (std::uint32_t b = a + 1; b < n; ++b) {
                if (z.count(NodeId{a}) || z.count(NodeId{b})) continue;
                separated += d_separated(dag, NodeId{a}, NodeId{b}, z);
            }
        benchmark::DoNotOptimize(separated);
    }
    state.counters["nodes"] = static_cast<double>(n);
}
BENCHMARK(BM_DSeparationAllPairs)->Arg(3)->Arg(4)->Unit(benchmark::kMicrosecond);

void BM_PlaceboEquivalence(benchmark::State& state)
{
    const DagTemplate t = builtin_template("combined");
    for (auto _ : state) benchmark::DoNotOptimize(check_placebo_equivalence(t, 4).control_sets_checked);
}
BENCHMARK(BM_PlaceboEquivalence)->Unit(benchmark::kMillisecond);

void BM_Ols(benchmark::State& state)
{
    std::mt19937_64 rng(1);
    const Design d = random_design(rng, state.range(0), 20);
    const Eigen::VectorXd y = linear_response(rng, d);
    for (auto _ : state) benchmark::DoNotOptimize(fit_ols(y, d).coef);
}
BENCHMARK(BM_Ols)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);

void BM_LogisticIrls(benchmark::State& state)
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u;
    const Design d = random_design(rng, state.range(0), 20);
    const Eigen::VectorXd eta = d.x * Eigen::VectorXd::LinSpaced(d.x.cols(), 0.3, -0.3);
    Eigen::VectorXd y(eta.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = u(rng) < inverse_logit(eta(i)) ? 1.0 : 0.0;
    for (auto _ : state) benchmark::DoNotOptimize(fit_logistic(y, d).coef);
}
BENCHMARK(BM_LogisticIrls)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);

void BM_LassoGaussian(benchmark::State& state)
{
    std::mt19937_64 rng(3);
    const Design d = random_design(rng, 2000, state.range(0) + 1);
    const Eigen::MatrixXd x = d.x.rightCols(state.range(0));
    const Eigen::VectorXd y = linear_response(rng, d);
    const double lambda = 0.05 * lasso_lambda_max(y, x, Family::Gaussian);
    for (auto _ : state) benchmark::DoNotOptimize(fit_lasso_glm(y, x, Family::Gaussian, lambda).coef);
}
BENCHMARK(BM_LassoGaussian)->Arg(10)->Arg(50)->Unit(benchmark::kMicrosecond);

void BM_LassoCv(benchmark::State& state)
{
    std::mt19937_64 rng(4);
    const Design d = random_design(rng, 2000, 11);
    const Eigen::MatrixXd x = d.x.rightCols(10);
    const Eigen::VectorXd y = linear_response(rng, d);
    for (auto _ : state) benchmark::DoNotOptimize(lasso_cv(y, x, Family::Gaussian, 5, 9).lambda_1se);
}
BENCHMARK(BM_LassoCv)->Unit(benchmark::kMillisecond);

void BM_PlaceboReplication(benchmark::State& state)
{
    const Scenario s = builtin_scenario("diffusion");
    McOptions o;
    o.replications = 100;
    o.threads = 1;
    const std::vector<LadderEntry> ladder{{"basic", basic_controls()}};
    for (auto _ : state) benchmark::DoNotOptimize(monte_carlo_placebo(s, ladder, o).front().estimates.size());
    state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_PlaceboReplication)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
