#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "cdiff/error.hpp"
#include "cdiff/estimators.hpp"
#include "cdiff/sim_lab.hpp"
#include "support/oracles.hpp"

using namespace cdiff;

namespace {

VariableMeta td(const std::string& name, bool post, int lag = 0) { return {name, true, post, lag}; }
VariableMeta ti(const std::string& name) { return {name, false, std::nullopt, 0}; }

ControlSpec controls(std::vector<VariableMeta> vars)
{
    ControlSpec c;
    c.variables = std::move(vars);
    return c;
}

PanelDataset blank_panel(std::size_t n, int periods)
{
    std::vector<std::string> units;
    for (std::size_t i = 0; i < n; ++i) units.push_back("u" + std::to_string(i));
    PanelDataset p(units, 0, periods);
    p.outcome = "Y";
    return p;
}

// Keeps the first `periods` periods of every column.
PanelDataset truncate(const PanelDataset& in, int periods)
{
    PanelDataset out(in.units(), in.t_min(), periods);
    out.outcome = in.outcome;
    out.cluster = in.cluster;
    for (const auto& name : in.column_names()) out.set_numeric(name, in.column(name).values.leftCols(periods));
    return out;
}

const EstimandSpec kGaussian{1.0, 0.0, Target::Acde, Family::Gaussian};

// Three-period DGP for the post-outcome control diagnostics. U is a time-invariant
// unit trait; x_t = lambda_t U + nu, D_t = U + eta, and
// Y_t = beta_t x_{t-1} + 0.5 D_{t-1} + gamma U + e.
PanelDataset diagnostic_panel(std::mt19937_64& rng, std::size_t n, double beta1, double beta2, double lambda0,
                              double lambda1, double gamma)
{
    std::normal_distribution<double> z;
    PanelDataset p = blank_panel(n, 3);
    Eigen::MatrixXd x(n, 3), d(n, 3), y(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = z(rng);
        const double lambda[3] = {lambda0, lambda1, lambda1};
        for (int t = 0; t < 3; ++t) {
            x(i, t) = lambda[t] * u + z(rng);
            d(i, t) = u + z(rng);
        }
        y(i, 0) = z(rng);
        y(i, 1) = beta1 * x(i, 0) + 0.5 * d(i, 0) + gamma * u + z(rng);
        y(i, 2) = beta2 * x(i, 1) + 0.5 * d(i, 1) + gamma * u + z(rng);
    }
    p.set_numeric("Y", y);
    p.set_numeric("x", x);
    p.set_numeric("D", d);
    return p;
}

double rejection(const std::vector<double>& p)
{
    double r = 0;
    for (double v : p) r += v < 0.05;
    return r / static_cast<double>(p.size());
}

} // namespace

TEST_CASE("gaussian main estimate is the treatment slope times the contrast")
{
    const SimulatedPanel sim = simulate_panel(builtin_scenario("diffusion"), 11);
    const EstimandSpec e{2.0, 0.5, Target::Acde, Family::Gaussian};
    const EstimateReport r = estimate_acde(sim.panel, sim.weights, basic_controls(), e);
    REQUIRE(r.models.size() == 1);
    CHECK(r.kind == "main");
    CHECK(r.point == doctest::Approx(r.models[0].treatment_coef * 1.5).epsilon(1e-10));
    CHECK(r.se == doctest::Approx(r.models[0].treatment_se * 1.5).epsilon(1e-10));
    CHECK(r.ci_low == doctest::Approx(r.point - 1.959963984540054 * r.se));
    CHECK(r.ci_high == doctest::Approx(r.point + 1.959963984540054 * r.se));
    CHECK(r.note.find("joint") != std::string::npos);
    CHECK_FALSE(r.p_value.has_value());
    CHECK(r.models[0].clusters == builtin_scenario("diffusion").regions);
}

TEST_CASE("equal contrast values give exactly zero with a warning")
{
    const SimulatedPanel sim = simulate_panel(builtin_scenario("diffusion"), 12);
    for (Family f : {Family::Gaussian}) {
        const EstimandSpec e{0.7, 0.7, Target::Acde, f};
        const EstimateReport r = estimate_acde(sim.panel, sim.weights, basic_controls(), e);
        CHECK(r.point == 0.0);
        CHECK(r.se == 0.0);
        CHECK_FALSE(r.warnings.empty());
    }
    Scenario logit = builtin_scenario("diffusion");
    logit.family = Family::Binomial;
    const SimulatedPanel bin = simulate_panel(logit, 12);
    const EstimateReport r = estimate_acde(bin.panel, bin.weights, basic_controls(), {0.4, 0.4, Target::Acdt, Family::Binomial});
    CHECK(r.point == 0.0);
}

TEST_CASE("binomial main estimate matches a brute-force g-computation")
{
    Scenario s = builtin_scenario("diffusion");
    s.family = Family::Binomial;
    s.intercept = -0.5;
    s.diffusion = 1.0;
    const SimulatedPanel sim = simulate_panel(s, 21);
    const EstimandSpec e{0.8, 0.2, Target::Acde, Family::Binomial};
    const EstimateReport r = estimate_acde(sim.panel, sim.weights, basic_controls(), e);

    ModelFormula f{"main", "y", 1, "D", {td("y", true), td("D", false, -1), ti("n_neighbors"), ti("w_variance")}, {}};
    const PanelDesign pd = build_designs(sim.panel, {f}).front();
    const ModelFit fit = fit_logistic(pd.y, pd.design);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < pd.design.x.rows(); ++i) {
        Eigen::RowVectorXd hi = pd.design.x.row(i), lo = hi;
        hi(1) = e.d_high;
        lo(1) = e.d_low;
        sum += inverse_logit(hi.dot(fit.coef)) - inverse_logit(lo.dot(fit.coef));
    }
    CHECK(r.point == doctest::Approx(sum / static_cast<double>(pd.design.x.rows())).epsilon(1e-10));
    CHECK(r.models[0].converged);
    CHECK(r.se > 0);

    // ACDT averages over rows with D near d_high only.
    const EstimateReport t = estimate_acde(sim.panel, sim.weights, basic_controls(), {0.8, 0.2, Target::Acdt, Family::Binomial});
    CHECK(t.target == Target::Acdt);
    CHECK(t.point != doctest::Approx(r.point).epsilon(1e-12));
}

TEST_CASE("placebo test reports a clustered Wald p-value and the joint-test note")
{
    const SimulatedPanel sim = simulate_panel(builtin_scenario("diffusion"), 13);
    const EstimateReport r = run_placebo_test(sim.panel, sim.weights, basic_controls(), kGaussian);
    REQUIRE(r.p_value.has_value());
    const double z = r.details.at("wald_z");
    CHECK(*r.p_value == doctest::Approx(cluster_two_sided_p(z, r.models[0].clusters)).epsilon(1e-12));
    CHECK(r.point == doctest::Approx(r.models[0].treatment_coef).epsilon(1e-10));
    CHECK(r.note.find(kJointTestNote) != std::string::npos);
    // The placebo set has the lagged outcome in place of Y_t and keeps the neighbor summaries.
    const auto& cols = r.models[0].columns;
    CHECK(std::find(cols.begin(), cols.end(), "y_lag1") != cols.end());
    CHECK(std::find(cols.begin(), cols.end(), "n_neighbors") != cols.end());
    CHECK(std::find(cols.begin(), cols.end(), "y") == cols.end());
}

TEST_CASE("cluster p-values use Student t with G - 1 degrees of freedom")
{
    CHECK(cluster_two_sided_p(0.0, 40) == doctest::Approx(1.0));
    CHECK(cluster_two_sided_p(2.0226909117347285, 40) == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(cluster_two_sided_p(1.959963984540054, 1000000) == doctest::Approx(0.05).epsilon(1e-5));
    CHECK(normal_two_sided_p(1.959963984540054) == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("pure-noise outcomes give a placebo estimate near zero for any control set")
{
    Scenario s = builtin_scenario("null_noise");
    s.n_units = 2000;
    s.regions = 200;
    const SimulatedPanel sim = simulate_panel(s, 14);
    for (const ControlSpec& c : {basic_controls(), difference_controls(), controls({ti("n_neighbors")})}) {
        const EstimateReport r = run_placebo_test(sim.panel, sim.weights, c, kGaussian);
        CHECK(std::abs(r.point) < 4.5 * r.se);
        CHECK(std::abs(r.point) < 0.1);
    }
}

TEST_CASE("bias-corrected estimate equals the coefficient difference for linear fits")
{
    const SimulatedPanel sim = simulate_panel(builtin_scenario("homophily"), 15);
    const EstimandSpec e{1.5, -0.5, Target::Acdt, Family::Gaussian};
    const EstimateReport r = estimate_bias_corrected(sim.panel, sim.weights, basic_controls(), e);
    REQUIRE(r.models.size() == 2);
    CHECK(r.kind == "bias_corrected");
    CHECK(r.target == Target::Acdt);
    const double beta = r.models[0].treatment_coef, delta = r.models[1].treatment_coef;
    CHECK(r.point == doctest::Approx((beta - delta) * 2.0).epsilon(1e-10));
    CHECK(r.details.at("main_point") - r.details.at("placebo_point") == doctest::Approx(r.point).epsilon(1e-12));
    const double ms = r.details.at("main_se"), ps = r.details.at("placebo_se");
    CHECK(r.se * r.se == doctest::Approx(ms * ms + ps * ps).epsilon(1e-10));
    // Same layout; only the post-outcome column is read one period earlier.
    REQUIRE(r.models[0].columns.size() == r.models[1].columns.size());
    for (std::size_t j = 0; j < r.models[0].columns.size(); ++j) {
        const std::string& a = r.models[0].columns[j];
        CHECK((a == r.models[1].columns[j] || r.models[1].columns[j] == a + "_lag1"));
    }
    CHECK(r.models[0].rows == r.models[1].rows);
}

TEST_CASE("without post-outcome controls the bias correction equals difference-in-differences")
{
    const SimulatedPanel sim = simulate_panel(builtin_scenario("bias_correction"), 16);
    const ControlSpec c = controls({td("D", false, -1), ti("n_neighbors"), ti("w_variance")});
    for (int periods : {3, 10}) {
        const PanelDataset p = truncate(sim.panel, periods);

        // Rows k with D_{k-2} available and Y_{k+1} observed.
        std::vector<double> yn, y0, d;
        std::vector<std::array<double, 4>> cov;
        const auto& Y = p.column("y").values;
        const auto& D = p.column("D").values;
        for (std::size_t i = 0; i < p.n_units(); ++i) {
            for (int k = 2; k + 1 < periods; ++k) {
                yn.push_back(Y(i, k + 1));
                y0.push_back(Y(i, k));
                d.push_back(D(i, k));
                cov.push_back({D(i, k - 1), D(i, k - 2), p.value("n_neighbors", i, k), p.value("w_variance", i, k)});
            }
        }
        if (yn.empty()) {
            // Three periods leave one treatment period, too few for D_{t-2}.
            CHECK_THROWS_AS(estimate_bias_corrected(p, sim.weights, c, kGaussian), DataError);
            const ControlSpec c1 = controls({ti("n_neighbors"), ti("w_variance")});
            const EstimateReport r1 = estimate_bias_corrected(p, sim.weights, c1, kGaussian);
            Eigen::VectorXd a(static_cast<Eigen::Index>(p.n_units())), b(a.size()), dd(a.size());
            Eigen::MatrixXd cv(a.size(), 3);
            for (std::size_t i = 0; i < p.n_units(); ++i) {
                const auto k = static_cast<Eigen::Index>(i);
                a(k) = Y(i, 2);
                b(k) = Y(i, 1);
                dd(k) = D(i, 1);
                cv.row(k) << D(i, 0), p.value("n_neighbors", i, 1), p.value("w_variance", i, 1);
            }
            CHECK(r1.point == doctest::Approx(oracle::did_slope(a, b, dd, cv)).epsilon(1e-10));
            continue;
        }
        const EstimateReport r = estimate_bias_corrected(p, sim.weights, c, kGaussian);
        const auto m = static_cast<Eigen::Index>(yn.size());
        Eigen::MatrixXd cv(m, 4);
        for (Eigen::Index k = 0; k < m; ++k)
            for (int j = 0; j < 4; ++j) cv(k, j) = cov[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
        const double did = oracle::did_slope(Eigen::Map<Eigen::VectorXd>(yn.data(), m),
                                             Eigen::Map<Eigen::VectorXd>(y0.data(), m),
                                             Eigen::Map<Eigen::VectorXd>(d.data(), m), cv);
        CHECK(r.point == doctest::Approx(did).epsilon(1e-10));
    }
}

TEST_CASE("bias correction when a shifted post-outcome member is also a base member")
{
    // Y_t is post-outcome and Y_{t-1} is in the base set, so both placebo
    // candidates for Y_{t-1} collapse into one column.
    const SimulatedPanel sim = simulate_panel(builtin_scenario("homophily"), 21);
    const ControlSpec c = controls({td("Y", true, 0), td("Y", false, -1), td("D", false, -1)});
    const EstimandSpec e{1.0, 0.0, Target::Acdt, Family::Gaussian};
    const EstimateReport r = estimate_bias_corrected(sim.panel, sim.weights, c, e);
    REQUIRE(r.models.size() == 2);
    const auto& main_cols = r.models[0].columns;
    const auto& plac_cols = r.models[1].columns;
    CHECK(main_cols == std::vector<std::string>{"(Intercept)", "D", "y", "y_lag1", "y_lag2", "D_lag1", "D_lag2"});
    CHECK(plac_cols == std::vector<std::string>{"(Intercept)", "D", "y_lag1", "y_lag2", "D_lag1", "D_lag2"});
    CHECK(r.point == doctest::Approx(r.models[0].treatment_coef - r.models[1].treatment_coef).epsilon(1e-10));

    Scenario binary = builtin_scenario("homophily");
    binary.family = Family::Binomial;
    binary.intercept = -1.0;
    const SimulatedPanel bsim = simulate_panel(binary, 22);
    const EstimateReport b = estimate_bias_corrected(bsim.panel, bsim.weights, c, {1.0, 0.0, Target::Acdt, Family::Binomial});
    CHECK(std::isfinite(b.point));
    CHECK(b.se > 0.0);
}

TEST_CASE("dummy levels absent from the estimation sample are dropped")
{
    // One level per period: the first period's level (the reference) and the
    // last period's level never enter the main model once lags and leads are
    // aligned.
    const SimulatedPanel sim = simulate_panel(builtin_scenario("diffusion"), 23);
    PanelDataset p = truncate(sim.panel, 5);
    PanelColumn period;
    period.levels = {"p0", "p1", "p2", "p3", "p4"};
    period.values.resize(static_cast<Eigen::Index>(p.n_units()), 5);
    for (int k = 0; k < 5; ++k) period.values.col(k).setConstant(k);
    p.set_column("period", period);

    const ControlSpec c = controls({td("Y", true, 0), td("D", false, -1), ti("period")});
    const EstimateReport r = estimate_acde(p, sim.weights, c, kGaussian);
    // Treatment periods 1..3; p1 becomes the reference.
    const auto& cols = r.models[0].columns;
    CHECK(std::count(cols.begin(), cols.end(), "period=p2") == 1);
    CHECK(std::count(cols.begin(), cols.end(), "period=p3") == 1);
    CHECK(std::count(cols.begin(), cols.end(), "period=p1") == 0);
    CHECK(std::count(cols.begin(), cols.end(), "period=p4") == 0);
    const auto dropped = std::count_if(r.warnings.begin(), r.warnings.end(),
                                       [](const std::string& w) { return w.find("categorical level dropped") != std::string::npos; });
    CHECK(dropped == 2);
}

TEST_CASE("empty sample after lag alignment is a data error")
{
    const SimulatedPanel sim = simulate_panel(builtin_scenario("diffusion"), 17);
    const PanelDataset p = truncate(sim.panel, 2);
    CHECK_THROWS_AS(run_placebo_test(p, sim.weights, basic_controls(), kGaussian), DataError);
    CHECK_THROWS_AS(estimate_acde(sim.panel, sim.weights, controls({ti("missing_column")}), kGaussian), ConfigError);
}

TEST_CASE("treated weights: exact stratum for discrete D, Silverman kernel otherwise")
{
    Eigen::VectorXd d(6);
    d << 0, 1, 1, 0, 2, 1;
    auto [w, how] = treated_weights(d, 1.0);
    CHECK(how == "stratum");
    CHECK(w.sum() == doctest::Approx(3.0));
    CHECK(w(1) == 1.0);
    CHECK(w(0) == 0.0);

    std::mt19937_64 rng(3);
    std::normal_distribution<double> z;
    Eigen::VectorXd c(500);
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = z(rng);
    auto [k, desc] = treated_weights(c, 0.5);
    CHECK(desc.rfind("kernel:h=", 0) == 0);
    const double mean = c.mean();
    const double sd = std::sqrt((c.array() - mean).square().sum() / static_cast<double>(c.size() - 1));
    std::vector<double> s(c.data(), c.data() + c.size());
    std::sort(s.begin(), s.end());
    auto q = [&](double p) {
        const double pos = p * static_cast<double>(s.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        return s[lo] + (pos - static_cast<double>(lo)) * (s[std::min(lo + 1, s.size() - 1)] - s[lo]);
    };
    const double h = 0.9 * std::min(sd, (q(0.75) - q(0.25)) / 1.34) * std::pow(500.0, -0.2);
    CHECK(std::stod(desc.substr(9)) == doctest::Approx(h).epsilon(1e-5));
    CHECK(k(0) / k(1) == doctest::Approx(std::exp(-0.5 * (std::pow((c(0) - 0.5) / h, 2) - std::pow((c(1) - 0.5) / h, 2)))).epsilon(1e-9));
}

TEST_CASE("conditional ACDE: a constant moderator reproduces the unconditional estimates")
{
    SimulatedPanel sim = simulate_panel(builtin_scenario("diffusion"), 18);
    sim.panel.set_numeric("m", Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(sim.panel.n_units()), sim.panel.n_times(), 0.2));
    const ConditionalResult c = estimate_conditional_acde(sim.panel, sim.weights, basic_controls(), kGaussian, {"m", 0.09});
    const EstimateReport main = estimate_acde(sim.panel, sim.weights, basic_controls(), kGaussian);
    const EstimateReport placebo = run_placebo_test(sim.panel, sim.weights, basic_controls(), kGaussian);
    REQUIRE(c.high.size() == 3);
    REQUIRE(c.low.size() == 3);
    CHECK_FALSE(c.warnings.empty());
    for (const auto* stratum : {&c.high, &c.low}) {
        CHECK((*stratum)[0].point == doctest::Approx(placebo.point).epsilon(1e-12));
        CHECK((*stratum)[1].point == doctest::Approx(main.point).epsilon(1e-12));
    }
    CHECK(c.high[0].term == "high");
    CHECK(c.low[2].term == "low");
}

TEST_CASE("conditional ACDE recovers stratum-specific effects")
{
    // Y_{t+1} = 0.3 Y_t + tau_H 1{m_i >= 0.09} D_t + e, with exogenous D.
    std::mt19937_64 rng(19);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.0, 0.18);
    const double tau_h = 0.6;
    std::vector<double> hi, lo, hi_se, lo_se;
    for (int rep = 0; rep < 60; ++rep) {
        const std::size_t n = 400;
        PanelDataset p = blank_panel(n, 5);
        Eigen::MatrixXd y(n, 5), d(n, 5), m(n, 5);
        for (std::size_t i = 0; i < n; ++i) {
            const double mi = u(rng);
            double yt = z(rng);
            for (int t = 0; t < 5; ++t) {
                m(i, t) = mi;
                d(i, t) = z(rng);
                y(i, t) = yt;
                yt = 0.3 * yt + (mi >= 0.09 ? tau_h : 0.0) * d(i, t) + z(rng);
            }
        }
        p.set_numeric("Y", y);
        p.set_numeric("D", d);
        p.set_numeric("m", m);
        const ConditionalResult c =
            estimate_conditional_acde(p, WeightMatrix{}, controls({td("Y", true)}), kGaussian, {"m", 0.09});
        hi.push_back(c.high[1].point);
        lo.push_back(c.low[1].point);
        hi_se.push_back(c.high[1].se);
        lo_se.push_back(c.low[1].se);
        if (rep == 0) {
            CHECK(c.high[0].p_value.has_value());
            CHECK(c.high[2].kind == "bias_corrected");
            const double max_m = m.maxCoeff();
            CHECK_THROWS_AS(estimate_conditional_acde(p, WeightMatrix{}, controls({td("Y", true)}), kGaussian,
                                                      {"m", max_m + 1.0}),
                            DataError);
        }
    }
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
    auto sd = [&](const std::vector<double>& v) {
        const double mu = mean(v);
        double ss = 0;
        for (double x : v) ss += (x - mu) * (x - mu);
        return std::sqrt(ss / static_cast<double>(v.size() - 1));
    };
    const double mcse_hi = sd(hi) / std::sqrt(60.0), mcse_lo = sd(lo) / std::sqrt(60.0);
    CHECK(std::abs(mean(hi) - tau_h) < 3.0 * mcse_hi);
    CHECK(std::abs(mean(lo)) < 3.0 * mcse_lo);
    // Analytic standard errors track the Monte Carlo spread.
    CHECK(mean(hi_se) == doctest::Approx(sd(hi)).epsilon(0.3));
    CHECK(mean(lo_se) == doctest::Approx(sd(lo)).epsilon(0.3));
}

TEST_CASE("post-outcome diagnostics: nothing to diagnose without post-outcome controls")
{
    const SimulatedPanel sim = simulate_panel(builtin_scenario("diffusion"), 20);
    const DiagnosticResult d = diagnose_assumption3(sim.panel, sim.weights, difference_controls(), kGaussian);
    CHECK(d.reports.empty());
    CHECK_FALSE(d.note.empty());
}

TEST_CASE("post-outcome diagnostics separate effect and imbalance drift")
{
    const ControlSpec c = controls({td("x", true)});
    auto run = [&](double b1, double b2, double l0, double l1, double g, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::vector<double> effect_p, imbalance_p, effect, imbalance;
        for (int rep = 0; rep < 100; ++rep) {
            const PanelDataset p = diagnostic_panel(rng, 400, b1, b2, l0, l1, g);
            const DiagnosticResult d = diagnose_assumption3(p, WeightMatrix{}, c, kGaussian);
            REQUIRE(d.reports.size() == 2);
            CHECK(d.reports[0].term == "effect:x");
            CHECK(d.reports[1].term == "imbalance:x");
            effect.push_back(d.reports[0].point);
            imbalance.push_back(d.reports[1].point);
            effect_p.push_back(*d.reports[0].p_value);
            imbalance_p.push_back(*d.reports[1].p_value);
        }
        return std::tuple{rejection(effect_p), rejection(imbalance_p),
                          std::accumulate(effect.begin(), effect.end(), 0.0) / 100.0,
                          std::accumulate(imbalance.begin(), imbalance.end(), 0.0) / 100.0};
    };
    SUBCASE("time-invariant effects and imbalance")
    {
        const auto [re, ri, me, mi] = run(0.4, 0.4, 0.8, 0.8, 0.5, 31);
        CHECK(re < 0.12);
        CHECK(ri < 0.12);
        CHECK(std::abs(me) < 0.03);
        CHECK(std::abs(mi) < 0.03);
    }
    SUBCASE("effect of x doubles between t and t+1")
    {
        const auto [re, ri, me, mi] = run(0.4, 0.8, 0.8, 0.8, 0.5, 32);
        CHECK(re > 0.8);
        CHECK(ri < 0.12);
        CHECK(me == doctest::Approx(0.4).epsilon(0.15));
    }
    SUBCASE("imbalance of x drifts, effect stable")
    {
        const auto [re, ri, me, mi] = run(0.4, 0.4, 0.3, 1.2, 0.0, 33);
        CHECK(ri > 0.8);
        CHECK(re < 0.12);
    }
}
