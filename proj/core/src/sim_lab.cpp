#include "cdiff/sim_lab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include "cdiff/dag_io.hpp"
#include "cdiff/error.hpp"

namespace cdiff {

namespace {

bool has_variable(const DagTemplate& t, const std::string& name)
{
    return std::any_of(t.variables.begin(), t.variables.end(), [&](const auto& v) { return v.name == name; });
}

// Graph-level placebo equivalence check, run once per template.
void check_template(const DagTemplate& tmpl)
{
    static std::mutex mutex;
    static std::map<std::string, std::string> verdicts;  // serialized template -> error ("" = ok)
    const std::string key = template_to_json(tmpl).dump();
    {
        std::lock_guard lock(mutex);
        auto it = verdicts.find(key);
        if (it != verdicts.end()) {
            if (!it->second.empty()) throw ConfigError(it->second);
            return;
        }
    }
    std::string verdict;
    const CausalDag dag = unroll_template(tmpl, 3);
    const StationarityReport st = is_stationary(dag);
    if (!st.stationary) {
        verdict = "scenario template '" + tmpl.name + "' is not stationary";
    } else {
        const EquivalenceReport eq = check_placebo_equivalence(tmpl, 3);
        if (!eq.counterexamples.empty()) {
            verdict = "scenario template '" + tmpl.name + "' fails the placebo equivalence check with control " +
                      eq.counterexamples.front().control;
        }
    }
    std::lock_guard lock(mutex);
    verdicts[key] = verdict;
    if (!verdict.empty()) throw ConfigError(verdict);
}

double num(const nlohmann::json& j, const char* key, double fallback)
{
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) throw ConfigError(std::string("scenario: '") + key + "' must be a number");
    return j.at(key).get<double>();
}

std::string unit_name(std::size_t i, std::size_t n)
{
    const int width = static_cast<int>(std::to_string(n).size());
    char buf[32];
    std::snprintf(buf, sizeof buf, "u%0*zu", width, i + 1);
    return buf;
}

VariableMeta td(const std::string& name, bool post, int lag) { return VariableMeta{name, true, post, lag}; }
VariableMeta ti(const std::string& name) { return VariableMeta{name, false, std::nullopt, 0}; }

} // namespace

void Scenario::validate() const
{
    if (!(noise_sd > 0)) throw ConfigError("scenario '" + name + "': noise_sd must be positive");
    if (n_units < 10) throw ConfigError("scenario '" + name + "': needs at least 10 units");
    if (periods < 4) throw ConfigError("scenario '" + name + "': needs at least 4 observed periods");
    if (burn_in < 0) throw ConfigError("scenario '" + name + "': burn_in must be non-negative");
    if (!(std::abs(context_persistence) < 1)) throw ConfigError("scenario '" + name + "': |context_persistence| must be < 1");
    if (!(context_smoothing >= 0)) throw ConfigError("scenario '" + name + "': context_smoothing must be non-negative");
    if (regions < 2 || n_units < 2 * regions) throw ConfigError("scenario '" + name + "': needs at least 2 regions of at least 2 units");
    if (!(homophily_caliper > 0)) throw ConfigError("scenario '" + name + "': homophily caliper must be positive");
    if (dag.outcome != "Y" || !has_variable(dag, "Y")) throw ConfigError("scenario '" + name + "': template outcome must be Y");
    if (context_effect != 0.0 && !has_variable(dag, "G")) {
        throw ConfigError("scenario '" + name + "': context_effect needs a template with G");
    }
    if ((unit_effect != 0.0 || network == NetworkKind::Homophily) && !has_variable(dag, "U")) {
        throw ConfigError("scenario '" + name + "': unit effects and homophily ties need a template with U");
    }
    check_template(dag);
}

Scenario scenario_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw ConfigError("scenario must be a JSON object");
    Scenario s;
    s.name = j.value("name", std::string("scenario"));
    if (!j.contains("template")) throw ConfigError("scenario '" + s.name + "' has no template");
    const auto& t = j.at("template");
    s.dag = t.is_string() ? builtin_template(t.get<std::string>()) : template_from_json(t);
    s.family = parse_family(j.value("family", std::string("gaussian")));
    s.n_units = static_cast<std::size_t>(num(j, "n_units", static_cast<double>(s.n_units)));
    s.periods = static_cast<int>(num(j, "periods", s.periods));
    s.burn_in = static_cast<int>(num(j, "burn_in", s.burn_in));
    const nlohmann::json p = j.value("parameters", nlohmann::json::object());
    s.intercept = num(p, "intercept", s.intercept);
    s.autoregression = num(p, "autoregression", s.autoregression);
    s.diffusion = num(p, "diffusion", s.diffusion);
    s.context_effect = num(p, "context_effect", s.context_effect);
    s.context_persistence = num(p, "context_persistence", s.context_persistence);
    s.context_smoothing = num(p, "context_smoothing", s.context_smoothing);
    s.unit_effect = num(p, "unit_effect", s.unit_effect);
    s.unit_effect_growth = num(p, "unit_effect_growth", s.unit_effect_growth);
    s.noise_sd = num(p, "noise_sd", s.noise_sd);
    const nlohmann::json net = j.value("network", nlohmann::json::object());
    const std::string kind = net.value("kind", std::string("inverse_distance"));
    if (kind == "inverse_distance") {
        s.network = NetworkKind::InverseDistance;
    } else if (kind == "homophily") {
        s.network = NetworkKind::Homophily;
    } else {
        throw ConfigError("scenario '" + s.name + "': unknown network kind '" + kind + "'");
    }
    s.regions = static_cast<std::size_t>(num(net, "regions", static_cast<double>(s.regions)));
    s.homophily_caliper = num(net, "caliper", s.homophily_caliper);
    const nlohmann::json c = j.value("contrast", nlohmann::json::object());
    s.d_high = num(c, "d_high", s.d_high);
    s.d_low = num(c, "d_low", s.d_low);
    s.validate();
    return s;
}

nlohmann::json scenario_to_json(const Scenario& s)
{
    return {{"name", s.name},
            {"template", template_to_json(s.dag)},
            {"family", to_string(s.family)},
            {"n_units", s.n_units},
            {"periods", s.periods},
            {"burn_in", s.burn_in},
            {"parameters",
             {{"intercept", s.intercept},
              {"autoregression", s.autoregression},
              {"diffusion", s.diffusion},
              {"context_effect", s.context_effect},
              {"context_persistence", s.context_persistence},
              {"context_smoothing", s.context_smoothing},
              {"unit_effect", s.unit_effect},
              {"unit_effect_growth", s.unit_effect_growth},
              {"noise_sd", s.noise_sd}}},
            {"network",
             {{"kind", s.network == NetworkKind::Homophily ? "homophily" : "inverse_distance"},
              {"regions", s.regions},
              {"caliper", s.homophily_caliper}}},
            {"contrast", {{"d_high", s.d_high}, {"d_low", s.d_low}}}};
}

Scenario load_scenario(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return scenario_from_json(j);
}

std::vector<std::string> builtin_scenario_names()
{
    return {"diffusion", "contextual", "homophily", "both", "bias_correction", "bias_violation", "null_noise"};
}

Scenario builtin_scenario(const std::string& name)
{
    Scenario s;
    s.name = name;
    if (name == "diffusion") {
        s.dag = builtin_template("diffusion");
        // Smaller regions: with ~10 units per region the spatial lag regressor
        // shifts the null z statistic down by ~0.1 and CR1 with 40 clusters runs
        // ~5% small, enough for the KS check at 2000 replications to notice.
        s.regions = 80;
    } else if (name == "contextual") {
        s.dag = builtin_template("contextual");
        s.context_effect = 0.3;  // calibrated: placebo power ~0.9 at n = 400 with basic controls
    } else if (name == "homophily") {
        s.dag = builtin_template("homophily");
        s.network = NetworkKind::Homophily;
        s.unit_effect = 0.5;  // calibrated: placebo power ~0.95 at n = 400 with basic controls
    } else if (name == "both") {
        s.dag = builtin_template("combined");
        s.network = NetworkKind::Homophily;
        s.context_effect = 0.3;
        s.unit_effect = 0.5;
    } else if (name == "bias_correction" || name == "bias_violation") {
        s.dag = builtin_template("homophily");
        s.network = NetworkKind::Homophily;
        s.autoregression = 0.0;
        s.unit_effect = 1.0;
        s.unit_effect_growth = name == "bias_violation" ? 1.0 : 0.0;
    } else if (name == "null_noise") {
        s.dag = builtin_template("diffusion");
        s.autoregression = 0.0;
        s.diffusion = 0.0;
    } else {
        throw ConfigError("unknown scenario '" + name + "'");
    }
    s.validate();
    return s;
}

std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t rep)
{
    // SplitMix64 finalizer over (seed, counter).
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (rep + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

SimulatedPanel simulate_panel(const Scenario& s, std::uint64_t seed)
{
    s.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform;

    const std::size_t n = s.n_units;
    const auto ni = static_cast<Eigen::Index>(n);
    std::vector<std::string> names;
    // Region r occupies cell r of a square grid on the unit square.
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(s.regions))));
    const double cell = 1.0 / static_cast<double>(side);
    Eigen::MatrixXd xy(ni, 2);
    Eigen::VectorXd u(ni), region(ni);
    std::uniform_int_distribution<std::size_t> pick_region(0, s.regions - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        // Two units per region guaranteed, the rest placed at random.
        const std::size_t r = i < 2 * s.regions ? i % s.regions : pick_region(rng);
        names.push_back(unit_name(i, n));
        region(k) = static_cast<double>(r);
        xy(k, 0) = cell * (static_cast<double>(r % side) + uniform(rng));
        xy(k, 1) = cell * (static_cast<double>(r / side) + uniform(rng));
        u(k) = std::sqrt(3.0) * (2.0 * uniform(rng) - 1.0);
    }

    // Ties are fixed before any outcome is drawn.
    Eigen::MatrixXd w0 = Eigen::MatrixXd::Zero(ni, ni);
    for (Eigen::Index i = 0; i < ni; ++i) {
        Eigen::Index closest = -1;
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < ni; ++j) {
            if (i == j || region(i) != region(j)) continue;
            if (s.network == NetworkKind::InverseDistance) {
                w0(i, j) = 1.0 / (xy.row(i) - xy.row(j)).norm();
                continue;
            }
            const double gap = std::abs(u(i) - u(j));
            if (gap <= s.homophily_caliper) w0(i, j) = std::exp(-gap / s.homophily_caliper);
            if (gap < best) {
                best = gap;
                closest = j;
            }
        }
        if (closest >= 0) w0(i, closest) = std::exp(-best / s.homophily_caliper);
        w0.row(i) /= w0.row(i).sum();
    }
    WeightMatrix weights(names, w0);
    const Eigen::MatrixXd& w = weights.at(0);

    const int total = s.burn_in + s.periods;
    const double phi = s.context_persistence;
    Eigen::VectorXd smooth_scale(ni);
    for (Eigen::Index i = 0; i < ni; ++i) {
        smooth_scale(i) = std::sqrt(1.0 + s.context_smoothing * s.context_smoothing * w.row(i).squaredNorm());
    }
    auto innovation = [&]() {
        Eigen::VectorXd e(ni);
        for (Eigen::Index i = 0; i < ni; ++i) e(i) = normal(rng);
        return Eigen::VectorXd(((e + s.context_smoothing * (w * e)).array() / smooth_scale.array()).matrix());
    };
    auto unit_coef = [&](int t) { return s.unit_effect * (1.0 + s.unit_effect_growth * std::max(0, t - s.burn_in)); };
    auto draw = [&](const Eigen::VectorXd& eta) {
        Eigen::VectorXd y(ni);
        for (Eigen::Index i = 0; i < ni; ++i) {
            y(i) = s.family == Family::Gaussian ? eta(i) + s.noise_sd * normal(rng)
                                                : (uniform(rng) < inverse_logit(eta(i)) ? 1.0 : 0.0);
        }
        return y;
    };

    Eigen::MatrixXd g(ni, total), y(ni, total);
    g.col(0) = innovation();
    y.col(0) = draw((s.intercept + s.context_effect * g.col(0).array() + unit_coef(0) * u.array()).matrix());
    double truth_sum = 0.0;
    std::size_t truth_rows = 0;
    for (int t = 0; t + 1 < total; ++t) {
        g.col(t + 1) = phi * g.col(t) + std::sqrt(1.0 - phi * phi) * innovation();
        const Eigen::VectorXd d = w * y.col(t);
        const Eigen::VectorXd base = (s.intercept + s.autoregression * y.col(t).array() + s.context_effect * g.col(t + 1).array() +
                                      unit_coef(t + 1) * u.array())
                                         .matrix();
        y.col(t + 1) = draw(base + s.diffusion * d);
        if (t >= s.burn_in && s.family == Family::Binomial) {
            for (Eigen::Index i = 0; i < ni; ++i) {
                truth_sum += inverse_logit(base(i) + s.diffusion * s.d_high) - inverse_logit(base(i) + s.diffusion * s.d_low);
                ++truth_rows;
            }
        }
    }

    SimulatedPanel out;
    PanelDataset panel(names, 1, s.periods);
    panel.outcome = "y";
    for (std::size_t i = 0; i < n; ++i)
        for (int k = 0; k < s.periods; ++k) panel.set_present(i, k, true);
    panel.set_numeric("y", y.rightCols(s.periods));
    panel.set_numeric("G", g.rightCols(s.periods));
    panel.set_numeric("U", u.replicate(1, s.periods));
    panel.set_numeric("region", region.replicate(1, s.periods));
    panel.cluster = "region";
    panel = compute_treatment(panel, weights, "D");
    out.panel = add_neighbor_summaries(panel, weights);
    out.weights = std::move(weights);
    out.truth = s.family == Family::Gaussian ? s.diffusion * (s.d_high - s.d_low)
                                             : (truth_rows ? truth_sum / static_cast<double>(truth_rows) : 0.0);
    return out;
}

// --- Monte Carlo -------------------------------------------------------------

std::pair<double, double> ks_uniform(std::vector<double> sample)
{
    sample.erase(std::remove_if(sample.begin(), sample.end(), [](double v) { return !std::isfinite(v); }), sample.end());
    if (sample.empty()) return {0.0, 1.0};
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double x = std::clamp(sample[i], 0.0, 1.0);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - x, x - static_cast<double>(i) / n});
    }
    // Kolmogorov limiting distribution with the Stephens small-sample factor.
    const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        p += (k % 2 == 1 ? 2.0 : -2.0) * term;
        if (term < 1e-16) break;
    }
    return {d, std::clamp(p, 0.0, 1.0)};
}

void McResult::summarize(double alpha)
{
    replications = estimates.size();
    std::vector<double> ok;
    for (double e : estimates)
        if (std::isfinite(e)) ok.push_back(e);
    summary = {};
    if (ok.empty()) return;
    double sum = 0.0;
    for (double e : ok) sum += e;
    summary.mean = sum / static_cast<double>(ok.size());
    double ss = 0.0;
    for (double e : ok) ss += (e - summary.mean) * (e - summary.mean);
    summary.sd = ok.size() > 1 ? std::sqrt(ss / static_cast<double>(ok.size() - 1)) : 0.0;
    summary.mcse = summary.sd / std::sqrt(static_cast<double>(ok.size()));
    summary.bias = summary.mean - truth;
    if (!p_values.empty()) {
        std::size_t rejected = 0, valid = 0;
        for (double p : p_values) {
            if (!std::isfinite(p)) continue;
            ++valid;
            if (p < alpha) ++rejected;
        }
        summary.rejection_rate = valid ? static_cast<double>(rejected) / static_cast<double>(valid) : 0.0;
        std::tie(summary.ks_statistic, summary.ks_p_value) = ks_uniform(p_values);
    }
}

nlohmann::json to_json(const McResult& r)
{
    auto finite_or_null = [](const std::vector<double>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (double x : v) a.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
        return a;
    };
    nlohmann::json j = {{"label", r.label},
                        {"estimator", r.estimator},
                        {"replications", r.replications},
                        {"seed", r.seed},
                        {"truth", r.truth},
                        {"failures", r.failures},
                        {"summary",
                         {{"mean", r.summary.mean},
                          {"bias", r.summary.bias},
                          {"sd", r.summary.sd},
                          {"mcse", r.summary.mcse}}},
                        {"estimates", finite_or_null(r.estimates)}};
    if (!r.p_values.empty()) {
        j["summary"]["rejection_rate"] = r.summary.rejection_rate;
        j["summary"]["ks_statistic"] = r.summary.ks_statistic;
        j["summary"]["ks_p_value"] = r.summary.ks_p_value;
        j["p_values"] = finite_or_null(r.p_values);
    }
    return j;
}

unsigned resolve_threads(unsigned requested)
{
    if (requested > 0) return requested;
    if (const char* env = std::getenv("CDIFF_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

// Runs body(rep) for every replication on a small pool. Body results are
// written by index, so the schedule cannot change the output.
template <class Body>
void parallel_reps(std::size_t reps, unsigned threads, Body body)
{
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        for (;;) {
            const std::size_t rep = next.fetch_add(1);
            if (rep >= reps) return;
            try {
                body(rep);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(reps);
            }
        }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(reps, 1))));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
}

void check_failures(const McResult& r, double max_rate, const std::string& first_error)
{
    if (static_cast<double>(r.failures) > max_rate * static_cast<double>(r.replications)) {
        throw NumericError("Monte Carlo '" + r.label + "' (" + r.estimator + "): " + std::to_string(r.failures) +
                           " of " + std::to_string(r.replications) + " replications failed; first error: " + first_error);
    }
}

EstimandSpec scenario_estimand(const Scenario& s, Target target)
{
    return {s.d_high, s.d_low, target, s.family};
}

} // namespace

std::vector<McResult> monte_carlo_placebo(const Scenario& scenario, const std::vector<LadderEntry>& ladder,
                                          const McOptions& options)
{
    scenario.validate();
    if (options.replications < 100) throw ConfigError("Monte Carlo needs at least 100 replications");
    const std::size_t reps = options.replications;
    std::vector<McResult> out(ladder.size());
    for (std::size_t l = 0; l < ladder.size(); ++l) {
        out[l].label = ladder[l].label;
        out[l].estimator = "placebo";
        out[l].seed = options.seed;
        out[l].estimates.assign(reps, std::numeric_limits<double>::quiet_NaN());
        out[l].p_values.assign(reps, std::numeric_limits<double>::quiet_NaN());
    }
    std::vector<std::vector<std::string>> errors(ladder.size(), std::vector<std::string>(reps));
    const EstimandSpec estimand = scenario_estimand(scenario, Target::Acde);

    parallel_reps(reps, resolve_threads(options.threads), [&](std::size_t rep) {
        const SimulatedPanel sim = simulate_panel(scenario, replication_seed(options.seed, rep));
        for (std::size_t l = 0; l < ladder.size(); ++l) {
            try {
                const EstimateReport r = run_placebo_test(sim.panel, sim.weights, ladder[l].control, estimand);
                out[l].estimates[rep] = r.point;
                out[l].p_values[rep] = r.p_value.value_or(std::numeric_limits<double>::quiet_NaN());
            } catch (const Error& e) {
                errors[l][rep] = e.what();
            }
        }
    });
    for (std::size_t l = 0; l < ladder.size(); ++l) {
        std::string first;
        for (const auto& e : errors[l]) {
            if (e.empty()) continue;
            ++out[l].failures;
            if (first.empty()) first = e;
        }
        out[l].truth = 0.0;
        out[l].summarize();
        check_failures(out[l], options.max_failure_rate, first);
    }
    return out;
}

BiasCorrectionMc monte_carlo_bias_correction(const Scenario& scenario, const ControlSpec& control,
                                             const McOptions& options)
{
    scenario.validate();
    if (options.replications < 100) throw ConfigError("Monte Carlo needs at least 100 replications");
    const std::size_t reps = options.replications;
    BiasCorrectionMc out;
    for (McResult* r : {&out.main, &out.bias_corrected}) {
        r->label = scenario.name;
        r->seed = options.seed;
        r->estimates.assign(reps, std::numeric_limits<double>::quiet_NaN());
    }
    out.main.estimator = "main";
    out.bias_corrected.estimator = "bias_corrected";
    std::vector<std::string> errors(reps);
    std::vector<double> truths(reps, std::numeric_limits<double>::quiet_NaN());
    const EstimandSpec estimand = scenario_estimand(scenario, Target::Acdt);

    parallel_reps(reps, resolve_threads(options.threads), [&](std::size_t rep) {
        const SimulatedPanel sim = simulate_panel(scenario, replication_seed(options.seed, rep));
        truths[rep] = sim.truth;
        try {
            const EstimateReport r = estimate_bias_corrected(sim.panel, sim.weights, control, estimand);
            out.bias_corrected.estimates[rep] = r.point;
            out.main.estimates[rep] = r.details.at("main_point");
        } catch (const Error& e) {
            errors[rep] = e.what();
        }
    });
    std::string first;
    std::size_t failures = 0;
    double truth = 0.0;
    for (std::size_t rep = 0; rep < reps; ++rep) {
        truth += truths[rep] / static_cast<double>(reps);
        if (errors[rep].empty()) continue;
        ++failures;
        if (first.empty()) first = errors[rep];
    }
    for (McResult* r : {&out.main, &out.bias_corrected}) {
        r->failures = failures;
        r->truth = truth;
        r->summarize();
        check_failures(*r, options.max_failure_rate, first);
    }
    return out;
}

ControlSpec basic_controls()
{
    ControlSpec c;
    c.treatment = "D";
    c.outcome = "Y";
    c.variables = {td("Y", true, 0), td("D", false, -1), ti("n_neighbors"), ti("w_variance")};
    return c;
}

ControlSpec difference_controls()
{
    ControlSpec c;
    c.treatment = "D";
    c.outcome = "Y";
    c.variables = {td("D", false, -1)};
    return c;
}

} // namespace cdiff
