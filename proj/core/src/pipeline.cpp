#include "cdiff/pipeline.hpp"

#include <atomic>
#include <exception>
#include <thread>

#include "cdiff/error.hpp"

namespace cdiff {

using nlohmann::json;

namespace {

struct Stage {
    const char* kind;
    const char* stage;
};

constexpr Stage kStages[] = {{"placebo", "placebo_test"}, {"main", "main_estimate"}, {"bias_corrected", "bias_correction"}};

json error_json(const std::exception_ptr& e)
{
    try {
        std::rethrow_exception(e);
    } catch (const ConfigError& x) {
        return {{"kind", "config"}, {"message", x.what()}};
    } catch (const DataError& x) {
        return {{"kind", "data"}, {"message", x.what()}};
    } catch (const NumericError& x) {
        return {{"kind", "numeric"}, {"message", x.what()}};
    } catch (const std::exception& x) {
        return {{"kind", "internal"}, {"message", x.what()}};
    }
}

json record_json(const EstimateReport& r)
{
    json j = to_json(r);
    j["status"] = "ok";
    return j;
}

json failed_record(const Stage& s, const std::string& label, const json& error)
{
    return {{"kind", s.kind}, {"stage", s.stage}, {"label", label}, {"status", "failed"}, {"error", error}};
}

json keys_json(const std::vector<VariableMeta>& vars)
{
    json a = json::array();
    for (const auto& v : vars) a.push_back(v.key());
    return a;
}

json software_json() { return {{"name", "cdiff"}, {"version", software_version()}}; }

json estimand_json(const EstimandSpec& e)
{
    return {{"d_high", e.d_high}, {"d_low", e.d_low}, {"family", to_string(e.family)}, {"target", to_string(e.target)}};
}

struct SetResult {
    json entry;
    std::vector<json> records;
    json diagnostics;
    json conditional;
};

SetResult evaluate_set(const AnalysisConfig& config, const AnalysisInputs& in, const NamedControlSet& set)
{
    SetResult out;
    out.entry = {{"label", set.label}, {"control", control_to_json(set.control)}};
    EstimatorOptions opts;
    opts.label = set.label;
    json errors = json::array();

    bool placebo_ok = true;
    try {
        const PlaceboSpec p = derive_placebo_set(set.control);
        out.entry["placebo_set"] = keys_json(p.variables);
        out.entry["removed"] = p.removed;
    } catch (...) {
        placebo_ok = false;
        errors.push_back({{"stage", "placebo_set"}, {"error", error_json(std::current_exception())}});
    }

    std::size_t ok = 0;
    for (std::size_t k = 0; k < std::size(kStages); ++k) {
        const Stage& s = kStages[k];
        if (!placebo_ok) {
            out.records.push_back(failed_record(s, set.label, errors.back().at("error")));
            continue;
        }
        try {
            EstimateReport r;
            if (k == 0) {
                r = run_placebo_test(in.panel, in.weights, set.control, config.estimand, opts);
            } else if (k == 1) {
                r = estimate_acde(in.panel, in.weights, set.control, config.estimand, opts);
            } else {
                r = estimate_bias_corrected(in.panel, in.weights, set.control, config.estimand, opts);
            }
            out.records.push_back(record_json(r));
            ++ok;
        } catch (...) {
            const json e = error_json(std::current_exception());
            errors.push_back({{"stage", s.stage}, {"error", e}});
            out.records.push_back(failed_record(s, set.label, e));
        }
    }

    if (config.diagnostics) {
        out.diagnostics = {{"label", set.label}};
        try {
            const DiagnosticResult d = diagnose_assumption3(in.panel, in.weights, set.control, config.estimand, opts);
            out.diagnostics["status"] = "ok";
            out.diagnostics["note"] = d.note;
            json recs = json::array();
            for (const auto& r : d.reports) recs.push_back(record_json(r));
            out.diagnostics["records"] = recs;
        } catch (...) {
            out.diagnostics["status"] = "failed";
            out.diagnostics["error"] = error_json(std::current_exception());
        }
    }

    if (config.moderator) {
        out.conditional = {{"label", set.label}};
        try {
            const ConditionalResult c =
                estimate_conditional_acde(in.panel, in.weights, set.control, config.estimand, *config.moderator, opts);
            out.conditional["status"] = "ok";
            json high = json::array(), low = json::array();
            for (const auto& r : c.high) high.push_back(record_json(r));
            for (const auto& r : c.low) low.push_back(record_json(r));
            out.conditional["high"] = high;
            out.conditional["low"] = low;
            out.conditional["warnings"] = c.warnings;
        } catch (...) {
            out.conditional["status"] = "failed";
            out.conditional["error"] = error_json(std::current_exception());
        }
    }

    out.entry["status"] = ok == std::size(kStages) ? "ok" : ok == 0 ? "failed" : "partial";
    out.entry["errors"] = errors;
    return out;
}

// Runs f(i) for i in [0, n) on up to `threads` workers.
template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& f)
{
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) f(i);
        });
    }
    for (auto& t : pool) t.join();
}

void convergence_scan(const json& record, std::size_t& models, std::size_t& unconverged, double& max_gradient)
{
    if (!record.contains("models")) return;
    for (const auto& m : record.at("models")) {
        ++models;
        if (!m.value("converged", false)) ++unconverged;
        max_gradient = std::max(max_gradient, m.value("gradient_norm", 0.0));
    }
}

} // namespace

json run_analysis(const AnalysisConfig& config, const AnalysisInputs& inputs)
{
    std::vector<SetResult> results(config.control_sets.size());
    parallel_for(results.size(), resolve_threads(config.threads),
                 [&](std::size_t k) { results[k] = evaluate_set(config, inputs, config.control_sets[k]); });

    json report = {{"schema", "cdiff.analysis_report"},
                   {"schema_version", kReportSchemaVersion},
                   {"software", software_json()},
                   {"name", config.name},
                   {"seed", config.seed}};
    report["inputs"] = {{"panel", config.panel.file}, {"weights", weights_to_json(config.weights)}};
    report["estimand"] = estimand_json(config.estimand);
    const PanelDataset& p = inputs.panel;
    report["sample"] = {{"units", p.n_units()},
                        {"periods", p.n_times()},
                        {"t_min", p.t_min()},
                        {"t_max", p.t_max()},
                        {"outcome", p.outcome},
                        {"cluster", p.cluster ? json(*p.cluster) : json("unit")},
                        {"input_notes", p.notes.size()}};

    json sets = json::array(), estimates = json::array(), diagnostics = json::array(), conditional = json::array();
    std::size_t models = 0, unconverged = 0;
    double max_gradient = 0.0;
    for (auto& r : results) {
        sets.push_back(std::move(r.entry));
        for (auto& rec : r.records) {
            convergence_scan(rec, models, unconverged, max_gradient);
            estimates.push_back(std::move(rec));
        }
        if (!r.diagnostics.is_null()) diagnostics.push_back(std::move(r.diagnostics));
        if (!r.conditional.is_null()) conditional.push_back(std::move(r.conditional));
    }
    report["control_sets"] = sets;
    report["estimates"] = estimates;
    report["diagnostics"] = diagnostics;
    if (config.moderator) {
        report["conditional"] = {{"moderator", config.moderator->column},
                                 {"cutoff", config.moderator->cutoff},
                                 {"sets", conditional}};
    }
    report["convergence"] = {{"models", models}, {"unconverged", unconverged}, {"max_gradient_norm", max_gradient}};
    return report;
}

json run_analysis(const AnalysisConfig& config) { return run_analysis(config, load_inputs(config)); }

json placebo_sets_json(const AnalysisConfig& config)
{
    json sets = json::array();
    for (const auto& s : config.control_sets) {
        json e = {{"label", s.label}, {"control", control_to_json(s.control)}};
        try {
            const PlaceboSpec p = derive_placebo_set(s.control);
            json vars = json::array();
            for (const auto& v : p.variables) vars.push_back(variable_to_json(v));
            e["placebo_set"] = {{"treatment", p.treatment}, {"outcome", p.outcome}, {"variables", vars}};
            e["keys"] = p.keys();
            e["removed"] = p.removed;
            e["status"] = "ok";
        } catch (...) {
            e["status"] = "failed";
            e["error"] = error_json(std::current_exception());
        }
        sets.push_back(std::move(e));
    }
    return {{"schema", "cdiff.placebo_sets"}, {"schema_version", kReportSchemaVersion}, {"software", software_json()},
            {"control_sets", sets}};
}

json run_selection(const SelectionConfig& config)
{
    const AnalysisInputs in = load_inputs(config.analysis);
    MrfOptions mrf = config.mrf;
    mrf.seed = config.analysis.seed;
    const SelectionRun run = select_controls(in.panel, in.weights, config.spec, config.analysis.estimand, mrf, config.alpha);
    const SelectionResult& s = run.selection;

    json sel = {{"found", s.found}, {"verified", s.verified}, {"flags", s.flags}, {"alpha", config.alpha}};
    if (!s.reason.empty()) sel["reason"] = s.reason;
    json sep = json::array();
    for (const auto& v : s.separating_set) sep.push_back(variable_to_json(v));
    sel["separating_set"] = sep;
    sel["verification"] = s.verification ? record_json(*s.verification) : json(nullptr);

    json out = {{"schema", "cdiff.selection_report"},
                {"schema_version", kReportSchemaVersion},
                {"software", software_json()},
                {"seed", config.analysis.seed},
                {"mrf",
                 {{"edge_rule", to_string(config.mrf.edge_rule)},
                  {"lambda_rule", to_string(config.mrf.lambda_rule)},
                  {"folds", config.mrf.folds}}},
                {"graph", to_json(run.graph)},
                {"selection", sel}};
    out["control_set"] = s.found ? control_to_json(s.control, "selected") : json(nullptr);
    return out;
}

namespace {

ControlSpec suite_control(const json& j)
{
    if (j.is_string()) {
        const std::string name = j.get<std::string>();
        if (name == "basic") return basic_controls();
        if (name == "difference") return difference_controls();
        throw ConfigError("suite: unknown control set '" + name + "' (expected basic, difference or an object)");
    }
    return control_from_json(j);
}

Scenario suite_scenario(const json& j, const std::filesystem::path& base)
{
    if (j.is_string()) return builtin_scenario(j.get<std::string>());
    if (j.is_object() && j.contains("file") && j.size() == 1) {
        const std::filesystem::path f(j.at("file").get<std::string>());
        return load_scenario((f.is_absolute() ? f : base / f).string());
    }
    return scenario_from_json(j);
}

json run_entry(const SuiteEntry& e, const SimulationSuite& suite)
{
    Scenario scenario;
    try {
        scenario = suite_scenario(e.scenario, suite.base_dir);
        scenario.validate();
    } catch (const json::exception& x) {
        throw ConfigError(std::string("scenario: ") + x.what());
    }
    McOptions opts;
    opts.replications = e.replications;
    opts.seed = e.seed.value_or(suite.seed);
    opts.threads = suite.threads;

    json results = json::array();
    if (e.estimator == "placebo") {
        std::vector<LadderEntry> ladder;
        for (const auto& l : e.ladder) {
            if (!l.is_object() || !l.contains("label")) throw ConfigError("suite: ladder entries need a label");
            ladder.push_back({l.at("label").get<std::string>(), suite_control(l.value("control", json("basic")))});
        }
        if (ladder.empty()) ladder.push_back({"basic", basic_controls()});
        for (auto& r : monte_carlo_placebo(scenario, ladder, opts)) {
            r.summarize(e.alpha);
            results.push_back(to_json(r));
        }
    } else {
        BiasCorrectionMc bc = monte_carlo_bias_correction(scenario, suite_control(e.control), opts);
        bc.main.summarize(e.alpha);
        bc.bias_corrected.summarize(e.alpha);
        results.push_back(to_json(bc.main));
        results.push_back(to_json(bc.bias_corrected));
    }
    return {{"name", e.name},
            {"status", "ok"},
            {"estimator", e.estimator},
            {"alpha", e.alpha},
            {"scenario", scenario_to_json(scenario)},
            {"results", results}};
}

} // namespace

json run_simulation_suite(const SimulationSuite& suite)
{
    json entries = json::array();
    for (const auto& e : suite.entries) {
        try {
            entries.push_back(run_entry(e, suite));
        } catch (...) {
            entries.push_back({{"name", e.name}, {"status", "failed"}, {"error", error_json(std::current_exception())}});
        }
    }
    return {{"schema", "cdiff.simulation_report"},
            {"schema_version", kReportSchemaVersion},
            {"software", software_json()},
            {"seed", suite.seed},
            {"results", entries}};
}

} // namespace cdiff
