#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "cdiff/dag_io.hpp"
#include "cdiff/error.hpp"
#include "cdiff/pipeline.hpp"

using namespace cdiff;
using nlohmann::json;

namespace {

enum Exit : int { kOk = 0, kInternal = 1, kUsage = 2, kConfig = 3, kData = 4, kNumeric = 5 };

void emit(const json& j, const std::string& path)
{
    if (path.empty() || path == "-") {
        std::cout << dump_report(j);
    } else {
        write_text(path, dump_report(j));
    }
}

void set_threads(unsigned threads)
{
    if (threads > 0) setenv("CDIFF_THREADS", std::to_string(threads).c_str(), 1);
}

json dag_check(const std::string& file, const std::string& builtin, int horizon, bool equivalence,
               const std::string& x, const std::string& y, const std::vector<std::string>& given)
{
    std::optional<DagTemplate> tmpl;
    CausalDag dag;
    if (!builtin.empty()) {
        tmpl = builtin_template(builtin);
    } else {
        const json j = read_json_file(file);
        if (j.contains("template")) {
            const json& t = j.at("template");
            tmpl = t.is_string() ? builtin_template(t.get<std::string>()) : template_from_json(t);
            horizon = j.value("horizon", horizon);
        } else {
            dag = load_dag(j);
        }
    }
    if (tmpl) dag = unroll_template(*tmpl, horizon);

    json out = {{"nodes", dag.size()}, {"edges", dag.edges().size()}, {"acyclic", true}};
    if (tmpl) {
        out["template"] = tmpl->name;
        out["horizon"] = horizon;
    }
    const StationarityReport st = is_stationary(dag);
    json violations = json::array();
    for (const auto& v : st.violations)
        violations.push_back({{"condition", v.condition}, {"node", v.node}, {"time", v.time}, {"message", v.message}});
    out["stationary"] = st.stationary;
    out["violations"] = violations;

    if (!x.empty() || !y.empty()) {
        if (x.empty() || y.empty()) throw ConfigError("dag check: --x and --y go together");
        const NodeSet z = dag.ids(given);
        out["d_separation"] = {{"x", x}, {"y", y}, {"given", given}, {"separated", d_separated(dag, dag.id(x), dag.id(y), z)}};
    }
    if (equivalence) {
        if (!tmpl) throw ConfigError("dag check: --equivalence needs a template");
        const EquivalenceReport r = check_placebo_equivalence(*tmpl, horizon);
        json ce = json::array();
        for (const auto& c : r.counterexamples)
            ce.push_back({{"time", c.time},
                          {"control", c.control},
                          {"placebo", c.placebo},
                          {"main_blocked", c.main_blocked},
                          {"placebo_blocked", c.placebo_blocked}});
        out["equivalence"] = {{"control_sets_checked", r.control_sets_checked},
                              {"proper_sets", r.proper_sets},
                              {"counterexamples", ce}};
    }
    return out;
}

int run(int argc, char** argv)
{
    CLI::App app{"Causal diffusion analysis: placebo tests, ACDE estimation, bias correction and simulation."};
    app.set_version_flag("--version", std::string("cdiff ") + software_version());
    app.require_subcommand(1);
    unsigned threads = 0;
    app.add_option("--threads", threads, "Worker threads (overrides CDIFF_THREADS)");

    std::string config, suite, report_in, out, report_out, plot_out;
    std::optional<std::uint64_t> seed;
    bool no_plot = false;

    auto* analyze = app.add_subcommand("analyze", "Run the control-set ladder: placebo, main and bias-corrected estimates");
    analyze->add_option("--config", config, "Analysis config (JSON)")->required()->check(CLI::ExistingFile);
    analyze->add_option("--seed", seed, "Override the config seed");
    analyze->add_option("--report", report_out, "Report path (default: config output.report, else stdout)");
    analyze->add_option("--plot", plot_out, "Forest plot path (default: config output.plot)");
    analyze->add_flag("--no-plot", no_plot, "Skip the forest plot");

    auto* simulate = app.add_subcommand("simulate", "Run a Monte Carlo suite");
    simulate->add_option("--suite", suite, "Suite file (JSON)")->required()->check(CLI::ExistingFile);
    simulate->add_option("--seed", seed, "Override the suite seed");
    simulate->add_option("--out", out, "Result path (default: suite output, else stdout)");

    auto* select = app.add_subcommand("select", "Select a control set with a mixed graphical model");
    select->add_option("--config", config, "Selection config (JSON)")->required()->check(CLI::ExistingFile);
    select->add_option("--seed", seed, "Override the config seed");
    select->add_option("--out", out, "Result path (default: selection.output, else stdout)");

    auto* plot = app.add_subcommand("plot", "Draw the three-panel forest plot of a report");
    plot->add_option("--report", report_in, "Analysis report (JSON)")->required()->check(CLI::ExistingFile);
    plot->add_option("--out", out, "SVG path")->required();

    auto* dag = app.add_subcommand("dag", "Graph utilities");
    dag->require_subcommand(1);
    auto* check = dag->add_subcommand("check", "Validate a DAG or template and report stationarity");
    std::string dag_file, builtin, x, y;
    std::vector<std::string> given;
    int horizon = 4;
    bool equivalence = false;
    auto* file_opt = check->add_option("--file", dag_file, "Graph or template file (JSON)")->check(CLI::ExistingFile);
    auto* tmpl_opt = check->add_option("--template", builtin, "Built-in template name");
    file_opt->excludes(tmpl_opt);
    check->add_option("--horizon", horizon, "Periods to unroll a template over")->check(CLI::Range(1, 50));
    check->add_flag("--equivalence", equivalence, "Exhaustive placebo-equivalence check over proper control sets");
    check->add_option("--x", x, "d-separation query: first node label");
    check->add_option("--y", y, "d-separation query: second node label");
    check->add_option("--given", given, "d-separation query: conditioning node labels")->delimiter(',');

    auto* placebo = app.add_subcommand("placebo-set", "Derive the placebo set of every control set in a config");
    placebo->add_option("--config", config, "Analysis config (JSON)")->required()->check(CLI::ExistingFile);
    placebo->add_option("--out", out, "Result path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }
    set_threads(threads);

    if (analyze->parsed()) {
        AnalysisConfig c = load_analysis_config(config);
        if (seed) c.seed = *seed;
        c.threads = threads;
        const json report = run_analysis(c);
        emit(report, report_out.empty() ? c.report_path : report_out);
        const std::string svg = plot_out.empty() ? c.plot_path : plot_out;
        if (!no_plot && !svg.empty()) emit_forest_plot(report, svg);
    } else if (simulate->parsed()) {
        SimulationSuite s = load_suite(suite);
        if (seed) s.seed = *seed;
        s.threads = threads;
        emit(run_simulation_suite(s), out.empty() ? s.output_path : out);
    } else if (select->parsed()) {
        SelectionConfig c = load_selection_config(config);
        if (seed) c.analysis.seed = *seed;
        emit(run_selection(c), out.empty() ? c.output_path : out);
    } else if (plot->parsed()) {
        emit_forest_plot(read_json_file(report_in), out);
    } else if (check->parsed()) {
        if (dag_file.empty() && builtin.empty()) throw ConfigError("dag check: give --file or --template");
        emit(dag_check(dag_file, builtin, horizon, equivalence, x, y, given), "");
    } else if (placebo->parsed()) {
        emit(placebo_sets_json(load_analysis_config(config)), out);
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInternal;
    }
}
