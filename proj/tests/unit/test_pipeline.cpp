#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <regex>
#include <sstream>
#include <string>

#include "cdiff/error.hpp"
#include "cdiff/pipeline.hpp"

using namespace cdiff;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = CDIFF_SOURCE_DIR;
const fs::path kConfigs = kSource / "configs";

json config_json(const std::string& file) { return read_json_file((kConfigs / file).string()); }

AnalysisConfig igo_config(const std::function<void(json&)>& edit = {})
{
    json j = config_json("igo_analog.json");
    if (edit) edit(j);
    return analysis_config_from_json(j, kConfigs);
}

std::size_t count(const std::string& text, const std::string& needle)
{
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + needle.size())) ++n;
    return n;
}

fs::path scratch_dir()
{
    const fs::path dir = fs::temp_directory_path() / ("cdiff_test_pipeline_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string("\"") + CDIFF_CLI + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json record(const std::string& kind, const std::string& label, double point, double lo, double hi)
{
    return {{"kind", kind}, {"label", label}, {"status", "ok"}, {"point", point}, {"ci_low", lo}, {"ci_high", hi}};
}

} // namespace

TEST_CASE("hate crime analog: five sets give fifteen estimate records plus diagnostics")
{
    const AnalysisConfig c = load_analysis_config((kConfigs / "hate_crime_analog.json").string());
    REQUIRE(c.control_sets.size() == 5);
    const json report = run_analysis(c);

    CHECK(report.at("schema") == "cdiff.analysis_report");
    CHECK(report.at("schema_version") == kReportSchemaVersion);
    CHECK(report.at("software").at("version") == software_version());
    CHECK(report.at("seed") == c.seed);

    const json& est = report.at("estimates");
    REQUIRE(est.size() == 15);
    const char* kinds[] = {"placebo", "main", "bias_corrected"};
    const char* stages[] = {"placebo_test", "main_estimate", "bias_correction"};
    for (std::size_t i = 0; i < est.size(); ++i) {
        CAPTURE(i);
        CHECK(est[i].at("label") == c.control_sets[i / 3].label);
        CHECK(est[i].at("kind") == kinds[i % 3]);
        CHECK(est[i].at("stage") == stages[i % 3]);
        CHECK(est[i].at("status") == "ok");
    }
    CHECK(est[0].contains("p_value"));

    const json& diag = report.at("diagnostics");
    REQUIRE(diag.size() == 5);
    for (const auto& d : diag) CHECK(d.at("status") == "ok");

    const json& conv = report.at("convergence");
    CHECK(conv.at("models").get<int>() >= 20);
    CHECK(conv.at("unconverged") == 0);
    CHECK(report.at("conditional").at("sets").size() == 5);

    // The placebo estimate shrinks as the ladder adds controls.
    CHECK(std::abs(est[12].at("point").get<double>()) < std::abs(est[0].at("point").get<double>()));
}

TEST_CASE("d_high equal to d_low zeroes every main estimate")
{
    const AnalysisConfig c = igo_config([](json& j) { j["estimand"]["d_low"] = j["estimand"]["d_high"]; });
    const json report = run_analysis(c);
    std::size_t mains = 0;
    for (const auto& r : report.at("estimates")) {
        if (r.at("kind") != "main") continue;
        ++mains;
        REQUIRE(r.at("status") == "ok");
        CHECK(r.at("point").get<double>() == 0.0);
    }
    CHECK(mains == 3);
}

TEST_CASE("a missing column is a config error that names it")
{
    auto edit = [](json& j) { j["control_sets"][0]["variables"].push_back({{"name", "gdp_growth"}, {"time_dependent", false}}); };
    try {
        igo_config(edit);
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("gdp_growth") != std::string::npos);
    }

    json j = config_json("igo_analog.json");
    edit(j);
    j["panel"]["file"] = (kSource / "data/igo_analog/panel.csv").string();
    j["weights"]["file"] = (kSource / "data/igo_analog/memberships.csv").string();
    const fs::path cfg = scratch_dir() / "missing_column.json";
    std::ofstream(cfg) << j.dump(2);
    CHECK(run_cli("analyze --config " + cfg.string() + " --report " + (scratch_dir() / "r.json").string()) == 3);
}

TEST_CASE("config validation")
{
    CHECK_THROWS_AS(igo_config([](json& j) { j["control_sets"][1]["label"] = "C1"; }), ConfigError);
    CHECK_THROWS_AS(igo_config([](json& j) { j["estimand"]["family"] = "poisson"; }), ConfigError);
    CHECK_THROWS_AS(igo_config([](json& j) { j.erase("panel"); }), ConfigError);
    CHECK_THROWS_AS(igo_config([](json& j) { j["control_sets"] = json::array(); }), ConfigError);

    // "extends" copies the earlier set before adding members.
    const AnalysisConfig c = igo_config();
    REQUIRE(c.control_sets.size() == 3);
    CHECK(c.control_sets[1].control.variables.size() == c.control_sets[0].control.variables.size() + 2);
}

TEST_CASE("a failing control set is recorded and the others still run")
{
    AnalysisConfig c = igo_config();
    AnalysisInputs in = load_inputs(c);
    in.panel.set_numeric("flat", Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(in.panel.n_units()), in.panel.n_times(), 2.0));
    NamedControlSet bad = c.control_sets[0];
    bad.label = "flat";
    bad.control.variables.push_back({"flat", false, std::nullopt, 0});
    c.control_sets.insert(c.control_sets.begin() + 1, bad);

    const json report = run_analysis(c, in);
    const json& sets = report.at("control_sets");
    REQUIRE(sets.size() == 4);
    CHECK(sets[0].at("status") == "ok");
    CHECK(sets[1].at("status") == "failed");
    CHECK(sets[2].at("status") == "ok");
    const json& est = report.at("estimates");
    REQUIRE(est.size() == 12);
    for (int k = 3; k < 6; ++k) {
        CHECK(est[k].at("status") == "failed");
        CHECK(est[k].at("error").at("kind") == "numeric");
        CHECK(est[k].at("label") == "flat");
    }

    const std::string svg = forest_plot_svg(report);
    CHECK(count(svg, "<g class=\"failed\" data-label=\"flat\"") == 3);
    CHECK(count(svg, "failed (numeric)") == 3);
    CHECK(count(svg, "<g class=\"estimate\"") == 9);
}

TEST_CASE("analysis report and plot are reproducible")
{
    const AnalysisConfig c = igo_config();
    const json a = run_analysis(c);
    const json b = run_analysis(c);
    CHECK(dump_report(a) == dump_report(b));
    CHECK(forest_plot_svg(a) == forest_plot_svg(b));

    AnalysisConfig threaded = c;
    threaded.threads = 3;
    CHECK(dump_report(run_analysis(threaded)) == dump_report(a));
}

TEST_CASE("placebo sets of every ladder rung")
{
    const json j = placebo_sets_json(igo_config());
    CHECK(j.at("schema") == "cdiff.placebo_sets");
    REQUIRE(j.at("control_sets").size() == 3);
    for (const auto& s : j.at("control_sets")) {
        CHECK(s.at("status") == "ok");
        const auto keys = s.at("keys").get<std::vector<std::string>>();
        // Y_t (post-outcome) becomes Y_{t-1}; D_{t-1} is always present.
        CHECK(std::find(keys.begin(), keys.end(), "Y_lag1") != keys.end());
        CHECK(std::find(keys.begin(), keys.end(), "D_lag1") != keys.end());
        CHECK(std::find(keys.begin(), keys.end(), "Y") == keys.end());
    }
}

TEST_CASE("forest plot structure")
{
    SUBCASE("five sets give three panels of five estimates")
    {
        json report = {{"estimates", json::array()}};
        for (int s = 1; s <= 5; ++s)
            for (const char* kind : {"placebo", "main", "bias_corrected"})
                report["estimates"].push_back(record(kind, "C" + std::to_string(s), 0.1 * s, 0.05 * s, 0.15 * s));
        const std::string svg = forest_plot_svg(report);
        CHECK(count(svg, "<g class=\"panel\"") == 3);
        CHECK(count(svg, "<g class=\"estimate\"") == 15);
        CHECK(count(svg, "class=\"zero\"") == 3);
        CHECK(count(svg, "class=\"whisker\"") == 15);
        for (const char* kind : {"placebo", "main", "bias_corrected"})
            CHECK(count(svg, std::string("data-kind=\"") + kind + "\"") == 1);
        CHECK(count(svg, ">C3</text>") == 3);
    }
    SUBCASE("a single estimate gives one marker with whiskers")
    {
        const json report = {{"estimates", json::array({record("main", "only", 0.2, 0.1, 0.3)})}};
        const std::string svg = forest_plot_svg(report);
        CHECK(count(svg, "class=\"marker\"") == 1);
        CHECK(count(svg, "class=\"whisker\"") == 1);
        CHECK(count(svg, "class=\"cap\"") == 2);
        CHECK(count(svg, "<g class=\"panel\"") == 3);
    }
    SUBCASE("a failed set leaves an annotated gap")
    {
        json report = {{"estimates", json::array()}};
        report["estimates"].push_back(record("placebo", "A", 0.1, 0.0, 0.2));
        report["estimates"].push_back(
            {{"kind", "placebo"}, {"label", "B"}, {"status", "failed"}, {"error", {{"kind", "data"}, {"message", "x"}}}});
        const std::string svg = forest_plot_svg(report);
        CHECK(count(svg, "class=\"marker\"") == 1);
        CHECK(count(svg, "<g class=\"failed\" data-label=\"B\"") == 1);
        CHECK(count(svg, "failed (data)") == 1);
    }
    SUBCASE("an empty report is an error")
    {
        CHECK_THROWS_AS(forest_plot_svg(json{{"estimates", json::array()}}), DataError);
        CHECK_THROWS_AS(forest_plot_svg(json::object()), DataError);
    }
    SUBCASE("no timestamps or generated identifiers")
    {
        const std::string svg = forest_plot_svg({{"estimates", json::array({record("main", "x<y", -1.0, -2.0, 0.5)})}});
        CHECK(svg.find(" id=") == std::string::npos);
        CHECK_FALSE(std::regex_search(svg, std::regex("20[0-9]{2}-[0-9]{2}-[0-9]{2}")));
        CHECK(svg.find("x&lt;y") != std::string::npos);
    }
}

TEST_CASE("simulation suites")
{
    SUBCASE("an empty suite gives an empty result list")
    {
        const json out = run_simulation_suite(suite_from_json(json{{"entries", json::array()}}));
        CHECK(out.at("schema") == "cdiff.simulation_report");
        CHECK(out.at("results").empty());
    }
    const json j = {{"seed", 11},
                    {"entries",
                     {{{"name", "size"}, {"scenario", "diffusion"}, {"replications", 100}},
                      {{"name", "broken"}, {"scenario", "no_such_scenario"}, {"replications", 100}},
                      {{"name", "bc"},
                       {"scenario", {{"file", "../scenarios/bias_correction.json"}}},
                       {"estimator", "bias_correction"},
                       {"control", "difference"},
                       {"replications", 100}}}}};
    const SimulationSuite suite = suite_from_json(j, kConfigs / "suites");
    const json out = run_simulation_suite(suite);
    const json& results = out.at("results");
    REQUIRE(results.size() == 3);

    SUBCASE("the size entry carries a rejection rate")
    {
        REQUIRE(results[0].at("status") == "ok");
        const json& summary = results[0].at("results")[0].at("summary");
        CHECK(summary.contains("rejection_rate"));
        CHECK(summary.contains("ks_p_value"));
        CHECK(results[0].at("results")[0].at("p_values").size() == 100);
    }
    SUBCASE("a bad scenario fails only its own entry")
    {
        CHECK(results[1].at("status") == "failed");
        CHECK(results[1].at("error").at("kind") == "config");
        CHECK(results[2].at("status") == "ok");
        CHECK(results[2].at("results").size() == 2);
    }
    SUBCASE("a fixed seed reproduces the bytes")
    {
        CHECK(dump_report(run_simulation_suite(suite)) == dump_report(out));
        SimulationSuite other = suite;
        other.seed = 12;
        CHECK(dump_report(run_simulation_suite(other)) != dump_report(out));
    }
    CHECK_THROWS_AS(suite_from_json(json{{"entries", {{{"name", "a"}, {"scenario", "diffusion"}, {"estimator", "ols"}}}}}),
                    ConfigError);
}

TEST_CASE("selection config")
{
    const SelectionConfig c = load_selection_config((kConfigs / "igo_selection.json").string());
    CHECK(c.spec.candidates.size() == 7);
    json j = config_json("igo_selection.json");
    j["selection"]["candidates"].push_back({{"name", "missing_col"}, {"time_dependent", false}});
    try {
        selection_config_from_json(j, kConfigs);
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("missing_col") != std::string::npos);
    }
}

TEST_CASE("command line")
{
    const fs::path dir = scratch_dir();
    const std::string cfg = (kConfigs / "igo_analog.json").string();
    const fs::path r5 = dir / "seed5.json", svg = dir / "seed5.svg";
    REQUIRE(run_cli("analyze --config " + cfg + " --seed 5 --report " + r5.string() + " --plot " + svg.string()) == 0);
    CHECK(read_json_file(r5.string()).at("seed") == 5);
    CHECK(slurp(svg).rfind("<svg", 0) == 0);

    const fs::path replot = dir / "replot.svg";
    CHECK(run_cli("plot --report " + r5.string() + " --out " + replot.string()) == 0);
    CHECK(slurp(replot) == slurp(svg));

    CHECK(run_cli("analyze") == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("dag check --template diffusion --equivalence") == 0);
    CHECK(run_cli("dag check --template no_such_template") == 3);
    CHECK(run_cli("placebo-set --config " + cfg + " --out " + (dir / "p.json").string()) == 0);
    CHECK(read_json_file((dir / "p.json").string()).at("control_sets").size() == 3);

    const fs::path empty = dir / "empty_report.json";
    std::ofstream(empty) << R"({"estimates": []})";
    CHECK(run_cli("plot --report " + empty.string() + " --out " + (dir / "e.svg").string()) == 4);
    fs::remove_all(dir);
}
