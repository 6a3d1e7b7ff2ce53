#include "cdiff/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "cdiff/error.hpp"

namespace cdiff {

using nlohmann::json;
namespace fs = std::filesystem;

const char* software_version() { return CDIFF_VERSION; }

namespace {

const json& need(const json& j, const char* key, const std::string& where)
{
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) throw ConfigError(where + ": missing field '" + key + "'");
    return *it;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback)
{
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    return it->get<T>();
}

std::vector<std::string> strings(const json& j, const char* key)
{
    return get_or<std::vector<std::string>>(j, key, {});
}

PanelSource panel_from_json(const json& j)
{
    if (!j.is_object()) throw ConfigError("panel: expected an object");
    PanelSource p;
    p.file = need(j, "file", "panel").get<std::string>();
    p.schema.unit = get_or<std::string>(j, "unit", p.schema.unit);
    p.schema.time = get_or<std::string>(j, "time", p.schema.time);
    p.schema.outcome = need(j, "outcome", "panel").get<std::string>();
    if (j.contains("cluster") && !j.at("cluster").is_null()) p.schema.cluster = j.at("cluster").get<std::string>();
    p.schema.numeric = strings(j, "numeric");
    p.schema.categorical = strings(j, "categorical");
    const std::string delim = get_or<std::string>(j, "delimiter", ",");
    if (delim.size() != 1) throw ConfigError("panel: delimiter must be one character");
    p.schema.delimiter = delim[0];
    return p;
}

WeightsSource weights_from_json(const json& j)
{
    if (!j.is_object()) throw ConfigError("weights: expected an object");
    WeightsSource w;
    const std::string kind = need(j, "kind", "weights").get<std::string>();
    if (kind == "edge_list") {
        w.kind = WeightsSource::Kind::EdgeList;
    } else if (kind == "coordinates") {
        w.kind = WeightsSource::Kind::Coordinates;
    } else if (kind == "bipartite") {
        w.kind = WeightsSource::Kind::Bipartite;
    } else {
        throw ConfigError("weights: unknown kind '" + kind + "' (expected edge_list, coordinates or bipartite)");
    }
    w.file = need(j, "file", "weights").get<std::string>();
    if (j.contains("nearest")) w.nearest = j.at("nearest").get<int>();
    if (j.contains("max_distance")) w.max_distance = j.at("max_distance").get<double>();
    if (j.contains("year")) w.year = j.at("year").get<int>();
    w.row_standardize = get_or<bool>(j, "row_standardize", false);
    if (w.nearest && *w.nearest < 1) throw ConfigError("weights: nearest must be at least 1");
    if (w.max_distance && !(*w.max_distance > 0.0)) throw ConfigError("weights: max_distance must be positive");
    if (w.kind != WeightsSource::Kind::Coordinates && (w.nearest || w.max_distance))
        throw ConfigError("weights: nearest and max_distance apply to coordinates only");
    if (w.kind != WeightsSource::Kind::Bipartite && w.year) throw ConfigError("weights: year applies to bipartite only");
    return w;
}

EstimandSpec estimand_from_json(const json& j)
{
    EstimandSpec e;
    e.d_high = need(j, "d_high", "estimand").get<double>();
    e.d_low = need(j, "d_low", "estimand").get<double>();
    e.family = parse_family(get_or<std::string>(j, "family", "gaussian"));
    e.target = parse_target(get_or<std::string>(j, "target", "acde"));
    return e;
}

std::vector<NamedControlSet> control_sets_from_json(const json& j)
{
    if (!j.is_array() || j.empty()) throw ConfigError("control_sets: expected a non-empty array");
    std::vector<NamedControlSet> out;
    std::set<std::string> seen;
    for (const auto& entry : j) {
        NamedControlSet s;
        s.label = need(entry, "label", "control set").get<std::string>();
        if (!seen.insert(s.label).second) throw ConfigError("control_sets: duplicate label '" + s.label + "'");
        const std::string base = get_or<std::string>(entry, "extends", "");
        ControlSpec own = control_from_json(entry);
        if (!base.empty()) {
            auto it = std::find_if(out.begin(), out.end(), [&](const NamedControlSet& c) { return c.label == base; });
            if (it == out.end())
                throw ConfigError("control set '" + s.label + "' extends unknown or later set '" + base + "'");
            s.control = it->control;
            if (entry.contains("treatment")) s.control.treatment = own.treatment;
            if (entry.contains("outcome")) s.control.outcome = own.outcome;
            for (const auto& v : own.variables) s.control.variables.push_back(v);
        } else {
            s.control = std::move(own);
        }
        std::set<std::string> keys;
        for (const auto& v : s.control.variables)
            if (!keys.insert(v.key()).second)
                throw ConfigError("control set '" + s.label + "': variable '" + v.key() + "' listed twice");
        out.push_back(std::move(s));
    }
    return out;
}

// Columns a control set may name: schema columns plus what the pipeline derives.
void check_schema_columns(const AnalysisConfig& c)
{
    std::set<std::string> known(c.panel.schema.numeric.begin(), c.panel.schema.numeric.end());
    known.insert(c.panel.schema.categorical.begin(), c.panel.schema.categorical.end());
    known.insert(c.panel.schema.outcome);
    known.insert("n_neighbors");
    known.insert("w_variance");
    for (const auto& s : c.control_sets) {
        for (const auto& v : s.control.variables) {
            if (v.name == s.control.outcome || v.name == s.control.treatment || known.count(v.name)) continue;
            throw ConfigError("control set '" + s.label + "': column '" + v.name + "' is not in the panel schema");
        }
    }
    if (c.moderator && !known.count(c.moderator->column))
        throw ConfigError("moderator: column '" + c.moderator->column + "' is not in the panel schema");
    if (c.panel.schema.cluster && !known.count(*c.panel.schema.cluster) &&
        *c.panel.schema.cluster != c.panel.schema.unit)
        throw ConfigError("panel: cluster column '" + *c.panel.schema.cluster + "' is not in the panel schema");
}

template <typename F>
auto translating(F&& f) -> decltype(f())
{
    try {
        return f();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

fs::path parent_of(const std::string& path)
{
    fs::path p = fs::path(path).parent_path();
    return p.empty() ? fs::path(".") : p;
}

std::string resolve(const fs::path& base, const std::string& file)
{
    const fs::path p(file);
    return (p.is_absolute() ? p : base / p).string();
}

} // namespace

json weights_to_json(const WeightsSource& w)
{
    const char* kind = w.kind == WeightsSource::Kind::EdgeList      ? "edge_list"
                       : w.kind == WeightsSource::Kind::Coordinates ? "coordinates"
                                                                    : "bipartite";
    json j = {{"kind", kind}, {"file", w.file}, {"row_standardize", w.row_standardize}};
    if (w.nearest) j["nearest"] = *w.nearest;
    if (w.max_distance) j["max_distance"] = *w.max_distance;
    if (w.year) j["year"] = *w.year;
    return j;
}

VariableMeta variable_from_json(const json& j)
{
    if (j.is_string()) return {j.get<std::string>(), false, std::nullopt, 0};
    if (!j.is_object()) throw ConfigError("variable: expected an object or a name");
    VariableMeta v;
    v.name = need(j, "name", "variable").get<std::string>();
    if (j.contains("time_dependent") && !j.at("time_dependent").is_null())
        v.time_dependent = j.at("time_dependent").get<bool>();
    if (j.contains("post_outcome") && !j.at("post_outcome").is_null())
        v.post_outcome = j.at("post_outcome").get<bool>();
    v.lag = get_or<int>(j, "lag", 0);
    return v;
}

json variable_to_json(const VariableMeta& v)
{
    json j = {{"name", v.name}, {"lag", v.lag}};
    j["time_dependent"] = v.time_dependent ? json(*v.time_dependent) : json(nullptr);
    j["post_outcome"] = v.post_outcome ? json(*v.post_outcome) : json(nullptr);
    return j;
}

ControlSpec control_from_json(const json& j)
{
    if (!j.is_object()) throw ConfigError("control set: expected an object");
    ControlSpec c;
    c.treatment = get_or<std::string>(j, "treatment", c.treatment);
    c.outcome = get_or<std::string>(j, "outcome", c.outcome);
    for (const auto& v : j.value("variables", json::array())) c.variables.push_back(variable_from_json(v));
    return c;
}

json control_to_json(const ControlSpec& c, const std::string& label)
{
    json j = json::object();
    if (!label.empty()) j["label"] = label;
    j["treatment"] = c.treatment;
    j["outcome"] = c.outcome;
    j["variables"] = json::array();
    for (const auto& v : c.variables) j["variables"].push_back(variable_to_json(v));
    return j;
}

AnalysisConfig analysis_config_from_json(const json& j, const fs::path& base_dir)
{
    return translating([&] {
        if (!j.is_object()) throw ConfigError("config: expected a JSON object");
        const int version = get_or<int>(j, "schema_version", kReportSchemaVersion);
        if (version != kReportSchemaVersion)
            throw ConfigError("config: unsupported schema_version " + std::to_string(version));
        AnalysisConfig c;
        c.name = get_or<std::string>(j, "name", "analysis");
        c.base_dir = base_dir;
        c.panel = panel_from_json(need(j, "panel", "config"));
        c.weights = weights_from_json(need(j, "weights", "config"));
        c.estimand = estimand_from_json(need(j, "estimand", "config"));
        c.control_sets = control_sets_from_json(need(j, "control_sets", "config"));
        if (j.contains("moderator") && !j.at("moderator").is_null()) {
            const json& m = j.at("moderator");
            c.moderator = ModeratorSpec{need(m, "column", "moderator").get<std::string>(),
                                        need(m, "cutoff", "moderator").get<double>()};
        }
        c.diagnostics = get_or<bool>(j, "diagnostics", true);
        const json out = j.value("output", json::object());
        c.report_path = get_or<std::string>(out, "report", "");
        c.plot_path = get_or<std::string>(out, "plot", "");
        c.seed = get_or<std::uint64_t>(j, "seed", 1);
        c.threads = get_or<unsigned>(j, "threads", 0);
        check_schema_columns(c);
        return c;
    });
}

AnalysisConfig load_analysis_config(const std::string& path)
{
    return analysis_config_from_json(read_json_file(path), parent_of(path));
}

AnalysisInputs load_inputs(const AnalysisConfig& config)
{
    AnalysisInputs in;
    in.panel = load_panel(resolve(config.base_dir, config.panel.file), config.panel.schema);
    const std::string wfile = resolve(config.base_dir, config.weights.file);
    switch (config.weights.kind) {
    case WeightsSource::Kind::EdgeList: in.weights = load_edge_list(wfile, in.panel.units()); break;
    case WeightsSource::Kind::Coordinates:
        in.weights = build_inverse_distance_weights(load_coordinates(wfile), config.weights.nearest,
                                                    config.weights.max_distance);
        break;
    case WeightsSource::Kind::Bipartite: {
        const auto members = load_memberships(wfile);
        BipartiteWeights b = config.weights.year
                                 ? build_bipartite_igo_weights(members, *config.weights.year, in.panel.units())
                                 : build_bipartite_igo_panel(members, in.panel.units());
        for (auto& w : b.warnings) in.panel.notes.push_back(std::move(w));
        in.weights = std::move(b.weights);
        break;
    }
    }
    if (config.weights.row_standardize) in.weights = in.weights.row_standardized();
    validate_columns(config, in.panel);
    return in;
}

void validate_columns(const AnalysisConfig& config, const PanelDataset& panel)
{
    for (const auto& s : config.control_sets) {
        for (const auto& v : s.control.variables) {
            if (v.name == s.control.outcome || v.name == s.control.treatment) continue;
            if (v.name == "n_neighbors" || v.name == "w_variance") continue;
            if (!panel.has(v.name))
                throw ConfigError("control set '" + s.label + "': column '" + v.name + "' not found in the panel");
        }
    }
    if (config.moderator && !panel.has(config.moderator->column))
        throw ConfigError("moderator: column '" + config.moderator->column + "' not found in the panel");
}

SelectionConfig selection_config_from_json(const json& j, const fs::path& base_dir)
{
    return translating([&] {
        json analysis = j;
        const json& sel = need(j, "selection", "config");
        if (!analysis.contains("control_sets")) {
            analysis["control_sets"] = json::array({{{"label", "candidates"}, {"variables", json::array()}}});
        }
        SelectionConfig c;
        c.analysis = analysis_config_from_json(analysis, base_dir);
        c.spec.treatment = get_or<std::string>(sel, "treatment", c.spec.treatment);
        c.spec.outcome = get_or<std::string>(sel, "outcome", c.spec.outcome);
        for (const auto& v : need(sel, "candidates", "selection")) c.spec.candidates.push_back(variable_from_json(v));
        if (c.spec.candidates.empty()) throw ConfigError("selection: candidates must not be empty");
        c.mrf.edge_rule = parse_edge_rule(get_or<std::string>(sel, "edge_rule", to_string(c.mrf.edge_rule)));
        c.mrf.lambda_rule = parse_lambda_rule(get_or<std::string>(sel, "lambda_rule", to_string(c.mrf.lambda_rule)));
        c.mrf.lambda = get_or<double>(sel, "lambda", c.mrf.lambda);
        c.mrf.folds = get_or<int>(sel, "folds", c.mrf.folds);
        c.mrf.n_lambda = get_or<int>(sel, "n_lambda", c.mrf.n_lambda);
        c.alpha = get_or<double>(sel, "alpha", c.alpha);
        if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("selection: alpha must lie in (0, 1)");
        c.output_path = get_or<std::string>(sel, "output", "");
        ControlSpec probe{c.spec.candidates, c.spec.treatment, c.spec.outcome};
        c.analysis.control_sets.push_back({"selection candidates", probe});
        check_schema_columns(c.analysis);
        c.analysis.control_sets.pop_back();
        return c;
    });
}

SelectionConfig load_selection_config(const std::string& path)
{
    return selection_config_from_json(read_json_file(path), parent_of(path));
}

SimulationSuite suite_from_json(const json& j, const fs::path& base_dir)
{
    return translating([&] {
        if (!j.is_object()) throw ConfigError("suite: expected a JSON object");
        SimulationSuite s;
        s.base_dir = base_dir;
        s.seed = get_or<std::uint64_t>(j, "seed", 1);
        s.threads = get_or<unsigned>(j, "threads", 0);
        s.output_path = get_or<std::string>(j, "output", "");
        std::set<std::string> names;
        for (const auto& e : j.value("entries", json::array())) {
            SuiteEntry entry;
            entry.name = need(e, "name", "suite entry").get<std::string>();
            if (!names.insert(entry.name).second) throw ConfigError("suite: duplicate entry '" + entry.name + "'");
            entry.scenario = need(e, "scenario", "suite entry '" + entry.name + "'");
            entry.estimator = get_or<std::string>(e, "estimator", entry.estimator);
            if (entry.estimator != "placebo" && entry.estimator != "bias_correction")
                throw ConfigError("suite entry '" + entry.name + "': unknown estimator '" + entry.estimator + "'");
            if (e.contains("ladder")) entry.ladder = e.at("ladder").get<std::vector<json>>();
            entry.control = e.value("control", json("basic"));
            entry.replications = get_or<std::size_t>(e, "replications", entry.replications);
            if (e.contains("seed")) entry.seed = e.at("seed").get<std::uint64_t>();
            entry.alpha = get_or<double>(e, "alpha", entry.alpha);
            s.entries.push_back(std::move(entry));
        }
        return s;
    });
}

SimulationSuite load_suite(const std::string& path) { return suite_from_json(read_json_file(path), parent_of(path)); }

json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
}

std::string dump_report(const json& j) { return j.dump(2) + "\n"; }

void write_text(const std::string& path, const std::string& text)
{
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << text;
    if (!out) throw ConfigError("failed writing '" + path + "'");
}

} // namespace cdiff
