#include "cdiff/dag_io.hpp"

#include <fstream>

#include "cdiff/error.hpp"

namespace cdiff {

using nlohmann::json;

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback)
{
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    return it->get<T>();
}

UnitLink parse_link(const std::string& s)
{
    if (s == "same") return UnitLink::Same;
    if (s == "cross") return UnitLink::Cross;
    if (s == "all") return UnitLink::All;
    throw ConfigError("template: unknown unit link '" + s + "' (expected same, cross or all)");
}

const char* link_name(UnitLink l)
{
    switch (l) {
    case UnitLink::Same: return "same";
    case UnitLink::Cross: return "cross";
    case UnitLink::All: return "all";
    }
    return "same";
}

} // namespace

CausalDag dag_from_json(const json& j)
{
    try {
        std::vector<DagNode> nodes;
        for (const auto& n : j.at("nodes")) {
            DagNode node;
            node.label = get_or<std::string>(n, "label", "");
            node.meta.variable = n.at("variable").get<std::string>();
            if (n.contains("unit") && !n["unit"].is_null()) node.meta.unit = n["unit"].get<int>();
            if (n.contains("time") && !n["time"].is_null()) node.meta.time = n["time"].get<int>();
            node.meta.time_dependent = get_or<bool>(n, "time_dependent", node.meta.time.has_value());
            node.meta.always_conditioned = get_or<bool>(n, "always_conditioned", false);
            if (node.meta.time_dependent && !node.meta.time) {
                throw ConfigError("dag: time-dependent node '" + node.meta.variable + "' has no time");
            }
            nodes.push_back(std::move(node));
        }
        std::vector<std::pair<std::string, std::string>> edges;
        for (const auto& e : j.at("edges")) {
            if (!e.is_array() || e.size() != 2) throw ConfigError("dag: each edge must be [from, to]");
            edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
        }
        return CausalDag(std::move(nodes), edges);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("dag: malformed graph description: ") + e.what());
    }
}

json dag_to_json(const CausalDag& dag)
{
    json nodes = json::array();
    for (std::uint32_t i = 0; i < dag.size(); ++i) {
        const auto& m = dag.meta(NodeId{i});
        json n = {{"label", dag.label(NodeId{i})}, {"variable", m.variable}};
        n["unit"] = m.unit ? json(*m.unit) : json(nullptr);
        n["time"] = m.time ? json(*m.time) : json(nullptr);
        n["time_dependent"] = m.time_dependent;
        n["always_conditioned"] = m.always_conditioned;
        nodes.push_back(std::move(n));
    }
    json edges = json::array();
    for (auto [a, b] : dag.edges()) edges.push_back({dag.label(a), dag.label(b)});
    return {{"nodes", nodes}, {"edges", edges}};
}

DagTemplate template_from_json(const json& j)
{
    try {
        DagTemplate t;
        t.name = get_or<std::string>(j, "name", "custom");
        t.units = get_or<int>(j, "units", 2);
        t.outcome = get_or<std::string>(j, "outcome", "Y");
        for (const auto& v : j.at("variables")) {
            TemplateVariable tv;
            tv.name = v.at("name").get<std::string>();
            tv.time_dependent = get_or<bool>(v, "time_dependent", true);
            tv.per_unit = get_or<bool>(v, "per_unit", true);
            tv.always_conditioned = get_or<bool>(v, "always_conditioned", false);
            t.variables.push_back(tv);
        }
        for (const auto& r : j.value("rules", json::array())) {
            TemplateRule rule;
            rule.from = r.at("from").get<std::string>();
            rule.to = r.at("to").get<std::string>();
            rule.lag = get_or<int>(r, "lag", 0);
            rule.units = parse_link(get_or<std::string>(r, "units", "same"));
            t.rules.push_back(rule);
        }
        return t;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("template: malformed description: ") + e.what());
    }
}

json template_to_json(const DagTemplate& tmpl)
{
    json vars = json::array();
    for (const auto& v : tmpl.variables) {
        vars.push_back({{"name", v.name},
                        {"time_dependent", v.time_dependent},
                        {"per_unit", v.per_unit},
                        {"always_conditioned", v.always_conditioned}});
    }
    json rules = json::array();
    for (const auto& r : tmpl.rules) {
        rules.push_back({{"from", r.from}, {"to", r.to}, {"lag", r.lag}, {"units", link_name(r.units)}});
    }
    return {{"name", tmpl.name}, {"units", tmpl.units}, {"outcome", tmpl.outcome},
            {"variables", vars}, {"rules", rules}};
}

CausalDag load_dag(const json& j)
{
    if (j.contains("template")) {
        const auto& t = j["template"];
        DagTemplate tmpl = t.is_string() ? builtin_template(t.get<std::string>()) : template_from_json(t);
        if (!j.contains("horizon")) throw ConfigError("dag: template given without a horizon");
        return unroll_template(tmpl, j["horizon"].get<int>());
    }
    return dag_from_json(j);
}

CausalDag load_dag_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open graph file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("graph file '" + path + "' is not valid JSON: " + e.what());
    }
    return load_dag(j);
}

std::vector<DagTemplate> builtin_templates()
{
    std::vector<DagTemplate> out;

    DagTemplate diffusion;
    diffusion.name = "diffusion";
    diffusion.variables = {{"Y"}};
    diffusion.rules = {{"Y", "Y", 1, UnitLink::Cross}};
    out.push_back(diffusion);

    DagTemplate contextual = diffusion;
    contextual.name = "contextual";
    contextual.variables.push_back({"G", true, false, false});
    contextual.rules.push_back({"G", "Y", 0, UnitLink::Same});
    out.push_back(contextual);

    DagTemplate homophily = diffusion;
    homophily.name = "homophily";
    homophily.variables.push_back({"U", false, true, false});
    homophily.variables.push_back({"W", false, false, true});
    homophily.rules.push_back({"U", "Y", 0, UnitLink::Same});
    homophily.rules.push_back({"U", "W", 0, UnitLink::Same});
    out.push_back(homophily);

    DagTemplate combined = homophily;
    combined.name = "combined";
    combined.variables.push_back({"G", true, false, false});
    combined.rules.push_back({"G", "Y", 0, UnitLink::Same});
    out.push_back(combined);

    DagTemplate economic = diffusion;
    economic.name = "economic";
    economic.variables.push_back({"E", true, false, false});
    economic.rules.push_back({"E", "Y", 0, UnitLink::Same});
    economic.rules.push_back({"E", "Y", 1, UnitLink::Same});
    out.push_back(economic);

    return out;
}

DagTemplate builtin_template(const std::string& name)
{
    for (auto& t : builtin_templates()) {
        if (t.name == name) return t;
    }
    throw ConfigError("unknown built-in template '" + name + "'");
}

} // namespace cdiff
