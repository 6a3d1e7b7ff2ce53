#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "cdiff/dag.hpp"

namespace cdiff {

// {"nodes":[{"label"?, "variable", "unit"?, "time"?, "time_dependent",
//            "always_conditioned"?}], "edges":[["from","to"], ...]}
CausalDag dag_from_json(const nlohmann::json& j);
nlohmann::json dag_to_json(const CausalDag& dag);

// {"name", "units", "outcome"?, "variables":[...], "rules":[{"from","to","lag","units"}]}
DagTemplate template_from_json(const nlohmann::json& j);
nlohmann::json template_to_json(const DagTemplate& tmpl);

// Either a literal graph or {"template":{...}, "horizon":N}.
CausalDag load_dag(const nlohmann::json& j);
CausalDag load_dag_file(const std::string& path);

// Stationary templates that ship with the library:
//   diffusion   outcome series only, own and cross lags
//   contextual  adds a shared context series G
//   homophily   adds per-unit latent U and an always-conditioned tie W
//   combined    diffusion + contextual + homophily together
//   economic    shared series with a one-period-ahead effect on outcomes
std::vector<DagTemplate> builtin_templates();
DagTemplate builtin_template(const std::string& name);

} // namespace cdiff
