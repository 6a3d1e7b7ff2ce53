#include "cdiff/placebo.hpp"

#include <algorithm>
#include <set>

#include "cdiff/error.hpp"

namespace cdiff {
namespace {

void validate(const ControlSpec& control)
{
    if (control.treatment.empty()) throw ConfigError("control set: treatment name is empty");
    if (control.outcome.empty()) throw ConfigError("control set: outcome name is empty");
    for (const auto& v : control.variables) {
        if (v.name.empty()) throw ConfigError("control set: variable without a name");
        if (!v.time_dependent) {
            throw ConfigError("control set: metadata missing for '" + v.name + "' (time_dependent)");
        }
        if (*v.time_dependent && !v.post_outcome) {
            throw ConfigError("control set: metadata missing for '" + v.name + "' (post_outcome)");
        }
        if (!*v.time_dependent && v.lag != 0) {
            throw ConfigError("control set: time-independent '" + v.name + "' cannot carry a lag");
        }
        if (v.lag > 1) {
            throw ConfigError("control set: '" + v.key() + "' lies after the outcome period");
        }
        if (v.name == control.outcome && v.lag == 1) {
            throw ConfigError("control set: contains the outcome at t+1");
        }
        if (v.name == control.treatment && v.lag == 0) {
            throw ConfigError("control set: contains the treatment at t");
        }
    }
}

bool is_post_outcome(const ControlSpec& control, const VariableMeta& v)
{
    if (v.name == control.outcome && v.lag == 0) return true;  // Y_it itself
    return v.time_dependent.value_or(false) && v.post_outcome.value_or(false);
}

VariableMeta lag_of(const VariableMeta& v)
{
    VariableMeta out = v;
    out.lag = v.lag - 1;
    out.post_outcome = false;
    return out;
}

VariableMeta lagged_treatment(const std::string& treatment)
{
    return VariableMeta{treatment, true, false, -1};
}

void push_unique(std::vector<VariableMeta>& out, std::set<std::string>& seen, const VariableMeta& v)
{
    if (seen.insert(v.key()).second) out.push_back(v);
}

} // namespace

std::string lagged_name(const std::string& name, int lag)
{
    if (lag == 0) return name;
    if (lag < 0) return name + "_lag" + std::to_string(-lag);
    return name + "_lead" + std::to_string(lag);
}

std::string VariableMeta::key() const { return lagged_name(name, lag); }

std::vector<std::string> PlaceboSpec::keys() const
{
    std::vector<std::string> out;
    for (const auto& v : variables) out.push_back(v.key());
    return out;
}

std::vector<std::string> ControlDecomposition::base_keys() const
{
    std::vector<std::string> out;
    for (const auto& v : base) out.push_back(v.key());
    return out;
}

PlaceboSpec derive_placebo_set(const ControlSpec& control)
{
    validate(control);

    std::map<std::string, VariableMeta> declared;
    for (const auto& v : control.variables) declared.emplace(v.key(), v);
    auto resolve = [&](const VariableMeta& v) {
        auto it = declared.find(v.key());
        return it == declared.end() ? v : it->second;
    };

    std::vector<VariableMeta> candidates;
    std::set<std::string> seen;
    for (const auto& v : control.variables) {
        push_unique(candidates, seen, v);
        if (*v.time_dependent) push_unique(candidates, seen, resolve(lag_of(v)));
    }
    push_unique(candidates, seen, resolve(lagged_treatment(control.treatment)));

    PlaceboSpec out;
    out.treatment = control.treatment;
    out.outcome = control.outcome;
    for (const auto& v : candidates) {
        if (is_post_outcome(control, v)) {
            out.removed.push_back(v.key());
        } else {
            out.variables.push_back(v);
        }
    }
    return out;
}

ControlDecomposition decompose_control_set(const ControlSpec& control)
{
    validate(control);
    ControlDecomposition out;
    std::set<std::string> seen;
    for (const auto& v : control.variables) {
        if (!*v.time_dependent) {
            out.z.push_back(v);
        } else if (is_post_outcome(control, v)) {
            out.x.push_back(v);
        } else {
            out.v.push_back(v);
        }
    }
    for (const auto& v : out.v) {
        push_unique(out.base, seen, v);
        push_unique(out.base, seen, lag_of(v));
    }
    for (const auto& z : out.z) push_unique(out.base, seen, z);
    push_unique(out.base, seen, lagged_treatment(control.treatment));

    // C^B never carries a member of X, even when a lag of V coincides with one.
    std::set<std::string> x_keys;
    for (const auto& x : out.x) x_keys.insert(x.key());
    std::erase_if(out.base, [&](const VariableMeta& v) { return x_keys.count(v.key()) > 0; });
    return out;
}

// --- binding --------------------------------------------------------------

BoundSet bind_to_dag(const CausalDag& dag, const std::vector<VariableMeta>& vars, const DagBinding& binding)
{
    BoundSet out;
    for (const auto& v : vars) {
        SeriesRef ref;
        if (auto it = binding.series.find(v.name); it != binding.series.end()) {
            ref = it->second;
        } else {
            ref.variable = v.name;
            bool focal = false;
            for (std::uint32_t i = 0; i < dag.size() && !focal; ++i) {
                const auto& m = dag.meta(NodeId{i});
                focal = m.variable == v.name && m.unit == binding.focal_unit;
            }
            ref.scope = focal ? SeriesRef::Scope::Focal : SeriesRef::Scope::Shared;
        }

        const bool td = v.time_dependent.value_or(true);
        const std::optional<int> time = td ? std::optional<int>(binding.time + v.lag) : std::nullopt;

        std::vector<std::optional<int>> units;
        switch (ref.scope) {
        case SeriesRef::Scope::Focal: units.emplace_back(binding.focal_unit); break;
        case SeriesRef::Scope::Shared: units.emplace_back(std::nullopt); break;
        case SeriesRef::Scope::Neighbors:
            for (int j : binding.neighbor_units) units.emplace_back(j);
            break;
        }

        for (const auto& unit : units) {
            if (auto node = dag.find(ref.variable, unit, time)) {
                out.nodes.insert(*node);
            } else if (time && *time < 0) {
                out.dropped.push_back(v.key());
            } else {
                throw ConfigError("bind: no graph node for '" + v.key() + "' (variable " + ref.variable +
                                  (unit ? ", unit " + std::to_string(*unit) : std::string()) +
                                  (time ? ", time " + std::to_string(*time) : std::string()) + ")");
            }
        }
    }
    return out;
}

NodeSet derive_placebo_nodes(const CausalDag& dag, const NodeSet& control, const NodeSet& treatment,
                             NodeId placebo_outcome)
{
    NodeSet out;
    for (NodeId c : control) {
        out.insert(c);
        if (dag.meta(c).time_dependent) {
            if (auto lag = shifted(dag, c, -1)) out.insert(*lag);
        }
    }
    for (NodeId t : treatment) {
        if (auto lag = shifted(dag, t, -1)) out.insert(*lag);
    }
    out.erase(placebo_outcome);
    for (NodeId d : descendants(dag, placebo_outcome)) out.erase(d);
    return out;
}

std::vector<std::string> placebo_descendant_conflicts(const CausalDag& dag, const PlaceboSpec& placebo,
                                                      const DagBinding& binding)
{
    SeriesRef outcome_ref{placebo.outcome, SeriesRef::Scope::Focal};
    if (auto it = binding.series.find(placebo.outcome); it != binding.series.end()) outcome_ref = it->second;
    const auto y = dag.find(outcome_ref.variable, binding.focal_unit, binding.time);
    if (!y) throw ConfigError("placebo check: outcome node missing at the treatment period");
    NodeSet banned = descendants(dag, *y);
    banned.insert(*y);

    std::vector<std::string> out;
    for (const auto& v : placebo.variables) {
        const BoundSet bound = bind_to_dag(dag, {v}, binding);
        for (NodeId n : bound.nodes) {
            if (banned.count(n)) {
                out.push_back(v.key());
                break;
            }
        }
    }
    return out;
}

// --- equivalence check ----------------------------------------------------

EquivalenceReport check_placebo_equivalence(const DagTemplate& tmpl, int horizon, int focal_unit)
{
    if (horizon < 2) throw ConfigError("equivalence check: horizon must be >= 2");
    const CausalDag dag = unroll_template(tmpl, horizon);
    EquivalenceReport report;
    report.template_name = tmpl.name;
    report.horizon = horizon;

    for (int t = 1; t <= horizon - 1; ++t) {
        NodeSet treatment;
        for (int j = 1; j <= tmpl.units; ++j) {
            if (j == focal_unit) continue;
            if (auto n = dag.find(tmpl.outcome, j, t)) treatment.insert(*n);
        }
        const auto outcome = dag.find(tmpl.outcome, focal_unit, t + 1);
        const auto placebo = dag.find(tmpl.outcome, focal_unit, t);
        if (treatment.empty() || !outcome || !placebo) {
            throw ConfigError("equivalence check: template lacks outcome/treatment nodes");
        }

        NodeSet downstream;
        for (NodeId d : treatment) {
            const NodeSet des = descendants(dag, d);
            downstream.insert(des.begin(), des.end());
        }

        std::vector<NodeId> candidates;
        for (std::uint32_t i = 0; i < dag.size(); ++i) {
            const NodeId v{i};
            const auto& m = dag.meta(v);
            if (treatment.count(v) || downstream.count(v) || m.always_conditioned || v == *outcome) continue;
            if (m.time_dependent && (*m.time < 1 || *m.time > horizon - 1 || *m.time > t + 1)) continue;
            candidates.push_back(v);
        }
        if (candidates.size() > 20) {
            throw ConfigError("equivalence check: too many candidate nodes for exhaustive search");
        }

        const std::uint64_t n_subsets = std::uint64_t{1} << candidates.size();
        for (std::uint64_t mask = 0; mask < n_subsets; ++mask) {
            NodeSet control;
            for (std::size_t k = 0; k < candidates.size(); ++k) {
                if (mask & (std::uint64_t{1} << k)) control.insert(candidates[k]);
            }
            ++report.control_sets_checked;
            if (is_proper_control(dag, control, treatment, *outcome) == BiasClass::ImproperBias) continue;
            ++report.proper_sets;

            const NodeSet cp = derive_placebo_nodes(dag, control, treatment, *placebo);
            const bool main_blocked = satisfies_backdoor(dag, treatment, *outcome, control);
            const bool placebo_blocked = satisfies_backdoor(dag, treatment, *placebo, cp);
            if (main_blocked != placebo_blocked) {
                report.counterexamples.push_back(
                    {t, dag.describe(control), dag.describe(cp), main_blocked, placebo_blocked});
            }
        }
    }
    return report;
}

} // namespace cdiff
