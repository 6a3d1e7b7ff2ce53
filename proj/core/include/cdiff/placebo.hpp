#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cdiff/dag.hpp"

namespace cdiff {

// Role metadata for one control variable. `lag` is the period offset relative
// to the treatment time t: 0 is period t, -1 is t-1, +1 is t+1 (the outcome
// period of the main model). Time-independent variables always have lag 0.
struct VariableMeta {
    std::string name;
    std::optional<bool> time_dependent;
    // Member of Des(Y_it) ∪ {Y_it}. Required for time-dependent variables.
    std::optional<bool> post_outcome;
    int lag = 0;

    std::string key() const;  // "x", "x_lag1", "x_lead1"
    bool operator==(const VariableMeta& other) const = default;
};

std::string lagged_name(const std::string& name, int lag);

struct ControlSpec {
    std::vector<VariableMeta> variables;
    std::string treatment = "D";
    std::string outcome = "Y";
};

struct PlaceboSpec {
    std::vector<VariableMeta> variables;
    std::string treatment;
    std::string outcome;
    std::vector<std::string> removed;  // keys dropped as members of Des(Y_it)

    std::vector<std::string> keys() const;
};

// C^P = {C, one-period lags of the time-dependent members, lagged treatment}
// minus members flagged post_outcome. A derived lag is treated as a
// non-descendant unless the same (name, lag) is declared in C with its own flag.
PlaceboSpec derive_placebo_set(const ControlSpec& control);

struct ControlDecomposition {
    std::vector<VariableMeta> x;  // time-dependent, in Des(Y_it)
    std::vector<VariableMeta> v;  // time-dependent, not in Des(Y_it)
    std::vector<VariableMeta> z;  // time-independent
    // {V, V^(-1), Z, lagged treatment}
    std::vector<VariableMeta> base;

    std::vector<std::string> base_keys() const;
};

ControlDecomposition decompose_control_set(const ControlSpec& control);

// --- binding symbolic sets to an unrolled graph ---------------------------

// How a symbolic name maps onto graph nodes. Focal: the focal unit's series;
// Shared: a series without unit index; Neighbors: one node per neighbor unit.
struct SeriesRef {
    enum class Scope { Focal, Shared, Neighbors };
    std::string variable;
    Scope scope = Scope::Focal;
};

struct DagBinding {
    int time = 1;  // treatment period t
    int focal_unit = 1;
    std::vector<int> neighbor_units;
    // Names not listed bind to the graph variable of the same name, focal unit
    // first, then shared.
    std::map<std::string, SeriesRef> series;
};

struct BoundSet {
    NodeSet nodes;
    std::vector<std::string> dropped;  // keys that fall before the first period
};

BoundSet bind_to_dag(const CausalDag& dag, const std::vector<VariableMeta>& vars,
                     const DagBinding& binding);

// Graph-level version of the rule: lags come from the graph and Des(Y_it)
// is computed rather than declared. Lags before the first period are dropped.
NodeSet derive_placebo_nodes(const CausalDag& dag, const NodeSet& control, const NodeSet& treatment,
                             NodeId placebo_outcome);

// Members of a symbolic placebo set that are descendants of (or equal to)
// the placebo outcome in the supplied graph.
std::vector<std::string> placebo_descendant_conflicts(const CausalDag& dag, const PlaceboSpec& placebo,
                                                      const DagBinding& binding);

// --- graph-level equivalence check ----------------------------------------

struct EquivalenceCounterexample {
    int time = 0;
    std::string control;
    std::string placebo;
    bool main_blocked = false;
    bool placebo_blocked = false;
};

struct EquivalenceReport {
    std::string template_name;
    int horizon = 0;
    std::size_t control_sets_checked = 0;
    std::size_t proper_sets = 0;
    std::vector<EquivalenceCounterexample> counterexamples;
};

// For every treatment period t with 1 <= t <= horizon-1 and every subset C of
// candidate nodes that is a proper control set, compares back-door blocking of
// (treatment -> Y_{t+1} | C) with (treatment -> Y_t | C^P). Candidates are
// non-descendants of the treatment whose lag and forward lag are in the graph
// and whose offset from t is at most +1.
EquivalenceReport check_placebo_equivalence(const DagTemplate& tmpl, int horizon, int focal_unit = 2);

} // namespace cdiff
