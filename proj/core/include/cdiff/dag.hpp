#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cdiff {

struct NodeId {
    std::uint32_t value = 0;
    auto operator<=>(const NodeId&) const = default;
};

using NodeSet = std::set<NodeId>;
using Path = std::vector<NodeId>;

// Identity of a node is (variable, unit, time). Time-independent nodes carry
// no time index; contextual variables shared by all units carry no unit.
struct NodeMeta {
    std::string variable;
    std::optional<int> unit;
    std::optional<int> time;
    bool time_dependent = false;
    // Nodes such as the network-tie variable that every analysis adjusts for.
    bool always_conditioned = false;
};

// "Y_2@1" for unit 2 at time 1, "G@1" for a shared series, "U_2", "W".
std::string canonical_label(const NodeMeta& meta);

struct DagNode {
    std::string label;  // empty -> canonical_label(meta)
    NodeMeta meta;
};

class CausalDag {
public:
    CausalDag() = default;

    // Validates acyclicity, unique labels and the no-backward-in-time rule.
    CausalDag(std::vector<DagNode> nodes,
              const std::vector<std::pair<std::string, std::string>>& edges);

    std::size_t size() const noexcept { return nodes_.size(); }
    const std::string& label(NodeId id) const { return nodes_.at(id.value).label; }
    const NodeMeta& meta(NodeId id) const { return nodes_.at(id.value).meta; }

    std::optional<NodeId> find(const std::string& label) const;
    NodeId id(const std::string& label) const;  // throws on unknown label
    std::optional<NodeId> find(const std::string& variable,
                               std::optional<int> unit,
                               std::optional<int> time) const;

    std::span<const NodeId> parents(NodeId id) const { return parents_.at(id.value); }
    std::span<const NodeId> children(NodeId id) const { return children_.at(id.value); }
    bool has_edge(NodeId from, NodeId to) const;

    std::vector<std::pair<NodeId, NodeId>> edges() const;
    const std::vector<NodeId>& topological_order() const noexcept { return topo_; }
    const NodeSet& always_conditioned() const noexcept { return always_; }

    NodeSet ids(std::span<const std::string> labels) const;
    std::string describe(const NodeSet& nodes) const;
    std::string describe(const Path& path) const;

private:
    std::vector<DagNode> nodes_;
    std::vector<std::vector<NodeId>> parents_;
    std::vector<std::vector<NodeId>> children_;
    std::vector<NodeId> topo_;
    NodeSet always_;
    std::unordered_map<std::string, NodeId> by_label_;
};

// --- templates ------------------------------------------------------------

struct TemplateVariable {
    std::string name;
    bool time_dependent = true;
    bool per_unit = true;
    bool always_conditioned = false;
};

// Which unit pairs a rule connects when both endpoints are per-unit.
enum class UnitLink { Same, Cross, All };

struct TemplateRule {
    std::string from;
    std::string to;
    int lag = 0;
    UnitLink units = UnitLink::Same;
};

struct DagTemplate {
    std::string name;
    int units = 2;
    std::vector<TemplateVariable> variables;
    std::vector<TemplateRule> rules;
    // Outcome series used by placebo-set reasoning on the unrolled graph.
    std::string outcome = "Y";
};

// Instantiates every rule at every valid period 0..horizon and adds the
// own-lag edge X_{i,t} -> X_{i,t+1} for every time-dependent variable.
CausalDag unroll_template(const DagTemplate& tmpl, int horizon);

// --- structural queries ---------------------------------------------------

NodeSet descendants(const CausalDag& dag, NodeId node);
// Nodes in `nodes` together with all of their ancestors.
NodeSet ancestral_closure(const CausalDag& dag, const NodeSet& nodes);

// z united with the graph's always-conditioned nodes.
NodeSet with_always_conditioned(const CausalDag& dag, const NodeSet& z);

// Reachability (Bayes-ball) d-separation. The always-conditioned nodes are
// added to z automatically.
bool d_separated(const CausalDag& dag, NodeId x, NodeId y, const NodeSet& z);
bool d_separated(const CausalDag& dag, const NodeSet& xs, const NodeSet& ys, const NodeSet& z);

// Every simple path between two nodes in the skeleton (cycle-free DFS).
std::vector<Path> all_paths(const CausalDag& dag, NodeId from, NodeId to);
// Literal blocking rule applied to one path; z is used as given.
bool path_blocked(const CausalDag& dag, const Path& path, const NodeSet& z);

// Open back-door paths from any treatment node to the outcome given z (plus
// always-conditioned nodes). Paths do not revisit treatment nodes.
std::vector<Path> unblocked_backdoor_paths(const CausalDag& dag, const NodeSet& treatment,
                                           NodeId outcome, const NodeSet& z);

// Back-door criterion via d-separation in the graph with outgoing treatment
// edges removed. Equivalent to unblocked_backdoor_paths(...).empty().
bool satisfies_backdoor(const CausalDag& dag, const NodeSet& treatment, NodeId outcome,
                        const NodeSet& z);

// Same-series node shifted by `offset` periods. Time-independent nodes map to
// themselves. Returns nullopt when the shifted node is not in the graph.
std::optional<NodeId> shifted(const CausalDag& dag, NodeId node, int offset);

enum class BiasClass { NoBias, ProperBias, ImproperBias };
const char* to_string(BiasClass c);

// The set {C, C^(-1), C^(+1), lagged treatment} used to classify bias.
NodeSet relag_augmented_set(const CausalDag& dag, const NodeSet& control, const NodeSet& treatment);

BiasClass is_proper_control(const CausalDag& dag, const NodeSet& control,
                            const NodeSet& treatment, NodeId outcome);

// --- stationarity ---------------------------------------------------------

struct StationarityViolation {
    int condition = 0;  // 1, 2 or 3
    std::string node;   // node that should exist or should have the parent
    int time = 0;
    std::string message;
};

struct StationarityReport {
    bool stationary = true;
    std::vector<StationarityViolation> violations;
};

StationarityReport is_stationary(const CausalDag& dag);

} // namespace cdiff
