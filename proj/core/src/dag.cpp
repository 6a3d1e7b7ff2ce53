#include "cdiff/dag.hpp"

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <queue>
#include <sstream>
#include <stdexcept>

#include "cdiff/error.hpp"

namespace cdiff {
namespace {

std::string identity_key(const std::string& variable, std::optional<int> unit, std::optional<int> time)
{
    std::string key = variable;
    key += '|';
    if (unit) key += std::to_string(*unit);
    key += '|';
    if (time) key += std::to_string(*time);
    return key;
}

bool contains(const NodeSet& s, NodeId id) { return s.find(id) != s.end(); }

// Bayes-ball reachability. Edges out of any node in `cut` are treated as
// deleted. Returns every node reachable from `sources` by an active trail.
NodeSet reachable(const CausalDag& dag, const NodeSet& sources, const NodeSet& z, const NodeSet& cut)
{
    // Phase 1: z and its ancestors, in the (possibly mutilated) graph.
    std::vector<char> in_anc(dag.size(), 0);
    std::deque<NodeId> work(z.begin(), z.end());
    while (!work.empty()) {
        NodeId v = work.front();
        work.pop_front();
        if (in_anc[v.value]) continue;
        in_anc[v.value] = 1;
        for (NodeId p : dag.parents(v)) {
            if (contains(cut, p)) continue;
            if (!in_anc[p.value]) work.push_back(p);
        }
    }

    // Phase 2: traverse (node, direction) states. up = arrived from a child.
    std::vector<char> visited_up(dag.size(), 0), visited_down(dag.size(), 0);
    std::vector<char> reached(dag.size(), 0);
    std::deque<std::pair<NodeId, bool>> queue;
    for (NodeId s : sources) queue.emplace_back(s, true);

    while (!queue.empty()) {
        auto [v, up] = queue.front();
        queue.pop_front();
        auto& seen = up ? visited_up : visited_down;
        if (seen[v.value]) continue;
        seen[v.value] = 1;

        const bool in_z = contains(z, v);
        if (!in_z) reached[v.value] = 1;

        const bool can_go_down = !contains(cut, v);
        if (up && !in_z) {
            for (NodeId p : dag.parents(v)) {
                if (!contains(cut, p)) queue.emplace_back(p, true);
            }
            if (can_go_down) {
                for (NodeId c : dag.children(v)) queue.emplace_back(c, false);
            }
        } else if (!up) {
            if (!in_z && can_go_down) {
                for (NodeId c : dag.children(v)) queue.emplace_back(c, false);
            }
            if (in_anc[v.value]) {
                for (NodeId p : dag.parents(v)) {
                    if (!contains(cut, p)) queue.emplace_back(p, true);
                }
            }
        }
    }

    NodeSet out;
    for (std::uint32_t i = 0; i < dag.size(); ++i) {
        if (reached[i]) out.insert(NodeId{i});
    }
    return out;
}

std::vector<NodeId> skeleton_neighbors(const CausalDag& dag, NodeId v)
{
    std::vector<NodeId> out(dag.parents(v).begin(), dag.parents(v).end());
    out.insert(out.end(), dag.children(v).begin(), dag.children(v).end());
    std::sort(out.begin(), out.end());
    return out;
}

// Depth-first search over simple back-door paths. `internal_ok(prev, v, next)`
// decides whether v may sit on the path between prev and next. When
// `first_only` is set the search stops at the first complete path.
void backdoor_search(const CausalDag& dag, const NodeSet& treatment, NodeId outcome,
                     const std::function<bool(NodeId, NodeId, NodeId)>& internal_ok,
                     bool first_only, std::vector<Path>& out)
{
    std::vector<char> on_path(dag.size(), 0);
    Path path;
    bool done = false;

    std::function<void()> extend = [&]() {
        if (done) return;
        NodeId current = path.back();
        if (current == outcome) {
            out.push_back(path);
            if (first_only) done = true;
            return;
        }
        for (NodeId next : skeleton_neighbors(dag, current)) {
            if (on_path[next.value] || contains(treatment, next)) continue;
            if (!internal_ok(path[path.size() - 2], current, next)) continue;
            path.push_back(next);
            on_path[next.value] = 1;
            extend();
            on_path[next.value] = 0;
            path.pop_back();
            if (done) return;
        }
    };

    for (NodeId t : treatment) {
        for (NodeId p : dag.parents(t)) {
            if (contains(treatment, p)) continue;
            path = {t, p};
            std::fill(on_path.begin(), on_path.end(), 0);
            on_path[t.value] = 1;
            on_path[p.value] = 1;
            extend();
            if (done) return;
        }
    }
}

} // namespace

std::string canonical_label(const NodeMeta& meta)
{
    std::string label = meta.variable;
    if (meta.unit) label += "_" + std::to_string(*meta.unit);
    if (meta.time) label += "@" + std::to_string(*meta.time);
    return label;
}

CausalDag::CausalDag(std::vector<DagNode> nodes,
                     const std::vector<std::pair<std::string, std::string>>& edges)
    : nodes_(std::move(nodes))
{
    const std::size_t n = nodes_.size();
    parents_.assign(n, {});
    children_.assign(n, {});
    std::unordered_map<std::string, NodeId> by_identity;

    for (std::uint32_t i = 0; i < n; ++i) {
        auto& node = nodes_[i];
        if (node.meta.variable.empty()) throw ConfigError("dag: node without a variable name");
        if (node.label.empty()) node.label = canonical_label(node.meta);
        if (!by_label_.emplace(node.label, NodeId{i}).second) {
            throw ConfigError("dag: duplicate node label '" + node.label + "'");
        }
        const auto key = identity_key(node.meta.variable, node.meta.unit, node.meta.time);
        if (!by_identity.emplace(key, NodeId{i}).second) {
            throw ConfigError("dag: two nodes share the identity of '" + node.label + "'");
        }
        if (node.meta.always_conditioned) always_.insert(NodeId{i});
    }

    std::set<std::pair<NodeId, NodeId>> seen;
    for (const auto& [from_label, to_label] : edges) {
        NodeId from = id(from_label);
        NodeId to = id(to_label);
        if (from == to) throw ConfigError("dag: self-loop on '" + from_label + "'");
        const auto& mf = nodes_[from.value].meta;
        const auto& mt = nodes_[to.value].meta;
        if (mf.time && mt.time && *mf.time > *mt.time) {
            throw ConfigError("dag: edge " + from_label + " -> " + to_label + " points backward in time");
        }
        if (!seen.emplace(from, to).second) continue;
        children_[from.value].push_back(to);
        parents_[to.value].push_back(from);
    }
    for (auto& v : parents_) std::sort(v.begin(), v.end());
    for (auto& v : children_) std::sort(v.begin(), v.end());

    // Kahn's algorithm, smallest index first for a deterministic order.
    std::vector<std::size_t> indegree(n);
    std::priority_queue<std::uint32_t, std::vector<std::uint32_t>, std::greater<>> ready;
    for (std::uint32_t i = 0; i < n; ++i) {
        indegree[i] = parents_[i].size();
        if (indegree[i] == 0) ready.push(i);
    }
    while (!ready.empty()) {
        std::uint32_t v = ready.top();
        ready.pop();
        topo_.push_back(NodeId{v});
        for (NodeId c : children_[v]) {
            if (--indegree[c.value] == 0) ready.push(c.value);
        }
    }
    if (topo_.size() != n) throw ConfigError("dag: graph contains a directed cycle");
}

std::optional<NodeId> CausalDag::find(const std::string& label) const
{
    auto it = by_label_.find(label);
    if (it == by_label_.end()) return std::nullopt;
    return it->second;
}

NodeId CausalDag::id(const std::string& label) const
{
    auto found = find(label);
    if (!found) throw ConfigError("dag: unknown node '" + label + "'");
    return *found;
}

std::optional<NodeId> CausalDag::find(const std::string& variable, std::optional<int> unit,
                                      std::optional<int> time) const
{
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        const auto& m = nodes_[i].meta;
        if (m.variable == variable && m.unit == unit && m.time == time) return NodeId{i};
    }
    return std::nullopt;
}

bool CausalDag::has_edge(NodeId from, NodeId to) const
{
    const auto& ch = children_.at(from.value);
    return std::binary_search(ch.begin(), ch.end(), to);
}

std::vector<std::pair<NodeId, NodeId>> CausalDag::edges() const
{
    std::vector<std::pair<NodeId, NodeId>> out;
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        for (NodeId c : children_[i]) out.emplace_back(NodeId{i}, c);
    }
    return out;
}

NodeSet CausalDag::ids(std::span<const std::string> labels) const
{
    NodeSet out;
    for (const auto& l : labels) out.insert(id(l));
    return out;
}

std::string CausalDag::describe(const NodeSet& nodes) const
{
    std::string out = "{";
    bool first = true;
    for (NodeId v : nodes) {
        if (!first) out += ", ";
        out += label(v);
        first = false;
    }
    return out + "}";
}

std::string CausalDag::describe(const Path& path) const
{
    std::string out;
    for (std::size_t i = 0; i < path.size(); ++i) {
        if (i > 0) out += has_edge(path[i - 1], path[i]) ? " -> " : " <- ";
        out += label(path[i]);
    }
    return out;
}

// --- templates ------------------------------------------------------------

CausalDag unroll_template(const DagTemplate& tmpl, int horizon)
{
    if (horizon < 1) throw ConfigError("template '" + tmpl.name + "': horizon must be >= 1");
    if (tmpl.units < 1) throw ConfigError("template '" + tmpl.name + "': needs at least one unit");

    std::map<std::string, const TemplateVariable*> vars;
    for (const auto& v : tmpl.variables) {
        if (!vars.emplace(v.name, &v).second) {
            throw ConfigError("template '" + tmpl.name + "': duplicate variable '" + v.name + "'");
        }
    }

    std::vector<DagNode> nodes;
    for (const auto& v : tmpl.variables) {
        const int n_units = v.per_unit ? tmpl.units : 1;
        for (int u = 1; u <= n_units; ++u) {
            const std::optional<int> unit = v.per_unit ? std::optional<int>(u) : std::nullopt;
            if (v.time_dependent) {
                for (int t = 0; t <= horizon; ++t) {
                    nodes.push_back({"", {v.name, unit, t, true, v.always_conditioned}});
                }
            } else {
                nodes.push_back({"", {v.name, unit, std::nullopt, false, v.always_conditioned}});
            }
        }
    }

    auto label_of = [](const TemplateVariable& v, std::optional<int> unit, std::optional<int> time) {
        return canonical_label({v.name, v.per_unit ? unit : std::nullopt,
                                v.time_dependent ? time : std::nullopt, v.time_dependent, false});
    };

    std::vector<std::pair<std::string, std::string>> edges;

    // Own-lag edges required of every time-dependent series.
    for (const auto& v : tmpl.variables) {
        if (!v.time_dependent) continue;
        const int n_units = v.per_unit ? tmpl.units : 1;
        for (int u = 1; u <= n_units; ++u) {
            for (int t = 0; t < horizon; ++t) {
                edges.emplace_back(label_of(v, u, t), label_of(v, u, t + 1));
            }
        }
    }

    for (const auto& rule : tmpl.rules) {
        auto fi = vars.find(rule.from);
        auto ti = vars.find(rule.to);
        if (fi == vars.end() || ti == vars.end()) {
            throw ConfigError("template '" + tmpl.name + "': rule references undeclared variable '" +
                              (fi == vars.end() ? rule.from : rule.to) + "'");
        }
        if (rule.lag < 0) throw ConfigError("template '" + tmpl.name + "': negative lag in rule");
        if (rule.lag > horizon) {
            throw ConfigError("template '" + tmpl.name + "': rule " + rule.from + " -> " + rule.to +
                              " has lag " + std::to_string(rule.lag) + " exceeding horizon " +
                              std::to_string(horizon));
        }
        const auto& from = *fi->second;
        const auto& to = *ti->second;
        if (from.time_dependent && !to.time_dependent) {
            throw ConfigError("template '" + tmpl.name + "': time-dependent '" + from.name +
                              "' cannot cause time-independent '" + to.name + "'");
        }

        std::vector<std::pair<std::optional<int>, std::optional<int>>> unit_pairs;
        if (from.per_unit && to.per_unit) {
            for (int i = 1; i <= tmpl.units; ++i) {
                for (int j = 1; j <= tmpl.units; ++j) {
                    const bool keep = rule.units == UnitLink::All ||
                                      (rule.units == UnitLink::Same && i == j) ||
                                      (rule.units == UnitLink::Cross && i != j);
                    if (keep) unit_pairs.emplace_back(i, j);
                }
            }
        } else if (from.per_unit) {
            for (int i = 1; i <= tmpl.units; ++i) unit_pairs.emplace_back(i, std::nullopt);
        } else if (to.per_unit) {
            for (int j = 1; j <= tmpl.units; ++j) unit_pairs.emplace_back(std::nullopt, j);
        } else {
            unit_pairs.emplace_back(std::nullopt, std::nullopt);
        }

        for (const auto& [ui, uj] : unit_pairs) {
            if (from.time_dependent) {
                for (int t = 0; t + rule.lag <= horizon; ++t) {
                    edges.emplace_back(label_of(from, ui, t), label_of(to, uj, t + rule.lag));
                }
            } else if (to.time_dependent) {
                for (int t = 0; t <= horizon; ++t) {
                    edges.emplace_back(label_of(from, ui, std::nullopt), label_of(to, uj, t));
                }
            } else {
                edges.emplace_back(label_of(from, ui, std::nullopt), label_of(to, uj, std::nullopt));
            }
        }
    }

    return CausalDag(std::move(nodes), edges);
}

// --- structural queries ---------------------------------------------------

NodeSet descendants(const CausalDag& dag, NodeId node)
{
    if (node.value >= dag.size()) throw ConfigError("dag: unknown node id");
    NodeSet out;
    std::deque<NodeId> work(dag.children(node).begin(), dag.children(node).end());
    while (!work.empty()) {
        NodeId v = work.front();
        work.pop_front();
        if (!out.insert(v).second) continue;
        for (NodeId c : dag.children(v)) {
            if (!contains(out, c)) work.push_back(c);
        }
    }
    return out;
}

NodeSet ancestral_closure(const CausalDag& dag, const NodeSet& nodes)
{
    NodeSet out;
    std::deque<NodeId> work(nodes.begin(), nodes.end());
    while (!work.empty()) {
        NodeId v = work.front();
        work.pop_front();
        if (!out.insert(v).second) continue;
        for (NodeId p : dag.parents(v)) {
            if (!contains(out, p)) work.push_back(p);
        }
    }
    return out;
}

NodeSet with_always_conditioned(const CausalDag& dag, const NodeSet& z)
{
    NodeSet out = z;
    out.insert(dag.always_conditioned().begin(), dag.always_conditioned().end());
    return out;
}

bool d_separated(const CausalDag& dag, NodeId x, NodeId y, const NodeSet& z)
{
    return d_separated(dag, NodeSet{x}, NodeSet{y}, z);
}

bool d_separated(const CausalDag& dag, const NodeSet& xs, const NodeSet& ys, const NodeSet& z)
{
    for (NodeId v : xs) {
        if (v.value >= dag.size()) throw ConfigError("d_separated: unknown node");
        if (contains(ys, v)) throw std::invalid_argument("d_separated: x and y overlap");
        if (contains(z, v)) throw std::invalid_argument("d_separated: x is in the conditioning set");
    }
    for (NodeId v : ys) {
        if (v.value >= dag.size()) throw ConfigError("d_separated: unknown node");
        if (contains(z, v)) throw std::invalid_argument("d_separated: y is in the conditioning set");
    }
    const NodeSet zz = with_always_conditioned(dag, z);
    const NodeSet hit = reachable(dag, xs, zz, {});
    for (NodeId v : ys) {
        if (contains(hit, v)) return false;
    }
    return true;
}

std::vector<Path> all_paths(const CausalDag& dag, NodeId from, NodeId to)
{
    std::vector<Path> out;
    std::vector<char> on_path(dag.size(), 0);
    Path path{from};
    on_path[from.value] = 1;
    std::function<void()> extend = [&]() {
        NodeId current = path.back();
        if (current == to) {
            out.push_back(path);
            return;
        }
        for (NodeId next : skeleton_neighbors(dag, current)) {
            if (on_path[next.value]) continue;
            on_path[next.value] = 1;
            path.push_back(next);
            extend();
            path.pop_back();
            on_path[next.value] = 0;
        }
    };
    extend();
    return out;
}

bool path_blocked(const CausalDag& dag, const Path& path, const NodeSet& z)
{
    for (std::size_t i = 1; i + 1 < path.size(); ++i) {
        NodeId a = path[i - 1], v = path[i], b = path[i + 1];
        const bool collider = dag.has_edge(a, v) && dag.has_edge(b, v);
        if (collider) {
            if (contains(z, v)) continue;
            bool opened = false;
            for (NodeId d : descendants(dag, v)) {
                if (contains(z, d)) {
                    opened = true;
                    break;
                }
            }
            if (!opened) return true;
        } else if (contains(z, v)) {
            return true;
        }
    }
    return false;
}

std::vector<Path> unblocked_backdoor_paths(const CausalDag& dag, const NodeSet& treatment,
                                           NodeId outcome, const NodeSet& z)
{
    if (contains(treatment, outcome)) throw std::invalid_argument("backdoor: outcome is a treatment node");
    const NodeSet zz = with_always_conditioned(dag, z);
    const NodeSet opens_collider = ancestral_closure(dag, zz);
    auto ok = [&](NodeId a, NodeId v, NodeId b) {
        const bool collider = dag.has_edge(a, v) && dag.has_edge(b, v);
        return collider ? contains(opens_collider, v) : !contains(zz, v);
    };
    std::vector<Path> out;
    backdoor_search(dag, treatment, outcome, ok, false, out);
    return out;
}

bool satisfies_backdoor(const CausalDag& dag, const NodeSet& treatment, NodeId outcome, const NodeSet& z)
{
    const NodeSet zz = with_always_conditioned(dag, z);
    for (NodeId t : treatment) {
        const NodeSet hit = reachable(dag, NodeSet{t}, zz, treatment);
        if (contains(hit, outcome)) return false;
    }
    return true;
}

std::optional<NodeId> shifted(const CausalDag& dag, NodeId node, int offset)
{
    const auto& m = dag.meta(node);
    if (!m.time_dependent) return node;
    if (!m.time) throw ConfigError("dag: time-dependent node '" + dag.label(node) + "' has no time index");
    return dag.find(m.variable, m.unit, *m.time + offset);
}

const char* to_string(BiasClass c)
{
    switch (c) {
    case BiasClass::NoBias: return "no_bias";
    case BiasClass::ProperBias: return "proper_bias";
    case BiasClass::ImproperBias: return "improper_bias";
    }
    return "unknown";
}

NodeSet relag_augmented_set(const CausalDag& dag, const NodeSet& control, const NodeSet& treatment)
{
    NodeSet out = control;
    auto add_shift = [&](NodeId v, int offset) {
        const auto s = shifted(dag, v, offset);
        if (!s) {
            throw ConfigError("relag: " + std::string(offset < 0 ? "lag" : "forward lag") + " of '" +
                              dag.label(v) + "' is not in the graph");
        }
        out.insert(*s);
    };
    for (NodeId c : control) {
        if (!dag.meta(c).time_dependent) continue;
        add_shift(c, -1);
        add_shift(c, +1);
    }
    for (NodeId t : treatment) add_shift(t, -1);
    return out;
}

BiasClass is_proper_control(const CausalDag& dag, const NodeSet& control, const NodeSet& treatment,
                            NodeId outcome)
{
    for (NodeId t : treatment) {
        const NodeSet des = descendants(dag, t);
        for (NodeId c : control) {
            if (contains(des, c) || c == t) {
                throw std::invalid_argument("is_proper_control: '" + dag.label(c) +
                                            "' is not a pre-treatment node");
            }
        }
    }
    if (satisfies_backdoor(dag, treatment, outcome, control)) return BiasClass::NoBias;

    // A path survives every subset of the augmented set iff none of its
    // non-colliders is in that set (or always conditioned) and every collider
    // is opened by the always-conditioned nodes alone.
    const NodeSet augmented = relag_augmented_set(dag, control, treatment);
    const NodeSet blockers = with_always_conditioned(dag, augmented);
    const NodeSet opens_collider = ancestral_closure(dag, dag.always_conditioned());
    auto ok = [&](NodeId a, NodeId v, NodeId b) {
        const bool collider = dag.has_edge(a, v) && dag.has_edge(b, v);
        return collider ? contains(opens_collider, v) : !contains(blockers, v);
    };
    std::vector<Path> found;
    backdoor_search(dag, treatment, outcome, ok, true, found);
    return found.empty() ? BiasClass::ImproperBias : BiasClass::ProperBias;
}

// --- stationarity ---------------------------------------------------------

StationarityReport is_stationary(const CausalDag& dag)
{
    using SeriesKey = std::pair<std::string, std::optional<int>>;
    std::map<SeriesKey, std::map<int, NodeId>> series;
    int t_min = 0, t_max = 0;
    bool any_time = false;

    for (std::uint32_t i = 0; i < dag.size(); ++i) {
        const auto& m = dag.meta(NodeId{i});
        if (!m.time_dependent) continue;
        if (!m.time) {
            throw ConfigError("is_stationary: time-dependent node '" + dag.label(NodeId{i}) +
                              "' lacks a time index");
        }
        series[{m.variable, m.unit}][*m.time] = NodeId{i};
        if (!any_time) {
            t_min = t_max = *m.time;
            any_time = true;
        }
        t_min = std::min(t_min, *m.time);
        t_max = std::max(t_max, *m.time);
    }

    auto eligible = [&](NodeId v) { return !dag.parents(v).empty() || dag.children(v).size() > 1; };
    auto series_label = [](const SeriesKey& k, int t) {
        return canonical_label({k.first, k.second, t, true, false});
    };

    StationarityReport report;
    auto flag = [&](int condition, std::string node, int time, std::string message) {
        report.stationary = false;
        report.violations.push_back({condition, std::move(node), time, std::move(message)});
    };

    // Condition 2.1: own lag is a parent.
    for (const auto& [key, nodes] : series) {
        bool any_eligible = false;
        for (const auto& [t, v] : nodes) any_eligible = any_eligible || eligible(v);
        if (!any_eligible) continue;
        for (int t = t_min; t < t_max; ++t) {
            auto a = nodes.find(t), b = nodes.find(t + 1);
            if (a == nodes.end() || b == nodes.end()) {
                flag(1, series_label(key, a == nodes.end() ? t : t + 1), a == nodes.end() ? t : t + 1,
                     "series is missing a period inside the observed horizon");
                continue;
            }
            if (!dag.has_edge(a->second, b->second)) {
                flag(1, dag.label(b->second), t + 1,
                     dag.label(a->second) + " is not a parent of " + dag.label(b->second));
            }
        }
    }

    // Condition 2.2: a lag-k relation between two series holds at every period.
    std::set<std::tuple<SeriesKey, SeriesKey, int>> relations;
    std::vector<std::pair<NodeId, NodeId>> ti_edges;
    for (auto [from, to] : dag.edges()) {
        const auto& mf = dag.meta(from);
        const auto& mt = dag.meta(to);
        if (mf.time_dependent && mt.time_dependent) {
            const int k = *mt.time - *mf.time;
            SeriesKey a{mf.variable, mf.unit}, b{mt.variable, mt.unit};
            if (a == b && k == 1) continue;  // covered by 2.1
            relations.emplace(a, b, k);
        } else if (!mf.time_dependent && mt.time_dependent) {
            ti_edges.emplace_back(from, to);
        }
    }
    for (const auto& [a, b, k] : relations) {
        const auto& sa = series[a];
        const auto& sb = series[b];
        for (int t = t_min; t + k <= t_max; ++t) {
            auto pa = sa.find(t), pb = sb.find(t + k);
            const std::string child = series_label(b, t + k);
            if (pa == sa.end() || pb == sb.end() || !dag.has_edge(pa->second, pb->second)) {
                flag(2, child, t + k, series_label(a, t) + " is not a parent of " + child);
            }
        }
    }

    // Condition 2.3: a time-independent parent of a series is a parent at every period.
    std::set<std::pair<NodeId, SeriesKey>> ti_relations;
    for (auto [z, to] : ti_edges) {
        const auto& mt = dag.meta(to);
        ti_relations.emplace(z, SeriesKey{mt.variable, mt.unit});
    }
    for (const auto& [z, key] : ti_relations) {
        const auto& s = series[key];
        for (int t = t_min; t <= t_max; ++t) {
            auto p = s.find(t);
            const std::string child = series_label(key, t);
            if (p == s.end() || !dag.has_edge(z, p->second)) {
                flag(3, child, t, dag.label(z) + " is not a parent of " + child);
            }
        }
    }
    return report;
}

} // namespace cdiff
