#include <doctest.h>

#include <algorithm>
#include <random>

#include "cdiff/dag.hpp"
#include "cdiff/dag_io.hpp"
#include "cdiff/error.hpp"
#include "support/oracles.hpp"

using namespace cdiff;

namespace {

CausalDag unrolled(const std::string& name, int horizon = 2) { return unroll_template(builtin_template(name), horizon); }

NodeSet ids(const CausalDag& dag, std::initializer_list<const char*> labels)
{
    NodeSet out;
    for (const char* l : labels) out.insert(dag.id(l));
    return out;
}

bool path_is(const CausalDag& dag, const Path& p, std::initializer_list<const char*> labels)
{
    if (p.size() != labels.size()) return false;
    std::size_t i = 0;
    for (const char* l : labels) {
        if (dag.label(p[i++]) != l) return false;
    }
    return true;
}

// Rebuilds a graph with a set of edges removed.
CausalDag without_edges(const CausalDag& dag, std::vector<std::pair<std::string, std::string>> drop)
{
    std::vector<DagNode> nodes;
    for (std::uint32_t i = 0; i < dag.size(); ++i) nodes.push_back({dag.label(NodeId{i}), dag.meta(NodeId{i})});
    std::vector<std::pair<std::string, std::string>> edges;
    for (auto [a, b] : dag.edges()) {
        std::pair<std::string, std::string> e{dag.label(a), dag.label(b)};
        if (std::find(drop.begin(), drop.end(), e) == drop.end()) edges.push_back(e);
    }
    return CausalDag(std::move(nodes), edges);
}

} // namespace

TEST_CASE("diffusion-only template unrolls to the six-node graph")
{
    const CausalDag dag = unrolled("diffusion");
    CHECK(dag.size() == 6);
    CHECK(dag.edges().size() == 8);
    for (int t = 0; t < 2; ++t) {
        for (int i = 1; i <= 2; ++i) {
            for (int j = 1; j <= 2; ++j) {
                const std::string from = "Y_" + std::to_string(i) + "@" + std::to_string(t);
                const std::string to = "Y_" + std::to_string(j) + "@" + std::to_string(t + 1);
                CHECK(dag.has_edge(dag.id(from), dag.id(to)));
            }
        }
    }
}

TEST_CASE("single-unit template without cross rules is a chain")
{
    DagTemplate t;
    t.name = "chain";
    t.units = 1;
    t.variables = {{"Y"}};
    const CausalDag dag = unroll_template(t, 1);
    REQUIRE(dag.size() == 2);
    CHECK(dag.edges().size() == 1);
    CHECK(dag.has_edge(dag.id("Y_1@0"), dag.id("Y_1@1")));
}

TEST_CASE("contextual template has nine nodes with G links")
{
    const CausalDag dag = unrolled("contextual");
    CHECK(dag.size() == 9);
    CHECK(dag.has_edge(dag.id("G@1"), dag.id("G@2")));
    for (int t = 0; t <= 2; ++t) {
        for (int i = 1; i <= 2; ++i) {
            CHECK(dag.has_edge(dag.id("G@" + std::to_string(t)),
                               dag.id("Y_" + std::to_string(i) + "@" + std::to_string(t))));
        }
    }
}

TEST_CASE("template errors")
{
    DagTemplate t = builtin_template("diffusion");
    t.rules.push_back({"Q", "Y", 0, UnitLink::Same});
    CHECK_THROWS_AS(unroll_template(t, 2), ConfigError);

    DagTemplate lagged = builtin_template("diffusion");
    lagged.rules.push_back({"Y", "Y", 3, UnitLink::Cross});
    CHECK_THROWS_AS(unroll_template(lagged, 2), ConfigError);
    CHECK_NOTHROW(unroll_template(lagged, 3));
    CHECK_THROWS_AS(unroll_template(builtin_template("diffusion"), 0), ConfigError);

    DagTemplate backwards = builtin_template("homophily");
    backwards.rules.push_back({"Y", "U", 0, UnitLink::Same});
    CHECK_THROWS_AS(unroll_template(backwards, 2), ConfigError);
}

TEST_CASE("graph construction validates its invariants")
{
    std::vector<DagNode> nodes = {{"a", {"a"}}, {"b", {"b"}}, {"c", {"c"}}};
    CHECK_THROWS_AS(CausalDag(nodes, {{"a", "b"}, {"b", "c"}, {"c", "a"}}), ConfigError);
    CHECK_THROWS_AS(CausalDag(nodes, {{"a", "zz"}}), ConfigError);
    CHECK_THROWS_AS(CausalDag({{"a", {"a"}}, {"a", {"b"}}}, {}), ConfigError);

    std::vector<DagNode> timed = {{"", {"Y", 1, 0, true}}, {"", {"Y", 1, 1, true}}};
    CHECK_THROWS_AS(CausalDag(timed, {{"Y_1@1", "Y_1@0"}}), ConfigError);
    CHECK_NOTHROW(CausalDag(timed, {{"Y_1@0", "Y_1@1"}}));
}

TEST_CASE("descendants")
{
    const CausalDag dag = unrolled("diffusion");
    CHECK(descendants(dag, dag.id("Y_1@0")) == ids(dag, {"Y_1@1", "Y_2@1", "Y_1@2", "Y_2@2"}));
    CHECK(descendants(dag, dag.id("Y_2@2")).empty());
    CHECK_THROWS_AS(descendants(dag, NodeId{99}), ConfigError);

    const CausalDag chain({{"A", {"A"}}, {"B", {"B"}}, {"C", {"C"}}}, {{"A", "B"}, {"B", "C"}});
    CHECK(descendants(chain, chain.id("A")) == ids(chain, {"B", "C"}));

    const CausalDag f2 = unrolled("combined", 3);
    for (std::uint32_t i = 0; i < f2.size(); ++i) {
        const NodeSet d = descendants(f2, NodeId{i});
        for (NodeId y : d) {
            const NodeSet dy = descendants(f2, y);
            CHECK(std::includes(d.begin(), d.end(), dy.begin(), dy.end()));
        }
    }
}

TEST_CASE("d-separation on the worked examples")
{
    const CausalDag dag = unrolled("combined");
    const NodeId y11 = dag.id("Y_1@1"), y21 = dag.id("Y_2@1");
    CHECK(d_separated(dag, y11, y21, ids(dag, {"Y_2@0", "Y_1@0", "U_2", "G@2", "G@1"})));
    CHECK_FALSE(d_separated(dag, y11, y21, ids(dag, {"Y_2@0", "Y_1@0", "U_2"})));

    const CausalDag collider({{"A", {"A"}}, {"B", {"B"}}, {"C", {"C"}}}, {{"A", "C"}, {"B", "C"}});
    CHECK(d_separated(collider, collider.id("A"), collider.id("B"), {}));
    CHECK_FALSE(d_separated(collider, collider.id("A"), collider.id("B"), ids(collider, {"C"})));

    CHECK_THROWS(d_separated(dag, y11, y11, {}));
    CHECK_THROWS(d_separated(dag, y11, y21, {y21}));
    CHECK_THROWS_AS(d_separated(dag, y11, NodeId{500}, {}), ConfigError);
}

TEST_CASE("always-conditioned tie opens the homophily path")
{
    const CausalDag dag = unrolled("homophily");
    // U_1 -> W <- U_2 is open because W is always in the conditioning set.
    CHECK_FALSE(d_separated(dag, dag.id("U_1"), dag.id("U_2"), {}));
}

TEST_CASE("d-separation agrees with both oracles on random graphs")
{
    std::mt19937_64 rng(20240611);
    int disagreements = 0;
    for (int rep = 0; rep < 40; ++rep) {
        const int n = 4 + rep % 5;
        const CausalDag dag = oracle::random_dag(rng, n, 0.35);
        const auto g = oracle::adjacency(dag);
        for (int x = 0; x < n; ++x) {
            for (int y = x + 1; y < n; ++y) {
                for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
                    if ((mask >> x & 1) || (mask >> y & 1) || std::popcount(mask) > 3) continue;
                    NodeSet z;
                    std::vector<char> zc(n, 0);
                    for (int k = 0; k < n; ++k) {
                        if (mask >> k & 1) {
                            z.insert(NodeId{static_cast<std::uint32_t>(k)});
                            zc[k] = 1;
                        }
                    }
                    const NodeId nx{static_cast<std::uint32_t>(x)}, ny{static_cast<std::uint32_t>(y)};
                    const bool fast = d_separated(dag, nx, ny, z);
                    const bool paths = oracle::dsep_paths(g, x, y, zc);
                    const bool moral = oracle::dsep_moral(g, x, y, zc);
                    bool lib_paths = true;
                    for (const auto& p : all_paths(dag, nx, ny)) lib_paths = lib_paths && path_blocked(dag, p, z);
                    disagreements += (fast != paths) + (paths != moral) + (lib_paths != paths);
                }
            }
        }
    }
    CHECK(disagreements == 0);
}

TEST_CASE("back-door paths on the worked examples")
{
    {
        const CausalDag dag = unrolled("contextual");
        const auto paths = unblocked_backdoor_paths(dag, {dag.id("Y_1@1")}, dag.id("Y_2@2"), {dag.id("Y_2@1")});
        CHECK(std::any_of(paths.begin(), paths.end(),
                          [&](const Path& p) { return path_is(dag, p, {"Y_1@1", "G@1", "G@2", "Y_2@2"}); }));
    }
    {
        const CausalDag dag = unrolled("homophily");
        const auto paths = unblocked_backdoor_paths(dag, {dag.id("Y_1@1")}, dag.id("Y_2@2"), {dag.id("Y_2@1")});
        CHECK(std::any_of(paths.begin(), paths.end(),
                          [&](const Path& p) { return path_is(dag, p, {"Y_1@1", "U_1", "W", "U_2", "Y_2@2"}); }));
    }
    {
        const CausalDag dag = unrolled("diffusion");
        CHECK(unblocked_backdoor_paths(dag, {dag.id("Y_1@1")}, dag.id("Y_2@2"), {dag.id("Y_2@1")}).empty());
        CHECK(satisfies_backdoor(dag, {dag.id("Y_1@1")}, dag.id("Y_2@2"), {dag.id("Y_2@1")}));
    }
    const CausalDag dag = unrolled("diffusion");
    CHECK_THROWS(unblocked_backdoor_paths(dag, {dag.id("Y_1@1")}, dag.id("Y_1@1"), {}));
}

TEST_CASE("back-door criterion agrees with path enumeration and the mutilated graph")
{
    std::mt19937_64 rng(7);
    int checked = 0, disagreements = 0;
    for (int rep = 0; rep < 60; ++rep) {
        const int n = 5 + rep % 4;
        const CausalDag dag = oracle::random_dag(rng, n, 0.4);
        const auto g = oracle::adjacency(dag);
        for (int t = 0; t < n; ++t) {
            const NodeId nt{static_cast<std::uint32_t>(t)};
            const NodeSet des = descendants(dag, nt);
            for (int y = 0; y < n; ++y) {
                if (y == t) continue;
                for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
                    if ((mask >> t & 1) || (mask >> y & 1) || std::popcount(mask) > 3) continue;
                    NodeSet z;
                    std::vector<char> zc(n, 0);
                    bool pre_treatment = true;
                    for (int k = 0; k < n; ++k) {
                        if (!(mask >> k & 1)) continue;
                        const NodeId nk{static_cast<std::uint32_t>(k)};
                        pre_treatment = pre_treatment && !des.count(nk);
                        z.insert(nk);
                        zc[k] = 1;
                    }
                    if (!pre_treatment) continue;
                    const NodeId ny{static_cast<std::uint32_t>(y)};
                    const bool by_paths = unblocked_backdoor_paths(dag, {nt}, ny, z).empty();
                    const bool by_surgery = satisfies_backdoor(dag, {nt}, ny, z);
                    const bool by_oracle = oracle::backdoor_blocked(g, {t}, y, zc);
                    disagreements += (by_paths != by_surgery) + (by_paths != by_oracle);
                    ++checked;
                }
            }
        }
    }
    CHECK(checked > 1000);
    CHECK(disagreements == 0);
}

TEST_CASE("proper-bias classification on the worked examples")
{
    const CausalDag dag = unrolled("combined");
    const NodeSet treat{dag.id("Y_1@1")};
    const NodeId out = dag.id("Y_2@2");
    CHECK(is_proper_control(dag, ids(dag, {"Y_2@1", "U_2"}), treat, out) == BiasClass::ProperBias);
    CHECK(is_proper_control(dag, ids(dag, {"Y_2@1", "U_2", "G@2"}), treat, out) == BiasClass::NoBias);

    const CausalDag econ = unrolled("economic", 3);
    CHECK(is_proper_control(econ, ids(econ, {"Y_2@1", "E@2"}), {econ.id("Y_1@1")}, econ.id("Y_2@2")) ==
          BiasClass::ImproperBias);
    CHECK(is_proper_control(econ, ids(econ, {"Y_2@1", "E@1", "E@2"}), {econ.id("Y_1@1")}, econ.id("Y_2@2")) ==
          BiasClass::NoBias);

    // The forward lag of a control at the last period does not exist.
    CHECK_THROWS_AS(is_proper_control(dag, ids(dag, {"Y_2@1", "G@2"}), treat, out), ConfigError);
    // Post-treatment controls are rejected.
    CHECK_THROWS(is_proper_control(dag, ids(dag, {"Y_1@2"}), treat, out));
}

TEST_CASE("proper-bias classification matches the exhaustive subset search")
{
    for (const char* name : {"combined", "economic", "contextual"}) {
        const CausalDag dag = unrolled(name, 4);
        const NodeSet treat{dag.id("Y_1@2")};
        const NodeId out = dag.id("Y_2@3");
        std::vector<NodeId> pool;
        const NodeSet des = descendants(dag, dag.id("Y_1@2"));
        for (std::uint32_t i = 0; i < dag.size(); ++i) {
            const NodeId v{i};
            const auto& m = dag.meta(v);
            if (treat.count(v) || des.count(v) || m.always_conditioned) continue;
            if (m.time_dependent && (*m.time < 1 || *m.time > 3)) continue;
            pool.push_back(v);
        }
        std::mt19937_64 rng(11);
        int mismatches = 0;
        std::map<BiasClass, int> seen;
        for (int rep = 0; rep < 60; ++rep) {
            NodeSet control;
            for (NodeId v : pool) {
                if (rng() % 3 == 0) control.insert(v);
            }
            const BiasClass fast = is_proper_control(dag, control, treat, out);
            const BiasClass slow = oracle::proper_bias_exhaustive(dag, control, treat, out);
            ++seen[fast];
            if (fast != slow) {
                ++mismatches;
                MESSAGE(name << " " << dag.describe(control) << ": " << to_string(fast) << " vs " << to_string(slow));
            }
        }
        CHECK(mismatches == 0);
        CHECK(seen.size() >= 2);
    }
}

TEST_CASE("stationarity checks")
{
    for (const auto& t : builtin_templates()) {
        for (int horizon = 1; horizon <= 4; ++horizon) {
            const auto report = is_stationary(unroll_template(t, horizon));
            CHECK_MESSAGE(report.stationary, t.name << " T=" << horizon);
        }
    }

    const CausalDag a = without_edges(unrolled("diffusion"), {{"Y_1@0", "Y_2@1"}});
    auto ra = is_stationary(a);
    CHECK_FALSE(ra.stationary);
    REQUIRE(ra.violations.size() == 1);
    CHECK(ra.violations[0].condition == 2);
    CHECK(ra.violations[0].node == "Y_2@1");
    CHECK(ra.violations[0].time == 1);

    const CausalDag c = without_edges(unrolled("homophily"), {{"U_1", "Y_1@1"}});
    auto rc = is_stationary(c);
    CHECK_FALSE(rc.stationary);
    REQUIRE(rc.violations.size() == 1);
    CHECK(rc.violations[0].condition == 3);
    CHECK(rc.violations[0].node == "Y_1@1");

    const CausalDag own = without_edges(unrolled("diffusion"), {{"Y_2@1", "Y_2@2"}});
    auto ro = is_stationary(own);
    CHECK_FALSE(ro.stationary);
    CHECK(std::any_of(ro.violations.begin(), ro.violations.end(),
                      [](const auto& v) { return v.condition == 1 && v.node == "Y_2@2"; }));

    // A time-dependent node without a time index cannot be checked.
    const CausalDag bad({{"x", {"X", 1, std::nullopt, true}}}, {});
    CHECK_THROWS_AS(is_stationary(bad), ConfigError);
}

TEST_CASE("graph JSON round trip")
{
    const CausalDag dag = unrolled("combined", 3);
    const auto j = dag_to_json(dag);
    const CausalDag back = dag_from_json(j);
    CHECK(dag_to_json(back) == j);
    CHECK(back.always_conditioned() == dag.always_conditioned());

    const auto tj = template_to_json(builtin_template("combined"));
    const CausalDag from_template = load_dag({{"template", tj}, {"horizon", 3}});
    CHECK(dag_to_json(from_template) == j);
    CHECK_THROWS_AS(dag_from_json(nlohmann::json{{"nodes", 3}}), ConfigError);
}
