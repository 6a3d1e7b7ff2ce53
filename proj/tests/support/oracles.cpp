#include "oracles.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace oracle {

Adj adjacency(const cdiff::CausalDag& dag)
{
    Adj g;
    g.n = static_cast<int>(dag.size());
    g.edge.assign(g.n, std::vector<char>(g.n, 0));
    g.always.assign(g.n, 0);
    for (auto [a, b] : dag.edges()) g.edge[a.value][b.value] = 1;
    for (auto v : dag.always_conditioned()) g.always[v.value] = 1;
    return g;
}

namespace {

std::vector<char> with_always(const Adj& g, std::vector<char> z)
{
    for (int i = 0; i < g.n; ++i) z[i] = z[i] || g.always[i];
    return z;
}

bool is_descendant_or_self(const Adj& g, int from, int target)
{
    std::vector<char> seen(g.n, 0);
    std::vector<int> stack{from};
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        if (v == target) return true;
        if (seen[v]) continue;
        seen[v] = 1;
        for (int c = 0; c < g.n; ++c)
            if (g.edge[v][c]) stack.push_back(c);
    }
    return false;
}

bool collider_open(const Adj& g, int v, const std::vector<char>& z)
{
    for (int k = 0; k < g.n; ++k)
        if (z[k] && is_descendant_or_self(g, v, k)) return true;
    return false;
}

bool blocked(const Adj& g, const std::vector<int>& path, const std::vector<char>& z)
{
    for (std::size_t i = 1; i + 1 < path.size(); ++i) {
        int a = path[i - 1], v = path[i], b = path[i + 1];
        bool collider = g.edge[a][v] && g.edge[b][v];
        if (collider ? !collider_open(g, v, z) : z[v]) return true;
    }
    return false;
}

void enumerate(const Adj& g, std::vector<int>& path, std::vector<char>& on, int target,
               const std::function<void(const std::vector<int>&)>& visit)
{
    int v = path.back();
    if (v == target) {
        visit(path);
        return;
    }
    for (int w = 0; w < g.n; ++w) {
        if (on[w] || !(g.edge[v][w] || g.edge[w][v])) continue;
        on[w] = 1;
        path.push_back(w);
        enumerate(g, path, on, target, visit);
        path.pop_back();
        on[w] = 0;
    }
}

} // namespace

bool dsep_moral(const Adj& g, int x, int y, const std::vector<char>& z_in)
{
    const auto z = with_always(g, z_in);
    // Ancestral set of {x, y} ∪ z.
    std::vector<char> anc(g.n, 0);
    std::vector<int> stack{x, y};
    for (int i = 0; i < g.n; ++i)
        if (z[i]) stack.push_back(i);
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        if (anc[v]) continue;
        anc[v] = 1;
        for (int p = 0; p < g.n; ++p)
            if (g.edge[p][v]) stack.push_back(p);
    }
    // Moral graph restricted to the ancestral set.
    std::vector<std::vector<char>> und(g.n, std::vector<char>(g.n, 0));
    for (int a = 0; a < g.n; ++a) {
        if (!anc[a]) continue;
        for (int b = 0; b < g.n; ++b) {
            if (anc[b] && g.edge[a][b]) und[a][b] = und[b][a] = 1;
        }
    }
    for (int c = 0; c < g.n; ++c) {
        if (!anc[c]) continue;
        for (int a = 0; a < g.n; ++a)
            for (int b = a + 1; b < g.n; ++b)
                if (g.edge[a][c] && g.edge[b][c]) und[a][b] = und[b][a] = 1;
    }
    std::vector<char> seen(g.n, 0);
    stack = {x};
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        if (v == y) return false;
        if (seen[v]) continue;
        seen[v] = 1;
        for (int w = 0; w < g.n; ++w)
            if (und[v][w] && !z[w] && !seen[w]) stack.push_back(w);
    }
    return true;
}

bool dsep_paths(const Adj& g, int x, int y, const std::vector<char>& z_in)
{
    const auto z = with_always(g, z_in);
    bool open = false;
    std::vector<int> path{x};
    std::vector<char> on(g.n, 0);
    on[x] = 1;
    enumerate(g, path, on, y, [&](const std::vector<int>& p) {
        if (!blocked(g, p, z)) open = true;
    });
    return !open;
}

bool backdoor_blocked(const Adj& g, const std::vector<int>& treatment, int outcome, const std::vector<char>& z_in)
{
    const auto z = with_always(g, z_in);
    std::vector<char> is_t(g.n, 0);
    for (int t : treatment) is_t[t] = 1;
    bool open = false;
    for (int t : treatment) {
        std::vector<int> path{t};
        std::vector<char> on = is_t;
        enumerate(g, path, on, outcome, [&](const std::vector<int>& p) {
            if (g.edge[p[1]][p[0]] && !blocked(g, p, z)) open = true;
        });
    }
    return !open;
}

cdiff::BiasClass proper_bias_exhaustive(const cdiff::CausalDag& dag, const cdiff::NodeSet& control,
                                        const cdiff::NodeSet& treatment, cdiff::NodeId outcome)
{
    const Adj g = adjacency(dag);
    std::vector<int> tr;
    for (auto t : treatment) tr.push_back(static_cast<int>(t.value));

    std::vector<char> zc(g.n, 0);
    for (auto c : control) zc[c.value] = 1;
    if (backdoor_blocked(g, tr, outcome.value, zc)) return cdiff::BiasClass::NoBias;

    // Augmented set, built from labels so it does not share code with the library.
    std::vector<int> aug;
    auto add = [&](const std::string& variable, std::optional<int> unit, std::optional<int> time) {
        auto id = dag.find(variable, unit, time);
        if (!id) throw std::runtime_error("oracle: augmented node missing");
        for (int a : aug)
            if (a == static_cast<int>(id->value)) return;
        aug.push_back(static_cast<int>(id->value));
    };
    for (auto c : control) {
        const auto& m = dag.meta(c);
        add(m.variable, m.unit, m.time);
        if (m.time_dependent) {
            add(m.variable, m.unit, *m.time - 1);
            add(m.variable, m.unit, *m.time + 1);
        }
    }
    for (auto t : treatment) {
        const auto& m = dag.meta(t);
        add(m.variable, m.unit, *m.time - 1);
    }
    if (aug.size() > 20) throw std::runtime_error("oracle: augmented set too large");

    std::vector<char> is_t(g.n, 0);
    for (int t : tr) is_t[t] = 1;
    bool some_path_unblockable = false;
    for (int t : tr) {
        std::vector<int> path{t};
        std::vector<char> on = is_t;
        enumerate(g, path, on, outcome.value, [&](const std::vector<int>& p) {
            if (some_path_unblockable || !g.edge[p[1]][p[0]]) return;
            for (std::uint32_t mask = 0; mask < (1u << aug.size()); ++mask) {
                std::vector<char> z(g.n, 0);
                for (std::size_t k = 0; k < aug.size(); ++k)
                    if (mask & (1u << k)) z[aug[k]] = 1;
                if (blocked(g, p, with_always(g, z))) return;
            }
            some_path_unblockable = true;
        });
    }
    return some_path_unblockable ? cdiff::BiasClass::ProperBias : cdiff::BiasClass::ImproperBias;
}

cdiff::CausalDag random_dag(std::mt19937_64& rng, int n, double edge_prob)
{
    std::bernoulli_distribution coin(edge_prob);
    std::vector<cdiff::DagNode> nodes;
    for (int i = 0; i < n; ++i) nodes.push_back({"v" + std::to_string(i), {"v" + std::to_string(i)}});
    std::vector<std::pair<std::string, std::string>> edges;
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b)
            if (coin(rng)) edges.emplace_back("v" + std::to_string(a), "v" + std::to_string(b));
    return cdiff::CausalDag(std::move(nodes), edges);
}

// --- regression -------------------------------------------------------------

Eigen::VectorXd normal_equations(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w)
{
    const Eigen::MatrixXd xtw = x.transpose() * w.asDiagonal();
    return (xtw * x).inverse() * (xtw * y);
}

Eigen::VectorXd newton_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y)
{
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(x.cols());
    for (int it = 0; it < 200; ++it) {
        Eigen::VectorXd eta = x * beta;
        Eigen::VectorXd p = eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
        Eigen::VectorXd grad = x.transpose() * (y - p);
        Eigen::VectorXd wdiag = p.cwiseProduct(Eigen::VectorXd::Ones(p.size()) - p);
        Eigen::MatrixXd hess = x.transpose() * wdiag.asDiagonal() * x;
        beta += hess.ldlt().solve(grad);
    }
    return beta;
}

double soft_threshold(double z, double gamma)
{
    if (z > gamma) return z - gamma;
    if (z < -gamma) return z + gamma;
    return 0.0;
}

double did_slope(const Eigen::VectorXd& y_next, const Eigen::VectorXd& y_now, const Eigen::VectorXd& d,
                 const Eigen::MatrixXd& covariates)
{
    const Eigen::Index n = d.size();
    Eigen::MatrixXd x(n, 2 + covariates.cols());
    x.col(0).setOnes();
    x.col(1) = d;
    if (covariates.cols() > 0) x.rightCols(covariates.cols()) = covariates;
    const Eigen::VectorXd dy = y_next - y_now;
    const Eigen::VectorXd beta = (x.transpose() * x).inverse() * (x.transpose() * dy);
    return beta(1);
}

} // namespace oracle
