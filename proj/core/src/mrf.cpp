#include "cdiff/mrf.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cdiff/error.hpp"

namespace cdiff {

const char* to_string(EdgeRule r) { return r == EdgeRule::And ? "and" : "or"; }

EdgeRule parse_edge_rule(const std::string& s)
{
    if (s == "and" || s == "AND") return EdgeRule::And;
    if (s == "or" || s == "OR") return EdgeRule::Or;
    throw ConfigError("unknown edge rule '" + s + "' (expected and | or)");
}

const char* to_string(LambdaRule r)
{
    switch (r) {
    case LambdaRule::CrossValidation: return "cv";
    case LambdaRule::Bic: return "bic";
    case LambdaRule::Fixed: return "fixed";
    }
    return "?";
}

LambdaRule parse_lambda_rule(const std::string& s)
{
    if (s == "cv") return LambdaRule::CrossValidation;
    if (s == "bic") return LambdaRule::Bic;
    if (s == "fixed") return LambdaRule::Fixed;
    throw ConfigError("unknown lambda rule '" + s + "' (expected cv | bic | fixed)");
}

std::optional<std::size_t> MarkovGraph::index(const std::string& vertex) const
{
    auto it = std::find(vertices.begin(), vertices.end(), vertex);
    if (it == vertices.end()) return std::nullopt;
    return static_cast<std::size_t>(it - vertices.begin());
}

bool MarkovGraph::adjacent(std::size_t a, std::size_t b) const
{
    if (a == b) return false;
    if (a > b) std::swap(a, b);
    for (const auto& e : edges)
        if (e.a == a && e.b == b) return rule == EdgeRule::Or || e.and_rule;
    return false;
}

std::vector<std::size_t> MarkovGraph::neighbors(std::size_t v) const
{
    std::vector<std::size_t> out;
    for (std::size_t u = 0; u < vertices.size(); ++u)
        if (adjacent(v, u)) out.push_back(u);
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> MarkovGraph::edge_set(EdgeRule r) const
{
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& e : edges)
        if (r == EdgeRule::Or || e.and_rule) out.emplace_back(e.a, e.b);
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> MarkovGraph::edge_set() const { return edge_set(rule); }

nlohmann::json to_json(const MarkovGraph& g)
{
    nlohmann::json vertices = nlohmann::json::array();
    for (std::size_t v = 0; v < g.vertices.size(); ++v) {
        vertices.push_back({{"name", g.vertices[v]}, {"family", to_string(g.families[v])}, {"lambda", g.lambdas[v]}});
    }
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : g.edges) {
        edges.push_back({{"from", g.vertices[e.a]},
                         {"to", g.vertices[e.b]},
                         {"weight_from_to", e.weight_ab},
                         {"weight_to_from", e.weight_ba},
                         {"and", e.and_rule},
                         {"or", true}});
    }
    return {{"rule", to_string(g.rule)}, {"rows", g.rows}, {"vertices", vertices}, {"edges", edges}, {"warnings", g.warnings}};
}

std::vector<Family> infer_families(const Eigen::MatrixXd& z)
{
    std::vector<Family> out;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        bool binary = true;
        for (Eigen::Index i = 0; i < z.rows() && binary; ++i) {
            const double v = z(i, j);
            if (std::isfinite(v) && v != 0.0 && v != 1.0) binary = false;
        }
        out.push_back(binary ? Family::Binomial : Family::Gaussian);
    }
    return out;
}

namespace {

std::uint64_t node_seed(std::uint64_t seed, std::uint64_t node)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (node + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double bic_lambda(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, Family family, const MrfOptions& options)
{
    const double lmax = lasso_lambda_max(y, x, family);
    if (!(lmax > 0)) return 0.0;
    const double n = static_cast<double>(y.size());
    double best = std::numeric_limits<double>::infinity(), chosen = lmax;
    for (int k = 0; k < options.n_lambda; ++k) {
        const double lambda = lmax * std::pow(1e-3, static_cast<double>(k) / (options.n_lambda - 1));
        const LassoFit f = fit_lasso_glm(y, x, family, lambda);
        const Eigen::ArrayXd eta = (f.intercept + (x * f.coef).array());
        double fit_term = 0.0;
        if (family == Family::Gaussian) {
            fit_term = n * std::log(std::max((y.array() - eta).square().sum() / n, 1e-300));
        } else {
            for (Eigen::Index i = 0; i < y.size(); ++i) {
                const double e = eta(i);
                const double log1pexp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
                fit_term += 2.0 * (log1pexp - y(i) * e);
            }
        }
        const double df = static_cast<double>((f.coef_std.array() != 0.0).count());
        const double score = fit_term + df * std::log(n);
        if (score < best) {
            best = score;
            chosen = lambda;
        }
    }
    return chosen;
}

} // namespace

MarkovGraph fit_mixed_mrf(const Eigen::MatrixXd& z_in, const std::vector<std::string>& names,
                          const std::vector<Family>& families, const MrfOptions& options)
{
    const auto p = static_cast<std::size_t>(z_in.cols());
    if (names.size() != p || families.size() != p) throw ConfigError("MRF: names and families must match the columns");
    if (p < 3) throw ConfigError("MRF needs at least 3 vertices");
    if (options.lambda_rule == LambdaRule::Fixed && !(options.lambda >= 0)) throw ConfigError("MRF: lambda must be >= 0");

    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < z_in.rows(); ++i)
        if (z_in.row(i).array().isFinite().all()) keep.push_back(i);
    const Eigen::MatrixXd z = z_in(keep, Eigen::all);
    const auto n = z.rows();

    MarkovGraph g;
    g.vertices = names;
    g.families = families;
    g.rule = options.edge_rule;
    g.rows = static_cast<std::size_t>(n);
    if (n < 2) throw DataError("MRF: fewer than 2 complete rows");
    if (static_cast<std::size_t>(n) <= 10 * p) {
        g.warnings.push_back("only " + std::to_string(n) + " complete rows for " + std::to_string(p) +
                             " vertices; edge selection is unreliable");
    }
    for (std::size_t j = 0; j < p; ++j) {
        const auto col = z.col(static_cast<Eigen::Index>(j));
        if (col.maxCoeff() - col.minCoeff() <= 0) throw DataError("MRF: column '" + names[j] + "' is constant");
        if (families[j] == Family::Binomial && !((col.array() == 0.0) || (col.array() == 1.0)).all()) {
            throw DataError("MRF: binomial column '" + names[j] + "' has values other than 0 and 1");
        }
    }

    Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    for (std::size_t l = 0; l < p; ++l) {
        std::vector<Eigen::Index> others;
        for (std::size_t m = 0; m < p; ++m)
            if (m != l) others.push_back(static_cast<Eigen::Index>(m));
        const Eigen::VectorXd y = z.col(static_cast<Eigen::Index>(l));
        const Eigen::MatrixXd x = z(Eigen::all, others);
        double lambda = options.lambda;
        if (options.lambda_rule == LambdaRule::CrossValidation) {
            lambda = lasso_cv(y, x, families[l], options.folds, node_seed(options.seed, l), options.n_lambda).lambda_1se;
        } else if (options.lambda_rule == LambdaRule::Bic) {
            lambda = bic_lambda(y, x, families[l], options);
        }
        const LassoFit f = fit_lasso_glm(y, x, families[l], lambda);
        g.lambdas.push_back(lambda);
        for (std::size_t k = 0; k < others.size(); ++k) eta(static_cast<Eigen::Index>(l), others[k]) = f.coef_std(static_cast<Eigen::Index>(k));
    }
    for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = a + 1; b < p; ++b) {
            const double ab = eta(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            const double ba = eta(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a));
            if (ab == 0.0 && ba == 0.0) continue;
            g.edges.push_back({a, b, ab, ba, ab != 0.0 && ba != 0.0});
        }
    }
    return g;
}

MrfData build_mrf_data(const PanelDataset& panel, const SelectionSpec& spec)
{
    MrfData out;
    out.meta.push_back({spec.outcome, true, true, 0});
    out.meta.push_back({spec.treatment, true, false, 0});
    std::set<std::string> seen{out.meta[0].key(), out.meta[1].key()};
    for (const auto& c : spec.candidates) {
        if (!seen.insert(c.key()).second) throw ConfigError("duplicate selection candidate '" + c.key() + "'");
        out.meta.push_back(c);
    }
    for (const auto& m : out.meta) out.names.push_back(m.key());

    std::vector<std::string> columns;
    std::vector<int> lags;
    for (const auto& m : out.meta) {
        const std::string col = m.name == spec.outcome && !panel.outcome.empty() ? panel.outcome : m.name;
        if (!panel.has(col)) throw ConfigError("selection candidate '" + m.key() + "': column '" + col + "' not in panel");
        if (panel.column(col).categorical()) throw ConfigError("selection candidate '" + m.key() + "' is categorical");
        columns.push_back(col);
        lags.push_back(m.time_dependent.value_or(true) ? m.lag : 0);
    }
    std::vector<Eigen::RowVectorXd> rows;
    for (std::size_t i = 0; i < panel.n_units(); ++i) {
        for (int k = 0; k < panel.n_times(); ++k) {
            Eigen::RowVectorXd r(static_cast<Eigen::Index>(columns.size()));
            bool ok = true;
            for (std::size_t j = 0; j < columns.size() && ok; ++j) {
                const int kk = k + lags[j];
                if (kk < 0 || kk >= panel.n_times() || !panel.present(i, kk)) {
                    ok = false;
                    break;
                }
                r(static_cast<Eigen::Index>(j)) = panel.value(columns[j], i, kk);
                ok = std::isfinite(r(static_cast<Eigen::Index>(j)));
            }
            if (ok) rows.push_back(std::move(r));
        }
    }
    if (rows.empty()) throw DataError("selection: no complete rows after lag alignment");
    out.z.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) out.z.row(static_cast<Eigen::Index>(r)) = rows[r];
    return out;
}

SelectionResult select_control_set(const MarkovGraph& graph, const std::vector<VariableMeta>& meta,
                                   const SelectionSpec& spec)
{
    if (meta.size() != graph.vertices.size()) throw ConfigError("selection: metadata does not match the graph vertices");
    if (meta.size() < 2 || meta[0].name != spec.outcome || meta[0].lag != 0 || meta[1].name != spec.treatment ||
        meta[1].lag != 0) {
        throw ConfigError("selection: vertex 0 must be the placebo outcome and vertex 1 the treatment");
    }
    SelectionResult out;
    out.control.treatment = spec.treatment;
    out.control.outcome = spec.outcome;
    if (graph.adjacent(0, 1)) {
        out.reason = "the placebo outcome and the treatment are adjacent in the estimated graph; no separating set "
                     "of neighbors exists, which does not show that no valid control set exists";
        return out;
    }
    out.found = true;

    std::vector<VariableMeta> control{{spec.treatment, true, false, -1}};
    std::set<std::string> keys{control.front().key()};
    auto add = [&](VariableMeta v) {
        if (keys.insert(v.key()).second) control.push_back(std::move(v));
    };
    for (std::size_t v : graph.neighbors(0)) {
        const VariableMeta& m = meta[v];
        out.separating_set.push_back(m);
        if (!m.time_dependent) throw ConfigError("selection: metadata missing for '" + m.key() + "' (time_dependent)");
        if (!*m.time_dependent) {
            add(m);
            continue;
        }
        const int lag = m.lag + 1;
        if (m.lag <= -2) {
            out.flags.push_back("'" + m.key() + "' is a deep lag; carried into the control set as '" +
                                lagged_name(m.name, lag) + "', review the inversion");
        }
        if (m.name == spec.treatment) {
            if (m.lag >= 0) throw ConfigError("selection: treatment vertex '" + m.key() + "' cannot be a separator");
            // D_{t-1} is in every placebo set already.
            if (lag <= -1) add({m.name, true, false, lag});
            continue;
        }
        if (lag > 1) throw ConfigError("selection: '" + m.key() + "' cannot be forward-lagged past t+1");
        if (m.name == spec.outcome) {
            if (lag > 0) throw ConfigError("selection: outcome vertex '" + m.key() + "' is not before the placebo outcome");
            add({m.name, true, lag == 0, lag});
            continue;
        }
        if (!m.post_outcome) throw ConfigError("selection: metadata missing for '" + m.key() + "' (post_outcome)");
        add({m.name, true, *m.post_outcome, lag});
    }
    out.control.variables = std::move(control);
    return out;
}

void verify_selection(SelectionResult& selection, const PanelDataset& panel, const WeightMatrix& weights,
                      const EstimandSpec& estimand, double alpha)
{
    selection.verified = false;
    if (!selection.found) return;
    try {
        EstimateReport r = run_placebo_test(panel, weights, selection.control, estimand);
        selection.verified = r.p_value && *r.p_value >= alpha;
        selection.verification = std::move(r);
    } catch (const Error& e) {
        selection.flags.push_back(std::string("verification placebo test failed: ") + e.what());
    }
}

SelectionRun select_controls(const PanelDataset& panel, const WeightMatrix& weights, const SelectionSpec& spec,
                             const EstimandSpec& estimand, const MrfOptions& options, double alpha)
{
    ControlSpec wanted;
    wanted.treatment = spec.treatment;
    wanted.outcome = spec.outcome;
    wanted.variables = spec.candidates;
    const PanelDataset data = prepare_panel(panel, weights, wanted);
    const MrfData d = build_mrf_data(data, spec);
    SelectionRun run;
    run.graph = fit_mixed_mrf(d.z, d.names, infer_families(d.z), options);
    run.selection = select_control_set(run.graph, d.meta, spec);
    verify_selection(run.selection, data, weights, estimand, alpha);
    return run;
}

} // namespace cdiff
