#include "cdiff/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <boost/math/distributions/students_t.hpp>

#include "cdiff/error.hpp"

namespace cdiff {

const char* const kJointTestNote =
    "The placebo test is a joint test: a rejection is consistent with omitted confounders or with a failure of "
    "sequential consistency (simultaneity), and does not say which. A non-rejection is consistent with both holding.";

const char* to_string(Target t) { return t == Target::Acde ? "ACDE" : "ACDT"; }

Target parse_target(const std::string& s)
{
    if (s == "ACDE" || s == "acde") return Target::Acde;
    if (s == "ACDT" || s == "acdt") return Target::Acdt;
    throw ConfigError("unknown estimand target '" + s + "' (expected ACDE or ACDT)");
}

void EstimateReport::set_interval(double z)
{
    ci_low = point - z * se;
    ci_high = point + z * se;
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

double cluster_two_sided_p(double t, std::size_t clusters)
{
    if (!std::isfinite(t)) return std::isnan(t) ? 1.0 : 0.0;
    if (clusters < 2) return normal_two_sided_p(t);
    const boost::math::students_t dist(static_cast<double>(clusters - 1));
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

nlohmann::json to_json(const ModelSummary& m)
{
    return {{"role", m.role},
            {"outcome", m.outcome},
            {"family", to_string(m.family)},
            {"columns", m.columns},
            {"rows", m.rows},
            {"clusters", m.clusters},
            {"iterations", m.iterations},
            {"gradient_norm", m.gradient_norm},
            {"converged", m.converged},
            {"treatment_coef", m.treatment_coef},
            {"treatment_se", m.treatment_se}};
}

nlohmann::json to_json(const EstimateReport& r)
{
    nlohmann::json j = {{"kind", r.kind},      {"stage", r.stage},     {"label", r.label},
                        {"point", r.point},    {"se", r.se},           {"ci_low", r.ci_low},
                        {"ci_high", r.ci_high}, {"d_high", r.d_high},  {"d_low", r.d_low},
                        {"target", to_string(r.target)}};
    if (!r.term.empty()) j["term"] = r.term;
    j["p_value"] = r.p_value ? nlohmann::json(*r.p_value) : nlohmann::json(nullptr);
    j["models"] = nlohmann::json::array();
    for (const auto& m : r.models) j["models"].push_back(to_json(m));
    j["details"] = r.details;
    j["warnings"] = r.warnings;
    if (!r.note.empty()) j["note"] = r.note;
    return j;
}

// --- designs ----------------------------------------------------------------

namespace {

std::int64_t cluster_code(const PanelDataset& panel, std::size_t unit, int k)
{
    if (!panel.cluster) return static_cast<std::int64_t>(unit);
    double v = panel.value(*panel.cluster, unit, k);
    if (!std::isfinite(v)) {
        // Cluster ids are unit-level; borrow the first observed period.
        for (int t = 0; t < panel.n_times() && !std::isfinite(v); ++t) v = panel.value(*panel.cluster, unit, t);
    }
    if (!std::isfinite(v)) throw DataError("unit '" + panel.units()[unit] + "' has no cluster id");
    return static_cast<std::int64_t>(std::llround(v));
}

double read_cell(const PanelDataset& panel, const std::string& column, std::size_t unit, int k)
{
    if (k < 0 || k >= panel.n_times()) return std::numeric_limits<double>::quiet_NaN();
    return panel.value(column, unit, k);
}

void require_column(const PanelDataset& panel, const std::string& column, const std::string& role)
{
    if (!panel.has(column)) throw ConfigError(role + ": panel has no column '" + column + "'");
}

struct ColumnPlan {
    std::string name;
    std::string source;
    int lag = 0;
    int level = -1;  // categorical dummy code
};

std::vector<ColumnPlan> plan_columns(const PanelDataset& panel, const ModelFormula& f)
{
    std::vector<ColumnPlan> plan;
    plan.push_back({"(Intercept)", "", 0, -1});
    plan.push_back({f.treatment, f.treatment, 0, -1});
    if (f.interaction) {
        plan.push_back({f.treatment + ":" + *f.interaction, f.treatment, 0, -2});
        plan.push_back({*f.interaction, *f.interaction, 0, -1});
    }
    for (const auto& v : f.variables) {
        require_column(panel, v.name, f.role + " model");
        const int lag = v.time_dependent.value_or(true) ? v.lag : 0;
        const PanelColumn& col = panel.column(v.name);
        if (col.categorical()) {
            for (std::size_t l = 1; l < col.levels.size(); ++l) {
                plan.push_back({lagged_name(v.name, lag) + "=" + col.levels[l], v.name, lag, static_cast<int>(l)});
            }
        } else {
            plan.push_back({lagged_name(v.name, lag), v.name, lag, -1});
        }
    }
    return plan;
}

} // namespace

std::vector<PanelDesign> build_designs(const PanelDataset& panel, const std::vector<ModelFormula>& formulas)
{
    if (formulas.empty()) return {};
    std::vector<std::vector<ColumnPlan>> plans;
    for (const auto& f : formulas) {
        require_column(panel, f.outcome, f.role + " model outcome");
        require_column(panel, f.treatment, f.role + " model treatment");
        if (f.interaction) require_column(panel, *f.interaction, f.role + " model interaction");
        plans.push_back(plan_columns(panel, f));
    }

    const std::size_t n_units = panel.n_units();
    const int n_times = panel.n_times();
    struct Cell {
        std::size_t unit;
        int k;
    };
    std::vector<Cell> cells;
    std::vector<std::vector<double>> ys(formulas.size()), ds(formulas.size());
    std::vector<std::vector<std::vector<double>>> rows(formulas.size());
    for (std::size_t u = 0; u < n_units; ++u) {
        for (int k = 0; k < n_times; ++k) {
            bool ok = true;
            std::vector<double> y(formulas.size()), d(formulas.size());
            std::vector<std::vector<double>> r(formulas.size());
            for (std::size_t m = 0; m < formulas.size() && ok; ++m) {
                const auto& f = formulas[m];
                y[m] = read_cell(panel, f.outcome, u, k + f.outcome_lag);
                d[m] = read_cell(panel, f.treatment, u, k);
                ok = std::isfinite(y[m]) && std::isfinite(d[m]);
                const double h = f.interaction ? read_cell(panel, *f.interaction, u, k) : 0.0;
                ok = ok && std::isfinite(h);
                for (const auto& c : plans[m]) {
                    if (!ok) break;
                    double v;
                    if (c.source.empty()) {
                        v = 1.0;
                    } else if (c.level == -2) {
                        v = d[m] * h;
                    } else {
                        v = read_cell(panel, c.source, u, k + c.lag);
                        if (c.level >= 0 && std::isfinite(v)) v = std::llround(v) == c.level ? 1.0 : 0.0;
                    }
                    ok = std::isfinite(v);
                    r[m].push_back(v);
                }
            }
            if (!ok) continue;
            cells.push_back({u, k});
            for (std::size_t m = 0; m < formulas.size(); ++m) {
                ys[m].push_back(y[m]);
                ds[m].push_back(d[m]);
                rows[m].push_back(std::move(r[m]));
            }
        }
    }
    if (cells.empty()) {
        throw DataError("no usable rows after lag alignment for the " + formulas.front().role + " model");
    }

    std::vector<PanelDesign> out(formulas.size());
    const auto n = static_cast<Eigen::Index>(cells.size());
    for (std::size_t m = 0; m < formulas.size(); ++m) {
        PanelDesign& p = out[m];
        const auto& plan = plans[m];
        std::vector<bool> drop(plan.size(), false);
        for (std::size_t j = 0; j < plan.size(); ++j) {
            if (plan[j].level >= 0)
                drop[j] = std::all_of(rows[m].begin(), rows[m].end(), [&](const auto& r) { return r[j] == 0.0; });
        }
        // When the reference level is absent too, the first level present takes its place.
        for (std::size_t j = 0; j < plan.size(); ++j) {
            if (plan[j].level < 0 || (j > 0 && plan[j - 1].level >= 0 && plan[j - 1].source == plan[j].source &&
                                      plan[j - 1].lag == plan[j].lag))
                continue;
            std::size_t end = j;
            while (end < plan.size() && plan[end].level >= 0 && plan[end].source == plan[j].source &&
                   plan[end].lag == plan[j].lag)
                ++end;
            const bool reference_absent = std::all_of(rows[m].begin(), rows[m].end(), [&](const auto& r) {
                for (std::size_t c = j; c < end; ++c)
                    if (r[c] != 0.0) return true;
                return false;
            });
            for (std::size_t c = j; reference_absent && c < end; ++c) {
                if (!drop[c]) {
                    drop[c] = true;
                    break;
                }
            }
        }
        std::vector<std::size_t> keep;
        for (std::size_t j = 0; j < plan.size(); ++j) {
            if (drop[j]) {
                p.dropped.push_back(plan[j].name);
            } else {
                keep.push_back(j);
                p.design.names.push_back(plan[j].name);
            }
        }
        const auto width = static_cast<Eigen::Index>(keep.size());
        p.design.x.resize(n, width);
        p.y.resize(n);
        p.d.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& row = rows[m][static_cast<std::size_t>(i)];
            p.y(i) = ys[m][static_cast<std::size_t>(i)];
            p.d(i) = ds[m][static_cast<std::size_t>(i)];
            for (Eigen::Index j = 0; j < width; ++j) p.design.x(i, j) = row[keep[static_cast<std::size_t>(j)]];
        }
        for (const auto& c : cells) {
            p.cells.emplace_back(c.unit, c.k);
            p.clusters.push_back(cluster_code(panel, c.unit, c.k));
        }
    }
    return out;
}

std::pair<Eigen::VectorXd, std::string> treated_weights(const Eigen::VectorXd& d, double d_high,
                                                        std::size_t discrete_levels)
{
    const Eigen::Index n = d.size();
    if (n == 0) throw DataError("treated weights: no rows");
    std::vector<double> sorted(d.data(), d.data() + n);
    std::sort(sorted.begin(), sorted.end());
    std::size_t distinct = 1;
    for (Eigen::Index i = 1; i < n; ++i)
        if (sorted[i] - sorted[i - 1] > 1e-12) ++distinct;

    const double tol = 1e-9 * std::max(1.0, std::abs(d_high));
    if (distinct <= discrete_levels) {
        Eigen::VectorXd w = ((d.array() - d_high).abs() <= tol).cast<double>().matrix();
        if (w.sum() > 0) return {w, "stratum"};
    }
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(n - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, sorted.size() - 1);
        return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    };
    const double mean = d.mean();
    const double sd = n > 1 ? std::sqrt((d.array() - mean).square().sum() / static_cast<double>(n - 1)) : 0.0;
    const double iqr = quantile(0.75) - quantile(0.25);
    double spread = std::min(sd, iqr / 1.34);
    if (!(spread > 0)) spread = sd;
    const double h = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
    if (!(h > 0)) throw DataError("treated weights: treatment has no variation");
    Eigen::VectorXd w = ((d.array() - d_high) / h).square().unaryExpr([](double z2) { return std::exp(-0.5 * z2); });
    if (!(w.sum() > 0)) throw DataError("treated weights: no rows near d_high");
    char buf[64];
    std::snprintf(buf, sizeof buf, "kernel:h=%.6g", h);
    return {w, buf};
}

// --- estimators -------------------------------------------------------------

namespace {

struct FittedModel {
    PanelDesign design;
    ModelFit fit;
    ClusterVcov vcov;
    ModelSummary summary;
};

FittedModel fit_design(PanelDesign design, Family family, const std::string& role)
{
    FittedModel m;
    m.fit = fit_glm(family, design.y, design.design);
    m.vcov = cluster_robust_vcov(m.fit, design.clusters);
    m.summary.role = role;
    m.summary.family = family;
    m.summary.columns = design.design.names;
    m.summary.rows = m.fit.n();
    m.summary.clusters = m.vcov.clusters;
    m.summary.iterations = m.fit.convergence.iterations;
    m.summary.gradient_norm = m.fit.convergence.gradient_norm;
    m.summary.converged = m.fit.convergence.converged;
    m.summary.treatment_coef = m.fit.coef(1);
    m.summary.treatment_se = std::sqrt(m.vcov.vcov(1, 1));
    m.design = std::move(design);
    return m;
}

struct Evaluation {
    std::vector<Eigen::Index> rows;  // into the design sample
    Eigen::VectorXd weights;         // empty = equal
    std::string weighting = "empirical";
};

struct Contrast {
    double estimate = 0.0;
    double variance = 0.0;
    std::vector<std::string> warnings;
};

// `source` supplies the covariate rows; `model` is evaluated on them.
Contrast contrast(const FittedModel& model, const PanelDesign& source, const Evaluation& eval,
                  const EstimandSpec& estimand)
{
    const Eigen::MatrixXd rows = source.design.x(eval.rows, Eigen::all);
    std::vector<TreatmentTerm> terms{{1, {}}};
    const bool interacted = model.design.design.names.size() > 2 &&
                            model.design.design.names[2] == model.design.design.names[1] + ":" +
                                                               model.design.design.names[3];
    if (interacted) terms.push_back({2, rows.col(3)});
    const auto support = std::pair{source.d.minCoeff(), source.d.maxCoeff()};
    const GComputation g = g_compute(model.fit, rows, terms, estimand.d_high, estimand.d_low, eval.weights, support);
    std::vector<std::int64_t> clusters;
    for (Eigen::Index r : eval.rows) clusters.push_back(source.clusters[static_cast<std::size_t>(r)]);
    Contrast c;
    c.estimate = g.estimate;
    c.variance = delta_variance(g, model.vcov.vcov, clusters);
    c.warnings = g.warnings;
    return c;
}

Evaluation evaluation_for(const PanelDesign& design, Target target, double d_high, std::size_t levels,
                          const std::vector<Eigen::Index>& subset = {})
{
    Evaluation e;
    if (subset.empty()) {
        for (Eigen::Index i = 0; i < design.y.size(); ++i) e.rows.push_back(i);
    } else {
        e.rows = subset;
    }
    if (target == Target::Acdt) {
        const Eigen::VectorXd d = design.d(e.rows);
        auto [w, how] = treated_weights(d, d_high, levels);
        e.weights = std::move(w);
        e.weighting = how;
    }
    return e;
}

std::vector<VariableMeta> resolve(const std::vector<VariableMeta>& vars, const ControlSpec& control,
                                  const PanelDataset& panel)
{
    std::vector<VariableMeta> out = vars;
    for (auto& v : out) {
        if (v.name == control.outcome) v.name = panel.outcome;
    }
    return out;
}

void check_estimand(const EstimandSpec& e)
{
    if (!std::isfinite(e.d_high) || !std::isfinite(e.d_low)) throw ConfigError("estimand: contrast values must be finite");
}

EstimateReport base_report(const std::string& kind, const std::string& stage, const EstimandSpec& estimand,
                           const EstimatorOptions& options)
{
    EstimateReport r;
    r.kind = kind;
    r.stage = stage;
    r.label = options.label;
    r.d_high = estimand.d_high;
    r.d_low = estimand.d_low;
    r.target = estimand.target;
    if (estimand.d_high == estimand.d_low) r.warnings.push_back("d_high equals d_low; the contrast is zero");
    return r;
}

void append(std::vector<std::string>& to, const std::vector<std::string>& from)
{
    for (const auto& w : from)
        if (std::find(to.begin(), to.end(), w) == to.end()) to.push_back(w);
}

void note_dropped(std::vector<std::string>& to, const PanelDesign& design)
{
    for (const auto& name : design.dropped)
        append(to, {"categorical level dropped (absent from the sample or the new reference): " + name});
}

ModelFormula placebo_formula(const PanelDataset& panel, const ControlSpec& control,
                             const std::vector<VariableMeta>& vars)
{
    return {"placebo", panel.outcome, 0, control.treatment, resolve(vars, control, panel), std::nullopt};
}

ModelFormula main_formula(const PanelDataset& panel, const ControlSpec& control, const std::vector<VariableMeta>& vars)
{
    return {"main", panel.outcome, 1, control.treatment, resolve(vars, control, panel), std::nullopt};
}

std::vector<VariableMeta> shift_back(std::vector<VariableMeta> vars)
{
    for (auto& v : vars) v.lag -= 1;
    return vars;
}

// Appends b to a, skipping members whose key is already present (a shifted
// post-outcome member can coincide with a lag in the base set).
std::vector<VariableMeta> concat(std::vector<VariableMeta> a, const std::vector<VariableMeta>& b)
{
    for (const auto& v : b) {
        if (std::none_of(a.begin(), a.end(), [&](const VariableMeta& u) { return u.key() == v.key(); })) a.push_back(v);
    }
    return a;
}

EstimateReport single_model_report(const std::string& kind, const std::string& stage, FittedModel model,
                                   const EstimandSpec& estimand, const EstimatorOptions& options,
                                   const std::vector<Eigen::Index>& subset = {})
{
    EstimateReport r = base_report(kind, stage, estimand, options);
    const Evaluation eval = evaluation_for(model.design, estimand.target, estimand.d_high, options.discrete_levels, subset);
    const Contrast c = contrast(model, model.design, eval, estimand);
    r.point = c.estimate;
    r.se = std::sqrt(std::max(0.0, c.variance));
    r.set_interval();
    append(r.warnings, c.warnings);
    note_dropped(r.warnings, model.design);
    r.details["treatment_coef"] = model.summary.treatment_coef;
    r.details["treatment_se"] = model.summary.treatment_se;
    r.details["evaluation_rows"] = static_cast<double>(eval.rows.size());
    r.note = "averaging: " + eval.weighting + "; " + kJointTestNote;
    r.models.push_back(model.summary);
    return r;
}

FittedModel fit_single(const PanelDataset& panel, const ModelFormula& f, Family family)
{
    auto designs = build_designs(panel, {f});
    FittedModel m = fit_design(std::move(designs.front()), family, f.role);
    m.summary.outcome = lagged_name(f.outcome, f.outcome_lag);
    return m;
}

struct BcModels {
    FittedModel main;
    FittedModel placebo;
    // Main-design column feeding each placebo-design column when the placebo
    // model is evaluated on the main model's rows.
    std::vector<Eigen::Index> placebo_columns;
};

int effective_lag(const VariableMeta& v) { return v.time_dependent.value_or(true) ? v.lag : 0; }

// Placebo members are the shifted post-outcome members followed by the base set.
// A base member equal to a shifted one is dropped, and the shared column is
// evaluated at the post-outcome member's value.
std::vector<Eigen::Index> map_placebo_columns(const Design& main, const Design& placebo,
                                              const std::vector<std::pair<VariableMeta, VariableMeta>>& sources)
{
    std::map<std::string, Eigen::Index> index;
    for (std::size_t j = 0; j < main.names.size(); ++j) index[main.names[j]] = static_cast<Eigen::Index>(j);
    std::vector<Eigen::Index> out;
    for (const auto& name : placebo.names) {
        std::string target = name;
        for (const auto& [pv, sv] : sources) {
            const std::string prefix = lagged_name(pv.name, effective_lag(pv));
            if (name == prefix || name.rfind(prefix + "=", 0) == 0) {
                target = lagged_name(sv.name, effective_lag(sv)) + name.substr(prefix.size());
                break;
            }
        }
        auto it = index.find(target);
        if (it == index.end()) throw DataError("bias correction: no main-model column for '" + name + "'");
        out.push_back(it->second);
    }
    return out;
}

BcModels fit_bias_corrected(const PanelDataset& panel, const ControlSpec& control, Family family,
                            const std::optional<std::string>& interaction = std::nullopt)
{
    const ControlDecomposition dec = decompose_control_set(control);
    const std::vector<VariableMeta> shifted = shift_back(dec.x);
    const std::vector<VariableMeta> placebo_vars = concat(shifted, dec.base);
    std::vector<std::pair<VariableMeta, VariableMeta>> sources;
    for (std::size_t k = 0; k < placebo_vars.size(); ++k) {
        const VariableMeta& source = k < shifted.size() ? dec.x[k] : placebo_vars[k];
        sources.emplace_back(resolve({placebo_vars[k]}, control, panel).front(), resolve({source}, control, panel).front());
    }
    ModelFormula m = main_formula(panel, control, concat(dec.x, dec.base));
    ModelFormula p = placebo_formula(panel, control, placebo_vars);
    m.role = "bias_corrected.main";
    p.role = "bias_corrected.placebo";
    m.interaction = interaction;
    p.interaction = interaction;
    auto designs = build_designs(panel, {m, p});
    BcModels out{fit_design(std::move(designs[0]), family, m.role), fit_design(std::move(designs[1]), family, p.role), {}};
    out.main.summary.outcome = lagged_name(m.outcome, 1);
    out.placebo.summary.outcome = m.outcome;
    out.placebo_columns = map_placebo_columns(out.main.design.design, out.placebo.design.design, sources);
    return out;
}

EstimateReport bias_corrected_report(const BcModels& models, const EstimandSpec& estimand,
                                     const EstimatorOptions& options, const std::vector<Eigen::Index>& subset = {})
{
    EstimateReport r = base_report("bias_corrected", "bias_correction", estimand, options);
    r.target = Target::Acdt;
    // Both components average over the main model's (X_{t+1}, C^B) rows near D = d_high.
    const Evaluation eval = evaluation_for(models.main.design, Target::Acdt, estimand.d_high, options.discrete_levels, subset);
    const Contrast main = contrast(models.main, models.main.design, eval, estimand);
    PanelDesign view = models.main.design;
    view.design.x = models.main.design.design.x(Eigen::all, models.placebo_columns);
    view.design.names = models.placebo.design.design.names;
    const Contrast plac = contrast(models.placebo, view, eval, estimand);
    r.point = main.estimate - plac.estimate;
    r.se = std::sqrt(std::max(0.0, main.variance) + std::max(0.0, plac.variance));
    r.set_interval();
    r.details["main_point"] = main.estimate;
    r.details["main_se"] = std::sqrt(std::max(0.0, main.variance));
    r.details["placebo_point"] = plac.estimate;
    r.details["placebo_se"] = std::sqrt(std::max(0.0, plac.variance));
    r.details["evaluation_rows"] = static_cast<double>(eval.rows.size());
    append(r.warnings, main.warnings);
    append(r.warnings, plac.warnings);
    note_dropped(r.warnings, models.main.design);
    note_dropped(r.warnings, models.placebo.design);
    r.models = {models.main.summary, models.placebo.summary};
    r.note = "averaging: " + eval.weighting + "; variance is the sum of the component variances; " + kJointTestNote;
    return r;
}

EstimateReport placebo_report_from(FittedModel model, const EstimandSpec& estimand, const EstimatorOptions& options,
                                   const std::vector<Eigen::Index>& subset = {},
                                   const std::vector<Eigen::Index>& terms = {1})
{
    // Wald statistic for the sum of the treatment terms.
    Eigen::VectorXd l = Eigen::VectorXd::Zero(model.fit.coef.size());
    for (Eigen::Index t : terms) l(t) = 1.0;
    const double coef = l.dot(model.fit.coef);
    const double se = std::sqrt(std::max(0.0, l.dot(model.vcov.vcov * l)));
    const std::size_t clusters = model.vcov.clusters;
    EstimateReport r = single_model_report("placebo", "placebo_test", std::move(model), estimand, options, subset);
    r.p_value = se > 0 ? cluster_two_sided_p(coef / se, clusters) : 1.0;
    r.details["wald_z"] = se > 0 ? coef / se : 0.0;
    return r;
}

} // namespace

PanelDataset prepare_panel(const PanelDataset& panel, const WeightMatrix& weights, const ControlSpec& control)
{
    PanelDataset out = panel;
    if (!out.has(control.treatment)) out = compute_treatment(out, weights, control.treatment);
    bool wants_summary = false;
    for (const auto& v : control.variables)
        if ((v.name == "n_neighbors" || v.name == "w_variance") && !out.has(v.name)) wants_summary = true;
    if (wants_summary) out = add_neighbor_summaries(out, weights);
    return out;
}

EstimateReport run_placebo_test(const PanelDataset& panel, const WeightMatrix& weights, const ControlSpec& control,
                                const EstimandSpec& estimand, const EstimatorOptions& options)
{
    check_estimand(estimand);
    const PanelDataset data = prepare_panel(panel, weights, control);
    const PlaceboSpec placebo = derive_placebo_set(control);
    FittedModel model = fit_single(data, placebo_formula(data, control, placebo.variables), estimand.family);
    EstimateReport r = placebo_report_from(std::move(model), estimand, options);
    for (const auto& k : placebo.removed) r.warnings.push_back("removed from the placebo set: " + k);
    return r;
}

EstimateReport estimate_acde(const PanelDataset& panel, const WeightMatrix& weights, const ControlSpec& control,
                             const EstimandSpec& estimand, const EstimatorOptions& options)
{
    check_estimand(estimand);
    const PanelDataset data = prepare_panel(panel, weights, control);
    (void)derive_placebo_set(control);  // validates the metadata
    FittedModel model = fit_single(data, main_formula(data, control, control.variables), estimand.family);
    return single_model_report("main", "main_estimate", std::move(model), estimand, options);
}

EstimateReport estimate_bias_corrected(const PanelDataset& panel, const WeightMatrix& weights,
                                       const ControlSpec& control, const EstimandSpec& estimand,
                                       const EstimatorOptions& options)
{
    check_estimand(estimand);
    const PanelDataset data = prepare_panel(panel, weights, control);
    return bias_corrected_report(fit_bias_corrected(data, control, estimand.family), estimand, options);
}

ConditionalResult estimate_conditional_acde(const PanelDataset& panel, const WeightMatrix& weights,
                                            const ControlSpec& control, const EstimandSpec& estimand,
                                            const ModeratorSpec& moderator, const EstimatorOptions& options)
{
    check_estimand(estimand);
    PanelDataset data = prepare_panel(panel, weights, control);
    require_column(data, moderator.column, "moderator");

    const Eigen::MatrixXd& m = data.column(moderator.column).values;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        if (!std::isfinite(m(i))) continue;
        lo = std::min(lo, m(i));
        hi = std::max(hi, m(i));
    }
    ConditionalResult out;
    auto tag = [](std::vector<EstimateReport> reports, const std::string& term) {
        for (auto& r : reports) r.term = term;
        return reports;
    };
    if (!(hi > lo)) {
        out.warnings.push_back("moderator '" + moderator.column +
                               "' is constant; the interaction is not identified and both strata report the "
                               "unconditional estimates");
        std::vector<EstimateReport> all{run_placebo_test(data, weights, control, estimand, options),
                                        estimate_acde(data, weights, control, estimand, options),
                                        estimate_bias_corrected(data, weights, control, estimand, options)};
        for (auto& r : all) r.warnings.push_back(out.warnings.front());
        out.high = tag(all, "high");
        out.low = tag(all, "low");
        return out;
    }

    const std::string indicator = moderator.column + ">=" + std::to_string(moderator.cutoff);
    Eigen::MatrixXd h = m.unaryExpr([&](double v) {
        return std::isfinite(v) ? (v >= moderator.cutoff ? 1.0 : 0.0) : std::numeric_limits<double>::quiet_NaN();
    });
    for (double value : {1.0, 0.0}) {
        if (!(h.array() == value).any()) {
            throw DataError("conditional ACDE: the " + std::string(value == 1.0 ? "high" : "low") + " stratum of '" +
                            moderator.column + "' at cutoff " + std::to_string(moderator.cutoff) + " is empty");
        }
    }
    data.set_numeric(indicator, h);

    const PlaceboSpec placebo = derive_placebo_set(control);
    ModelFormula pf = placebo_formula(data, control, placebo.variables);
    ModelFormula mf = main_formula(data, control, control.variables);
    pf.interaction = indicator;
    mf.interaction = indicator;
    FittedModel pm = fit_single(data, pf, estimand.family);
    FittedModel mm = fit_single(data, mf, estimand.family);
    const BcModels bc = fit_bias_corrected(data, control, estimand.family, indicator);

    auto stratum = [](const PanelDesign& d, double value) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < d.design.x.rows(); ++i)
            if (d.design.x(i, 3) == value) rows.push_back(i);
        return rows;
    };
    for (double value : {1.0, 0.0}) {
        const std::string name = value == 1.0 ? "high" : "low";
        const auto ps = stratum(pm.design, value), ms = stratum(mm.design, value), bs = stratum(bc.main.design, value);
        if (ps.empty() || ms.empty() || bs.empty()) {
            throw DataError("conditional ACDE: the " + name + " stratum of '" + moderator.column + "' at cutoff " +
                            std::to_string(moderator.cutoff) + " is empty");
        }
        const std::vector<Eigen::Index> terms = value == 1.0 ? std::vector<Eigen::Index>{1, 2} : std::vector<Eigen::Index>{1};
        std::vector<EstimateReport> reports{placebo_report_from(pm, estimand, options, ps, terms),
                                            single_model_report("main", "main_estimate", mm, estimand, options, ms),
                                            bias_corrected_report(bc, estimand, options, bs)};
        (value == 1.0 ? out.high : out.low) = tag(std::move(reports), name);
    }
    return out;
}

DiagnosticResult diagnose_assumption3(const PanelDataset& panel, const WeightMatrix& weights,
                                      const ControlSpec& control, const EstimandSpec& estimand,
                                      const EstimatorOptions& options)
{
    check_estimand(estimand);
    const PanelDataset data = prepare_panel(panel, weights, control);
    const ControlDecomposition dec = decompose_control_set(control);
    DiagnosticResult out;
    if (dec.x.empty()) {
        out.note = "no time-varying observed confounders affected by the placebo outcome; nothing to diagnose";
        return out;
    }
    out.note = "linear additive regressions; differences use a cluster-robust covariance of the stacked scores";

    auto difference = [&](const ModelFit& a, Eigen::Index ia, const ModelFit& b, Eigen::Index ib,
                          const std::vector<std::int64_t>& clusters) {
        const Eigen::MatrixXd inf_a = a.influence(), inf_b = b.influence();
        std::map<std::int64_t, double> sums;
        for (Eigen::Index r = 0; r < inf_a.rows(); ++r) sums[clusters[static_cast<std::size_t>(r)]] += inf_a(r, ia) - inf_b(r, ib);
        double v = 0.0;
        for (const auto& [id, s] : sums) v += s * s;
        const double g = static_cast<double>(sums.size());
        return std::pair{a.coef(ia) - b.coef(ib), g > 1 ? v * g / (g - 1) : v};
    };

    for (std::size_t k = 0; k < dec.x.size(); ++k) {
        const VariableMeta& xk = dec.x[k];
        const std::string key = xk.key();
        if (data.has(xk.name) && data.column(xk.name).categorical()) {
            out.note += "; skipped categorical '" + key + "'";
            continue;
        }
        std::vector<VariableMeta> others;
        for (std::size_t j = 0; j < dec.x.size(); ++j)
            if (j != k) others.push_back(dec.x[j]);
        const VariableMeta target = resolve({xk}, control, data).front();

        ModelFormula effect_next = main_formula(data, control, concat(concat({xk}, others), dec.base));
        ModelFormula effect_now = placebo_formula(data, control, concat(shift_back(concat({xk}, others)), dec.base));
        ModelFormula imbalance_next{"imbalance.next", target.name, target.lag, control.treatment,
                                    resolve(concat(others, dec.base), control, data), std::nullopt};
        ModelFormula imbalance_now{"imbalance.now", target.name, target.lag - 1, control.treatment,
                                   resolve(concat(shift_back(others), dec.base), control, data), std::nullopt};
        std::vector<PanelDesign> designs;
        try {
            designs = build_designs(data, {effect_next, effect_now, imbalance_next, imbalance_now});
        } catch (const DataError& e) {
            out.note += "; '" + key + "': " + e.what();
            continue;
        }
        std::vector<ModelFit> fits;
        for (const auto& d : designs) fits.push_back(fit_ols(d.y, d.design));
        const auto& clusters = designs.front().clusters;
        const std::size_t n_clusters = std::set<std::int64_t>(clusters.begin(), clusters.end()).size();

        const auto [eff, eff_var] = difference(fits[0], 2, fits[1], 2, clusters);
        const auto [imb, imb_var] = difference(fits[2], 1, fits[3], 1, clusters);
        for (int which = 0; which < 2; ++which) {
            EstimateReport r = base_report("diagnostic", "post_outcome_diagnostics", estimand, options);
            r.warnings.clear();
            r.term = (which == 0 ? "effect:" : "imbalance:") + key;
            r.point = which == 0 ? eff : imb;
            r.se = std::sqrt(std::max(0.0, which == 0 ? eff_var : imb_var));
            r.set_interval();
            r.p_value = r.se > 0 ? cluster_two_sided_p(r.point / r.se, n_clusters) : 1.0;
            const ModelFit& a = fits[which == 0 ? 0 : 2];
            const ModelFit& b = fits[which == 0 ? 1 : 3];
            r.details["coef_next"] = a.coef(which == 0 ? 2 : 1);
            r.details["coef_now"] = b.coef(which == 0 ? 2 : 1);
            r.details["rows"] = static_cast<double>(a.n());
            for (int m = which * 2; m < which * 2 + 2; ++m) {
                ModelSummary s;
                s.role = (which == 0 ? "effect." : "imbalance.") + std::string(m % 2 == 0 ? "next" : "now");
                s.family = Family::Gaussian;
                s.columns = designs[m].design.names;
                s.rows = fits[m].n();
                s.converged = true;
                s.iterations = 1;
                s.treatment_coef = fits[m].coef(1);
                r.models.push_back(s);
            }
            r.note = which == 0 ? "coefficient of " + key + " in the t+1 outcome model minus its lag in the t outcome model"
                                : "treatment coefficient in the model for " + key + " minus that for its lag";
            r.note += std::string("; ") + kJointTestNote;
            out.reports.push_back(std::move(r));
        }
    }
    return out;
}

} // namespace cdiff
