#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdiff/panel.hpp"
#include "cdiff/placebo.hpp"
#include "cdiff/regress.hpp"

namespace cdiff {

enum class Target { Acde, Acdt };
const char* to_string(Target t);
Target parse_target(const std::string& s);

struct EstimandSpec {
    double d_high = 1.0;
    double d_low = 0.0;
    Target target = Target::Acde;
    Family family = Family::Gaussian;
};

// Summary of one fitted nuisance model, kept for the report.
struct ModelSummary {
    std::string role;  // "main", "placebo", ...
    std::string outcome;
    Family family = Family::Gaussian;
    std::vector<std::string> columns;
    std::size_t rows = 0;
    std::size_t clusters = 0;
    int iterations = 0;
    double gradient_norm = 0.0;
    bool converged = false;
    double treatment_coef = 0.0;
    double treatment_se = 0.0;
};

struct EstimateReport {
    std::string kind;   // placebo | main | bias_corrected | diagnostic
    std::string stage;  // workflow step the record belongs to
    std::string label;  // control-set label
    std::string term;   // diagnostics: "effect:x" / "imbalance:x"; conditional: stratum
    double point = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::optional<double> p_value;
    double d_high = 0.0;
    double d_low = 0.0;
    Target target = Target::Acde;
    std::vector<ModelSummary> models;
    std::map<std::string, double> details;
    std::vector<std::string> warnings;
    std::string note;

    void set_interval(double z = 1.959963984540054);
};

// Text attached to every placebo-type record.
extern const char* const kJointTestNote;

nlohmann::json to_json(const EstimateReport& r);
nlohmann::json to_json(const ModelSummary& m);

struct EstimatorOptions {
    std::string label;
    // Columns with at most this many distinct treatment values use an exact
    // D = d_high stratum for ACDT averaging; otherwise a Gaussian kernel.
    std::size_t discrete_levels = 10;
};

// Adds the treatment column (when absent) and the neighbor summaries (when
// requested by name and absent).
PanelDataset prepare_panel(const PanelDataset& panel, const WeightMatrix& weights, const ControlSpec& control);

EstimateReport run_placebo_test(const PanelDataset& panel, const WeightMatrix& weights, const ControlSpec& control,
                                const EstimandSpec& estimand, const EstimatorOptions& options = {});

EstimateReport estimate_acde(const PanelDataset& panel, const WeightMatrix& weights, const ControlSpec& control,
                             const EstimandSpec& estimand, const EstimatorOptions& options = {});

// Always averages over the d_high stratum, whatever `estimand.target` says.
EstimateReport estimate_bias_corrected(const PanelDataset& panel, const WeightMatrix& weights,
                                       const ControlSpec& control, const EstimandSpec& estimand,
                                       const EstimatorOptions& options = {});

struct ModeratorSpec {
    std::string column;
    double cutoff = 0.0;
};

// One placebo/main/bias-corrected triple per stratum of 1{moderator >= cutoff}.
struct ConditionalResult {
    std::vector<EstimateReport> high;
    std::vector<EstimateReport> low;
    std::vector<std::string> warnings;
};

ConditionalResult estimate_conditional_acde(const PanelDataset& panel, const WeightMatrix& weights,
                                            const ControlSpec& control, const EstimandSpec& estimand,
                                            const ModeratorSpec& moderator, const EstimatorOptions& options = {});

struct DiagnosticResult {
    std::vector<EstimateReport> reports;
    std::string note;
};

DiagnosticResult diagnose_assumption3(const PanelDataset& panel, const WeightMatrix& weights,
                                      const ControlSpec& control, const EstimandSpec& estimand,
                                      const EstimatorOptions& options = {});

// --- building blocks, exposed for the simulation layer and tests ----------

// One regression on the (unit, treatment-period) grid. Variables are read at
// t + lag; the outcome at t + outcome_lag.
struct ModelFormula {
    std::string role;
    std::string outcome;  // panel column
    int outcome_lag = 1;
    std::string treatment;  // panel column, read at t
    std::vector<VariableMeta> variables;
    // Extra columns: treatment x indicator.
    std::optional<std::string> interaction;
};

struct PanelDesign {
    Design design;  // [1, D, (D x H), covariates...]
    Eigen::VectorXd y;
    Eigen::VectorXd d;
    std::vector<std::int64_t> clusters;
    std::vector<std::pair<std::size_t, int>> cells;  // (unit, period index of t)
    std::vector<std::string> dropped;                 // dummy levels absent from the sample
};

// Builds the designs for several formulas on a common complete-case sample.
std::vector<PanelDesign> build_designs(const PanelDataset& panel, const std::vector<ModelFormula>& formulas);

// ACDT weights over the evaluation rows. Returns the weights and a description
// ("stratum" or "kernel:h=...").
std::pair<Eigen::VectorXd, std::string> treated_weights(const Eigen::VectorXd& d, double d_high,
                                                        std::size_t discrete_levels = 10);

double normal_two_sided_p(double z);
// Wald p-value against Student t with G - 1 degrees of freedom for G clusters.
double cluster_two_sided_p(double t, std::size_t clusters);

} // namespace cdiff
