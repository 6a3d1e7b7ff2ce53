#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdiff/estimators.hpp"
#include "cdiff/panel.hpp"
#include "cdiff/placebo.hpp"
#include "cdiff/regress.hpp"

namespace cdiff {

enum class EdgeRule { And, Or };
enum class LambdaRule { CrossValidation, Bic, Fixed };

const char* to_string(EdgeRule r);
EdgeRule parse_edge_rule(const std::string& s);
const char* to_string(LambdaRule r);
LambdaRule parse_lambda_rule(const std::string& s);

struct MrfOptions {
    EdgeRule edge_rule = EdgeRule::And;
    LambdaRule lambda_rule = LambdaRule::CrossValidation;
    double lambda = 0.1;  // used by LambdaRule::Fixed, on the standardized scale
    int folds = 10;
    int n_lambda = 40;
    std::uint64_t seed = 1;
};

struct MarkovEdge {
    std::size_t a = 0;  // a < b
    std::size_t b = 0;
    double weight_ab = 0.0;  // standardized coefficient of b in the regression of a
    double weight_ba = 0.0;
    bool and_rule = false;  // both directions nonzero; every stored edge satisfies the OR rule
};

struct MarkovGraph {
    std::vector<std::string> vertices;
    std::vector<Family> families;
    std::vector<double> lambdas;  // per node
    std::vector<MarkovEdge> edges;
    EdgeRule rule = EdgeRule::And;
    std::size_t rows = 0;
    std::vector<std::string> warnings;

    std::optional<std::size_t> index(const std::string& vertex) const;
    // Edge test under `rule`.
    bool adjacent(std::size_t a, std::size_t b) const;
    std::vector<std::size_t> neighbors(std::size_t v) const;
    // Edges under `rule`, as vertex index pairs.
    std::vector<std::pair<std::size_t, std::size_t>> edge_set() const;
    std::vector<std::pair<std::size_t, std::size_t>> edge_set(EdgeRule r) const;
};

nlohmann::json to_json(const MarkovGraph& g);

// Neighborhood lasso per column of `z` (rows = observations), complete cases.
// Columns with all values in {0, 1} may be given the binomial family.
MarkovGraph fit_mixed_mrf(const Eigen::MatrixXd& z, const std::vector<std::string>& names,
                          const std::vector<Family>& families, const MrfOptions& options = {});

// Columns holding only 0/1 values are binomial, everything else gaussian.
std::vector<Family> infer_families(const Eigen::MatrixXd& z);

// Candidate variables are given in placebo-outcome time: lag 0 is period t of
// Y_it and D_it. `post_outcome` describes the variable as it will enter the
// control set, one period later; for the outcome series it is implied.
struct SelectionSpec {
    std::string treatment = "D";
    std::string outcome = "Y";
    std::vector<VariableMeta> candidates;
};

struct MrfData {
    Eigen::MatrixXd z;  // columns: outcome, treatment, candidates
    std::vector<std::string> names;
    std::vector<VariableMeta> meta;  // aligned with names; outcome and treatment first
};

MrfData build_mrf_data(const PanelDataset& panel, const SelectionSpec& spec);

struct SelectionResult {
    bool found = false;
    std::string reason;  // NotFound explanation
    std::vector<VariableMeta> separating_set;
    ControlSpec control;
    std::vector<std::string> flags;  // members needing review (deep lags)
    bool verified = false;
    std::optional<EstimateReport> verification;
};

// Separating set = neighbors of the placebo outcome (vertex 0 of `meta`); NotFound when
// the outcome and the treatment (vertex 1) are adjacent. A NotFound result does
// not show that no valid control set exists.
SelectionResult select_control_set(const MarkovGraph& graph, const std::vector<VariableMeta>& meta,
                                   const SelectionSpec& spec);

// Runs the extra placebo test on a selection; verified when p >= alpha.
void verify_selection(SelectionResult& selection, const PanelDataset& panel, const WeightMatrix& weights,
                      const EstimandSpec& estimand, double alpha = 0.05);

struct SelectionRun {
    MarkovGraph graph;
    SelectionResult selection;
};

SelectionRun select_controls(const PanelDataset& panel, const WeightMatrix& weights, const SelectionSpec& spec,
                             const EstimandSpec& estimand, const MrfOptions& options = {}, double alpha = 0.05);

} // namespace cdiff
