#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace cdiff {

struct PanelSchema {
    std::string unit = "unit";
    std::string time = "time";
    std::string outcome = "y";
    std::optional<std::string> cluster;
    std::vector<std::string> numeric;
    std::vector<std::string> categorical;
    char delimiter = ',';
};

// One variable on the unit × period grid. Missing cells are NaN; categorical
// columns hold level codes 0..levels-1.
struct PanelColumn {
    Eigen::MatrixXd values;
    std::vector<std::string> levels;  // empty for numeric columns
    bool categorical() const { return !levels.empty(); }
};

// Balanced-grid view of a long-format panel. Periods run t_min .. t_min+n_times-1;
// cells with no source row are missing and marked absent.
class PanelDataset {
public:
    PanelDataset() = default;
    PanelDataset(std::vector<std::string> units, int t_min, int n_times);

    const std::vector<std::string>& units() const noexcept { return units_; }
    std::size_t n_units() const noexcept { return units_.size(); }
    int t_min() const noexcept { return t_min_; }
    int n_times() const noexcept { return n_times_; }
    int t_max() const noexcept { return t_min_ + n_times_ - 1; }
    int transitions() const noexcept { return n_times_ > 0 ? n_times_ - 1 : 0; }
    std::optional<std::size_t> unit_index(const std::string& unit) const;

    bool has(const std::string& name) const { return columns_.count(name) > 0; }
    const PanelColumn& column(const std::string& name) const;
    double value(const std::string& name, std::size_t unit, int period_index) const;
    const std::vector<std::string>& column_names() const noexcept { return order_; }

    void set_column(const std::string& name, PanelColumn column);
    void set_numeric(const std::string& name, Eigen::MatrixXd values);

    bool present(std::size_t unit, int period_index) const { return present_(unit, period_index) != 0; }
    void set_present(std::size_t unit, int period_index, bool p) { present_(unit, period_index) = p; }

    std::string outcome;
    std::optional<std::string> cluster;
    // "unit@time" cells that fall inside a unit's span but have no row.
    std::vector<std::string> gaps;
    std::vector<std::string> notes;

private:
    std::vector<std::string> units_;
    std::unordered_map<std::string, std::size_t> unit_index_;
    int t_min_ = 0;
    int n_times_ = 0;
    Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic> present_;
    std::map<std::string, PanelColumn> columns_;
    std::vector<std::string> order_;
};

PanelDataset load_panel(const std::string& path, const PanelSchema& schema);
PanelDataset read_panel(std::istream& in, const PanelSchema& schema, const std::string& source = "<stream>");
// Writes present rows in long format with round-trip precision.
void save_panel(const std::string& path, const PanelDataset& panel, const std::string& unit_col = "unit",
                const std::string& time_col = "time");

// --- weights --------------------------------------------------------------

class WeightMatrix {
public:
    WeightMatrix() = default;
    WeightMatrix(std::vector<std::string> units, Eigen::MatrixXd w);
    WeightMatrix(std::vector<std::string> units, std::map<int, Eigen::MatrixXd> by_time);

    const std::vector<std::string>& units() const noexcept { return units_; }
    std::size_t size() const noexcept { return units_.size(); }
    bool time_varying() const noexcept { return !by_time_.empty(); }
    std::vector<int> times() const;

    // Static matrices ignore `time`; time-varying ones return nullptr for an
    // unknown period.
    const Eigen::MatrixXd* find(int time) const;
    const Eigen::MatrixXd& at(int time) const;

    std::vector<std::size_t> neighbors(std::size_t i, int time = 0) const;
    std::vector<std::string> empty_rows(int time = 0) const;

    WeightMatrix row_standardized() const;

private:
    std::vector<std::string> units_;
    Eigen::MatrixXd static_;
    std::map<int, Eigen::MatrixXd> by_time_;
};

struct UnitCoordinate {
    std::string unit;
    double x = 0.0;
    double y = 0.0;
};

std::vector<UnitCoordinate> load_coordinates(const std::string& path);

// Row-standardized 1/distance weights. With `nearest` set, each row keeps only
// that many closest units before standardization. With `max_distance` set,
// units farther away are dropped, except that every row keeps its closest unit.
WeightMatrix build_inverse_distance_weights(const std::vector<UnitCoordinate>& coords,
                                            std::optional<int> nearest = std::nullopt,
                                            std::optional<double> max_distance = std::nullopt);

// Edge list "i,j,w" (optionally "time,i,j,w"). Units absent from the list get empty rows.
WeightMatrix load_edge_list(const std::string& path, const std::vector<std::string>& units);

struct Membership {
    std::string state;
    std::string igo;
    int year = 0;
    auto operator<=>(const Membership&) const = default;
};

std::vector<Membership> load_memberships(const std::string& path);

struct BipartiteWeights {
    WeightMatrix weights;
    std::vector<std::string> warnings;
};

// Tie strength from shared IGO memberships for one year. IGOs with a single
// member that year are dropped from both the sum and the membership count.
// Weights are not row-standardized.
BipartiteWeights build_bipartite_igo_weights(const std::vector<Membership>& members, int year,
                                             const std::vector<std::string>& units);
// One matrix per year present in the membership list.
BipartiteWeights build_bipartite_igo_panel(const std::vector<Membership>& members,
                                           const std::vector<std::string>& units);

// --- derived columns --------------------------------------------------------

// D_it = W_i' Y_t. Missing when unit i has no neighbors or any neighbor outcome
// is missing; each such cell is recorded in the returned dataset's notes.
PanelDataset compute_treatment(const PanelDataset& panel, const WeightMatrix& weights,
                               const std::string& name = "D", const std::string& source = "");

struct NeighborSummary {
    std::size_t count = 0;
    double variance = 0.0;
};

// Population variance over the nonzero entries of each row, or over the whole
// row (diagonal excluded) when `full_row` is set.
std::vector<NeighborSummary> neighbor_summaries(const WeightMatrix& weights, int time = 0, bool full_row = false);

// Adds n_neighbors and w_variance columns period by period.
PanelDataset add_neighbor_summaries(const PanelDataset& panel, const WeightMatrix& weights, bool full_row = false);

// col_lag1 .. col_lagK, aligned within unit; leading periods are missing.
PanelDataset add_lags(const PanelDataset& panel, const std::string& column, int max_lag);
// col_lead1 .. col_leadK; trailing periods are missing.
PanelDataset add_leads(const PanelDataset& panel, const std::string& column, int max_lead);

} // namespace cdiff
