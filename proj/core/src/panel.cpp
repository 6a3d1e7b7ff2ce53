#include "cdiff/panel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "cdiff/error.hpp"
#include "csv.hpp"

namespace cdiff {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::ifstream open_input(const std::string& path, const char* what)
{
    std::ifstream in(path);
    if (!in) throw DataError(std::string("cannot open ") + what + " file '" + path + "'");
    return in;
}

std::size_t header_index(const std::vector<std::string>& header, const std::string& name, const std::string& source)
{
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(source + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

void validate_weights(const Eigen::MatrixXd& w, std::size_t n, const std::string& what)
{
    if (static_cast<std::size_t>(w.rows()) != n || static_cast<std::size_t>(w.cols()) != n) {
        throw DataError(what + ": matrix is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                        " but there are " + std::to_string(n) + " units");
    }
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        if (w(i, i) != 0.0) throw DataError(what + ": nonzero diagonal at row " + std::to_string(i));
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            if (!std::isfinite(w(i, j)) || w(i, j) < 0.0) {
                throw DataError(what + ": weights must be finite and non-negative");
            }
        }
    }
}

Eigen::MatrixXd standardize_rows(const Eigen::MatrixXd& w)
{
    Eigen::MatrixXd out = w;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        const double s = w.row(i).sum();
        if (s > 0.0) out.row(i) /= s;
    }
    return out;
}

// First and last period index with a source row, per unit.
std::pair<int, int> unit_span(const PanelDataset& p, std::size_t u)
{
    int first = -1, last = -1;
    for (int k = 0; k < p.n_times(); ++k) {
        if (p.present(u, k)) {
            if (first < 0) first = k;
            last = k;
        }
    }
    return {first, last};
}

PanelDataset shift_column(const PanelDataset& panel, const std::string& column, int max_shift, bool lag)
{
    if (!panel.has(column)) throw DataError("column '" + column + "' not in panel");
    if (max_shift < 1) throw ConfigError("lag/lead order must be >= 1");
    for (std::size_t u = 0; u < panel.n_units(); ++u) {
        auto [first, last] = unit_span(panel, u);
        const int length = first < 0 ? 0 : last - first + 1;
        if (max_shift >= length) {
            throw DataError("order " + std::to_string(max_shift) + " for '" + column +
                            "' is not shorter than the series of unit '" + panel.units()[u] + "' (length " +
                            std::to_string(length) + ")");
        }
    }
    PanelDataset out = panel;
    const PanelColumn& src = panel.column(column);
    for (int k = 1; k <= max_shift; ++k) {
        PanelColumn col;
        col.levels = src.levels;
        col.values = Eigen::MatrixXd::Constant(src.values.rows(), src.values.cols(), kNaN);
        for (Eigen::Index t = 0; t < src.values.cols(); ++t) {
            const Eigen::Index from = lag ? t - k : t + k;
            if (from < 0 || from >= src.values.cols()) continue;
            col.values.col(t) = src.values.col(from);
        }
        out.set_column(column + (lag ? "_lag" : "_lead") + std::to_string(k), std::move(col));
    }
    return out;
}

} // namespace

// --- PanelDataset -------------------------------------------------------------

PanelDataset::PanelDataset(std::vector<std::string> units, int t_min, int n_times)
    : units_(std::move(units)), t_min_(t_min), n_times_(n_times)
{
    for (std::size_t i = 0; i < units_.size(); ++i) {
        if (!unit_index_.emplace(units_[i], i).second) throw DataError("duplicate unit '" + units_[i] + "'");
    }
    present_ = Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic>::Ones(units_.size(), n_times);
}

std::optional<std::size_t> PanelDataset::unit_index(const std::string& unit) const
{
    auto it = unit_index_.find(unit);
    if (it == unit_index_.end()) return std::nullopt;
    return it->second;
}

const PanelColumn& PanelDataset::column(const std::string& name) const
{
    auto it = columns_.find(name);
    if (it == columns_.end()) throw DataError("column '" + name + "' not in panel");
    return it->second;
}

double PanelDataset::value(const std::string& name, std::size_t unit, int period_index) const
{
    return column(name).values(unit, period_index);
}

void PanelDataset::set_column(const std::string& name, PanelColumn column)
{
    if (column.values.rows() != static_cast<Eigen::Index>(units_.size()) || column.values.cols() != n_times_) {
        throw DataError("column '" + name + "' does not match the panel grid");
    }
    if (columns_.find(name) == columns_.end()) order_.push_back(name);
    columns_[name] = std::move(column);
}

void PanelDataset::set_numeric(const std::string& name, Eigen::MatrixXd values)
{
    set_column(name, PanelColumn{std::move(values), {}});
}

// --- IO -------------------------------------------------------------------

PanelDataset read_panel(std::istream& in, const PanelSchema& schema, const std::string& source)
{
    std::string line;
    if (!csv::next_record(in, line)) throw DataError(source + ": empty panel file");
    const auto header = csv::split(line, schema.delimiter);

    const std::size_t iu = header_index(header, schema.unit, source);
    const std::size_t it = header_index(header, schema.time, source);
    const std::size_t iy = header_index(header, schema.outcome, source);
    struct Spec {
        std::string name;
        std::size_t index;
        bool categorical;
    };
    std::vector<Spec> specs{{schema.outcome, iy, false}};
    std::set<std::string> declared{schema.outcome};
    for (const auto& n : schema.numeric) {
        if (declared.insert(n).second) specs.push_back({n, header_index(header, n, source), false});
    }
    auto add_categorical = [&](const std::string& n) {
        if (declared.insert(n).second) specs.push_back({n, header_index(header, n, source), true});
    };
    if (schema.cluster) add_categorical(*schema.cluster);
    for (const auto& n : schema.categorical) add_categorical(n);

    struct Row {
        std::string unit;
        int time;
        std::vector<std::string> fields;
    };
    std::vector<Row> rows;
    std::vector<std::string> units;
    std::set<std::string> unit_seen;
    std::set<std::pair<std::string, int>> keys;
    int t_lo = std::numeric_limits<int>::max(), t_hi = std::numeric_limits<int>::min();
    std::size_t line_no = 1;
    while (csv::next_record(in, line)) {
        ++line_no;
        auto fields = csv::split(line, schema.delimiter);
        if (fields.size() != header.size()) {
            throw DataError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(fields.size()));
        }
        const std::string& unit = fields[iu];
        const auto time = csv::parse_int(fields[it]);
        if (unit.empty()) throw DataError(source + ":" + std::to_string(line_no) + ": empty unit id");
        if (!time) throw DataError(source + ":" + std::to_string(line_no) + ": time '" + fields[it] + "' is not an integer");
        if (!keys.emplace(unit, *time).second) {
            throw DataError(source + ": duplicate (unit, time) key (" + unit + ", " + std::to_string(*time) + ")");
        }
        if (unit_seen.insert(unit).second) units.push_back(unit);
        t_lo = std::min(t_lo, *time);
        t_hi = std::max(t_hi, *time);
        rows.push_back({unit, *time, std::move(fields)});
    }
    if (rows.empty()) throw DataError(source + ": panel has no data rows");

    PanelDataset panel(units, t_lo, t_hi - t_lo + 1);
    panel.outcome = schema.outcome;
    panel.cluster = schema.cluster;
    for (std::size_t u = 0; u < panel.n_units(); ++u) {
        for (int k = 0; k < panel.n_times(); ++k) panel.set_present(u, k, false);
    }

    std::vector<PanelColumn> cols(specs.size());
    std::vector<std::map<std::string, double>> level_codes(specs.size());
    for (auto& c : cols) c.values = Eigen::MatrixXd::Constant(panel.n_units(), panel.n_times(), kNaN);

    for (const auto& row : rows) {
        const std::size_t u = *panel.unit_index(row.unit);
        const int k = row.time - t_lo;
        panel.set_present(u, k, true);
        for (std::size_t s = 0; s < specs.size(); ++s) {
            const std::string& field = row.fields[specs[s].index];
            if (csv::is_missing(field)) continue;
            if (specs[s].categorical) {
                auto [pos, fresh] = level_codes[s].emplace(field, static_cast<double>(cols[s].levels.size()));
                if (fresh) cols[s].levels.push_back(field);
                cols[s].values(u, k) = pos->second;
            } else {
                const auto v = csv::parse_double(field);
                if (!v) {
                    throw DataError(source + ": column '" + specs[s].name + "' has non-numeric value '" + field +
                                    "' at (" + row.unit + ", " + std::to_string(row.time) + ")");
                }
                cols[s].values(u, k) = *v;
            }
        }
    }
    for (std::size_t s = 0; s < specs.size(); ++s) {
        // A categorical column whose every cell is missing keeps a placeholder level.
        if (specs[s].categorical && cols[s].levels.empty()) cols[s].levels.push_back("");
        panel.set_column(specs[s].name, std::move(cols[s]));
    }

    for (std::size_t u = 0; u < panel.n_units(); ++u) {
        auto [first, last] = unit_span(panel, u);
        if (std::isnan(panel.value(schema.outcome, u, first))) {
            throw DataError(source + ": outcome missing at the first period of unit '" + units[u] + "'");
        }
        for (int k = first; k <= last; ++k) {
            if (!panel.present(u, k)) panel.gaps.push_back(units[u] + "@" + std::to_string(t_lo + k));
        }
    }
    if (!panel.gaps.empty()) {
        panel.notes.push_back(std::to_string(panel.gaps.size()) + " gap(s) in the time grid; cells left missing");
    }
    return panel;
}

PanelDataset load_panel(const std::string& path, const PanelSchema& schema)
{
    auto in = open_input(path, "panel");
    return read_panel(in, schema, path);
}

void save_panel(const std::string& path, const PanelDataset& panel, const std::string& unit_col,
                const std::string& time_col)
{
    std::ofstream out(path);
    if (!out) throw DataError("cannot write panel file '" + path + "'");
    const char d = ',';
    out << csv::quote(unit_col, d) << d << csv::quote(time_col, d);
    for (const auto& name : panel.column_names()) out << d << csv::quote(name, d);
    out << '\n';
    for (std::size_t u = 0; u < panel.n_units(); ++u) {
        for (int k = 0; k < panel.n_times(); ++k) {
            if (!panel.present(u, k)) continue;
            out << csv::quote(panel.units()[u], d) << d << (panel.t_min() + k);
            for (const auto& name : panel.column_names()) {
                const auto& col = panel.column(name);
                const double v = col.values(u, k);
                out << d;
                if (std::isnan(v)) continue;
                out << (col.categorical() ? csv::quote(col.levels.at(static_cast<std::size_t>(v)), d)
                                          : csv::format_double(v));
            }
            out << '\n';
        }
    }
    if (!out) throw DataError("failed while writing panel file '" + path + "'");
}

// --- WeightMatrix ---------------------------------------------------------------

WeightMatrix::WeightMatrix(std::vector<std::string> units, Eigen::MatrixXd w)
    : units_(std::move(units)), static_(std::move(w))
{
    validate_weights(static_, units_.size(), "weights");
}

WeightMatrix::WeightMatrix(std::vector<std::string> units, std::map<int, Eigen::MatrixXd> by_time)
    : units_(std::move(units)), by_time_(std::move(by_time))
{
    if (by_time_.empty()) throw DataError("time-varying weights: no periods given");
    for (const auto& [t, w] : by_time_) validate_weights(w, units_.size(), "weights at time " + std::to_string(t));
}

std::vector<int> WeightMatrix::times() const
{
    std::vector<int> out;
    for (const auto& [t, w] : by_time_) out.push_back(t);
    return out;
}

const Eigen::MatrixXd* WeightMatrix::find(int time) const
{
    if (by_time_.empty()) return &static_;
    auto it = by_time_.find(time);
    return it == by_time_.end() ? nullptr : &it->second;
}

const Eigen::MatrixXd& WeightMatrix::at(int time) const
{
    const auto* w = find(time);
    if (!w) throw DataError("weights: no matrix for time " + std::to_string(time));
    return *w;
}

std::vector<std::size_t> WeightMatrix::neighbors(std::size_t i, int time) const
{
    const auto& w = at(time);
    std::vector<std::size_t> out;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        if (w(static_cast<Eigen::Index>(i), j) != 0.0) out.push_back(static_cast<std::size_t>(j));
    }
    return out;
}

std::vector<std::string> WeightMatrix::empty_rows(int time) const
{
    const auto& w = at(time);
    std::vector<std::string> out;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        if ((w.row(i).array() == 0.0).all()) out.push_back(units_[i]);
    }
    return out;
}

WeightMatrix WeightMatrix::row_standardized() const
{
    if (by_time_.empty()) return WeightMatrix(units_, standardize_rows(static_));
    std::map<int, Eigen::MatrixXd> by_time;
    for (const auto& [t, w] : by_time_) by_time.emplace(t, standardize_rows(w));
    return WeightMatrix(units_, std::move(by_time));
}

// --- builders -------------------------------------------------------------

std::vector<UnitCoordinate> load_coordinates(const std::string& path)
{
    auto in = open_input(path, "coordinates");
    std::string line;
    if (!csv::next_record(in, line)) throw DataError(path + ": empty coordinates file");
    const auto header = csv::split(line, ',');
    const std::size_t iu = header_index(header, "unit", path);
    const std::size_t ix = header_index(header, "x", path);
    const std::size_t iy = header_index(header, "y", path);
    std::vector<UnitCoordinate> out;
    while (csv::next_record(in, line)) {
        const auto f = csv::split(line, ',');
        if (f.size() != header.size()) throw DataError(path + ": ragged coordinates row");
        const auto x = csv::parse_double(f[ix]);
        const auto y = csv::parse_double(f[iy]);
        if (!x || !y) throw DataError(path + ": non-numeric coordinate for unit '" + f[iu] + "'");
        out.push_back({f[iu], *x, *y});
    }
    return out;
}

WeightMatrix build_inverse_distance_weights(const std::vector<UnitCoordinate>& coords, std::optional<int> nearest,
                                            std::optional<double> max_distance)
{
    if (max_distance && !(*max_distance > 0.0)) throw ConfigError("maximum neighbour distance must be positive");
    const std::size_t n = coords.size();
    if (n < 2) throw DataError("inverse-distance weights need at least two units");
    if (nearest && (*nearest < 1 || static_cast<std::size_t>(*nearest) >= n)) {
        throw ConfigError("nearest-neighbour count must lie in [1, n-1]");
    }
    std::vector<std::string> units;
    for (const auto& c : coords) units.push_back(c.unit);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double d = std::hypot(coords[i].x - coords[j].x, coords[i].y - coords[j].y);
            if (d == 0.0) {
                throw DataError("coincident coordinates for units '" + coords[i].unit + "' and '" + coords[j].unit + "'");
            }
            w(i, j) = 1.0 / d;
        }
    }
    if (nearest) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::size_t> order;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) order.push_back(j);
            // Ties broken by index so the kept set is deterministic.
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w(i, a) > w(i, b); });
            for (std::size_t r = static_cast<std::size_t>(*nearest); r < order.size(); ++r) w(i, order[r]) = 0.0;
        }
    }
    if (max_distance) {
        for (std::size_t i = 0; i < n; ++i) {
            Eigen::Index closest = 0;
            const double best = w.row(static_cast<Eigen::Index>(i)).maxCoeff(&closest);
            for (std::size_t j = 0; j < n; ++j)
                if (w(i, j) > 0.0 && 1.0 / w(i, j) > *max_distance) w(i, j) = 0.0;
            if (best > 0.0) w(i, closest) = best;
        }
    }
    return WeightMatrix(std::move(units), standardize_rows(w));
}

WeightMatrix load_edge_list(const std::string& path, const std::vector<std::string>& units)
{
    auto in = open_input(path, "edge list");
    std::string line;
    if (!csv::next_record(in, line)) throw DataError(path + ": empty edge list");
    const auto header = csv::split(line, ',');
    const std::size_t ii = header_index(header, "i", path);
    const std::size_t ij = header_index(header, "j", path);
    const std::size_t iw = header_index(header, "w", path);
    const auto time_it = std::find(header.begin(), header.end(), "time");
    const bool timed = time_it != header.end();
    const std::size_t itime = static_cast<std::size_t>(time_it - header.begin());

    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t k = 0; k < units.size(); ++k) index.emplace(units[k], k);
    const std::size_t n = units.size();
    std::map<int, Eigen::MatrixXd> mats;
    if (!timed) mats.emplace(0, Eigen::MatrixXd::Zero(n, n));

    while (csv::next_record(in, line)) {
        const auto f = csv::split(line, ',');
        if (f.size() != header.size()) throw DataError(path + ": ragged edge-list row");
        auto a = index.find(f[ii]), b = index.find(f[ij]);
        if (a == index.end() || b == index.end()) {
            throw DataError(path + ": edge (" + f[ii] + ", " + f[ij] + ") references an unknown unit");
        }
        const auto w = csv::parse_double(f[iw]);
        if (!w) throw DataError(path + ": non-numeric weight '" + f[iw] + "'");
        int t = 0;
        if (timed) {
            const auto parsed = csv::parse_int(f[itime]);
            if (!parsed) throw DataError(path + ": non-integer time '" + f[itime] + "'");
            t = *parsed;
        }
        auto [pos, fresh] = mats.try_emplace(t, Eigen::MatrixXd::Zero(n, n));
        pos->second(a->second, b->second) = *w;
    }
    if (!timed) return WeightMatrix(units, mats.at(0));
    return WeightMatrix(units, std::move(mats));
}

std::vector<Membership> load_memberships(const std::string& path)
{
    auto in = open_input(path, "membership");
    std::string line;
    if (!csv::next_record(in, line)) throw DataError(path + ": empty membership file");
    const auto header = csv::split(line, ',');
    const std::size_t is = header_index(header, "state", path);
    const std::size_t ig = header_index(header, "igo", path);
    const std::size_t iy = header_index(header, "year", path);
    std::vector<Membership> out;
    while (csv::next_record(in, line)) {
        const auto f = csv::split(line, ',');
        if (f.size() != header.size()) throw DataError(path + ": ragged membership row");
        const auto year = csv::parse_int(f[iy]);
        if (!year) throw DataError(path + ": non-integer year '" + f[iy] + "'");
        out.push_back({f[is], f[ig], *year});
    }
    return out;
}

BipartiteWeights build_bipartite_igo_weights(const std::vector<Membership>& members, int year,
                                             const std::vector<std::string>& units)
{
    std::set<Membership> unique;
    for (const auto& m : members) {
        if (!unique.insert(m).second) {
            throw DataError("duplicate membership (" + m.state + ", " + m.igo + ", " + std::to_string(m.year) + ")");
        }
    }
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t k = 0; k < units.size(); ++k) index.emplace(units[k], k);

    std::map<std::string, std::vector<std::size_t>> igo_members;
    for (const auto& m : unique) {
        if (m.year != year) continue;
        auto it = index.find(m.state);
        if (it == index.end()) continue;
        igo_members[m.igo].push_back(it->second);
    }

    BipartiteWeights out;
    const std::size_t n = units.size();
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, n);
    std::vector<double> count(n, 0.0);
    for (const auto& [igo, states] : igo_members) {
        if (states.size() < 2) {
            out.warnings.push_back("IGO '" + igo + "' has a single member in " + std::to_string(year) +
                                   " and is excluded");
            continue;
        }
        const double share = 1.0 / static_cast<double>(states.size() - 1);
        for (std::size_t a : states) {
            count[a] += 1.0;
            for (std::size_t b : states) {
                if (a != b) sum(a, b) += share;
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (count[i] > 0.0) sum.row(i) /= count[i];
    }
    out.weights = WeightMatrix(units, sum);
    const auto empty = out.weights.empty_rows();
    if (!empty.empty()) {
        out.warnings.push_back(std::to_string(empty.size()) + " state(s) without IGO ties in " + std::to_string(year));
    }
    return out;
}

BipartiteWeights build_bipartite_igo_panel(const std::vector<Membership>& members, const std::vector<std::string>& units)
{
    std::set<int> years;
    for (const auto& m : members) years.insert(m.year);
    if (years.empty()) throw DataError("membership list is empty");
    BipartiteWeights out;
    std::map<int, Eigen::MatrixXd> by_time;
    for (int y : years) {
        auto one = build_bipartite_igo_weights(members, y, units);
        by_time.emplace(y, one.weights.at(0));
        out.warnings.insert(out.warnings.end(), one.warnings.begin(), one.warnings.end());
    }
    out.weights = WeightMatrix(units, std::move(by_time));
    return out;
}

// --- derived columns --------------------------------------------------------

PanelDataset compute_treatment(const PanelDataset& panel, const WeightMatrix& weights, const std::string& name,
                               const std::string& source)
{
    const std::string y_name = source.empty() ? panel.outcome : source;
    const auto& y = panel.column(y_name).values;
    const std::size_t n = panel.n_units();
    if (weights.size() != n) {
        throw DataError("weights cover " + std::to_string(weights.size()) + " units but the panel has " +
                        std::to_string(n));
    }
    // Map weight rows onto panel rows.
    std::vector<std::size_t> to_panel(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto idx = panel.unit_index(weights.units()[k]);
        if (!idx) throw DataError("weights mention unit '" + weights.units()[k] + "' that is not in the panel");
        to_panel[k] = *idx;
    }

    PanelDataset out = panel;
    Eigen::MatrixXd d = Eigen::MatrixXd::Constant(n, panel.n_times(), kNaN);
    std::size_t no_neighbors = 0, missing_neighbor = 0, no_matrix = 0;
    for (int k = 0; k < panel.n_times(); ++k) {
        const auto* w = weights.find(panel.t_min() + k);
        if (!w) {
            no_matrix += n;
            continue;
        }
        for (std::size_t a = 0; a < n; ++a) {
            double acc = 0.0;
            bool any = false, complete = true;
            for (std::size_t b = 0; b < n; ++b) {
                const double wab = (*w)(a, b);
                if (wab == 0.0) continue;
                any = true;
                const double yb = y(to_panel[b], k);
                if (std::isnan(yb)) {
                    complete = false;
                    break;
                }
                acc += wab * yb;
            }
            if (!any) {
                ++no_neighbors;
            } else if (!complete) {
                ++missing_neighbor;
            } else {
                d(to_panel[a], k) = acc;
            }
        }
    }
    out.set_numeric(name, std::move(d));
    if (no_neighbors > 0) {
        out.notes.push_back(name + ": " + std::to_string(no_neighbors) + " cell(s) without neighbors left missing");
    }
    if (missing_neighbor > 0) {
        out.notes.push_back(name + ": " + std::to_string(missing_neighbor) +
                            " cell(s) with a missing neighbor outcome left missing");
    }
    if (no_matrix > 0) {
        out.notes.push_back(name + ": " + std::to_string(no_matrix) + " cell(s) in periods without weights left missing");
    }
    return out;
}

std::vector<NeighborSummary> neighbor_summaries(const WeightMatrix& weights, int time, bool full_row)
{
    const auto& w = weights.at(time);
    std::vector<NeighborSummary> out(weights.size());
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        std::vector<double> vals;
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            if (w(i, j) != 0.0) {
                ++out[i].count;
                vals.push_back(w(i, j));
            } else if (full_row && i != j) {
                vals.push_back(0.0);
            }
        }
        if (vals.empty() || out[i].count == 0) continue;
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double ss = 0.0;
        for (double v : vals) ss += (v - mean) * (v - mean);
        out[i].variance = ss / static_cast<double>(vals.size());
    }
    return out;
}

PanelDataset add_neighbor_summaries(const PanelDataset& panel, const WeightMatrix& weights, bool full_row)
{
    const std::size_t n = panel.n_units();
    Eigen::MatrixXd count = Eigen::MatrixXd::Constant(n, panel.n_times(), kNaN);
    Eigen::MatrixXd var = count;
    for (int k = 0; k < panel.n_times(); ++k) {
        if (!weights.find(panel.t_min() + k)) continue;
        const auto s = neighbor_summaries(weights, panel.t_min() + k, full_row);
        for (std::size_t a = 0; a < weights.size(); ++a) {
            const auto idx = panel.unit_index(weights.units()[a]);
            if (!idx) throw DataError("weights mention unit '" + weights.units()[a] + "' that is not in the panel");
            count(*idx, k) = static_cast<double>(s[a].count);
            var(*idx, k) = s[a].variance;
        }
    }
    PanelDataset out = panel;
    out.set_numeric("n_neighbors", std::move(count));
    out.set_numeric("w_variance", std::move(var));
    return out;
}

PanelDataset add_lags(const PanelDataset& panel, const std::string& column, int max_lag)
{
    return shift_column(panel, column, max_lag, true);
}

PanelDataset add_leads(const PanelDataset& panel, const std::string& column, int max_lead)
{
    return shift_column(panel, column, max_lead, false);
}

} // namespace cdiff
