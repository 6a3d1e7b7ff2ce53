// Writes the synthetic analog datasets behind the shipped example configs:
//   hate_crime_analog/  monthly binary outcome over counties, inverse-distance network
//   igo_analog/         yearly continuous score over states, shared-membership network
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "cdiff/panel.hpp"
#include "cdiff/regress.hpp"

using namespace cdiff;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v, int digits = 6)
{
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

std::string id(const char* prefix, std::size_t k, int width)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, k);
    return buf;
}

// --- hate-crime analog ----------------------------------------------------------

struct County {
    std::string name;
    int state = 0;
    bool east = false;
    double x = 0, y = 0;
    double dropout = 0;
    std::vector<double> context;  // standardized contextual covariates
};

const char* const kContext[] = {"refugees",      "foreign_born",  "population", "male_share", "crime_rate",
                                "crime_solved",  "business_reg",  "business_dereg", "insolvency", "income",
                                "employees",     "unemployment",  "turnout",    "far_right"};

struct HateOutcome {
    std::vector<std::vector<int>> y;  // [county][month], burn-in included
    int burn = 0;
};

HateOutcome simulate_attacks(const std::vector<County>& counties, const Eigen::MatrixXd& w, double intercept,
                             int months, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u;
    const std::size_t n = counties.size();
    const int burn = 12;
    const int total = burn + months + 1;

    // Unobserved state-month climate: shared national swing plus a state AR(1).
    std::vector<double> national(total);
    std::vector<std::vector<double>> state(16, std::vector<double>(total));
    double g = 0.0;
    for (int t = 0; t < total; ++t) {
        g = 0.6 * g + 0.5 * z(rng);
        const double s = static_cast<double>(t - burn) / months;
        national[t] = g + 1.2 * s - 0.8 * s * s;
    }
    for (auto& row : state) {
        double a = 0.0;
        for (int t = 0; t < total; ++t) row[t] = (a = 0.7 * a + 0.45 * z(rng));
    }
    std::vector<double> state_level(16);
    for (auto& v : state_level) v = 0.5 * z(rng);

    HateOutcome out;
    out.burn = burn;
    out.y.assign(n, std::vector<int>(total, 0));
    for (int t = 0; t + 1 < total; ++t) {
        Eigen::VectorXd yt(n);
        for (std::size_t i = 0; i < n; ++i) yt(i) = out.y[i][t];
        const Eigen::VectorXd d = w * yt;
        for (std::size_t i = 0; i < n; ++i) {
            const County& c = counties[i];
            const double beta = c.east && c.dropout >= 0.09 ? 2.2 : 0.3;
            const double lag2 = t > 0 ? out.y[i][t - 1] : 0.0;
            const double eta = intercept + 0.9 * yt(i) + 0.4 * lag2 + beta * d(i) + state_level[c.state] +
                               0.8 * (national[t + 1] + state[c.state][t + 1]) + 0.35 * c.context[0] +
                               0.3 * c.context[13] + 0.2 * c.context[11] + (c.east ? 0.4 : 0.0);
            out.y[i][t + 1] = u(rng) < inverse_logit(eta) ? 1 : 0;
        }
    }
    return out;
}

void hate_crime(const fs::path& dir, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u;
    const std::size_t n = 300;
    const int months = 24;

    // 16 states on a 4 x 4 grid; the five eastern ones sit in the upper right.
    auto is_east = [](int s) { return (s % 4 >= 2 && s / 4 <= 1) || s == 11; };
    std::vector<County> counties(n);
    for (std::size_t i = 0; i < n; ++i) {
        County& c = counties[i];
        c.name = id("K", i + 1, 3);
        c.state = i < 32 ? static_cast<int>(i % 16) : static_cast<int>(rng() % 16);
        c.east = is_east(c.state);
        c.x = (c.state % 4) + u(rng);
        c.y = (c.state / 4) + u(rng);
        c.dropout = c.east ? 0.06 + 0.06 * u(rng) : 0.03 + 0.04 * u(rng);
        for (std::size_t k = 0; k < std::size(kContext); ++k) c.context.push_back(z(rng) + (c.east ? 0.3 : 0.0));
    }
    std::vector<UnitCoordinate> coords;
    for (const auto& c : counties) coords.push_back({c.name, c.x, c.y});
    std::vector<std::string> names;
    for (const auto& c : coords) names.push_back(c.unit);
    const WeightMatrix w = build_inverse_distance_weights(coords, std::nullopt, 0.45);

    // Pick the intercept so about 6.4% of county-months see an attack.
    double lo = -6.0, hi = -1.0;
    HateOutcome sim;
    for (int it = 0; it < 30; ++it) {
        const double mid = 0.5 * (lo + hi);
        sim = simulate_attacks(counties, w.at(0), mid, months, seed + 1);
        double rate = 0.0;
        for (const auto& row : sim.y)
            for (int t = sim.burn + 1; t <= sim.burn + months; ++t) rate += row[t];
        rate /= static_cast<double>(n * months);
        (rate < 0.064 ? lo : hi) = mid;
    }

    fs::create_directories(dir);
    std::ofstream cf(dir / "coordinates.csv");
    cf << "unit,x,y\n";
    for (const auto& c : counties) cf << c.name << ',' << fmt(c.x) << ',' << fmt(c.y) << '\n';

    std::ofstream pf(dir / "panel.csv");
    pf << "county,month,attack,state,east,dropout_share";
    for (const char* k : kContext) pf << ',' << k;
    pf << ",trend,trend2,trend3\n";
    for (std::size_t i = 0; i < n; ++i) {
        const County& c = counties[i];
        for (int m = 1; m <= months; ++m) {
            const double tr = static_cast<double>(m) / months;
            pf << c.name << ',' << m << ',' << sim.y[i][sim.burn + m] << ',' << id("S", c.state + 1, 2) << ','
               << (c.east ? 1 : 0) << ',' << fmt(c.dropout, 4);
            for (double v : c.context) pf << ',' << fmt(v, 5);
            pf << ',' << fmt(tr) << ',' << fmt(tr * tr) << ',' << fmt(tr * tr * tr) << '\n';
        }
    }
}

// --- IGO analog ------------------------------------------------------------------

void igo(const fs::path& dir, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u;
    const std::size_t n = 80, n_igo = 40;
    const int first = 1985, years = 20, burn = 10;

    std::vector<int> region(n);
    std::vector<double> gdp(n), density(n), culture(n), proximity(n), openness(n);
    for (std::size_t i = 0; i < n; ++i) {
        region[i] = static_cast<int>(i % 5);
        gdp[i] = 8.0 + 0.5 * region[i] + z(rng);
        density[i] = z(rng);
        culture[i] = 0.4 * region[i] + 0.5 * z(rng);
        proximity[i] = 0.3 * region[i] + 0.5 * z(rng);
        openness[i] = z(rng);
    }
    // IGOs 0-9 are global, the rest regional; membership grows slowly over time.
    std::vector<int> igo_region(n_igo);
    for (std::size_t g = 0; g < n_igo; ++g) igo_region[g] = g < 10 ? -1 : static_cast<int>(g % 5);
    std::vector<std::vector<double>> join_year(n, std::vector<double>(n_igo, 1e9));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t g = 0; g < n_igo; ++g) {
            const double p = igo_region[g] < 0 ? 0.35 : igo_region[g] == region[i] ? 0.7 : 0.05;
            if (u(rng) < p) join_year[i][g] = first - burn + std::floor(u(rng) * (years + burn) * 0.8);
        }
    }

    std::vector<Membership> members;
    for (int t = first - burn; t < first + years; ++t)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t g = 0; g < n_igo; ++g)
                if (join_year[i][g] <= t) members.push_back({id("C", i + 1, 2), id("IGO", g + 1, 2), t});
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back(id("C", i + 1, 2));
    const BipartiteWeights bw = build_bipartite_igo_panel(members, names);
    const WeightMatrix w = bw.weights.row_standardized();

    const int total = burn + years;
    std::vector<std::vector<double>> y(n, std::vector<double>(total)), dem(n, std::vector<double>(total)),
        dur(n, std::vector<double>(total)), trade(n, std::vector<double>(total)), fdi(n, std::vector<double>(total)),
        conflict(n, std::vector<double>(total)), lgdp(n, std::vector<double>(total));
    std::vector<double> regional(5 * total);
    for (auto& v : regional) v = 0.4 * z(rng);
    for (std::size_t i = 0; i < n; ++i) y[i][0] = 5.0 + z(rng);
    for (int t = 0; t < total; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            const double prev_dem = t > 0 ? dem[i][t - 1] : 0.0;
            dem[i][t] = 0.8 * prev_dem + 0.3 * culture[i] + 0.4 * z(rng);
            dur[i][t] = (t > 0 ? dur[i][t - 1] : 10.0 * u(rng)) + 1.0;
            if (u(rng) < 0.03) dur[i][t] = 0.0;
            lgdp[i][t] = gdp[i] + 0.02 * t + 0.1 * z(rng);
            trade[i][t] = openness[i] + 0.3 * z(rng);
            fdi[i][t] = 0.5 * openness[i] + 0.3 * z(rng);
            conflict[i][t] = u(rng) < 0.08 ? 1.0 : 0.0;
        }
        if (t + 1 >= total) break;
        const Eigen::MatrixXd* wt = w.find(first - burn + t);
        Eigen::VectorXd yt(n);
        for (std::size_t i = 0; i < n; ++i) yt(i) = y[i][t];
        const Eigen::VectorXd d = wt ? Eigen::VectorXd(*wt * yt) : Eigen::VectorXd::Zero(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i][t + 1] = 1.2 + 0.55 * y[i][t] + 0.15 * d(i) + 0.12 * lgdp[i][t] + 0.3 * dem[i][t] -
                          0.6 * conflict[i][t] + 0.4 * culture[i] + regional[5 * (t + 1) + region[i]] + 0.8 * z(rng);
        }
    }

    fs::create_directories(dir);
    std::ofstream mf(dir / "memberships.csv");
    mf << "state,igo,year\n";
    for (const auto& m : members)
        if (m.year >= first) mf << m.state << ',' << m.igo << ',' << m.year << '\n';
    std::ofstream pf(dir / "panel.csv");
    pf << "state,year,pir,region,year_fe,log_gdp,durability,pop_density,democracy,trade,fdi,conflict,proximity,"
          "cultural_similarity\n";
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < years; ++k) {
            const int t = burn + k;
            pf << names[i] << ',' << first + k << ',' << fmt(y[i][t]) << ",R" << region[i] + 1 << ",Y" << first + k
               << ',' << fmt(lgdp[i][t]) << ',' << fmt(dur[i][t]) << ',' << fmt(density[i]) << ',' << fmt(dem[i][t])
               << ',' << fmt(trade[i][t]) << ',' << fmt(fdi[i][t]) << ',' << conflict[i][t] << ','
               << fmt(proximity[i]) << ',' << fmt(culture[i]) << '\n';
        }
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Generate the synthetic analog datasets used by the example configs"};
    std::string out = "data";
    std::uint64_t seed = 20170101;
    app.add_option("--out", out, "Output directory");
    app.add_option("--seed", seed, "Random seed");
    CLI11_PARSE(app, argc, argv);
    try {
        hate_crime(fs::path(out) / "hate_crime_analog", seed);
        igo(fs::path(out) / "igo_analog", seed + 7);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
