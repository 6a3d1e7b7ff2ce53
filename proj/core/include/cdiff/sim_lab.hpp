#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdiff/dag.hpp"
#include "cdiff/estimators.hpp"
#include "cdiff/panel.hpp"
#include "cdiff/placebo.hpp"

namespace cdiff {

enum class NetworkKind { InverseDistance, Homophily };

// Structural equations, for unit i and period t:
//   G_{i,t}   = phi G_{i,t-1} + sqrt(1 - phi^2) xi_{i,t},  xi spatially smoothed through W
//   eta_{i,t+1} = a + rho Y_{i,t} + tau D_{i,t} + gamma_G G_{i,t+1} + gamma_U(t) U_i
//   Y_{i,t+1} = eta + sigma e  (gaussian)  or  Bernoulli(logit^-1(eta))  (binomial)
// with gamma_U(t) = gamma_U (1 + growth t) over the observed periods.
struct Scenario {
    std::string name;
    DagTemplate dag;
    Family family = Family::Gaussian;
    std::size_t n_units = 400;
    int periods = 10;
    int burn_in = 20;

    double intercept = 0.0;
    double autoregression = 0.3;
    double diffusion = 0.2;
    double context_effect = 0.0;
    double context_persistence = 0.8;
    double context_smoothing = 3.0;
    double unit_effect = 0.0;
    double unit_effect_growth = 0.0;
    double noise_sd = 1.0;

    // Units are split into regions of random size (at least two). Ties only
    // form inside a region and the region is the cluster id, so cluster-robust
    // standard errors see all cross-unit score dependence.
    std::size_t regions = 40;
    NetworkKind network = NetworkKind::InverseDistance;
    double homophily_caliper = 0.3;  // tie when |U_i - U_j| <= caliper, strength exp(-|U_i - U_j| / caliper)

    double d_high = 1.0;
    double d_low = 0.0;

    void validate() const;
};

Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const Scenario& s);
Scenario load_scenario(const std::string& path);
// Shipped scenarios: diffusion, contextual, homophily, both, bias_correction,
// bias_violation, null_noise.
Scenario builtin_scenario(const std::string& name);
std::vector<std::string> builtin_scenario_names();

struct SimulatedPanel {
    PanelDataset panel;  // columns y, D, G, U, region (cluster), n_neighbors, w_variance
    WeightMatrix weights;
    double truth = 0.0;  // ACDE of (d_high, d_low); equals the ACDT for linear scenarios
};

// Seed for replication `rep` of a run with master seed `seed`, by counter-based
// splitting, so results do not depend on scheduling.
std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t rep);

SimulatedPanel simulate_panel(const Scenario& scenario, std::uint64_t seed);

struct McSummary {
    double mean = 0.0;
    double bias = 0.0;
    double sd = 0.0;
    double mcse = 0.0;  // sd / sqrt(reps)
    double rejection_rate = 0.0;
    double ks_statistic = 0.0;
    double ks_p_value = 1.0;
};

struct McResult {
    std::string label;
    std::string estimator;  // placebo | main | bias_corrected
    std::size_t replications = 0;
    std::uint64_t seed = 0;
    double truth = 0.0;
    std::vector<double> estimates;
    std::vector<double> p_values;  // placebo only
    std::size_t failures = 0;
    McSummary summary;

    void summarize(double alpha = 0.05);
};

nlohmann::json to_json(const McResult& r);

struct LadderEntry {
    std::string label;
    ControlSpec control;
};

struct McOptions {
    std::size_t replications = 1000;
    std::uint64_t seed = 1;
    // 0 = read CDIFF_THREADS, falling back to hardware concurrency.
    unsigned threads = 0;
    double max_failure_rate = 0.01;
};

unsigned resolve_threads(unsigned requested);

std::vector<McResult> monte_carlo_placebo(const Scenario& scenario, const std::vector<LadderEntry>& ladder,
                                          const McOptions& options);

struct BiasCorrectionMc {
    McResult main;
    McResult bias_corrected;
};

BiasCorrectionMc monte_carlo_bias_correction(const Scenario& scenario, const ControlSpec& control,
                                             const McOptions& options);

// One-sample Kolmogorov-Smirnov test against Uniform(0, 1).
std::pair<double, double> ks_uniform(std::vector<double> sample);

// Control sets used throughout the shipped scenarios.
ControlSpec basic_controls();       // Y_t, D_{t-1}, n_neighbors, w_variance
ControlSpec difference_controls();  // D_{t-1} only (no post-outcome members)

} // namespace cdiff
