#pragma once

// Independent reference implementations used only by the tests. None of these
// call into the library algorithms they are compared against.

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <vector>

#include "cdiff/dag.hpp"

namespace oracle {

// Plain adjacency-matrix copy of a graph.
struct Adj {
    int n = 0;
    std::vector<std::vector<char>> edge;  // edge[a][b]: a -> b
    std::vector<char> always;
};
Adj adjacency(const cdiff::CausalDag& dag);

// Lauritzen moralisation criterion on the ancestral subgraph.
bool dsep_moral(const Adj& g, int x, int y, const std::vector<char>& z);
// Enumerates every simple skeleton path and applies the blocking rule literally.
bool dsep_paths(const Adj& g, int x, int y, const std::vector<char>& z);

// Back-door blocking by explicit enumeration of paths into the treatment.
bool backdoor_blocked(const Adj& g, const std::vector<int>& treatment, int outcome,
                      const std::vector<char>& z);

// Definition-level proper-bias check: tries every subset of the augmented set
// against every back-door path.
cdiff::BiasClass proper_bias_exhaustive(const cdiff::CausalDag& dag, const cdiff::NodeSet& control,
                                        const cdiff::NodeSet& treatment, cdiff::NodeId outcome);

// Random DAG over n nodes with edges only from lower to higher index.
cdiff::CausalDag random_dag(std::mt19937_64& rng, int n, double edge_prob);

// --- regression oracles ----------------------------------------------------

// (X'WX)^{-1} X'Wy by an explicit inverse.
Eigen::VectorXd normal_equations(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& w);

// Newton-Raphson on the logistic log-likelihood, fixed 200 iterations, LDLT solve.
Eigen::VectorXd newton_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

double soft_threshold(double z, double gamma);

// Two-period difference-in-differences with covariates: regress
// (Y_{t+1} - Y_t) on [1, D, C] by normal equations and return the D slope.
double did_slope(const Eigen::VectorXd& y_next, const Eigen::VectorXd& y_now, const Eigen::VectorXd& d,
                 const Eigen::MatrixXd& covariates);

} // namespace oracle
