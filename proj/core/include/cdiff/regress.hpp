#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cdiff {

enum class Family { Gaussian, Binomial };
const char* to_string(Family f);
Family parse_family(const std::string& s);

// Model matrix. The caller supplies any intercept column explicitly.
struct Design {
    Eigen::MatrixXd x;
    std::vector<std::string> names;
};

struct Convergence {
    int iterations = 0;
    double gradient_norm = 0.0;
    bool converged = false;
    std::vector<double> deviance_path;
};

struct ModelFit {
    Family family = Family::Gaussian;
    Eigen::VectorXd coef;
    std::vector<std::string> names;
    // Classical covariance: sigma^2 (X'X)^{-1} or (X'WX)^{-1}.
    Eigen::MatrixXd vcov;
    // (X'WX)^{-1} with the final working weights (identity weights for OLS).
    Eigen::MatrixXd bread;
    Eigen::MatrixXd x;   // rows actually used
    Eigen::VectorXd y;
    Eigen::VectorXd mu;  // fitted mean
    std::vector<std::size_t> rows_used;
    std::size_t rows_dropped = 0;
    double deviance = 0.0;
    Convergence convergence;

    std::size_t n() const { return static_cast<std::size_t>(x.rows()); }
    std::size_t k() const { return static_cast<std::size_t>(x.cols()); }
    Eigen::Index index_of(const std::string& name) const;
    // Row r of the result is bread * x_r * (y_r - mu_r).
    Eigen::MatrixXd influence() const;
};

double inverse_logit(double eta);

ModelFit fit_ols(const Eigen::VectorXd& y, const Design& design);

struct IrlsOptions {
    double tolerance = 1e-8;  // on the score norm
    int max_iterations = 100;
    double jitter = 1e-10;
    double separation_bound = 30.0;  // largest |linear predictor| before separation is declared
};

ModelFit fit_logistic(const Eigen::VectorXd& y, const Design& design, const IrlsOptions& options = {});
ModelFit fit_glm(Family family, const Eigen::VectorXd& y, const Design& design);

// --- lasso ------------------------------------------------------------------

struct KktCertificate {
    double max_zero_violation = 0.0;     // max(|g_j| - lambda, 0) over zero coefficients
    double max_nonzero_violation = 0.0;  // max |g_j - lambda sign(b_j)| over nonzero ones
    bool holds(double tol = 1e-6) const { return max_zero_violation <= tol && max_nonzero_violation <= tol; }
};

struct LassoFit;

struct LassoOptions {
    double tolerance = 1e-12;  // on the largest coefficient change in a sweep
    int max_sweeps = 100000;
    int max_newton = 100;
    bool record_path = true;  // gaussian: objective after every sweep
    const LassoFit* warm_start = nullptr;  // fit on the same x at a nearby lambda
};

// Penalized fit on internally standardized columns (population sd). `x` has
// no intercept column; the intercept is fitted and not penalized. Gaussian
// objective (1/2n)||y - b0 - Xb||^2 + lambda |b|_1; binomial uses the mean
// negative log-likelihood.
struct LassoFit {
    Family family = Family::Gaussian;
    double lambda = 0.0;
    double intercept = 0.0;     // original scale
    Eigen::VectorXd coef;       // original scale, excludes intercept
    Eigen::VectorXd coef_std;   // standardized scale
    std::vector<double> objective_path;
    Convergence convergence;
    KktCertificate kkt;
};

LassoFit fit_lasso_glm(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, Family family, double lambda,
                       const LassoOptions& options = {});
// Smallest lambda at which every penalized coefficient is zero.
double lasso_lambda_max(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, Family family);

struct LassoCv {
    std::vector<double> lambdas;  // decreasing
    std::vector<double> cv_mean;
    std::vector<double> cv_se;
    double lambda_min = 0.0;
    double lambda_1se = 0.0;
};

// K-fold cross-validation over a log-spaced grid of `n_lambda` values from
// lambda_max down to ratio * lambda_max. Folds are a seeded permutation.
LassoCv lasso_cv(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, Family family, int folds, std::uint64_t seed,
                 int n_lambda = 40, double ratio = 1e-3);

// --- covariance -------------------------------------------------------------

struct ClusterVcov {
    Eigen::MatrixXd vcov;
    std::size_t clusters = 0;
    double correction = 1.0;
};

// `cluster_ids` are aligned with the rows passed to the fit (before any
// missing-value drop).
ClusterVcov cluster_robust_vcov(const ModelFit& fit, const std::vector<std::int64_t>& cluster_ids);

// --- g-computation ----------------------------------------------------------

// A design column that equals D times a per-row multiplier (empty = 1), so
// interaction terms follow the treatment override.
struct TreatmentTerm {
    Eigen::Index column = 0;
    Eigen::VectorXd multiplier;
};

struct GComputation {
    double estimate = 0.0;
    Eigen::VectorXd gradient;        // d estimate / d coefficients
    Eigen::VectorXd contrasts;       // per evaluation row
    Eigen::VectorXd mean_influence;  // w_r (c_r - estimate) / sum(w)
    std::vector<std::string> warnings;
};

// Weighted mean over evaluation rows of yhat(D = d_high) - yhat(D = d_low).
// `weights` empty means equal weights. `support` is the observed (min, max) of D.
GComputation g_compute(const ModelFit& fit, const Eigen::MatrixXd& rows, const std::vector<TreatmentTerm>& terms,
                       double d_high, double d_low, const Eigen::VectorXd& weights = {},
                       std::optional<std::pair<double, double>> support = std::nullopt);

// Delta-method variance: g' V g plus the cluster-aggregated averaging term.
double delta_variance(const GComputation& g, const Eigen::MatrixXd& vcov,
                      const std::vector<std::int64_t>& eval_clusters);

} // namespace cdiff
