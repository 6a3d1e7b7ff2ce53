#include "cdiff/regress.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "cdiff/error.hpp"

namespace cdiff {

namespace {

struct Compact {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    std::vector<std::size_t> rows;
    std::size_t dropped = 0;
};

Compact complete_cases(const Eigen::VectorXd& y, const Eigen::MatrixXd& x)
{
    if (y.size() != x.rows()) throw DataError("response and design have different row counts");
    Compact c;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        if (std::isfinite(y(r)) && x.row(r).allFinite()) {
            c.rows.push_back(static_cast<std::size_t>(r));
        } else {
            ++c.dropped;
        }
    }
    c.x.resize(static_cast<Eigen::Index>(c.rows.size()), x.cols());
    c.y.resize(static_cast<Eigen::Index>(c.rows.size()));
    for (std::size_t i = 0; i < c.rows.size(); ++i) {
        c.x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(c.rows[i]));
        c.y(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(c.rows[i]));
    }
    return c;
}

std::string column_name(const Design& d, Eigen::Index j)
{
    if (j < static_cast<Eigen::Index>(d.names.size())) return d.names[static_cast<std::size_t>(j)];
    return "column " + std::to_string(j);
}

void require_full_rank(const Eigen::MatrixXd& x, const Design& design)
{
    if (x.rows() < x.cols()) {
        throw NumericError("design has " + std::to_string(x.rows()) + " usable rows for " + std::to_string(x.cols()) +
                           " columns");
    }
    // Unit-norm columns so the rank threshold is scale free.
    Eigen::MatrixXd scaled = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double norm = x.col(j).norm();
        if (norm > 0) scaled.col(j) /= norm;
    }
    auto rank = [](const Eigen::MatrixXd& m) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
        qr.setThreshold(1e-9);
        return qr.rank();
    };
    if (rank(scaled) == x.cols()) return;
    for (Eigen::Index j = 1; j <= x.cols(); ++j) {
        if (rank(scaled.leftCols(j)) < j) {
            throw NumericError("design is rank deficient: '" + column_name(design, j - 1) +
                               "' is collinear with earlier columns");
        }
    }
    throw NumericError("design is rank deficient");
}

Eigen::MatrixXd sym_inverse(const Eigen::MatrixXd& a)
{
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
    return 0.5 * (inv + inv.transpose());
}

// log(1 + exp(eta)) without overflow.
double log1pexp(double eta) { return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

double logistic_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& eta)
{
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) dev += log1pexp(eta(i)) - y(i) * eta(i);
    return 2.0 * dev;
}

double soft(double z, double g)
{
    if (z > g) return z - g;
    if (z < -g) return z + g;
    return 0.0;
}

struct Standardized {
    Eigen::MatrixXd xs;
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;  // population sd; 0 marks a constant column
};

Standardized standardize(const Eigen::MatrixXd& x)
{
    Standardized s;
    const double n = static_cast<double>(x.rows());
    s.mean = x.colwise().mean().transpose();
    s.xs = x.rowwise() - s.mean.transpose();
    s.sd = (s.xs.colwise().squaredNorm() / n).cwiseSqrt().transpose();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (s.sd(j) > 1e-12 * std::max(1.0, std::abs(s.mean(j)))) {
            s.xs.col(j) /= s.sd(j);
        } else {
            s.sd(j) = 0.0;
            s.xs.col(j).setZero();
        }
    }
    return s;
}

double penalized_objective(Family family, const Eigen::VectorXd& y, const Eigen::VectorXd& eta,
                           const Eigen::VectorXd& beta, double lambda)
{
    const double n = static_cast<double>(y.size());
    const double loss = family == Family::Gaussian ? 0.5 * (y - eta).squaredNorm() / n
                                                   : 0.5 * logistic_deviance(y, eta) / n;
    return loss + lambda * beta.lpNorm<1>();
}

// Weighted coordinate descent on (1/2n) sum w (z - b0 - Xb)^2 + lambda |b|_1.
int weighted_cd(const Eigen::MatrixXd& xs, const Eigen::VectorXd& sd, const Eigen::VectorXd& z,
                const Eigen::VectorXd& w, double lambda, double& b0, Eigen::VectorXd& beta, double tol, int max_sweeps)
{
    const double n = static_cast<double>(z.size());
    Eigen::VectorXd r = z - xs * beta - Eigen::VectorXd::Constant(z.size(), b0);
    Eigen::VectorXd denom(xs.cols());
    for (Eigen::Index j = 0; j < xs.cols(); ++j) denom(j) = w.dot(xs.col(j).cwiseAbs2()) / n;
    const double wsum = w.sum();
    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        double max_change = 0.0;
        const double db0 = w.dot(r) / wsum;
        b0 += db0;
        r.array() -= db0;
        max_change = std::abs(db0);
        for (Eigen::Index j = 0; j < xs.cols(); ++j) {
            if (sd(j) == 0.0 || denom(j) <= 0.0) continue;
            const double old = beta(j);
            const double num = xs.col(j).cwiseProduct(w).dot(r) / n + denom(j) * old;
            const double updated = soft(num, lambda) / denom(j);
            if (updated != old) {
                r -= (updated - old) * xs.col(j);
                beta(j) = updated;
                max_change = std::max(max_change, std::abs(updated - old));
            }
        }
        if (max_change < tol) break;
    }
    return sweep + 1;
}

// Unit-weight gaussian CD on centred, scaled columns using the Gram matrix;
// the intercept stays at the response mean.
int covariance_cd(const Eigen::MatrixXd& xs, const Eigen::VectorXd& sd, const Eigen::VectorXd& y, double lambda,
                  Eigen::VectorXd& beta, double tol, int max_sweeps)
{
    const double n = static_cast<double>(y.size());
    const Eigen::MatrixXd gram = xs.transpose() * xs / n;
    Eigen::VectorXd grad = xs.transpose() * (y.array() - y.mean()).matrix() / n - gram * beta;
    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < xs.cols(); ++j) {
            if (sd(j) == 0.0) continue;
            const double old = beta(j);
            const double updated = soft(grad(j) + gram(j, j) * old, lambda) / gram(j, j);
            if (updated != old) {
                grad -= (updated - old) * gram.col(j);
                beta(j) = updated;
                max_change = std::max(max_change, std::abs(updated - old));
            }
        }
        if (max_change < tol) break;
    }
    return sweep + 1;
}

KktCertificate kkt_check(const Eigen::MatrixXd& xs, const Eigen::VectorXd& sd, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& mu, const Eigen::VectorXd& beta, double lambda)
{
    KktCertificate k;
    const double n = static_cast<double>(y.size());
    const Eigen::VectorXd g = xs.transpose() * (y - mu) / n;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
        if (sd(j) == 0.0) continue;
        if (beta(j) == 0.0) {
            k.max_zero_violation = std::max(k.max_zero_violation, std::abs(g(j)) - lambda);
        } else {
            const double target = beta(j) > 0 ? lambda : -lambda;
            k.max_nonzero_violation = std::max(k.max_nonzero_violation, std::abs(g(j) - target));
        }
    }
    k.max_zero_violation = std::max(0.0, k.max_zero_violation);
    return k;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed)
{
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    return idx;
}

} // namespace

const char* to_string(Family f) { return f == Family::Gaussian ? "gaussian" : "binomial"; }

Family parse_family(const std::string& s)
{
    if (s == "gaussian" || s == "linear") return Family::Gaussian;
    if (s == "binomial" || s == "logistic") return Family::Binomial;
    throw ConfigError("unknown family '" + s + "' (expected gaussian or binomial)");
}

double inverse_logit(double eta)
{
    if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

Eigen::Index ModelFit::index_of(const std::string& name) const
{
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw DataError("model has no coefficient '" + name + "'");
    return static_cast<Eigen::Index>(it - names.begin());
}

Eigen::MatrixXd ModelFit::influence() const
{
    const Eigen::VectorXd resid = y - mu;
    return (x.array().colwise() * resid.array()).matrix() * bread;
}

// --- OLS --------------------------------------------------------------------

ModelFit fit_ols(const Eigen::VectorXd& y, const Design& design)
{
    Compact c = complete_cases(y, design.x);
    require_full_rank(c.x, design);

    ModelFit fit;
    fit.family = Family::Gaussian;
    fit.names = design.names;
    fit.coef = c.x.colPivHouseholderQr().solve(c.y);
    fit.bread = sym_inverse(c.x.transpose() * c.x);
    fit.mu = c.x * fit.coef;
    fit.deviance = (c.y - fit.mu).squaredNorm();
    const double dof = static_cast<double>(c.x.rows() - c.x.cols());
    fit.vcov = dof > 0 ? Eigen::MatrixXd(fit.bread * (fit.deviance / dof)) : Eigen::MatrixXd(fit.bread * 0.0);
    fit.x = std::move(c.x);
    fit.y = std::move(c.y);
    fit.rows_used = std::move(c.rows);
    fit.rows_dropped = c.dropped;
    fit.convergence = {1, (fit.x.transpose() * (fit.y - fit.mu)).norm(), true, {fit.deviance}};
    return fit;
}

// --- logistic IRLS --------------------------------------------------------

ModelFit fit_logistic(const Eigen::VectorXd& y, const Design& design, const IrlsOptions& options)
{
    Compact c = complete_cases(y, design.x);
    for (Eigen::Index i = 0; i < c.y.size(); ++i) {
        if (c.y(i) != 0.0 && c.y(i) != 1.0) throw DataError("logistic response must be 0/1");
    }
    require_full_rank(c.x, design);

    const Eigen::Index k = c.x.cols();
    const Standardized st = standardize(c.x);
    // Separation shows up as fitted probabilities collapsing to 0 or 1. Bounding
    // the linear predictor rather than single coefficients keeps collinear but
    // well-determined fits (e.g. polynomial trends) from tripping the check.
    auto check_separation = [&](const Eigen::VectorXd& eta_now, const Eigen::VectorXd& beta) {
        if (eta_now.size() == 0 || eta_now.cwiseAbs().maxCoeff() <= options.separation_bound) return;
        Eigen::Index worst = -1;
        double largest = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) {
            if (st.sd(j) > 0.0 && std::abs(beta(j)) * st.sd(j) > largest) {
                largest = std::abs(beta(j)) * st.sd(j);
                worst = j;
            }
        }
        throw NumericError("logistic fit: separation detected (fitted probabilities collapse to 0 or 1" +
                           (worst >= 0 ? "; largest coefficient on '" + column_name(design, worst) + "')" : ")"));
    };

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd eta = c.x * beta;
    double dev = logistic_deviance(c.y, eta);
    Convergence conv;
    conv.deviance_path.push_back(dev);

    Eigen::VectorXd mu(c.y.size()), w(c.y.size());
    for (int it = 0; it <= options.max_iterations; ++it) {
        for (Eigen::Index i = 0; i < mu.size(); ++i) {
            mu(i) = inverse_logit(eta(i));
            w(i) = mu(i) * (1.0 - mu(i));
        }
        const Eigen::VectorXd score = c.x.transpose() * (c.y - mu);
        conv.gradient_norm = score.norm();
        conv.iterations = it;
        if (conv.gradient_norm <= options.tolerance) {
            conv.converged = true;
            break;
        }
        if (it == options.max_iterations) break;

        Eigen::MatrixXd h = c.x.transpose() * w.asDiagonal() * c.x;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
        if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= options.jitter * h.diagonal().maxCoeff()) {
            h.diagonal().array() += options.jitter * std::max(1.0, h.diagonal().maxCoeff());
            ldlt.compute(h);
        }
        const Eigen::VectorXd step = ldlt.solve(score);

        // Halve the step until the deviance does not increase.
        double t = 1.0;
        Eigen::VectorXd candidate = beta + step;
        Eigen::VectorXd cand_eta = c.x * candidate;
        double cand_dev = logistic_deviance(c.y, cand_eta);
        for (int half = 0; half < 40 && !(cand_dev <= dev * (1.0 + 1e-15)); ++half) {
            t *= 0.5;
            candidate = beta + t * step;
            cand_eta = c.x * candidate;
            cand_dev = logistic_deviance(c.y, cand_eta);
        }
        if (!(cand_dev <= dev * (1.0 + 1e-15))) {
            candidate = beta;
            cand_eta = eta;
            cand_dev = dev;
        }
        beta = candidate;
        eta = cand_eta;
        dev = cand_dev;
        conv.deviance_path.push_back(dev);
        check_separation(eta, beta);
    }
    check_separation(eta, beta);
    {
        // Quasi-complete separation can satisfy the score tolerance before the
        // coefficient bound trips; the information then degenerates along the
        // diverging direction.
        Eigen::MatrixXd xs = st.xs;
        for (Eigen::Index j = 0; j < k; ++j)
            if (st.sd(j) == 0.0) xs.col(j).setConstant(st.mean(j) != 0.0 ? 1.0 : 0.0);
        const Eigen::MatrixXd info = xs.transpose() * w.asDiagonal() * xs / static_cast<double>(xs.rows());
        if (Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(info).eigenvalues().minCoeff() < 1e-8) {
            throw NumericError("logistic fit: separation detected (information matrix degenerate at the optimum)");
        }
    }
    if (!conv.converged) {
        throw NumericError("logistic fit did not converge in " + std::to_string(options.max_iterations) +
                           " iterations (score norm " + std::to_string(conv.gradient_norm) + ")");
    }

    ModelFit fit;
    fit.family = Family::Binomial;
    fit.names = design.names;
    fit.coef = beta;
    fit.bread = sym_inverse(c.x.transpose() * w.asDiagonal() * c.x);
    fit.vcov = fit.bread;
    fit.mu = mu;
    fit.deviance = dev;
    fit.x = std::move(c.x);
    fit.y = std::move(c.y);
    fit.rows_used = std::move(c.rows);
    fit.rows_dropped = c.dropped;
    fit.convergence = std::move(conv);
    return fit;
}

ModelFit fit_glm(Family family, const Eigen::VectorXd& y, const Design& design)
{
    return family == Family::Gaussian ? fit_ols(y, design) : fit_logistic(y, design);
}

// --- lasso ------------------------------------------------------------------

double lasso_lambda_max(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, Family family)
{
    (void)family;
    const Standardized st = standardize(x);
    const double n = static_cast<double>(y.size());
    const Eigen::VectorXd r = y.array() - y.mean();
    return (st.xs.transpose() * r).cwiseAbs().maxCoeff() / n;
}

LassoFit fit_lasso_glm(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, Family family, double lambda,
                       const LassoOptions& options)
{
    if (!(lambda >= 0.0)) throw ConfigError("lasso penalty must be non-negative");
    if (y.size() != x.rows()) throw DataError("response and design have different row counts");
    if (!y.allFinite() || !x.allFinite()) throw DataError("lasso input contains missing values");
    if (family == Family::Binomial) {
        for (Eigen::Index i = 0; i < y.size(); ++i)
            if (y(i) != 0.0 && y(i) != 1.0) throw DataError("binomial lasso response must be 0/1");
    }
    const Standardized st = standardize(x);
    const Eigen::Index p = x.cols();
    const Eigen::Index n = x.rows();

    LassoFit out;
    out.family = family;
    out.lambda = lambda;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    double b0 = 0.0;
    Eigen::VectorXd mu;
    // At or above lambda_max the solution is the intercept-only model; return it
    // exactly rather than leaving rounding-level coefficients.
    const double gmax =
        p > 0 ? (st.xs.transpose() * (y.array() - y.mean()).matrix()).cwiseAbs().maxCoeff() / static_cast<double>(n) : 0.0;
    const bool null_fit = lambda >= gmax * (1.0 - 1e-9);
    const LassoFit* warm = options.warm_start;
    const bool use_warm = !null_fit && warm && warm->coef_std.size() == p;

    if (family == Family::Gaussian && null_fit) {
        b0 = y.mean();
        mu = Eigen::VectorXd::Constant(n, b0);
        out.objective_path.push_back(penalized_objective(family, y, mu, beta, lambda));
        out.convergence.converged = true;
    } else if (family == Family::Gaussian) {
        b0 = y.mean();
        if (use_warm) {
            beta = warm->coef_std;
            b0 = warm->intercept + warm->coef.dot(st.mean);
        }
        const Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
        int sweeps = 0;
        if (!options.record_path) {
            b0 = y.mean();
            sweeps = covariance_cd(st.xs, st.sd, y, lambda, beta, options.tolerance, options.max_sweeps);
            out.objective_path.push_back(
                penalized_objective(family, y, st.xs * beta + Eigen::VectorXd::Constant(n, b0), beta, lambda));
        }
        // Sweep one at a time so the objective path is recorded per sweep.
        for (; options.record_path && sweeps < options.max_sweeps; ++sweeps) {
            const Eigen::VectorXd before = beta;
            const double b0_before = b0;
            weighted_cd(st.xs, st.sd, y, w, lambda, b0, beta, options.tolerance, 1);
            out.objective_path.push_back(
                penalized_objective(family, y, st.xs * beta + Eigen::VectorXd::Constant(n, b0), beta, lambda));
            const double change = std::max((beta - before).cwiseAbs().maxCoeff(), std::abs(b0 - b0_before));
            if (p == 0 || change < options.tolerance) {
                ++sweeps;
                break;
            }
        }
        out.convergence.iterations = sweeps;
        out.convergence.converged = sweeps < options.max_sweeps;
        mu = st.xs * beta + Eigen::VectorXd::Constant(n, b0);
    } else {
        const double ybar = y.mean();
        if (ybar <= 0.0 || ybar >= 1.0) throw NumericError("binomial lasso: response is constant");
        b0 = std::log(ybar / (1.0 - ybar));
        if (use_warm) {
            beta = warm->coef_std;
            b0 = warm->intercept + warm->coef.dot(st.mean);
        }
        Eigen::VectorXd eta = st.xs * beta + Eigen::VectorXd::Constant(n, b0);
        double obj = penalized_objective(family, y, eta, beta, lambda);
        out.objective_path.push_back(obj);
        int outer = 0;
        if (null_fit) out.convergence.converged = true;
        for (; outer < options.max_newton && !null_fit; ++outer) {
            Eigen::VectorXd p_hat(n), w(n), z(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                p_hat(i) = inverse_logit(eta(i));
                w(i) = std::max(p_hat(i) * (1.0 - p_hat(i)), 1e-10);
                z(i) = eta(i) + (y(i) - p_hat(i)) / w(i);
            }
            double nb0 = b0;
            Eigen::VectorXd nbeta = beta;
            weighted_cd(st.xs, st.sd, z, w, lambda, nb0, nbeta, options.tolerance, options.max_sweeps);

            // Backtracking on the true penalized objective.
            double t = 1.0;
            double cand_b0 = nb0;
            Eigen::VectorXd cand = nbeta;
            Eigen::VectorXd cand_eta = st.xs * cand + Eigen::VectorXd::Constant(n, cand_b0);
            double cand_obj = penalized_objective(family, y, cand_eta, cand, lambda);
            while (cand_obj > obj && t > 1e-12) {
                t *= 0.5;
                cand_b0 = b0 + t * (nb0 - b0);
                cand = beta + t * (nbeta - beta);
                cand_eta = st.xs * cand + Eigen::VectorXd::Constant(n, cand_b0);
                cand_obj = penalized_objective(family, y, cand_eta, cand, lambda);
            }
            const double change = std::max((cand - beta).cwiseAbs().maxCoeff(), std::abs(cand_b0 - b0));
            if (cand_obj <= obj) {
                beta = cand;
                b0 = cand_b0;
                eta = cand_eta;
                obj = cand_obj;
            }
            out.objective_path.push_back(obj);
            if (change < 1e-11) {
                ++outer;
                out.convergence.converged = true;
                break;
            }
        }
        out.convergence.iterations = outer;
        mu = eta.unaryExpr([](double e) { return inverse_logit(e); });
    }

    out.kkt = kkt_check(st.xs, st.sd, y, mu, beta, lambda);
    out.convergence.gradient_norm = std::max(out.kkt.max_zero_violation, out.kkt.max_nonzero_violation);
    out.coef_std = beta;
    out.coef = Eigen::VectorXd::Zero(p);
    out.intercept = b0;
    for (Eigen::Index j = 0; j < p; ++j) {
        if (st.sd(j) == 0.0) continue;
        out.coef(j) = beta(j) / st.sd(j);
        out.intercept -= out.coef(j) * st.mean(j);
    }
    return out;
}

LassoCv lasso_cv(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, Family family, int folds, std::uint64_t seed,
                 int n_lambda, double ratio)
{
    const Eigen::Index n = x.rows();
    if (folds < 2 || folds > n) throw ConfigError("cross-validation needs 2 <= folds <= n");
    if (n_lambda < 2) throw ConfigError("cross-validation needs at least two penalty values");

    LassoCv cv;
    const double lmax = std::max(lasso_lambda_max(y, x, family), 1e-12);
    for (int k = 0; k < n_lambda; ++k) {
        cv.lambdas.push_back(lmax * std::pow(ratio, static_cast<double>(k) / (n_lambda - 1)));
    }

    const auto perm = permutation(static_cast<std::size_t>(n), seed);
    std::vector<int> fold_of(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < perm.size(); ++i) fold_of[perm[i]] = static_cast<int>(i % folds);

    std::vector<std::vector<double>> loss(cv.lambdas.size(), std::vector<double>(folds, 0.0));
    LassoOptions opts;
    opts.tolerance = 1e-9;
    opts.record_path = false;
    for (int f = 0; f < folds; ++f) {
        std::vector<Eigen::Index> train, test;
        for (Eigen::Index i = 0; i < n; ++i) (fold_of[i] == f ? test : train).push_back(i);
        Eigen::MatrixXd xtr = x(train, Eigen::all), xte = x(test, Eigen::all);
        Eigen::VectorXd ytr = y(train), yte = y(test);
        LassoFit previous;
        for (std::size_t l = 0; l < cv.lambdas.size(); ++l) {
            opts.warm_start = l > 0 ? &previous : nullptr;
            LassoFit fit = fit_lasso_glm(ytr, xtr, family, cv.lambdas[l], opts);
            const Eigen::VectorXd eta = (xte * fit.coef).array() + fit.intercept;
            double total = 0.0;
            for (Eigen::Index i = 0; i < yte.size(); ++i) {
                if (family == Family::Gaussian) {
                    total += (yte(i) - eta(i)) * (yte(i) - eta(i));
                } else {
                    total += 2.0 * (log1pexp(eta(i)) - yte(i) * eta(i));
                }
            }
            loss[l][f] = total / static_cast<double>(yte.size());
            previous = std::move(fit);
        }
    }
    std::size_t best = 0;
    for (std::size_t l = 0; l < cv.lambdas.size(); ++l) {
        double mean = 0.0;
        for (double v : loss[l]) mean += v;
        mean /= folds;
        double ss = 0.0;
        for (double v : loss[l]) ss += (v - mean) * (v - mean);
        cv.cv_mean.push_back(mean);
        cv.cv_se.push_back(std::sqrt(ss / (folds - 1) / folds));
        if (mean < cv.cv_mean[best]) best = l;
    }
    cv.lambda_min = cv.lambdas[best];
    const double threshold = cv.cv_mean[best] + cv.cv_se[best];
    cv.lambda_1se = cv.lambda_min;
    for (std::size_t l = 0; l <= best; ++l) {
        if (cv.cv_mean[l] <= threshold) {
            cv.lambda_1se = cv.lambdas[l];
            break;
        }
    }
    return cv;
}

// --- covariance -------------------------------------------------------------

ClusterVcov cluster_robust_vcov(const ModelFit& fit, const std::vector<std::int64_t>& cluster_ids)
{
    if (fit.rows_used.empty()) throw DataError("cluster covariance: empty fit");
    const std::size_t needed = fit.rows_used.back() + 1;
    if (cluster_ids.size() < needed) throw DataError("cluster covariance: a row has no cluster id");

    std::map<std::int64_t, Eigen::VectorXd> sums;
    const Eigen::VectorXd resid = fit.y - fit.mu;
    for (std::size_t i = 0; i < fit.rows_used.size(); ++i) {
        const auto id = cluster_ids[fit.rows_used[i]];
        auto [it, fresh] = sums.try_emplace(id, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fit.k())));
        it->second += fit.x.row(static_cast<Eigen::Index>(i)).transpose() * resid(static_cast<Eigen::Index>(i));
    }
    const std::size_t g = sums.size();
    if (g < 2) throw DataError("cluster covariance needs at least two clusters");

    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(fit.k()), static_cast<Eigen::Index>(fit.k()));
    for (const auto& [id, s] : sums) meat.noalias() += s * s.transpose();
    const double n = static_cast<double>(fit.n());
    const double k = static_cast<double>(fit.k());
    ClusterVcov out;
    out.clusters = g;
    out.correction = (static_cast<double>(g) / (static_cast<double>(g) - 1.0)) * ((n - 1.0) / (n - k));
    out.vcov = out.correction * fit.bread * meat * fit.bread;
    out.vcov = 0.5 * (out.vcov + out.vcov.transpose());
    return out;
}

// --- g-computation ----------------------------------------------------------

GComputation g_compute(const ModelFit& fit, const Eigen::MatrixXd& rows, const std::vector<TreatmentTerm>& terms,
                       double d_high, double d_low, const Eigen::VectorXd& weights,
                       std::optional<std::pair<double, double>> support)
{
    const Eigen::Index m = rows.rows();
    if (rows.cols() != fit.coef.size()) throw DataError("g-computation: row width does not match the model");
    if (m == 0) throw DataError("g-computation: no evaluation rows");
    if (!rows.allFinite()) throw DataError("g-computation: evaluation rows contain missing values");
    Eigen::VectorXd w = weights.size() == 0 ? Eigen::VectorXd::Ones(m) : weights;
    if (w.size() != m) throw DataError("g-computation: weight vector length mismatch");
    if ((w.array() < 0).any() || !(w.sum() > 0)) throw DataError("g-computation: weights must be non-negative");
    for (const auto& t : terms) {
        if (t.column < 0 || t.column >= rows.cols()) throw DataError("g-computation: treatment column out of range");
        if (t.multiplier.size() != 0 && t.multiplier.size() != m) {
            throw DataError("g-computation: multiplier length mismatch");
        }
    }

    GComputation out;
    if (support && (d_high < support->first || d_high > support->second || d_low < support->first ||
                    d_low > support->second)) {
        out.warnings.push_back("contrast values lie outside the observed treatment support; positivity is doubtful");
    }

    Eigen::MatrixXd xh = rows, xl = rows;
    for (const auto& t : terms) {
        for (Eigen::Index r = 0; r < m; ++r) {
            const double mult = t.multiplier.size() == 0 ? 1.0 : t.multiplier(r);
            xh(r, t.column) = d_high * mult;
            xl(r, t.column) = d_low * mult;
        }
    }
    const Eigen::VectorXd eh = xh * fit.coef, el = xl * fit.coef;
    const double wsum = w.sum();
    out.contrasts.resize(m);
    out.gradient = Eigen::VectorXd::Zero(fit.coef.size());
    for (Eigen::Index r = 0; r < m; ++r) {
        double ph = eh(r), pl = el(r), gh = 1.0, gl = 1.0;
        if (fit.family == Family::Binomial) {
            ph = inverse_logit(eh(r));
            pl = inverse_logit(el(r));
            gh = ph * (1.0 - ph);
            gl = pl * (1.0 - pl);
        }
        out.contrasts(r) = ph - pl;
        out.gradient += (w(r) / wsum) * (gh * xh.row(r).transpose() - gl * xl.row(r).transpose());
    }
    out.estimate = w.dot(out.contrasts) / wsum;
    out.mean_influence = (w.array() * (out.contrasts.array() - out.estimate) / wsum).matrix();
    return out;
}

double delta_variance(const GComputation& g, const Eigen::MatrixXd& vcov, const std::vector<std::int64_t>& eval_clusters)
{
    double v = g.gradient.dot(vcov * g.gradient);
    if (eval_clusters.empty()) return v + g.mean_influence.squaredNorm();
    if (eval_clusters.size() != static_cast<std::size_t>(g.mean_influence.size())) {
        throw DataError("delta variance: cluster ids do not match evaluation rows");
    }
    std::map<std::int64_t, double> sums;
    for (std::size_t r = 0; r < eval_clusters.size(); ++r) sums[eval_clusters[r]] += g.mean_influence(static_cast<Eigen::Index>(r));
    for (const auto& [id, s] : sums) v += s * s;
    return v;
}

} // namespace cdiff
