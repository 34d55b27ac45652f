#pragma once

#include <Eigen/Dense>
#include <utility>

#include "polyapx/actint.hpp"
#include "polyapx/gauss.hpp"

namespace polyapx {

inline constexpr int kMaxMasterFactors = 6;

// var(X) below this threshold routes master_expectation to the constant-X
// path; below it the regression coefficients cov/var are numerically unusable.
inline double degenerate_variance_threshold(double mean_x) {
    return 1e-14 * (1.0 + mean_x * mean_x);
}

// First/second moments of one scalar X and n scalars Y_1..Y_n, all jointly
// Gaussian. The assembled (n+1)x(n+1) covariance must be PSD.
struct JointScalarStats {
    double mean_x = 0.0;
    double var_x = 1.0;
    Eigen::VectorXd mean_y;
    Eigen::VectorXd cov_xy;
    Eigen::MatrixXd cov_yy;

    // validate=false skips the PSD eigencheck; used by callers that assemble
    // the stats from a covariance that is PSD by construction.
    JointScalarStats(double mean_x_in, double var_x_in, Eigen::VectorXd mean_y_in,
                     Eigen::VectorXd cov_xy_in, Eigen::MatrixXd cov_yy_in, bool validate = true);

    int n() const { return static_cast<int>(mean_y.size()); }

    // The (n+1)x(n+1) covariance of (X, Y_1..Y_n).
    Eigen::MatrixXd full_covariance() const;
};

// Coefficients a_k of E[g(X) prod Y_i] = sum_k a_k E[g(X) X^k], k = 0..n.
struct MasterCoefficients {
    Eigen::VectorXd a;
};

// OLS of Y_i on X: beta = cov(X, Y_i)/var(X), alpha = E[Y_i] - beta E[X].
std::pair<double, double> ols_scalar(const JointScalarStats& stats, int i);

// Cov(eps_i, eps_j) = cov(Y_i, Y_j) - cov(X, Y_i) cov(X, Y_j) / var(X).
double residual_cov(const JointScalarStats& stats, int i, int j);

MasterCoefficients master_coefficients(const JointScalarStats& stats);

// E[g(X) prod Y_i]. Degenerate var(X): g(mean_x) * E[prod Y_i] via the
// noncentral Isserlis formula.
double master_expectation(const JointScalarStats& stats, Activation act);

}  // namespace polyapx
