#include "polyapx/master.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace polyapx {

JointScalarStats::JointScalarStats(double mean_x_in, double var_x_in, Eigen::VectorXd mean_y_in,
                                   Eigen::VectorXd cov_xy_in, Eigen::MatrixXd cov_yy_in,
                                   bool validate)
    : mean_x(mean_x_in),
      var_x(var_x_in),
      mean_y(std::move(mean_y_in)),
      cov_xy(std::move(cov_xy_in)),
      cov_yy(std::move(cov_yy_in)) {
    const Eigen::Index n = mean_y.size();
    if (cov_xy.size() != n || cov_yy.rows() != n || cov_yy.cols() != n) {
        throw invalid_input_error("JointScalarStats: inconsistent shapes");
    }
    if (var_x < 0.0) {
        throw invalid_input_error("JointScalarStats: var_x must be nonnegative");
    }
    if (validate) {
        require_psd(full_covariance(), "JointScalarStats covariance");
    }
}

Eigen::MatrixXd JointScalarStats::full_covariance() const {
    const Eigen::Index n = mean_y.size();
    Eigen::MatrixXd full(n + 1, n + 1);
    full(0, 0) = var_x;
    full.block(0, 1, 1, n) = cov_xy.transpose();
    full.block(1, 0, n, 1) = cov_xy;
    full.block(1, 1, n, n) = cov_yy;
    return full;
}

std::pair<double, double> ols_scalar(const JointScalarStats& stats, int i) {
    if (i < 0 || i >= stats.n()) throw invalid_input_error("ols_scalar: index out of range");
    if (stats.var_x == 0.0) {
        throw degenerate_variance_error("ols_scalar: var(X) = 0; use the degenerate path");
    }
    const double beta = stats.cov_xy[i] / stats.var_x;
    const double alpha = stats.mean_y[i] - beta * stats.mean_x;
    return {alpha, beta};
}

double residual_cov(const JointScalarStats& stats, int i, int j) {
    if (i < 0 || i >= stats.n() || j < 0 || j >= stats.n()) {
        throw invalid_input_error("residual_cov: index out of range");
    }
    if (stats.var_x == 0.0) {
        throw degenerate_variance_error("residual_cov: var(X) = 0; use the degenerate path");
    }
    return stats.cov_yy(i, j) - stats.cov_xy[i] * stats.cov_xy[j] / stats.var_x;
}

namespace {

// Sum over alpha/epsilon assignments of the positions in `rest`: each subset E
// contributes (prod of alphas outside E) * E[prod of residuals in E], the
// latter by central Isserlis over the residual covariance submatrix.
double alpha_epsilon_sum(const std::vector<int>& rest, const Eigen::VectorXd& alpha,
                         const Eigen::MatrixXd& eps_cov) {
    const int m = static_cast<int>(rest.size());
    double total = 0.0;
    for (unsigned mask = 0; mask < (1u << m); ++mask) {
        const int eps_count = __builtin_popcount(mask);
        if (eps_count % 2 == 1) continue;  // odd residual products have mean zero
        double alpha_prod = 1.0;
        std::vector<int> eps_idx;
        eps_idx.reserve(eps_count);
        for (int t = 0; t < m; ++t) {
            if (mask & (1u << t)) {
                eps_idx.push_back(rest[t]);
            } else {
                alpha_prod *= alpha[rest[t]];
            }
        }
        double eps_moment = 1.0;
        if (!eps_idx.empty()) {
            Eigen::MatrixXd sub(eps_idx.size(), eps_idx.size());
            for (std::size_t r = 0; r < eps_idx.size(); ++r) {
                for (std::size_t c = 0; c < eps_idx.size(); ++c) {
                    sub(r, c) = eps_cov(eps_idx[r], eps_idx[c]);
                }
            }
            eps_moment = isserlis_central(sub);
        }
        total += alpha_prod * eps_moment;
    }
    return total;
}

}  // namespace

MasterCoefficients master_coefficients(const JointScalarStats& stats) {
    const int n = stats.n();
    if (n > kMaxMasterFactors) {
        throw degree_too_high_error("master_coefficients: n = " + std::to_string(n) +
                                    " exceeds maximum " + std::to_string(kMaxMasterFactors));
    }
    if (stats.var_x == 0.0) {
        throw degenerate_variance_error("master_coefficients: var(X) = 0; use the degenerate path");
    }

    Eigen::VectorXd alpha(n), beta(n);
    for (int i = 0; i < n; ++i) {
        const auto [a, b] = ols_scalar(stats, i);
        alpha[i] = a;
        beta[i] = b;
    }
    Eigen::MatrixXd eps_cov(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) eps_cov(i, j) = residual_cov(stats, i, j);
    }

    MasterCoefficients coeffs;
    coeffs.a = Eigen::VectorXd::Zero(n + 1);
    // k-combinations of beta indices via bitmask enumeration (n <= 6).
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        const int k = __builtin_popcount(mask);
        double beta_prod = 1.0;
        std::vector<int> rest;
        rest.reserve(n - k);
        for (int i = 0; i < n; ++i) {
            if (mask & (1u << i)) {
                beta_prod *= beta[i];
            } else {
                rest.push_back(i);
            }
        }
        coeffs.a[k] += beta_prod * alpha_epsilon_sum(rest, alpha, eps_cov);
    }
    return coeffs;
}

double master_expectation(const JointScalarStats& stats, Activation act) {
    const int n = stats.n();
    if (n == 0) {
        // Empty product: just E[g(X)].
        if (stats.var_x < degenerate_variance_threshold(stats.mean_x)) {
            return activation_value(act, stats.mean_x);
        }
        return act_mean(act, ScalarGaussian{stats.mean_x, std::sqrt(stats.var_x)});
    }
    if (stats.var_x < degenerate_variance_threshold(stats.mean_x)) {
        const double g0 = activation_value(act, stats.mean_x);
        return g0 * isserlis_noncentral(MomentSpec(stats.mean_y, stats.cov_yy));
    }
    const MasterCoefficients coeffs = master_coefficients(stats);
    const ScalarGaussian gx{stats.mean_x, std::sqrt(stats.var_x)};
    double total = 0.0;
    for (int k = 0; k <= n; ++k) {
        if (coeffs.a[k] != 0.0) total += coeffs.a[k] * act_moment(act, k, gx);
    }
    return total;
}

}  // namespace polyapx
