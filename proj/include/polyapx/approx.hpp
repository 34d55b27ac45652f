#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <variant>
#include <vector>

#include "polyapx/gauss.hpp"
#include "polyapx/master.hpp"
#include "polyapx/nets.hpp"

namespace polyapx {

struct ApproxOptions {
    // Reject quadratic feature dimensions D = d + d(d+1)/2 above this.
    int max_z_dim = 20000;
    // Closed-form mixture quadratics are gated to d <= this; larger inputs
    // should start from the standard-normal solution and refine_quadratic.
    int mixture_quadratic_max_dim = 32;
};

// Solver bookkeeping attached to fitted approximants.
struct FitMeta {
    double ridge_lambda = 0.0;
    bool refine_kept_init = false;
    double holdout_fvu = 0.0;
};

// g(x) = beta^T x + alpha.
struct LinearApproximant {
    Eigen::VectorXd alpha;  // o
    Eigen::MatrixXd beta;   // d x o
    FitMeta meta;

    LinearApproximant(Eigen::VectorXd alpha_in, Eigen::MatrixXd beta_in, FitMeta meta_in = {});
    int input_dim() const { return static_cast<int>(beta.rows()); }
    int output_dim() const { return static_cast<int>(beta.cols()); }
};

// g_k(x) = x^T q_k x + beta(:,k)^T x + gamma_k.
struct QuadraticApproximant {
    Eigen::VectorXd gamma;           // o
    Eigen::MatrixXd beta;            // d x o
    std::vector<Eigen::MatrixXd> q;  // o symmetric d x d matrices
    FitMeta meta;

    QuadraticApproximant(Eigen::VectorXd gamma_in, Eigen::MatrixXd beta_in,
                         std::vector<Eigen::MatrixXd> q_in, FitMeta meta_in = {});
    int input_dim() const { return static_cast<int>(beta.rows()); }
    int output_dim() const { return static_cast<int>(beta.cols()); }
};

Eigen::VectorXd predict(const LinearApproximant& g, const Eigen::VectorXd& x);
Eigen::VectorXd predict(const QuadraticApproximant& g, const Eigen::VectorXd& x);
Eigen::MatrixXd predict_batch(const LinearApproximant& g, const Eigen::MatrixXd& X);
Eigen::MatrixXd predict_batch(const QuadraticApproximant& g, const Eigen::MatrixXd& X);

using AnyApprox = std::variant<LinearApproximant, QuadraticApproximant>;
Eigen::MatrixXd predict_batch(const AnyApprox& g, const Eigen::MatrixXd& X);
int approx_output_dim(const AnyApprox& g);

// --- quadratic feature indexing -------------------------------------------
// z = (x_1..x_d, x_i x_j for i <= j lexicographic); D = d + d(d+1)/2.

inline int z_dim(int d) { return d + d * (d + 1) / 2; }

// Position of the (i, j) monomial (i <= j) within z.
inline int z_pair_index(int d, int i, int j) {
    return d + i * d - i * (i - 1) / 2 + (j - i);
}

// Moments of the quadratic feature vector z under a Gaussian input.
struct ZMoments {
    Eigen::VectorXd mean_z;  // D
    Eigen::MatrixXd cov_z;   // D x D
};

ZMoments z_moments(const Gaussian& input, const ApproxOptions& opts = {});

// Diagonal of Cov[z] under N(0, I): 1 for x and cross terms, 2 for squares.
Eigen::VectorXd cov_z_standard_diagonal(int d);
// E[z] under N(0, I): zeros except 1 at the square monomials.
Eigen::VectorXd mean_z_standard(int d);

// --- preactivation statistics ----------------------------------------------

struct MlpPreact {
    Eigen::VectorXd mean;     // h
    Eigen::MatrixXd cov;      // h x h
    Eigen::MatrixXd cross_x;  // h x d, Cov(y, x) = W1 Sigma
};

struct GluPreact {
    Eigen::VectorXd gate_mean, lin_mean;          // h
    Eigen::VectorXd gate_var, lin_var, gate_lin;  // h (per-unit joint stats)
    Eigen::MatrixXd gate_cross_x, lin_cross_x;    // h x d
};

MlpPreact preactivation_gaussians(const MlpSpec& net, const Gaussian& input);
GluPreact preactivation_gaussians(const GluSpec& net, const Gaussian& input);

// --- fits -------------------------------------------------------------------

LinearApproximant linear_approx(const MlpSpec& net, const Gaussian& input);
LinearApproximant linear_approx(const MlpSpec& net, const GaussianMixture& input);
LinearApproximant linear_approx(const GluSpec& net, const Gaussian& input);
LinearApproximant linear_approx(const GluSpec& net, const GaussianMixture& input);

QuadraticApproximant quadratic_approx(const MlpSpec& net, const Gaussian& input,
                                      const ApproxOptions& opts = {});
QuadraticApproximant quadratic_approx(const MlpSpec& net, const GaussianMixture& input,
                                      const ApproxOptions& opts = {});
QuadraticApproximant quadratic_approx(const GluSpec& net, const Gaussian& input,
                                      const ApproxOptions& opts = {});

// Thrown when a closed-form mixture quadratic exceeds the dimension gate.
struct mixture_quadratic_gate_error : resource_error {
    explicit mixture_quadratic_gate_error(const std::string& msg) : resource_error(msg) {}
};

// --- stochastic refinement (convex least squares) ---------------------------

struct RefineOptions {
    std::int64_t steps = 10000;
    int batch = 256;
    std::uint64_t seed = 0;
    double step_size = 1e-3;
};

QuadraticApproximant refine_quadratic(const QuadraticApproximant& init, const AnyNet& net,
                                      const GaussianMixture& input, const RefineOptions& opts);

// Fraction of variance unexplained of predictions G against targets F,
// both n x o: sum ||F - G||^2 / sum ||F - mean(F)||^2.
double fvu_on_samples(const Eigen::MatrixXd& targets, const Eigen::MatrixXd& predictions);

}  // namespace polyapx
