#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <limits>
#include <variant>
#include <vector>

#include "polyapx/approx.hpp"
#include "polyapx/gauss.hpp"
#include "polyapx/nets.hpp"

namespace polyapx {

using AnyDist = std::variant<Gaussian, GaussianMixture>;

int dist_dim(const AnyDist& dist);

// Monte-Carlo comparison of a network against an approximant. Accuracy fields
// are NaN (has_accuracy false) when no label rule applies: Gaussian inputs
// carry no class structure unless the caller supplies one.
struct EvalReport {
    double fvu = 0.0;
    double kl = 0.0;
    double accuracy_net = std::numeric_limits<double>::quiet_NaN();
    double accuracy_approx = std::numeric_limits<double>::quiet_NaN();
    bool has_accuracy = false;
    std::int64_t n_samples = 0;
    std::uint64_t seed = 0;
};

// Class assignment for a sample; overrides the default (mixture component
// index) when provided.
using LabelRule = std::function<int(const Eigen::VectorXd&)>;

EvalReport evaluate(const AnyNet& net, const AnyApprox& approx, const AnyDist& dist,
                    std::int64_t n, std::uint64_t seed, const LabelRule& labels = nullptr);

// Mean over rows of KL(softmax(net_row) || softmax(approx_row)), natural log,
// stabilized by max-subtraction.
double mean_softmax_kl(const Eigen::MatrixXd& net_logits, const Eigen::MatrixXd& approx_logits);

// Fraction of rows whose argmax matches the label.
double argmax_accuracy(const Eigen::MatrixXd& outputs, const std::vector<int>& labels);

// Eigendecomposition of one output's interaction matrix q_k.
struct Spectrum {
    Eigen::VectorXd eigenvalues;   // sorted by |lambda| descending
    Eigen::MatrixXd eigenvectors;  // columns, orthonormal, matching order
    int class_index = 0;
};

// Sign convention: the first component of each eigenvector whose magnitude
// exceeds 1e-12 is made positive, for reproducible serialization.
Spectrum quadratic_spectrum(const QuadraticApproximant& approx, int class_index);

// P_k = I - sum_{i<=k} u_i u_i^T from the top-k left singular vectors of beta.
struct AttackProjection {
    Eigen::MatrixXd matrix;  // d x d symmetric idempotent
    int k = 0;
};

// k = 0 is allowed and yields the identity. k > rank(beta) is rejected.
AttackProjection svd_attack_projection(const LinearApproximant& approx, int k);

int beta_rank(const LinearApproximant& approx);

// Rows x replaced by P x.
Eigen::MatrixXd apply_attack(const Eigen::MatrixXd& inputs, const AttackProjection& proj);

}  // namespace polyapx
