#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "polyapx/errors.hpp"

namespace polyapx {

// Maximum product degree accepted by the Isserlis partition enumeration.
inline constexpr int kMaxIsserlisDegree = 8;

// Relative tolerances for the symmetry / positive-semidefiniteness checks on
// covariance matrices assembled from data.
inline constexpr double kSymmetryRtol = 1e-12;
inline constexpr double kPsdRtol = 1e-10;

// Symmetrize as (A + A^T)/2.
Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& a);

bool is_symmetric(const Eigen::MatrixXd& a, double rtol = kSymmetryRtol);

// Throws invalid_input_error unless the symmetrized matrix has smallest
// eigenvalue >= -kPsdRtol * ||a||_F.
void require_psd(const Eigen::MatrixXd& a, const char* what);

struct Gaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    Gaussian(Eigen::VectorXd mean_in, Eigen::MatrixXd cov_in);
    int dim() const { return static_cast<int>(mean.size()); }
};

struct GaussianMixture {
    Eigen::VectorXd weights;  // simplex: nonnegative, sums to 1 within 1e-12
    std::vector<Gaussian> components;

    GaussianMixture(Eigen::VectorXd weights_in, std::vector<Gaussian> components_in);
    int dim() const { return components.front().dim(); }
    int size() const { return static_cast<int>(components.size()); }
};

// First/second moments of n jointly Gaussian scalars X_1..X_n.
struct MomentSpec {
    Eigen::VectorXd means;
    Eigen::MatrixXd cov;

    MomentSpec(Eigen::VectorXd means_in, Eigen::MatrixXd cov_in);
    int n() const { return static_cast<int>(means.size()); }
};

// E[X_1 X_2 ... X_n] as the sum over partitions into singletons (means) and
// pairs (covariances). n = 0 returns 1; n > kMaxIsserlisDegree is rejected.
double isserlis_noncentral(const MomentSpec& spec);

// Zero-mean case: pair partitions only; odd n gives 0.
double isserlis_central(const Eigen::MatrixXd& cov);

// Law of total covariance for a mixture indexed by Z:
//   Cov(X, Y) = E[Cov(X, Y | Z)] + Cov(E[X|Z], E[Y|Z]).
// All lists must have length m = weights.size().
Eigen::MatrixXd mixture_total_covariance(const std::vector<Eigen::VectorXd>& means_x,
                                         const std::vector<Eigen::VectorXd>& means_y,
                                         const std::vector<Eigen::MatrixXd>& cross_covs,
                                         const Eigen::VectorXd& weights);

// Factor L with L L^T = cov: Cholesky when the covariance is positive
// definite, eigendecomposition with negative eigenvalues clipped to zero
// otherwise.
Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& cov);

// n x d sample matrices, deterministic for a fixed seed.
Eigen::MatrixXd sample(const Gaussian& dist, std::int64_t n, std::uint64_t seed);

// Mixture sampling; optionally reports the component index of each row.
Eigen::MatrixXd sample(const GaussianMixture& dist, std::int64_t n, std::uint64_t seed,
                       std::vector<int>* component_out = nullptr);

}  // namespace polyapx
