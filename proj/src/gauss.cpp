#include "polyapx/gauss.hpp"

#include <cmath>
#include <string>

#include "polyapx/rng.hpp"

namespace polyapx {

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& a) {
    return 0.5 * (a + a.transpose());
}

bool is_symmetric(const Eigen::MatrixXd& a, double rtol) {
    if (a.rows() != a.cols()) return false;
    const double scale = a.cwiseAbs().maxCoeff();
    const double diff = (a - a.transpose()).cwiseAbs().maxCoeff();
    return diff <= rtol * std::max(scale, 1.0);
}

void require_psd(const Eigen::MatrixXd& a, const char* what) {
    if (a.rows() != a.cols()) {
        throw invalid_input_error(std::string(what) + ": matrix is not square");
    }
    if (a.size() == 0) return;
    const Eigen::MatrixXd s = symmetrized(a);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
    const double lambda_min = es.eigenvalues().minCoeff();
    const double norm = s.norm();
    if (lambda_min < -kPsdRtol * std::max(norm, 1.0)) {
        throw invalid_input_error(std::string(what) + ": matrix is not positive semidefinite (min eigenvalue " +
                                  std::to_string(lambda_min) + ")");
    }
}

Gaussian::Gaussian(Eigen::VectorXd mean_in, Eigen::MatrixXd cov_in)
    : mean(std::move(mean_in)), cov(std::move(cov_in)) {
    if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
        throw invalid_input_error("Gaussian: covariance shape does not match mean dimension");
    }
    if (!is_symmetric(cov)) {
        throw invalid_input_error("Gaussian: covariance is not symmetric");
    }
    require_psd(cov, "Gaussian covariance");
}

GaussianMixture::GaussianMixture(Eigen::VectorXd weights_in, std::vector<Gaussian> components_in)
    : weights(std::move(weights_in)), components(std::move(components_in)) {
    if (components.empty() || weights.size() != static_cast<Eigen::Index>(components.size())) {
        throw invalid_input_error("GaussianMixture: weights/components length mismatch");
    }
    if (weights.minCoeff() < 0.0) {
        throw invalid_input_error("GaussianMixture: negative mixture weight");
    }
    if (std::abs(weights.sum() - 1.0) > 1e-12) {
        throw invalid_input_error("GaussianMixture: weights do not sum to 1");
    }
    const int d = components.front().dim();
    for (const Gaussian& g : components) {
        if (g.dim() != d) {
            throw invalid_input_error("GaussianMixture: components have mismatched dimensions");
        }
    }
}

MomentSpec::MomentSpec(Eigen::VectorXd means_in, Eigen::MatrixXd cov_in)
    : means(std::move(means_in)), cov(std::move(cov_in)) {
    if (cov.rows() != means.size() || cov.cols() != means.size()) {
        throw invalid_input_error("MomentSpec: covariance shape does not match means");
    }
}

namespace {

// Recursion on the first remaining variable: either take it as a singleton
// (mean factor) or pair it with one of the later variables (covariance
// factor). Enumerates exactly the singleton/pair partitions.
double isserlis_rec(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov,
                    std::vector<int>& idx, bool central) {
    const std::size_t m = idx.size();
    if (m == 0) return 1.0;
    const int first = idx[0];
    std::vector<int> rest(idx.begin() + 1, idx.end());

    double total = 0.0;
    if (!central) {
        total += mu[first] * isserlis_rec(mu, cov, rest, central);
    }
    for (std::size_t j = 0; j < rest.size(); ++j) {
        std::vector<int> remaining;
        remaining.reserve(rest.size() - 1);
        for (std::size_t t = 0; t < rest.size(); ++t) {
            if (t != j) remaining.push_back(rest[t]);
        }
        total += cov(first, rest[j]) * isserlis_rec(mu, cov, remaining, central);
    }
    return total;
}

double run_isserlis(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov, bool central) {
    const int n = static_cast<int>(mu.size());
    if (n > kMaxIsserlisDegree) {
        throw degree_too_high_error("isserlis: degree " + std::to_string(n) + " exceeds maximum " +
                                    std::to_string(kMaxIsserlisDegree));
    }
    if (central && n % 2 == 1) return 0.0;
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    return isserlis_rec(mu, cov, idx, central);
}

}  // namespace

double isserlis_noncentral(const MomentSpec& spec) {
    return run_isserlis(spec.means, spec.cov, /*central=*/false);
}

double isserlis_central(const Eigen::MatrixXd& cov) {
    if (cov.rows() != cov.cols()) {
        throw invalid_input_error("isserlis_central: covariance must be square");
    }
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(cov.rows());
    return run_isserlis(zero, cov, /*central=*/true);
}

Eigen::MatrixXd mixture_total_covariance(const std::vector<Eigen::VectorXd>& means_x,
                                         const std::vector<Eigen::VectorXd>& means_y,
                                         const std::vector<Eigen::MatrixXd>& cross_covs,
                                         const Eigen::VectorXd& weights) {
    const std::size_t m = cross_covs.size();
    if (m == 0 || means_x.size() != m || means_y.size() != m ||
        weights.size() != static_cast<Eigen::Index>(m)) {
        throw invalid_input_error("mixture_total_covariance: list length mismatch");
    }
    if (weights.minCoeff() < 0.0 || std::abs(weights.sum() - 1.0) > 1e-12) {
        throw invalid_input_error("mixture_total_covariance: weights are not a simplex vector");
    }
    const Eigen::Index dx = means_x[0].size();
    const Eigen::Index dy = means_y[0].size();
    for (std::size_t c = 0; c < m; ++c) {
        if (means_x[c].size() != dx || means_y[c].size() != dy ||
            cross_covs[c].rows() != dx || cross_covs[c].cols() != dy) {
            throw invalid_input_error("mixture_total_covariance: inconsistent shapes");
        }
    }

    Eigen::VectorXd grand_x = Eigen::VectorXd::Zero(dx);
    Eigen::VectorXd grand_y = Eigen::VectorXd::Zero(dy);
    for (std::size_t c = 0; c < m; ++c) {
        grand_x += weights[c] * means_x[c];
        grand_y += weights[c] * means_y[c];
    }

    Eigen::MatrixXd total = Eigen::MatrixXd::Zero(dx, dy);
    for (std::size_t c = 0; c < m; ++c) {
        total += weights[c] * cross_covs[c];
        total += weights[c] * (means_x[c] - grand_x) * (means_y[c] - grand_y).transpose();
    }
    return total;
}

Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& cov) {
    require_psd(cov, "sample covariance");
    const Eigen::MatrixXd s = symmetrized(cov);
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() == Eigen::Success) {
        return llt.matrixL();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * lambda.cwiseSqrt().asDiagonal();
}

Eigen::MatrixXd sample(const Gaussian& dist, std::int64_t n, std::uint64_t seed) {
    if (n < 1) throw invalid_input_error("sample: n must be >= 1");
    const int d = dist.dim();
    const Eigen::MatrixXd factor = covariance_factor(dist.cov);
    Rng rng(seed);
    Eigen::MatrixXd out(n, d);
    Eigen::VectorXd z(d);
    for (std::int64_t r = 0; r < n; ++r) {
        for (int i = 0; i < d; ++i) z[i] = rng.normal();
        out.row(r) = (dist.mean + factor * z).transpose();
    }
    return out;
}

Eigen::MatrixXd sample(const GaussianMixture& dist, std::int64_t n, std::uint64_t seed,
                       std::vector<int>* component_out) {
    if (n < 1) throw invalid_input_error("sample: n must be >= 1");
    const int d = dist.dim();
    const int m = dist.size();

    std::vector<Eigen::MatrixXd> factors;
    factors.reserve(m);
    for (const Gaussian& g : dist.components) factors.push_back(covariance_factor(g.cov));

    std::vector<double> cum(m);
    double acc = 0.0;
    for (int c = 0; c < m; ++c) {
        acc += dist.weights[c];
        cum[c] = acc;
    }

    Rng rng(seed);
    Eigen::MatrixXd out(n, d);
    Eigen::VectorXd z(d);
    if (component_out) component_out->resize(n);
    for (std::int64_t r = 0; r < n; ++r) {
        const int c = rng.categorical(cum.data(), m);
        for (int i = 0; i < d; ++i) z[i] = rng.normal();
        out.row(r) = (dist.components[c].mean + factors[c] * z).transpose();
        if (component_out) (*component_out)[r] = c;
    }
    return out;
}

}  // namespace polyapx
