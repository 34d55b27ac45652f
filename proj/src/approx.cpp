#include "polyapx/approx.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "polyapx/rng.hpp"

namespace polyapx {

namespace {

constexpr double kRidgeLambda0 = 1e-9;
constexpr double kRidgeLambdaMax = 1e-3;

void require_finite(const Eigen::MatrixXd& m, const char* what) {
    if (!m.allFinite()) {
        throw invalid_input_error(std::string(what) + ": non-finite entries");
    }
}

// Solve (sym(s) + lambda * mean(diag) * I) X = rhs, escalating lambda by
// factors of 10 until the Cholesky factorization succeeds.
Eigen::MatrixXd ridge_solve(const Eigen::MatrixXd& s, const Eigen::MatrixXd& rhs,
                            double* lambda_used) {
    const Eigen::MatrixXd sym = symmetrized(s);
    double scale = sym.diagonal().mean();
    if (!(scale > 0.0)) scale = 1.0;
    for (double lam = kRidgeLambda0; lam <= kRidgeLambdaMax * (1.0 + 1e-12); lam *= 10.0) {
        Eigen::MatrixXd a = sym;
        a.diagonal().array() += lam * scale;
        Eigen::LLT<Eigen::MatrixXd> llt(a);
        if (llt.info() != Eigen::Success) continue;
        Eigen::MatrixXd x = llt.solve(rhs);
        if (!x.allFinite()) continue;
        if (lambda_used) *lambda_used = lam;
        return x;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    throw ill_conditioned_error(
        "covariance system unsolvable even with ridge 1e-3 (condition estimate " +
            std::to_string(cond) + ")",
        cond);
}

void check_z_budget(int d, const ApproxOptions& opts) {
    const long long dd =
        static_cast<long long>(d) + static_cast<long long>(d) * (d + 1) / 2;
    if (dd > opts.max_z_dim) {
        throw resource_error("quadratic feature dimension D = " + std::to_string(dd) +
                             " for input dim " + std::to_string(d) +
                             " exceeds the budget of " + std::to_string(opts.max_z_dim));
    }
}

bool is_standard_normal(const Gaussian& g) {
    return g.mean.isZero(0.0) && g.cov.isIdentity(0.0);
}

ZMoments z_moments_dispatch(const Gaussian& input, const ApproxOptions& opts) {
    if (is_standard_normal(input)) {
        check_z_budget(input.dim(), opts);
        ZMoments zm;
        zm.mean_z = mean_z_standard(input.dim());
        zm.cov_z = Eigen::MatrixXd(cov_z_standard_diagonal(input.dim()).asDiagonal());
        return zm;
    }
    return z_moments(input, opts);
}

}  // namespace

LinearApproximant::LinearApproximant(Eigen::VectorXd alpha_in, Eigen::MatrixXd beta_in,
                                     FitMeta meta_in)
    : alpha(std::move(alpha_in)), beta(std::move(beta_in)), meta(meta_in) {
    if (alpha.size() != beta.cols()) {
        throw invalid_input_error("linear approximant: alpha length must equal beta columns");
    }
    require_finite(alpha, "linear approximant alpha");
    require_finite(beta, "linear approximant beta");
}

QuadraticApproximant::QuadraticApproximant(Eigen::VectorXd gamma_in, Eigen::MatrixXd beta_in,
                                           std::vector<Eigen::MatrixXd> q_in, FitMeta meta_in)
    : gamma(std::move(gamma_in)), beta(std::move(beta_in)), q(std::move(q_in)), meta(meta_in) {
    const Eigen::Index o = gamma.size();
    const Eigen::Index d = beta.rows();
    if (beta.cols() != o || static_cast<Eigen::Index>(q.size()) != o) {
        throw invalid_input_error("quadratic approximant: inconsistent output dimensions");
    }
    require_finite(gamma, "quadratic approximant gamma");
    require_finite(beta, "quadratic approximant beta");
    for (const Eigen::MatrixXd& qk : q) {
        if (qk.rows() != d || qk.cols() != d) {
            throw invalid_input_error("quadratic approximant: q block shape mismatch");
        }
        require_finite(qk, "quadratic approximant q");
        const double tol = 1e-10 * std::max(1.0, qk.lpNorm<Eigen::Infinity>());
        if ((qk - qk.transpose()).lpNorm<Eigen::Infinity>() > tol) {
            throw invalid_input_error("quadratic approximant: q blocks must be symmetric");
        }
    }
}

Eigen::VectorXd predict(const LinearApproximant& g, const Eigen::VectorXd& x) {
    if (x.size() != g.beta.rows()) {
        throw invalid_input_error("predict: input dimension mismatch");
    }
    return g.beta.transpose() * x + g.alpha;
}

Eigen::VectorXd predict(const QuadraticApproximant& g, const Eigen::VectorXd& x) {
    if (x.size() != g.beta.rows()) {
        throw invalid_input_error("predict: input dimension mismatch");
    }
    Eigen::VectorXd out = g.beta.transpose() * x + g.gamma;
    for (std::size_t k = 0; k < g.q.size(); ++k) {
        out[static_cast<Eigen::Index>(k)] += x.dot(g.q[k] * x);
    }
    return out;
}

Eigen::MatrixXd predict_batch(const LinearApproximant& g, const Eigen::MatrixXd& X) {
    if (X.cols() != g.beta.rows()) {
        throw invalid_input_error("predict_batch: input dimension mismatch");
    }
    Eigen::MatrixXd out = X * g.beta;
    out.rowwise() += g.alpha.transpose();
    return out;
}

Eigen::MatrixXd predict_batch(const QuadraticApproximant& g, const Eigen::MatrixXd& X) {
    if (X.cols() != g.beta.rows()) {
        throw invalid_input_error("predict_batch: input dimension mismatch");
    }
    Eigen::MatrixXd out = X * g.beta;
    out.rowwise() += g.gamma.transpose();
    for (std::size_t k = 0; k < g.q.size(); ++k) {
        out.col(static_cast<Eigen::Index>(k)) +=
            (X * g.q[k]).cwiseProduct(X).rowwise().sum();
    }
    return out;
}

Eigen::MatrixXd predict_batch(const AnyApprox& g, const Eigen::MatrixXd& X) {
    return std::visit([&](const auto& a) { return predict_batch(a, X); }, g);
}

int approx_output_dim(const AnyApprox& g) {
    return std::visit([](const auto& a) { return a.output_dim(); }, g);
}

// --- quadratic feature moments ----------------------------------------------

ZMoments z_moments(const Gaussian& input, const ApproxOptions& opts) {
    const int d = input.dim();
    check_z_budget(d, opts);
    const int D = z_dim(d);
    const Eigen::VectorXd& mu = input.mean;
    const Eigen::MatrixXd sigma = symmetrized(input.cov);

    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(D - d);
    for (int i = 0; i < d; ++i) {
        for (int j = i; j < d; ++j) pairs.emplace_back(i, j);
    }

    auto m2 = [&](int i, int j) { return sigma(i, j) + mu(i) * mu(j); };
    auto spec_of = [&](std::initializer_list<int> idx) {
        const int n = static_cast<int>(idx.size());
        Eigen::VectorXd m(n);
        Eigen::MatrixXd c(n, n);
        int a = 0;
        for (int p : idx) {
            m(a) = mu(p);
            int b = 0;
            for (int q : idx) c(a, b++) = sigma(p, q);
            ++a;
        }
        return MomentSpec(std::move(m), std::move(c));
    };

    ZMoments zm;
    zm.mean_z.resize(D);
    zm.mean_z.head(d) = mu;
    for (int t = 0; t < static_cast<int>(pairs.size()); ++t) {
        zm.mean_z(d + t) = m2(pairs[t].first, pairs[t].second);
    }

    zm.cov_z.resize(D, D);
    zm.cov_z.topLeftCorner(d, d) = sigma;
    for (int a = 0; a < d; ++a) {
        for (int t = 0; t < static_cast<int>(pairs.size()); ++t) {
            const auto [i, j] = pairs[t];
            const double m3 = isserlis_noncentral(spec_of({a, i, j}));
            const double cv = m3 - mu(a) * zm.mean_z(d + t);
            zm.cov_z(a, d + t) = cv;
            zm.cov_z(d + t, a) = cv;
        }
    }
    for (int s = 0; s < static_cast<int>(pairs.size()); ++s) {
        const auto [i, j] = pairs[s];
        for (int t = s; t < static_cast<int>(pairs.size()); ++t) {
            const auto [k, l] = pairs[t];
            const double m4 = isserlis_noncentral(spec_of({i, j, k, l}));
            const double cv = m4 - zm.mean_z(d + s) * zm.mean_z(d + t);
            zm.cov_z(d + s, d + t) = cv;
            zm.cov_z(d + t, d + s) = cv;
        }
    }
    return zm;
}

Eigen::VectorXd cov_z_standard_diagonal(int d) {
    const int D = z_dim(d);
    Eigen::VectorXd diag = Eigen::VectorXd::Ones(D);
    for (int i = 0; i < d; ++i) {
        diag(z_pair_index(d, i, i)) = 2.0;
    }
    return diag;
}

Eigen::VectorXd mean_z_standard(int d) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(z_dim(d));
    for (int i = 0; i < d; ++i) {
        mean(z_pair_index(d, i, i)) = 1.0;
    }
    return mean;
}

// --- preactivation statistics ------------------------------------------------

MlpPreact preactivation_gaussians(const MlpSpec& net, const Gaussian& input) {
    if (net.input_dim() != input.dim()) {
        throw invalid_input_error("preactivation_gaussians: input dimension mismatch");
    }
    MlpPreact p;
    p.cross_x = net.w1 * input.cov;
    p.mean = net.w1 * input.mean + net.b1;
    p.cov = symmetrized(p.cross_x * net.w1.transpose());
    return p;
}

GluPreact preactivation_gaussians(const GluSpec& net, const Gaussian& input) {
    if (net.input_dim() != input.dim()) {
        throw invalid_input_error("preactivation_gaussians: input dimension mismatch");
    }
    GluPreact p;
    p.gate_cross_x = net.w * input.cov;
    p.lin_cross_x = net.v * input.cov;
    p.gate_mean = net.w * input.mean + net.b;
    p.lin_mean = net.v * input.mean + net.c;
    p.gate_var = p.gate_cross_x.cwiseProduct(net.w).rowwise().sum().cwiseMax(0.0);
    p.lin_var = p.lin_cross_x.cwiseProduct(net.v).rowwise().sum().cwiseMax(0.0);
    p.gate_lin = p.gate_cross_x.cwiseProduct(net.v).rowwise().sum();
    return p;
}

// --- per-Gaussian moment engines ---------------------------------------------

namespace {

struct MlpGaussStats {
    MlpPreact pre;
    Eigen::VectorXd act_means;    // h
    Eigen::VectorXd deriv_means;  // h
    Eigen::VectorXd f_mean;       // o
    Eigen::MatrixXd cross_fx;     // o x d, Cov(f, x)
};

MlpGaussStats mlp_gauss_stats(const MlpSpec& net, const Gaussian& input) {
    MlpGaussStats st;
    st.pre = preactivation_gaussians(net, input);
    const int h = net.hidden_dim();
    st.act_means.resize(h);
    st.deriv_means.resize(h);
    for (int i = 0; i < h; ++i) {
        const ScalarGaussian g{st.pre.mean(i), std::sqrt(std::max(st.pre.cov(i, i), 0.0))};
        st.act_means(i) = act_mean(net.act, g);
        st.deriv_means(i) = act_deriv_mean(net.act, g);
    }
    st.f_mean = net.w2 * st.act_means + net.b2;
    // Stein: Cov(f, x) = W2 diag(E[act'(y_i)]) W1 Sigma.
    st.cross_fx = net.w2 * st.deriv_means.asDiagonal() * st.pre.cross_x;
    return st;
}

struct GluGaussStats {
    GluPreact pre;
    Eigen::VectorXd unit_mean;      // h, E[act(y_i) u_i]
    Eigen::MatrixXd unit_cross_x;   // h x d, Cov(act(y_i) u_i, x_j)
};

GluGaussStats glu_gauss_stats(const GluSpec& net, const Gaussian& input) {
    GluGaussStats st;
    st.pre = preactivation_gaussians(net, input);
    const GluPreact& p = st.pre;
    const int h = net.hidden_dim();
    const int d = input.dim();
    const Eigen::VectorXd& mu = input.mean;
    st.unit_mean.resize(h);
    st.unit_cross_x.resize(h, d);
    Eigen::VectorXd my(1), cxy(1);
    Eigen::MatrixXd cyy(1, 1);
    Eigen::VectorXd my2(2), cxy2(2);
    Eigen::MatrixXd cyy2(2, 2);
    for (int i = 0; i < h; ++i) {
        my << p.lin_mean(i);
        cxy << p.gate_lin(i);
        cyy << p.lin_var(i);
        const JointScalarStats s1(p.gate_mean(i), p.gate_var(i), my, cxy, cyy, false);
        st.unit_mean(i) = master_expectation(s1, net.act);
        for (int j = 0; j < d; ++j) {
            my2 << p.lin_mean(i), mu(j);
            cxy2 << p.gate_lin(i), p.gate_cross_x(i, j);
            cyy2 << p.lin_var(i), p.lin_cross_x(i, j), p.lin_cross_x(i, j), input.cov(j, j);
            const JointScalarStats s2(p.gate_mean(i), p.gate_var(i), my2, cxy2, cyy2, false);
            st.unit_cross_x(i, j) = master_expectation(s2, net.act) - st.unit_mean(i) * mu(j);
        }
    }
    return st;
}

// First moment of f and Cov(x, f), the ingredients of a linear fit.
struct LinearStats {
    Eigen::VectorXd f_mean;   // o
    Eigen::MatrixXd cross_xf; // d x o, Cov(x, f)
};

LinearStats linear_stats(const MlpSpec& net, const Gaussian& input) {
    MlpGaussStats st = mlp_gauss_stats(net, input);
    return {std::move(st.f_mean), st.cross_fx.transpose()};
}

LinearStats linear_stats(const GluSpec& net, const Gaussian& input) {
    GluGaussStats st = glu_gauss_stats(net, input);
    if (net.w_out) {
        return {*net.w_out * st.unit_mean, (*net.w_out * st.unit_cross_x).transpose()};
    }
    return {std::move(st.unit_mean), st.unit_cross_x.transpose()};
}

template <class Net>
LinearApproximant linear_fit(const Net& net, const Gaussian& input) {
    LinearStats st = linear_stats(net, input);
    FitMeta meta;
    Eigen::MatrixXd beta = ridge_solve(input.cov, st.cross_xf, &meta.ridge_lambda);
    Eigen::VectorXd alpha = st.f_mean - beta.transpose() * input.mean;
    return LinearApproximant(std::move(alpha), std::move(beta), meta);
}

template <class Net>
LinearApproximant linear_fit(const Net& net, const GaussianMixture& input) {
    const int m = input.size();
    const int d = input.dim();
    const int o = net.output_dim();
    std::vector<Eigen::VectorXd> mu_c(m), f_c(m);
    std::vector<Eigen::MatrixXd> cov_c(m), cross_c(m);
    Eigen::VectorXd mu_bar = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd f_bar = Eigen::VectorXd::Zero(o);
    for (int c = 0; c < m; ++c) {
        const Gaussian& comp = input.components[c];
        LinearStats st = linear_stats(net, comp);
        mu_c[c] = comp.mean;
        cov_c[c] = comp.cov;
        f_c[c] = std::move(st.f_mean);
        cross_c[c] = std::move(st.cross_xf);
        mu_bar += input.weights(c) * mu_c[c];
        f_bar += input.weights(c) * f_c[c];
    }
    const Eigen::MatrixXd cov_x = mixture_total_covariance(mu_c, mu_c, cov_c, input.weights);
    const Eigen::MatrixXd cov_xf = mixture_total_covariance(mu_c, f_c, cross_c, input.weights);
    FitMeta meta;
    Eigen::MatrixXd beta = ridge_solve(cov_x, cov_xf, &meta.ridge_lambda);
    Eigen::VectorXd alpha = f_bar - beta.transpose() * mu_bar;
    return LinearApproximant(std::move(alpha), std::move(beta), meta);
}

// Ingredients of a quadratic fit under one Gaussian component.
struct QuadStats {
    Eigen::VectorXd f_mean;    // o
    Eigen::MatrixXd cross_zf;  // D x o, Cov(z, f)
};

QuadStats quad_stats(const MlpSpec& net, const Gaussian& input, const ZMoments& zm) {
    MlpGaussStats st = mlp_gauss_stats(net, input);
    const int d = input.dim();
    const int h = net.hidden_dim();
    const int D = z_dim(d);
    const int np = D - d;
    const Eigen::MatrixXd sigma = symmetrized(input.cov);

    // Cov(act(y_a), x_i x_j) for every hidden unit and monomial.
    Eigen::MatrixXd cpair(h, np);
    Eigen::VectorXd my(2), cxy(2);
    Eigen::MatrixXd cyy(2, 2);
    int t = 0;
    for (int i = 0; i < d; ++i) {
        for (int j = i; j < d; ++j, ++t) {
            const double m2 = zm.mean_z(d + t);
            for (int a = 0; a < h; ++a) {
                my << input.mean(i), input.mean(j);
                cxy << st.pre.cross_x(a, i), st.pre.cross_x(a, j);
                cyy << sigma(i, i), sigma(i, j), sigma(i, j), sigma(j, j);
                const JointScalarStats s(st.pre.mean(a), std::max(st.pre.cov(a, a), 0.0), my,
                                         cxy, cyy, false);
                cpair(a, t) = master_expectation(s, net.act) - st.act_means(a) * m2;
            }
        }
    }

    QuadStats out;
    out.f_mean = std::move(st.f_mean);
    out.cross_zf.resize(D, net.output_dim());
    out.cross_zf.topRows(d) = st.cross_fx.transpose();
    out.cross_zf.bottomRows(np) = (net.w2 * cpair).transpose();
    return out;
}

QuadStats quad_stats(const GluSpec& net, const Gaussian& input, const ZMoments& zm) {
    GluGaussStats st = glu_gauss_stats(net, input);
    const GluPreact& p = st.pre;
    const int d = input.dim();
    const int h = net.hidden_dim();
    const int D = z_dim(d);
    const int np = D - d;
    const Eigen::VectorXd& mu = input.mean;
    const Eigen::MatrixXd sigma = symmetrized(input.cov);

    // Cov(act(y_i) u_i, x_k x_l) via the three-factor expansion.
    Eigen::MatrixXd cpair(h, np);
    Eigen::VectorXd my(3), cxy(3);
    Eigen::MatrixXd cyy(3, 3);
    int t = 0;
    for (int k = 0; k < d; ++k) {
        for (int l = k; l < d; ++l, ++t) {
            const double m2 = zm.mean_z(d + t);
            for (int i = 0; i < h; ++i) {
                my << p.lin_mean(i), mu(k), mu(l);
                cxy << p.gate_lin(i), p.gate_cross_x(i, k), p.gate_cross_x(i, l);
                cyy << p.lin_var(i), p.lin_cross_x(i, k), p.lin_cross_x(i, l),
                       p.lin_cross_x(i, k), sigma(k, k), sigma(k, l),
                       p.lin_cross_x(i, l), sigma(k, l), sigma(l, l);
                const JointScalarStats s(p.gate_mean(i), p.gate_var(i), my, cxy, cyy, false);
                cpair(i, t) = master_expectation(s, net.act) - st.unit_mean(i) * m2;
            }
        }
    }

    QuadStats out;
    out.cross_zf.resize(D, net.output_dim());
    if (net.w_out) {
        out.f_mean = *net.w_out * st.unit_mean;
        out.cross_zf.topRows(d) = (*net.w_out * st.unit_cross_x).transpose();
        out.cross_zf.bottomRows(np) = (*net.w_out * cpair).transpose();
    } else {
        out.f_mean = st.unit_mean;
        out.cross_zf.topRows(d) = st.unit_cross_x.transpose();
        out.cross_zf.bottomRows(np) = cpair.transpose();
    }
    return out;
}

// Shared regression step: coefficients on z, repacked into (gamma, beta, q).
QuadraticApproximant assemble_quadratic(int d, const Eigen::VectorXd& mean_z,
                                        const Eigen::MatrixXd& cov_z,
                                        const Eigen::MatrixXd& cross_zf,
                                        const Eigen::VectorXd& f_mean) {
    FitMeta meta;
    const Eigen::MatrixXd coef = ridge_solve(cov_z, cross_zf, &meta.ridge_lambda);
    Eigen::VectorXd gamma = f_mean - coef.transpose() * mean_z;
    Eigen::MatrixXd beta = coef.topRows(d);
    const int o = static_cast<int>(f_mean.size());
    std::vector<Eigen::MatrixXd> q(o, Eigen::MatrixXd::Zero(d, d));
    for (int k = 0; k < o; ++k) {
        int t = 0;
        for (int i = 0; i < d; ++i) {
            for (int j = i; j < d; ++j, ++t) {
                const double c = coef(d + t, k);
                if (i == j) {
                    q[k](i, i) = c;
                } else {
                    q[k](i, j) = 0.5 * c;
                    q[k](j, i) = 0.5 * c;
                }
            }
        }
    }
    return QuadraticApproximant(std::move(gamma), std::move(beta), std::move(q), meta);
}

template <class Net>
QuadraticApproximant quad_fit(const Net& net, const Gaussian& input, const ApproxOptions& opts) {
    const ZMoments zm = z_moments_dispatch(input, opts);
    const QuadStats qs = quad_stats(net, input, zm);
    return assemble_quadratic(input.dim(), zm.mean_z, zm.cov_z, qs.cross_zf, qs.f_mean);
}

void check_dims(int net_dim, int input_dim, const char* what) {
    if (net_dim != input_dim) {
        throw invalid_input_error(std::string(what) + ": net expects input dim " +
                                  std::to_string(net_dim) + ", distribution has " +
                                  std::to_string(input_dim));
    }
}

}  // namespace

// --- linear fits --------------------------------------------------------------

LinearApproximant linear_approx(const MlpSpec& net, const Gaussian& input) {
    check_dims(net.input_dim(), input.dim(), "linear_approx");
    return linear_fit(net, input);
}

LinearApproximant linear_approx(const MlpSpec& net, const GaussianMixture& input) {
    check_dims(net.input_dim(), input.dim(), "linear_approx");
    return linear_fit(net, input);
}

LinearApproximant linear_approx(const GluSpec& net, const Gaussian& input) {
    check_dims(net.input_dim(), input.dim(), "linear_approx");
    return linear_fit(net, input);
}

LinearApproximant linear_approx(const GluSpec& net, const GaussianMixture& input) {
    check_dims(net.input_dim(), input.dim(), "linear_approx");
    return linear_fit(net, input);
}

// --- quadratic fits -------------------------------------------------------------

QuadraticApproximant quadratic_approx(const MlpSpec& net, const Gaussian& input,
                                      const ApproxOptions& opts) {
    check_dims(net.input_dim(), input.dim(), "quadratic_approx");
    return quad_fit(net, input, opts);
}

QuadraticApproximant quadratic_approx(const GluSpec& net, const Gaussian& input,
                                      const ApproxOptions& opts) {
    check_dims(net.input_dim(), input.dim(), "quadratic_approx");
    return quad_fit(net, input, opts);
}

QuadraticApproximant quadratic_approx(const MlpSpec& net, const GaussianMixture& input,
                                      const ApproxOptions& opts) {
    check_dims(net.input_dim(), input.dim(), "quadratic_approx");
    const int d = input.dim();
    if (d > opts.mixture_quadratic_max_dim) {
        throw mixture_quadratic_gate_error(
            "closed-form mixture quadratic is gated to input dim <= " +
            std::to_string(opts.mixture_quadratic_max_dim) + " (got " + std::to_string(d) +
            "); fit under a standard input and refine_quadratic instead");
    }
    const int m = input.size();
    const int D = z_dim(d);
    const int o = net.output_dim();
    std::vector<Eigen::VectorXd> mz_c(m), f_c(m);
    std::vector<Eigen::MatrixXd> cz_c(m), cross_c(m);
    Eigen::VectorXd mz_bar = Eigen::VectorXd::Zero(D);
    Eigen::VectorXd f_bar = Eigen::VectorXd::Zero(o);
    for (int c = 0; c < m; ++c) {
        const Gaussian& comp = input.components[c];
        ZMoments zm = z_moments_dispatch(comp, opts);
        QuadStats qs = quad_stats(net, comp, zm);
        mz_c[c] = std::move(zm.mean_z);
        cz_c[c] = std::move(zm.cov_z);
        f_c[c] = std::move(qs.f_mean);
        cross_c[c] = std::move(qs.cross_zf);
        mz_bar += input.weights(c) * mz_c[c];
        f_bar += input.weights(c) * f_c[c];
    }
    const Eigen::MatrixXd cov_z = mixture_total_covariance(mz_c, mz_c, cz_c, input.weights);
    const Eigen::MatrixXd cov_zf = mixture_total_covariance(mz_c, f_c, cross_c, input.weights);
    return assemble_quadratic(d, mz_bar, cov_z, cov_zf, f_bar);
}

// --- stochastic refinement ------------------------------------------------------

double fvu_on_samples(const Eigen::MatrixXd& targets, const Eigen::MatrixXd& predictions) {
    if (targets.rows() != predictions.rows() || targets.cols() != predictions.cols()) {
        throw invalid_input_error("fvu_on_samples: shape mismatch");
    }
    const Eigen::RowVectorXd mean = targets.colwise().mean();
    const double denom = (targets.rowwise() - mean).squaredNorm();
    if (!(denom > 0.0)) {
        throw fvu_undefined_error("FVU undefined: targets have zero variance");
    }
    return (targets - predictions).squaredNorm() / denom;
}

QuadraticApproximant refine_quadratic(const QuadraticApproximant& init, const AnyNet& net,
                                      const GaussianMixture& input, const RefineOptions& opts) {
    const int d = net_input_dim(net);
    const int o = net_output_dim(net);
    if (init.input_dim() != d || init.output_dim() != o) {
        throw invalid_input_error("refine_quadratic: approximant and net shapes disagree");
    }
    check_dims(d, input.dim(), "refine_quadratic");
    if (opts.steps < 0) throw invalid_input_error("refine_quadratic: steps must be >= 0");
    if (opts.batch < 1) throw invalid_input_error("refine_quadratic: batch must be >= 1");
    if (!(opts.step_size > 0.0)) {
        throw invalid_input_error("refine_quadratic: step_size must be positive");
    }

    // Held-out FVU guard: the refined fit is kept only if it does not regress.
    const std::int64_t n_eval = 16384;
    const Eigen::MatrixXd x_eval = sample(input, n_eval, derive_seed(opts.seed, 0xe7a1));
    const Eigen::MatrixXd f_eval = forward_batch(net, x_eval);
    const double fvu_init = fvu_on_samples(f_eval, predict_batch(init, x_eval));

    const int m = input.size();
    std::vector<Eigen::MatrixXd> factors;
    factors.reserve(m);
    for (const Gaussian& g : input.components) factors.push_back(covariance_factor(g.cov));
    std::vector<double> cum(m);
    double acc = 0.0;
    for (int c = 0; c < m; ++c) {
        acc += input.weights(c);
        cum[c] = acc;
    }

    Rng rng(derive_seed(opts.seed, 1));
    Eigen::VectorXd gamma = init.gamma;
    Eigen::MatrixXd beta = init.beta;
    std::vector<Eigen::MatrixXd> q = init.q;
    Eigen::VectorXd gamma_acc = Eigen::VectorXd::Zero(o);
    Eigen::MatrixXd beta_acc = Eigen::MatrixXd::Zero(d, o);
    std::vector<Eigen::MatrixXd> q_acc(o, Eigen::MatrixXd::Zero(d, d));
    std::int64_t n_avg = 0;
    const std::int64_t avg_from = opts.steps / 2;  // tail averaging

    Eigen::MatrixXd X(opts.batch, d);
    Eigen::VectorXd z(d);
    double loss0 = -1.0;
    int high_loss_streak = 0;
    for (std::int64_t step = 0; step < opts.steps; ++step) {
        for (int r = 0; r < opts.batch; ++r) {
            const int c = rng.categorical(cum.data(), m);
            for (int i = 0; i < d; ++i) z(i) = rng.normal();
            X.row(r) = (input.components[c].mean + factors[c] * z).transpose();
        }
        const Eigen::MatrixXd f = forward_batch(net, X);
        Eigen::MatrixXd resid = X * beta;
        resid.rowwise() += gamma.transpose();
        for (int k = 0; k < o; ++k) {
            resid.col(k) += (X * q[k]).cwiseProduct(X).rowwise().sum();
        }
        resid -= f;
        const double loss = resid.squaredNorm() / opts.batch;
        if (loss0 < 0.0) loss0 = loss;
        // Divergence: non-finite loss, or loss above 10x the initial loss for
        // 100 consecutive steps.
        if (loss > 10.0 * (loss0 + 1e-12)) {
            ++high_loss_streak;
        } else {
            high_loss_streak = 0;
        }
        if (!std::isfinite(loss) || high_loss_streak >= 100) {
            throw step_size_error("refine_quadratic: loss diverged at step " +
                                  std::to_string(step) + "; lower step_size");
        }
        const double scale = 2.0 * opts.step_size / opts.batch;
        gamma -= scale * resid.colwise().sum().transpose();
        beta -= scale * (X.transpose() * resid);
        for (int k = 0; k < o; ++k) {
            q[k] -= scale * symmetrized(X.transpose() * (resid.col(k).asDiagonal() * X));
        }
        if (step >= avg_from) {
            gamma_acc += gamma;
            beta_acc += beta;
            for (int k = 0; k < o; ++k) q_acc[k] += q[k];
            ++n_avg;
        }
    }

    FitMeta meta = init.meta;
    meta.refine_kept_init = false;
    QuadraticApproximant refined = init;
    if (n_avg > 0) {
        for (int k = 0; k < o; ++k) q_acc[k] /= static_cast<double>(n_avg);
        refined = QuadraticApproximant(gamma_acc / static_cast<double>(n_avg),
                                       beta_acc / static_cast<double>(n_avg),
                                       std::move(q_acc), meta);
    }
    const double fvu_refined = fvu_on_samples(f_eval, predict_batch(refined, x_eval));
    if (fvu_refined <= fvu_init) {
        refined.meta.holdout_fvu = fvu_refined;
        return refined;
    }
    QuadraticApproximant kept = init;
    kept.meta.refine_kept_init = true;
    kept.meta.holdout_fvu = fvu_init;
    return kept;
}

}  // namespace polyapx
