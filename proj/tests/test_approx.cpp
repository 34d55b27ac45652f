#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "polyapx/approx.hpp"
#include "polyapx/gauss.hpp"
#include "polyapx/nets.hpp"
#include "polyapx/rng.hpp"

using namespace polyapx;

namespace {

Eigen::MatrixXd random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    }
    return m;
}

Eigen::VectorXd random_vector(int n, Rng& rng, double scale = 1.0) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = scale * rng.normal();
    return v;
}

MlpSpec make_mlp(int d, int h, int o, Activation act, std::uint64_t seed) {
    Rng rng(seed);
    const double s1 = 1.0 / std::sqrt(double(d));
    const double s2 = 1.0 / std::sqrt(double(h));
    return MlpSpec(random_matrix(h, d, rng, s1), random_vector(h, rng, 0.3),
                   random_matrix(o, h, rng, s2), random_vector(o, rng, 0.3), act);
}

GluSpec make_glu(int d, int h, Activation act, std::uint64_t seed,
                 std::optional<Eigen::MatrixXd> w_out = std::nullopt) {
    Rng rng(seed);
    const double s = 1.0 / std::sqrt(double(d));
    return GluSpec(random_matrix(h, d, rng, s), random_matrix(h, d, rng, s),
                   random_vector(h, rng, 0.3), random_vector(h, rng, 0.3), act,
                   std::move(w_out));
}

Gaussian random_gaussian(int d, std::uint64_t seed) {
    Rng rng(seed);
    const Eigen::MatrixXd a = random_matrix(d, d, rng);
    return Gaussian(random_vector(d, rng, 0.5),
                    a * a.transpose() / d + Eigen::MatrixXd::Identity(d, d));
}

Gaussian standard_gaussian(int d) {
    return Gaussian(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d));
}

GaussianMixture two_component_mixture(int d, double spread, std::uint64_t seed) {
    Rng rng(seed);
    const Eigen::VectorXd dir = random_vector(d, rng).normalized();
    const Eigen::MatrixXd a = random_matrix(d, d, rng);
    const Eigen::MatrixXd b = random_matrix(d, d, rng);
    Eigen::VectorXd w(2);
    w << 0.4, 0.6;
    return GaussianMixture(
        w, {Gaussian(spread * dir, 0.25 * a * a.transpose() / d +
                                       0.5 * Eigen::MatrixXd::Identity(d, d)),
            Gaussian(-spread * dir, 0.25 * b * b.transpose() / d +
                                        0.5 * Eigen::MatrixXd::Identity(d, d))});
}

// Quadratic monomial features in the library's z order, built independently.
Eigen::MatrixXd z_features(const Eigen::MatrixXd& X) {
    return oracle::quad_design(X).rightCols(oracle::quad_design(X).cols() - 1);
}

// Full coefficient column [gamma, beta, pair coefficients] of one output,
// unpacking q with the doubled off-diagonal convention.
Eigen::VectorXd coefficient_column(const QuadraticApproximant& g, int k) {
    const int d = g.input_dim();
    Eigen::VectorXd c(1 + z_dim(d));
    c(0) = g.gamma(k);
    c.segment(1, d) = g.beta.col(k);
    for (int i = 0; i < d; ++i) {
        for (int j = i; j < d; ++j) {
            c(1 + z_pair_index(d, i, j)) = (i == j) ? g.q[k](i, i) : 2.0 * g.q[k](i, j);
        }
    }
    return c;
}

double max_coeff_gap(const QuadraticApproximant& a, const QuadraticApproximant& b) {
    double gap = (a.gamma - b.gamma).cwiseAbs().maxCoeff();
    gap = std::max(gap, (a.beta - b.beta).cwiseAbs().maxCoeff());
    for (size_t k = 0; k < a.q.size(); ++k) {
        gap = std::max(gap, (a.q[k] - b.q[k]).cwiseAbs().maxCoeff());
    }
    return gap;
}

}  // namespace

TEST_CASE("pair index covers the upper triangle in order") {
    const int d = 3;
    CHECK(z_dim(d) == 9);
    int expected = d;
    for (int i = 0; i < d; ++i) {
        for (int j = i; j < d; ++j) CHECK(z_pair_index(d, i, j) == expected++);
    }
}

TEST_CASE("mlp preactivation statistics") {
    const int d = 3;
    const Gaussian input = random_gaussian(d, 9001);

    // Identity first layer passes the input moments through.
    const MlpSpec pass(Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d),
                       Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d),
                       Activation::relu);
    const MlpPreact p = preactivation_gaussians(pass, input);
    CHECK((p.mean - input.mean).norm() < 1e-14);
    CHECK((p.cov - input.cov).norm() < 1e-14);
    CHECK((p.cross_x - input.cov).norm() < 1e-14);

    // A bias shift moves only the mean.
    Eigen::VectorXd shift(d);
    shift << 1.0, -2.0, 0.5;
    const MlpSpec shifted(Eigen::MatrixXd::Identity(d, d), shift,
                          Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d),
                          Activation::relu);
    const MlpPreact ps = preactivation_gaussians(shifted, input);
    CHECK((ps.mean - (input.mean + shift)).norm() < 1e-14);
    CHECK((ps.cov - p.cov).norm() == 0.0);
    CHECK((ps.cross_x - p.cross_x).norm() == 0.0);
}

TEST_CASE("mlp preactivation statistics match sampling") {
    const int d = 4, h = 6;
    const MlpSpec net = make_mlp(d, h, 2, Activation::relu, 42);
    const Gaussian input = random_gaussian(d, 43);
    const MlpPreact p = preactivation_gaussians(net, input);

    const std::int64_t n = 1'000'000;
    const Eigen::MatrixXd X = sample(input, n, 7);
    const Eigen::MatrixXd Y = (net.w1 * X.transpose()).colwise() + net.b1;  // h x n
    const Eigen::VectorXd my = Y.rowwise().mean();
    const Eigen::MatrixXd Yc = Y.colwise() - my;
    const Eigen::MatrixXd Xc = X.rowwise() - X.colwise().mean();
    const Eigen::MatrixXd cov_emp = Yc * Yc.transpose() / double(n - 1);
    const Eigen::MatrixXd cross_emp = Yc * Xc / double(n - 1);

    CHECK((p.mean - my).cwiseAbs().maxCoeff() < 0.01);
    CHECK((p.cov - cov_emp).cwiseAbs().maxCoeff() < 0.02);
    CHECK((p.cross_x - cross_emp).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("linear fit of an affine network is exact") {
    const int d = 4, h = 5, o = 3;
    const MlpSpec net = make_mlp(d, h, o, Activation::identity, 101);
    const Gaussian input = random_gaussian(d, 102);
    const LinearApproximant g = linear_approx(net, input);

    const Eigen::MatrixXd beta_exact = (net.w2 * net.w1).transpose();
    const Eigen::VectorXd alpha_exact = net.w2 * net.b1 + net.b2;
    CHECK((g.beta - beta_exact).cwiseAbs().maxCoeff() < 1e-7);
    CHECK((g.alpha - alpha_exact).cwiseAbs().maxCoeff() < 1e-7);

    const Eigen::MatrixXd X = sample(input, 100'000, 3);
    CHECK(fvu_on_samples(forward_batch(net, X), predict_batch(g, X)) < 1e-12);
}

TEST_CASE("linear fit matches empirical least squares") {
    const int d = 4, h = 16, o = 3;
    const MlpSpec net = make_mlp(d, h, o, Activation::relu, 111);
    const Gaussian input = standard_gaussian(d);
    const LinearApproximant g = linear_approx(net, input);

    const Eigen::MatrixXd X = sample(input, 1'000'000, 5);
    const auto fit = oracle::ols_affine(X, forward_batch(net, X));
    CHECK((g.beta - fit.beta).cwiseAbs().maxCoeff() < 1e-2);
    CHECK((g.alpha - fit.alpha).cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("glu linear fit matches empirical least squares") {
    const int d = 4, h = 6;
    const GluSpec net = make_glu(d, h, Activation::relu, 121);
    const Gaussian input = random_gaussian(d, 122);
    const LinearApproximant g = linear_approx(net, input);

    const Eigen::MatrixXd X = sample(input, 1'000'000, 9);
    const auto fit = oracle::ols_affine(X, forward_batch(net, X));
    CHECK((g.beta - fit.beta).cwiseAbs().maxCoeff() < 1e-2);
    CHECK((g.alpha - fit.alpha).cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("mixture-matched linear fit beats component fits on the mixture") {
    const int d = 4, h = 12, o = 2;
    const MlpSpec net = make_mlp(d, h, o, Activation::relu, 131);
    const GaussianMixture mix = two_component_mixture(d, 2.5, 132);

    const LinearApproximant g_mix = linear_approx(net, mix);
    const LinearApproximant g0 = linear_approx(net, mix.components[0]);
    const LinearApproximant g1 = linear_approx(net, mix.components[1]);

    const Eigen::MatrixXd X = sample(mix, 200'000, 11);
    const Eigen::MatrixXd F = forward_batch(net, X);
    const double f_mix = fvu_on_samples(F, predict_batch(g_mix, X));
    CHECK(f_mix <= fvu_on_samples(F, predict_batch(g0, X)) + 1e-3);
    CHECK(f_mix <= fvu_on_samples(F, predict_batch(g1, X)) + 1e-3);
}

TEST_CASE("bilinear glu has no linear component under a symmetric input") {
    const int d = 3, h = 4;
    Rng rng(141);
    const Eigen::MatrixXd w = random_matrix(h, d, rng);
    const Eigen::MatrixXd v = random_matrix(h, d, rng);
    const GluSpec net(w, v, Eigen::VectorXd::Zero(h), Eigen::VectorXd::Zero(h),
                      Activation::identity);
    const LinearApproximant g = linear_approx(net, standard_gaussian(d));

    CHECK(g.beta.cwiseAbs().maxCoeff() < 1e-10);
    for (int i = 0; i < h; ++i) {
        CHECK(g.alpha(i) == doctest::Approx(w.row(i).dot(v.row(i))).epsilon(1e-10));
    }
}

TEST_CASE("large linear-path offset reduces the glu to a scaled mlp") {
    const int d = 3, h = 4;
    Rng rng(151);
    const double c = 1e3;
    const Eigen::MatrixXd w = random_matrix(h, d, rng);
    const Eigen::MatrixXd v = random_matrix(h, d, rng);
    const Eigen::VectorXd b = random_vector(h, rng, 0.3);
    const GluSpec glu(w, v, b, Eigen::VectorXd::Constant(h, c), Activation::relu);
    const MlpSpec mlp(w, b, c * Eigen::MatrixXd::Identity(h, h), Eigen::VectorXd::Zero(h),
                      Activation::relu);

    const Gaussian input = random_gaussian(d, 152);
    const LinearApproximant g_glu = linear_approx(glu, input);
    const LinearApproximant g_mlp = linear_approx(mlp, input);
    CHECK((g_glu.beta - g_mlp.beta).norm() / g_mlp.beta.norm() < 1e-2);
}

TEST_CASE("quadratic feature moments in one dimension") {
    const double mu = 0.7, sigma2 = 1.9;
    Eigen::VectorXd mean(1);
    mean << mu;
    const Gaussian input(mean, sigma2 * Eigen::MatrixXd::Identity(1, 1));
    const ZMoments zm = z_moments(input);

    REQUIRE(zm.mean_z.size() == 2);
    CHECK(zm.mean_z(0) == doctest::Approx(mu).epsilon(1e-13));
    CHECK(zm.mean_z(1) == doctest::Approx(mu * mu + sigma2).epsilon(1e-13));
    CHECK(zm.cov_z(0, 0) == doctest::Approx(sigma2).epsilon(1e-13));
    CHECK(zm.cov_z(0, 1) == doctest::Approx(2.0 * mu * sigma2).epsilon(1e-13));
    CHECK(zm.cov_z(1, 1) ==
          doctest::Approx(2.0 * sigma2 * sigma2 + 4.0 * mu * mu * sigma2).epsilon(1e-13));
}

TEST_CASE("standard-normal feature moments follow the diagonal pattern") {
    for (int d : {1, 2, 4, 6}) {
        const ZMoments zm = z_moments(standard_gaussian(d));
        const Eigen::VectorXd diag = cov_z_standard_diagonal(d);
        const Eigen::VectorXd mean = mean_z_standard(d);
        REQUIRE(diag.size() == z_dim(d));
        CHECK((zm.mean_z - mean).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((zm.cov_z.diagonal() - diag).cwiseAbs().maxCoeff() < 1e-12);
        Eigen::MatrixXd off = zm.cov_z;
        off.diagonal().setZero();
        CHECK(off.cwiseAbs().maxCoeff() < 1e-12);
    }

    const Eigen::VectorXd d2 = cov_z_standard_diagonal(2);
    Eigen::VectorXd expected(5);
    expected << 1.0, 1.0, 2.0, 1.0, 2.0;
    CHECK((d2 - expected).norm() == 0.0);

    const Eigen::VectorXd d1 = cov_z_standard_diagonal(1);
    CHECK(d1(0) == 1.0);
    CHECK(d1(1) == 2.0);
}

TEST_CASE("quadratic feature moments match sampling") {
    const int d = 4;
    const Gaussian input = random_gaussian(d, 161);
    const ZMoments zm = z_moments(input);
    const int D = z_dim(d);

    // Chunked estimates give a standard error for every entry.
    const int chunks = 100, per_chunk = 10'000;
    Eigen::MatrixXd mean_sum = Eigen::MatrixXd::Zero(D, 1), mean_sq = mean_sum;
    Eigen::MatrixXd cov_sum = Eigen::MatrixXd::Zero(D, D), cov_sq = cov_sum;
    for (int c = 0; c < chunks; ++c) {
        const Eigen::MatrixXd Z = z_features(sample(input, per_chunk, 500 + c));
        const Eigen::RowVectorXd m = Z.colwise().mean();
        const Eigen::MatrixXd Zc = Z.rowwise() - m;
        const Eigen::MatrixXd cov = Zc.transpose() * Zc / double(per_chunk - 1);
        mean_sum += m.transpose();
        mean_sq += m.transpose().cwiseAbs2();
        cov_sum += cov;
        cov_sq += cov.cwiseAbs2();
    }
    const Eigen::MatrixXd mean_hat = mean_sum / chunks;
    const Eigen::MatrixXd mean_se =
        ((mean_sq / chunks - mean_hat.cwiseAbs2()) / (chunks - 1)).cwiseMax(0.0).cwiseSqrt();
    const Eigen::MatrixXd cov_hat = cov_sum / chunks;
    const Eigen::MatrixXd cov_se =
        ((cov_sq / chunks - cov_hat.cwiseAbs2()) / (chunks - 1)).cwiseMax(0.0).cwiseSqrt();

    CHECK(((zm.mean_z - mean_hat).cwiseAbs() - 3.0 * mean_se.array().matrix())
              .maxCoeff() < 1e-10);
    CHECK(((zm.cov_z - cov_hat).cwiseAbs() - 3.0 * cov_se.array().matrix()).maxCoeff() <
          1e-10);
}

TEST_CASE("quadratic fit of an affine network degenerates to the linear one") {
    const int d = 3, h = 5, o = 2;
    const MlpSpec net = make_mlp(d, h, o, Activation::identity, 171);
    const Gaussian input = random_gaussian(d, 172);
    const QuadraticApproximant q = quadratic_approx(net, input);
    const LinearApproximant lin = linear_approx(net, input);

    for (int k = 0; k < o; ++k) CHECK(q.q[k].cwiseAbs().maxCoeff() < 1e-7);
    CHECK((q.beta - lin.beta).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((q.gamma - lin.alpha).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("quadratic fit matches empirical least squares on features") {
    const int d = 2, h = 8, o = 2;
    const MlpSpec net = make_mlp(d, h, o, Activation::relu, 181);
    const Gaussian input = standard_gaussian(d);
    const QuadraticApproximant g = quadratic_approx(net, input);

    const Eigen::MatrixXd X = sample(input, 1'000'000, 13);
    const Eigen::MatrixXd Z = oracle::quad_design(X);
    const Eigen::MatrixXd C =
        (Z.transpose() * Z).ldlt().solve(Z.transpose() * forward_batch(net, X));
    for (int k = 0; k < o; ++k) {
        CHECK((coefficient_column(g, k) - C.col(k)).cwiseAbs().maxCoeff() < 1e-2);
    }
}

TEST_CASE("glu quadratic fit matches empirical least squares on features") {
    const int d = 3, h = 5;
    const GluSpec net = make_glu(d, h, Activation::relu, 191);
    const Gaussian input = random_gaussian(d, 192);
    const QuadraticApproximant g = quadratic_approx(net, input);

    const Eigen::MatrixXd X = sample(input, 1'000'000, 17);
    const Eigen::MatrixXd Z = oracle::quad_design(X);
    const Eigen::MatrixXd C =
        (Z.transpose() * Z).ldlt().solve(Z.transpose() * forward_batch(net, X));
    for (int k = 0; k < net.output_dim(); ++k) {
        CHECK((coefficient_column(g, k) - C.col(k)).cwiseAbs().maxCoeff() < 2e-2);
    }
}

TEST_CASE("mixture quadratic fit matches empirical least squares on features") {
    const int d = 3, h = 6, o = 2;
    const MlpSpec net = make_mlp(d, h, o, Activation::relu, 201);
    const GaussianMixture mix = two_component_mixture(d, 1.5, 202);
    const QuadraticApproximant g = quadratic_approx(net, mix);

    const Eigen::MatrixXd X = sample(mix, 1'000'000, 19);
    const Eigen::MatrixXd Z = oracle::quad_design(X);
    const Eigen::MatrixXd C =
        (Z.transpose() * Z).ldlt().solve(Z.transpose() * forward_batch(net, X));
    for (int k = 0; k < o; ++k) {
        CHECK((coefficient_column(g, k) - C.col(k)).cwiseAbs().maxCoeff() < 2e-2);
    }
}

TEST_CASE("bilinear glu is represented exactly by a quadratic") {
    const int d = 3, h = 4, o = 2;
    Rng rng(211);
    const Eigen::MatrixXd w = random_matrix(h, d, rng);
    const Eigen::MatrixXd v = random_matrix(h, d, rng);
    const Eigen::VectorXd b = random_vector(h, rng);
    const Eigen::VectorXd c = random_vector(h, rng);
    const Eigen::MatrixXd w_out = random_matrix(o, h, rng);
    const GluSpec net(w, v, b, c, Activation::identity, w_out);

    const Gaussian input = random_gaussian(d, 212);
    const QuadraticApproximant g = quadratic_approx(net, input);

    for (int k = 0; k < o; ++k) {
        Eigen::MatrixXd q_exact = Eigen::MatrixXd::Zero(d, d);
        Eigen::VectorXd beta_exact = Eigen::VectorXd::Zero(d);
        double gamma_exact = 0.0;
        for (int i = 0; i < h; ++i) {
            const Eigen::VectorXd wi = w.row(i).transpose();
            const Eigen::VectorXd vi = v.row(i).transpose();
            q_exact += w_out(k, i) * 0.5 * (wi * vi.transpose() + vi * wi.transpose());
            beta_exact += w_out(k, i) * (c(i) * wi + b(i) * vi);
            gamma_exact += w_out(k, i) * b(i) * c(i);
        }
        CHECK((g.q[k] - q_exact).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((g.beta.col(k) - beta_exact).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(g.gamma(k) == doctest::Approx(gamma_exact).epsilon(1e-8));
    }

    const Eigen::MatrixXd X = sample(input, 200'000, 23);
    CHECK(fvu_on_samples(forward_batch(net, X), predict_batch(g, X)) < 1e-8);
}

TEST_CASE("zero-weight glu reduces to its constant term") {
    const int d = 2, h = 3;
    Rng rng(221);
    const Eigen::VectorXd b = random_vector(h, rng);
    const Eigen::VectorXd c = random_vector(h, rng);
    const GluSpec net(Eigen::MatrixXd::Zero(h, d), Eigen::MatrixXd::Zero(h, d), b, c,
                      Activation::relu);
    const QuadraticApproximant g = quadratic_approx(net, random_gaussian(d, 222));

    for (int i = 0; i < h; ++i) {
        CHECK(g.gamma(i) ==
              doctest::Approx(activation_value(Activation::relu, b(i)) * c(i)).epsilon(1e-10));
        CHECK(g.q[i].cwiseAbs().maxCoeff() < 1e-10);
    }
    CHECK(g.beta.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("fitted residuals are uncorrelated with the features") {
    const int d = 3, h = 10, o = 2;
    const MlpSpec net = make_mlp(d, h, o, Activation::gelu, 231);

    const std::int64_t n = 1'000'000;
    const double bound = 4.0 / std::sqrt(double(n));

    // Linear fit on a mixture, residual vs x.
    const GaussianMixture mix = two_component_mixture(d, 1.5, 232);
    const LinearApproximant lin = linear_approx(net, mix);
    Eigen::MatrixXd X = sample(mix, n, 29);
    Eigen::MatrixXd R = forward_batch(net, X) - predict_batch(lin, X);
    Eigen::MatrixXd Xc = X.rowwise() - X.colwise().mean();
    Eigen::MatrixXd Rc = R.rowwise() - R.colwise().mean();
    for (int j = 0; j < d; ++j) {
        for (int k = 0; k < o; ++k) {
            const double corr = (Xc.col(j).dot(Rc.col(k)) / double(n)) /
                                std::sqrt((Xc.col(j).squaredNorm() / n) *
                                          (Rc.col(k).squaredNorm() / n));
            CHECK(std::abs(corr) < bound);
        }
    }

    // Quadratic fit on a Gaussian, residual vs every z feature.
    const Gaussian input = random_gaussian(d, 233);
    const QuadraticApproximant quad = quadratic_approx(net, input);
    X = sample(input, n, 31);
    const Eigen::MatrixXd Z = z_features(X);
    R = forward_batch(net, X) - predict_batch(quad, X);
    const Eigen::MatrixXd Zc = Z.rowwise() - Z.colwise().mean();
    Rc = R.rowwise() - R.colwise().mean();
    for (int j = 0; j < Z.cols(); ++j) {
        for (int k = 0; k < o; ++k) {
            const double corr = (Zc.col(j).dot(Rc.col(k)) / double(n)) /
                                std::sqrt((Zc.col(j).squaredNorm() / n) *
                                          (Rc.col(k).squaredNorm() / n));
            CHECK(std::abs(corr) < bound);
        }
    }
}

TEST_CASE("gaussian linear fit equals the derivative-mean form") {
    const int d = 4, h = 8, o = 3;
    const MlpSpec net = make_mlp(d, h, o, Activation::gelu, 241);
    const Gaussian input = random_gaussian(d, 242);
    const LinearApproximant g = linear_approx(net, input);

    const MlpPreact p = preactivation_gaussians(net, input);
    Eigen::VectorXd deriv(h);
    for (int i = 0; i < h; ++i) {
        deriv(i) = act_deriv_mean(net.act,
                                  {p.mean(i), std::sqrt(std::max(p.cov(i, i), 0.0))});
    }
    const Eigen::MatrixXd direct = net.w1.transpose() * deriv.asDiagonal() * net.w2.transpose();
    CHECK((g.beta - direct).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("constant output shifts move only the constant coefficients") {
    const int d = 3, h = 6, o = 2;
    const MlpSpec net = make_mlp(d, h, o, Activation::relu, 251);
    Eigen::VectorXd c(o);
    c << 2.5, -1.0;
    MlpSpec shifted = net;
    shifted.b2 += c;

    const Gaussian input = random_gaussian(d, 252);
    const LinearApproximant l0 = linear_approx(net, input);
    const LinearApproximant l1 = linear_approx(shifted, input);
    CHECK((l0.beta - l1.beta).norm() == 0.0);
    CHECK((l1.alpha - l0.alpha - c).cwiseAbs().maxCoeff() < 1e-12);

    const QuadraticApproximant q0 = quadratic_approx(net, input);
    const QuadraticApproximant q1 = quadratic_approx(shifted, input);
    CHECK((q0.beta - q1.beta).norm() == 0.0);
    for (int k = 0; k < o; ++k) CHECK((q0.q[k] - q1.q[k]).norm() == 0.0);
    CHECK((q1.gamma - q0.gamma - c).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("hypothesis-class nesting and exact symmetry of the fits") {
    const int d = 4, h = 10, o = 2;
    const MlpSpec net = make_mlp(d, h, o, Activation::relu, 261);

    const Gaussian input = random_gaussian(d, 262);
    const GaussianMixture mix = two_component_mixture(d, 1.2, 263);

    const Eigen::MatrixXd Xg = sample(input, 200'000, 37);
    const Eigen::MatrixXd Fg = forward_batch(net, Xg);
    const QuadraticApproximant qg = quadratic_approx(net, input);
    CHECK(fvu_on_samples(Fg, predict_batch(qg, Xg)) <=
          fvu_on_samples(Fg, predict_batch(linear_approx(net, input), Xg)) + 1e-6);

    const Eigen::MatrixXd Xm = sample(mix, 200'000, 38);
    const Eigen::MatrixXd Fm = forward_batch(net, Xm);
    const QuadraticApproximant qm = quadratic_approx(net, mix);
    CHECK(fvu_on_samples(Fm, predict_batch(qm, Xm)) <=
          fvu_on_samples(Fm, predict_batch(linear_approx(net, mix), Xm)) + 1e-6);

    for (int k = 0; k < o; ++k) {
        CHECK((qg.q[k] - qg.q[k].transpose()).cwiseAbs().maxCoeff() == 0.0);
        CHECK((qm.q[k] - qm.q[k].transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("refinement at the optimum stays put") {
    const int d = 3, h = 8, o = 2;
    const MlpSpec net = make_mlp(d, h, o, Activation::relu, 271);
    const GaussianMixture mix = two_component_mixture(d, 1.0, 272);
    const QuadraticApproximant init = quadratic_approx(net, mix);

    RefineOptions opts;
    opts.steps = 10'000;
    opts.batch = 256;
    opts.seed = 77;
    opts.step_size = 3e-4;
    const QuadraticApproximant refined = refine_quadratic(init, net, mix, opts);
    CHECK(max_coeff_gap(refined, init) < 1e-3);
}

TEST_CASE("refinement from the wrong input distribution reaches the mixture optimum") {
    const int d = 4, h = 10, o = 2;
    const MlpSpec net = make_mlp(d, h, o, Activation::relu, 281);
    const GaussianMixture mix = two_component_mixture(d, 1.0, 282);

    const QuadraticApproximant closed = quadratic_approx(net, mix);
    const QuadraticApproximant init = quadratic_approx(net, standard_gaussian(d));

    RefineOptions opts;
    opts.steps = 40'000;
    opts.batch = 256;
    opts.seed = 88;
    opts.step_size = 1e-3;
    const QuadraticApproximant refined = refine_quadratic(init, net, mix, opts);
    CHECK(max_coeff_gap(refined, closed) < 5e-2);

    // The held-out check never lets refinement end worse than its start.
    const Eigen::MatrixXd X = sample(mix, 100'000, 41);
    const Eigen::MatrixXd F = forward_batch(net, X);
    CHECK(fvu_on_samples(F, predict_batch(refined, X)) <=
          fvu_on_samples(F, predict_batch(init, X)) + 2e-3);
}

TEST_CASE("refinement is deterministic in the seed") {
    const int d = 3, h = 6, o = 2;
    const MlpSpec net = make_mlp(d, h, o, Activation::relu, 291);
    const GaussianMixture mix = two_component_mixture(d, 1.0, 292);
    const QuadraticApproximant init = quadratic_approx(net, standard_gaussian(d));

    RefineOptions opts;
    opts.steps = 2000;
    opts.seed = 123;
    const QuadraticApproximant a = refine_quadratic(init, net, mix, opts);
    const QuadraticApproximant b = refine_quadratic(init, net, mix, opts);
    CHECK(max_coeff_gap(a, b) == 0.0);

    opts.seed = 124;
    const QuadraticApproximant c = refine_quadratic(init, net, mix, opts);
    CHECK(max_coeff_gap(a, c) != 0.0);
}

TEST_CASE("oversized step sizes are reported as such") {
    const int d = 3, h = 6, o = 2;
    const MlpSpec net = make_mlp(d, h, o, Activation::relu, 301);
    const GaussianMixture mix = two_component_mixture(d, 1.0, 302);
    const QuadraticApproximant init = quadratic_approx(net, standard_gaussian(d));

    RefineOptions opts;
    opts.steps = 5000;
    opts.seed = 9;
    opts.step_size = 1e3;
    CHECK_THROWS_AS(refine_quadratic(init, net, mix, opts), step_size_error);
}

TEST_CASE("dimension gates and budgets") {
    // Closed-form mixture quadratics are rejected above the dimension gate.
    const int d = 6;
    const MlpSpec net = make_mlp(d, 4, 2, Activation::relu, 311);
    const GaussianMixture mix = two_component_mixture(d, 1.0, 312);
    ApproxOptions opts;
    opts.mixture_quadratic_max_dim = 4;
    CHECK_THROWS_AS(quadratic_approx(net, mix, opts), mixture_quadratic_gate_error);
    CHECK_THROWS_AS(quadratic_approx(net, mix, opts), resource_error);

    // The feature budget names the offending dimension.
    ApproxOptions tight;
    tight.max_z_dim = 10;
    try {
        z_moments(random_gaussian(4, 313), tight);
        FAIL("expected resource_error");
    } catch (const resource_error& e) {
        CHECK(std::string(e.what()).find("14") != std::string::npos);
    }
    CHECK_THROWS_AS(quadratic_approx(net, random_gaussian(d, 314), tight), resource_error);
}

TEST_CASE("approximant construction and prediction validation") {
    CHECK_THROWS_AS(LinearApproximant(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(3, 3)),
                    invalid_input_error);

    std::vector<Eigen::MatrixXd> q = {Eigen::MatrixXd::Zero(2, 2)};
    CHECK_THROWS_AS(QuadraticApproximant(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(2, 2),
                                         q),
                    invalid_input_error);

    Eigen::MatrixXd asym(2, 2);
    asym << 0.0, 1.0, -1.0, 0.0;
    std::vector<Eigen::MatrixXd> bad = {asym};
    CHECK_THROWS_AS(QuadraticApproximant(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Zero(2, 1),
                                         bad),
                    invalid_input_error);

    const LinearApproximant g(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(3, 2));
    CHECK_THROWS_AS(predict(g, Eigen::VectorXd::Zero(4)), invalid_input_error);
    CHECK_THROWS_AS(predict_batch(g, Eigen::MatrixXd::Zero(5, 4)), invalid_input_error);
}

TEST_CASE("fvu is undefined for constant targets") {
    const Eigen::MatrixXd constant = Eigen::MatrixXd::Ones(100, 2);
    CHECK_THROWS_AS(fvu_on_samples(constant, constant), fvu_undefined_error);
}
