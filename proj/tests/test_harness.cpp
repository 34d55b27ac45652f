#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "polyapx/analysis.hpp"
#include "polyapx/harness.hpp"
#include "polyapx/rng.hpp"

using namespace polyapx;

namespace {

bool same_net(const MlpSpec& a, const MlpSpec& b) {
    return (a.w1 - b.w1).norm() == 0.0 && (a.b1 - b.b1).norm() == 0.0 &&
           (a.w2 - b.w2).norm() == 0.0 && (a.b2 - b.b2).norm() == 0.0;
}

}  // namespace

TEST_CASE("synthetic task geometry") {
    const int d = 6, classes = 3;
    TaskGenOptions opts;
    opts.separation = 4.0;
    opts.cond_max = 10.0;
    const TaskSpec task = make_synthetic_task(d, classes, 99, opts);

    REQUIRE(task.mixture.size() == classes);
    REQUIRE(task.mixture.dim() == d);
    CHECK((task.mixture.weights -
           Eigen::VectorXd::Constant(classes, 1.0 / classes))
              .cwiseAbs()
              .maxCoeff() < 1e-12);

    // Every pair of class means sits at the requested separation.
    for (int a = 0; a < classes; ++a) {
        for (int b = a + 1; b < classes; ++b) {
            const double dist =
                (task.mixture.components[a].mean - task.mixture.components[b].mean).norm();
            CHECK(dist == doctest::Approx(opts.separation).epsilon(1e-10));
        }
    }

    // Covariances respect the condition-number cap and have unit mean eigenvalue.
    for (const Gaussian& comp : task.mixture.components) {
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(comp.cov);
        const Eigen::VectorXd ev = es.eigenvalues();
        CHECK(ev.minCoeff() > 0.0);
        CHECK(ev.maxCoeff() / ev.minCoeff() <= opts.cond_max * (1.0 + 1e-10));
        CHECK(ev.mean() == doctest::Approx(1.0).epsilon(1e-10));
    }

    // Deterministic in the seed.
    const TaskSpec again = make_synthetic_task(d, classes, 99, opts);
    CHECK((task.mixture.components[0].mean - again.mixture.components[0].mean).norm() == 0.0);
    CHECK((task.mixture.components[0].cov - again.mixture.components[0].cov).norm() == 0.0);

    CHECK_THROWS_AS(make_synthetic_task(2, 3, 1), invalid_input_error);
    CHECK_THROWS_AS(make_synthetic_task(4, 1, 1), invalid_input_error);
}

TEST_CASE("class covariance differences stay inside the mean span") {
    const int d = 8, classes = 4;
    TaskGenOptions opts;
    opts.separation = 3.0;
    opts.cov_mix = 0.6;
    const TaskSpec task = make_synthetic_task(d, classes, 123, opts);

    // Basis of the span of centered means, and its orthogonal complement.
    Eigen::MatrixXd centered(d, classes);
    for (int c = 0; c < classes; ++c) centered.col(c) = task.mixture.components[c].mean;
    centered.colwise() -= centered.rowwise().mean().eval();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(centered);
    const Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd complement = q.rightCols(d - (classes - 1));

    // Projected onto the complement, all class conditionals coincide.
    const Eigen::MatrixXd base =
        complement.transpose() * task.mixture.components[0].cov * complement;
    for (int c = 1; c < classes; ++c) {
        const Eigen::MatrixXd other =
            complement.transpose() * task.mixture.components[c].cov * complement;
        CHECK((other - base).cwiseAbs().maxCoeff() < 1e-12);
    }

    // The differences themselves are nonzero and every covariance stays a
    // valid unit-mean-eigenvalue PSD matrix.
    CHECK((task.mixture.components[0].cov - task.mixture.components[1].cov)
              .cwiseAbs()
              .maxCoeff() > 1e-3);
    for (const Gaussian& comp : task.mixture.components) {
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(comp.cov);
        CHECK(es.eigenvalues().minCoeff() > 0.0);
        CHECK(es.eigenvalues().mean() == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("mixture estimation recovers known parameters") {
    const TaskSpec task = make_synthetic_task(4, 2, 7);
    std::vector<int> labels;
    const Eigen::MatrixXd X = sample(task.mixture, 100'000, 21, &labels);
    const GaussianMixture fit = fit_mixture_from_data(X, labels);

    REQUIRE(fit.size() == 2);
    for (int c = 0; c < 2; ++c) {
        CHECK((fit.components[c].mean - task.mixture.components[c].mean)
                  .cwiseAbs()
                  .maxCoeff() < 0.02);
        CHECK((fit.components[c].cov - task.mixture.components[c].cov)
                  .cwiseAbs()
                  .maxCoeff() < 0.05);
        CHECK(fit.weights(c) == doctest::Approx(0.5).epsilon(0.02));
    }
}

TEST_CASE("mixture estimation edge cases") {
    Eigen::MatrixXd X(5, 3);
    X << 1.0, 2.0, 3.0,  //
        1.1, 2.1, 3.1,   //
        0.9, 1.9, 2.9,   //
        1.2, 2.2, 3.2,   //
        0.8, 1.8, 2.8;

    // Single class: one component with weight 1.
    const GaussianMixture single = fit_mixture_from_data(X, {0, 0, 0, 0, 0});
    REQUIRE(single.size() == 1);
    CHECK(single.weights(0) == 1.0);

    // One sample per class: shrinkage must keep covariances invertible.
    Eigen::MatrixXd Y(3, 3);
    Y << 1.0, 0.0, 0.0,  //
        0.0, 1.0, 0.0,   //
        0.0, 0.0, 1.0;
    const GaussianMixture tiny = fit_mixture_from_data(Y, {0, 1, 2});
    REQUIRE(tiny.size() == 3);
    for (const Gaussian& comp : tiny.components) {
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(comp.cov);
        CHECK(es.eigenvalues().minCoeff() > 0.0);
    }

    // A label gap means an empty class.
    CHECK_THROWS_AS(fit_mixture_from_data(X, {0, 0, 2, 2, 2}), invalid_input_error);
    CHECK_THROWS_AS(fit_mixture_from_data(X, {0, 0, 0, 0}), invalid_input_error);
}

TEST_CASE("zero-step training returns the initialization only") {
    const TaskSpec task = make_synthetic_task(4, 2, 3);
    TrainConfig cfg;
    cfg.hidden = 8;
    cfg.steps = 0;
    cfg.checkpoint_steps = {};
    cfg.seed = 5;
    const std::vector<Checkpoint> ckpts = train_mlp(task, cfg);
    REQUIRE(ckpts.size() == 1);
    CHECK(ckpts[0].step == 0);
}

TEST_CASE("training separates a well-separated two-class task") {
    TaskGenOptions gen;
    gen.separation = 4.0;
    const TaskSpec task = make_synthetic_task(4, 2, 11, gen);
    TrainConfig cfg;
    cfg.hidden = 16;
    cfg.batch = 64;
    cfg.steps = 2000;
    cfg.step_size = 0.05;
    cfg.checkpoint_steps = {2000};
    cfg.seed = 13;
    const std::vector<Checkpoint> ckpts = train_mlp(task, cfg);
    REQUIRE(ckpts.size() == 2);  // step 0 plus the requested step
    CHECK(ckpts.front().step == 0);
    CHECK(ckpts.back().step == 2000);

    std::vector<int> labels;
    const Eigen::MatrixXd X = sample(task.mixture, 20'000, 17, &labels);
    const double acc = argmax_accuracy(forward_batch(ckpts.back().net, X), labels);
    CHECK(acc > 0.95);
}

TEST_CASE("training is deterministic in its seeds") {
    const TaskSpec task = make_synthetic_task(4, 2, 19);
    TrainConfig cfg;
    cfg.hidden = 8;
    cfg.batch = 32;
    cfg.steps = 200;
    cfg.checkpoint_steps = {100, 200};
    cfg.seed = 23;
    const auto a = train_mlp(task, cfg);
    const auto b = train_mlp(task, cfg);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].step == b[i].step);
        CHECK(same_net(a[i].net, b[i].net));
    }

    cfg.seed = 24;
    const auto c = train_mlp(task, cfg);
    CHECK_FALSE(same_net(a.back().net, c.back().net));
}

TEST_CASE("training validation and divergence") {
    const TaskSpec task = make_synthetic_task(4, 2, 29);
    TrainConfig cfg;
    cfg.hidden = 8;
    cfg.steps = 100;

    cfg.checkpoint_steps = {50, 50};
    CHECK_THROWS_AS(train_mlp(task, cfg), invalid_input_error);
    cfg.checkpoint_steps = {200};
    CHECK_THROWS_AS(train_mlp(task, cfg), invalid_input_error);
    cfg.checkpoint_steps = {};
    cfg.step_size = 1e8;
    CHECK_THROWS_AS(train_mlp(task, cfg), training_diverged_error);
}

TEST_CASE("complexity sweep emits paired records") {
    const TaskSpec task = make_synthetic_task(4, 2, 31);
    TrainConfig cfg;
    cfg.hidden = 16;
    cfg.batch = 64;
    cfg.steps = 1000;
    cfg.step_size = 0.05;
    cfg.checkpoint_steps = {8, 64, 1000};
    cfg.seed = 37;
    const std::vector<Checkpoint> ckpts = train_mlp(task, cfg);
    REQUIRE(ckpts.size() == 4);

    const std::vector<MetricsRecord> records = complexity_sweep(task, ckpts, 50'000, 41);
    REQUIRE(records.size() == 2 * ckpts.size());
    for (size_t i = 0; i < ckpts.size(); ++i) {
        const MetricsRecord& lin = records[2 * i];
        const MetricsRecord& quad = records[2 * i + 1];
        CHECK(lin.kind == "linear");
        CHECK(quad.kind == "quadratic");
        CHECK(lin.step == ckpts[i].step);
        CHECK(quad.step == ckpts[i].step);
        CHECK(lin.n == 50'000);
        // Both kinds are scored on the same draw, so nesting holds per step.
        CHECK(lin.seed == quad.seed);
        CHECK(quad.fvu <= lin.fvu + 1e-6);
        CHECK(lin.acc_net == quad.acc_net);
    }

    // Reruns are identical.
    const std::vector<MetricsRecord> again = complexity_sweep(task, ckpts, 50'000, 41);
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(records[i].fvu == again[i].fvu);
        CHECK(records[i].kl == again[i].kl);
        CHECK(records[i].acc_approx == again[i].acc_approx);
    }
}

TEST_CASE("sweep surfaces zero-variance outputs as such") {
    const TaskSpec task = make_synthetic_task(4, 2, 43);
    const MlpSpec zero(Eigen::MatrixXd::Zero(8, 4), Eigen::VectorXd::Zero(8),
                       Eigen::MatrixXd::Zero(2, 8), Eigen::VectorXd::Zero(2),
                       Activation::relu);
    const std::vector<Checkpoint> ckpts = {Checkpoint{0, zero}};
    CHECK_THROWS_AS(complexity_sweep(task, ckpts, 10'000, 1), fvu_undefined_error);
}
