#include "polyapx/harness.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "polyapx/approx.hpp"
#include "polyapx/rng.hpp"

namespace polyapx {

TaskSpec::TaskSpec(int d_in, int classes_in, GaussianMixture mixture_in,
                   std::int64_t train_size_in, std::uint64_t seed_in)
    : d(d_in), classes(classes_in), mixture(std::move(mixture_in)),
      train_size(train_size_in), seed(seed_in) {
    if (d < 1 || classes < 1) throw invalid_input_error("TaskSpec: d and classes must be >= 1");
    if (mixture.size() != classes) {
        throw invalid_input_error("TaskSpec: mixture must have one component per class");
    }
    if (mixture.dim() != d) throw invalid_input_error("TaskSpec: mixture dim must equal d");
    if (train_size < 0) throw invalid_input_error("TaskSpec: train_size must be >= 0");
}

namespace {

Eigen::MatrixXd random_orthogonal(int d, Rng& rng) {
    Eigen::MatrixXd g(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) g(i, j) = rng.normal();
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    // Fix the sign ambiguity so the factorization is unique.
    for (int j = 0; j < d; ++j) {
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    }
    return q;
}

// Random PSD matrix with eigenvalues in [1, cond_max], rescaled to mean
// eigenvalue 1; the condition number stays <= cond_max.
Eigen::MatrixXd random_covariance(int d, double cond_max, Rng& rng) {
    Eigen::VectorXd lambda(d);
    for (int i = 0; i < d; ++i) lambda(i) = std::pow(cond_max, rng.uniform());
    lambda /= lambda.mean();
    const Eigen::MatrixXd q = random_orthogonal(d, rng);
    return symmetrized(q * lambda.asDiagonal() * q.transpose());
}

}  // namespace

TaskSpec make_synthetic_task(int d, int classes, std::uint64_t seed,
                             const TaskGenOptions& opts) {
    if (classes < 2) throw invalid_input_error("make_synthetic_task: classes must be >= 2");
    if (d < classes) {
        throw invalid_input_error("make_synthetic_task: need d >= classes for simplex means");
    }
    if (!(opts.separation >= 0.0) || !(opts.cond_max >= 1.0) || opts.cov_mix < 0.0 ||
        opts.cov_mix > 1.0) {
        throw invalid_input_error("make_synthetic_task: bad generator options");
    }

    Rng rng(derive_seed(seed, 0x7a5b));

    // Centered simplex vertices, rotated into general position and scaled so
    // every pair of class means is opts.separation apart.
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(classes, d);
    for (int c = 0; c < classes; ++c) means(c, c) = 1.0;
    means.rowwise() -= means.colwise().mean();
    means *= opts.separation / std::sqrt(2.0);
    const Eigen::MatrixXd rot = random_orthogonal(d, rng);
    means = means * rot.transpose();

    const Eigen::MatrixXd shared = random_covariance(d, opts.cond_max, rng);

    std::vector<Gaussian> components;
    components.reserve(static_cast<std::size_t>(classes));
    if (opts.cov_mix > 0.0 && opts.separation > 0.0) {
        // Class-specific covariance structure lives inside the span of the
        // centered means only. The covariance is block diagonal across that
        // span and its complement: the complement block is shared by every
        // class, so projecting the span out of the input leaves all class
        // conditionals identical.
        const int r = classes - 1;
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(means.transpose());
        const Eigen::MatrixXd q = Eigen::MatrixXd(qr.householderQ());
        const Eigen::MatrixXd u = q.leftCols(r);
        const Eigen::MatrixXd u_perp = q.rightCols(d - r);
        Eigen::MatrixXd outer = u_perp.transpose() * shared * u_perp;
        outer *= static_cast<double>(d - r) / outer.trace();
        // Each of the first r classes sharpens one span axis by delta while
        // the remaining axes flatten to compensate; the last class keeps a
        // round profile. Trace stays r, so the mean eigenvalue stays 1 and
        // the class-pair effect size is set by cov_mix alone.
        // Eigenvalue floor 1 - 0.6*cov_mix keeps every profile well
        // conditioned; the sharpened axis absorbs what the others give up.
        const double delta = 0.6 * opts.cov_mix * (r > 1 ? r - 1 : 1);
        for (int c = 0; c < classes; ++c) {
            Eigen::VectorXd profile = Eigen::VectorXd::Ones(r);
            if (r == 1) {
                // One span axis only: split the variance symmetrically.
                profile(0) = c == 0 ? 1.0 + delta : 1.0 - delta;
            } else if (c < r) {
                profile.array() -= delta / (r - 1);
                profile(c) = 1.0 + delta;
            }
            const Eigen::MatrixXd cov = u * profile.asDiagonal() * u.transpose() +
                                        u_perp * outer * u_perp.transpose();
            components.emplace_back(means.row(c).transpose(), symmetrized(cov));
        }
    } else {
        for (int c = 0; c < classes; ++c) {
            components.emplace_back(means.row(c).transpose(), shared);
        }
    }
    const Eigen::VectorXd weights =
        Eigen::VectorXd::Constant(classes, 1.0 / static_cast<double>(classes));
    return TaskSpec(d, classes, GaussianMixture(weights, std::move(components)),
                    opts.train_size, seed);
}

GaussianMixture fit_mixture_from_data(const Eigen::MatrixXd& features,
                                      const std::vector<int>& labels) {
    const Eigen::Index n = features.rows();
    const Eigen::Index d = features.cols();
    if (n < 1 || d < 1) throw invalid_input_error("fit_mixture_from_data: empty data");
    if (static_cast<std::size_t>(n) != labels.size()) {
        throw invalid_input_error("fit_mixture_from_data: label count mismatch");
    }
    int classes = 0;
    for (int label : labels) {
        if (label < 0) throw invalid_input_error("fit_mixture_from_data: negative label");
        classes = std::max(classes, label + 1);
    }
    std::vector<std::int64_t> counts(static_cast<std::size_t>(classes), 0);
    for (int label : labels) ++counts[static_cast<std::size_t>(label)];
    for (int c = 0; c < classes; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) {
            throw invalid_input_error("fit_mixture_from_data: class " + std::to_string(c) +
                                      " has no samples");
        }
    }

    // Global variance scale; the shrinkage floor when a class covariance is 0.
    const Eigen::RowVectorXd grand_mean = features.colwise().mean();
    double global_scale =
        (features.rowwise() - grand_mean).squaredNorm() / static_cast<double>(n * d);
    if (!(global_scale > 0.0)) global_scale = 1.0;

    std::vector<Gaussian> components;
    components.reserve(static_cast<std::size_t>(classes));
    Eigen::VectorXd weights(classes);
    for (int c = 0; c < classes; ++c) {
        const std::int64_t nc = counts[static_cast<std::size_t>(c)];
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
        for (Eigen::Index r = 0; r < n; ++r) {
            if (labels[static_cast<std::size_t>(r)] == c) mean += features.row(r).transpose();
        }
        mean /= static_cast<double>(nc);
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
        for (Eigen::Index r = 0; r < n; ++r) {
            if (labels[static_cast<std::size_t>(r)] != c) continue;
            const Eigen::VectorXd delta = features.row(r).transpose() - mean;
            cov += delta * delta.transpose();
        }
        cov /= static_cast<double>(nc);
        double scale = cov.trace() / static_cast<double>(d);
        if (!(scale > 0.0)) scale = global_scale;
        cov = (1.0 - kShrinkageTau) * cov;
        cov.diagonal().array() += kShrinkageTau * scale;
        components.emplace_back(std::move(mean), symmetrized(cov));
        weights(c) = static_cast<double>(nc) / static_cast<double>(n);
    }
    return GaussianMixture(std::move(weights), std::move(components));
}

namespace {

struct MixtureSampler {
    const GaussianMixture& mixture;
    std::vector<Eigen::MatrixXd> factors;
    std::vector<double> cum;

    explicit MixtureSampler(const GaussianMixture& mix) : mixture(mix) {
        factors.reserve(static_cast<std::size_t>(mix.size()));
        for (const Gaussian& g : mix.components) factors.push_back(covariance_factor(g.cov));
        cum.resize(static_cast<std::size_t>(mix.size()));
        double acc = 0.0;
        for (int c = 0; c < mix.size(); ++c) {
            acc += mix.weights(c);
            cum[static_cast<std::size_t>(c)] = acc;
        }
    }

    void draw(Rng& rng, Eigen::MatrixXd& x, std::vector<int>& labels) const {
        const int d = mixture.dim();
        Eigen::VectorXd z(d);
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const int c = rng.categorical(cum.data(), mixture.size());
            for (int i = 0; i < d; ++i) z(i) = rng.normal();
            x.row(r) =
                (mixture.components[static_cast<std::size_t>(c)].mean + factors[c] * z)
                    .transpose();
            labels[static_cast<std::size_t>(r)] = c;
        }
    }
};

}  // namespace

std::vector<Checkpoint> train_mlp(const TaskSpec& task, const TrainConfig& cfg) {
    if (cfg.hidden < 1) throw invalid_input_error("train_mlp: hidden must be >= 1");
    if (cfg.batch < 1) throw invalid_input_error("train_mlp: batch must be >= 1");
    if (cfg.steps < 0) throw invalid_input_error("train_mlp: steps must be >= 0");
    if (!(cfg.step_size > 0.0)) throw invalid_input_error("train_mlp: step_size must be > 0");
    if (cfg.weight_decay < 0.0) {
        throw invalid_input_error("train_mlp: weight_decay must be >= 0");
    }
    std::int64_t prev = -1;
    for (std::int64_t s : cfg.checkpoint_steps) {
        if (s <= prev || s < 0 || s > cfg.steps) {
            throw invalid_input_error(
                "train_mlp: checkpoint_steps must be strictly increasing within [0, steps]");
        }
        prev = s;
    }

    const int d = task.d;
    const int h = cfg.hidden;
    const int o = task.classes;

    // He-normal weights; unit-normal hidden biases spread the activation
    // kinks across the input range instead of stacking them at the origin.
    Rng rinit(derive_seed(cfg.seed, 0));
    Eigen::MatrixXd w1(h, d), w2(o, h);
    const double s1 = std::sqrt(2.0 / static_cast<double>(d));
    const double s2 = std::sqrt(2.0 / static_cast<double>(h));
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < d; ++j) w1(i, j) = s1 * rinit.normal();
    }
    for (int i = 0; i < o; ++i) {
        for (int j = 0; j < h; ++j) w2(i, j) = s2 * rinit.normal();
    }
    Eigen::VectorXd b1(h);
    for (int i = 0; i < h; ++i) b1(i) = rinit.normal();
    Eigen::VectorXd b2 = Eigen::VectorXd::Zero(o);

    std::set<std::int64_t> wanted(cfg.checkpoint_steps.begin(), cfg.checkpoint_steps.end());
    wanted.insert(0);  // initialization is always reported

    std::vector<Checkpoint> out;
    auto capture = [&](std::int64_t step) {
        if (wanted.count(step)) {
            out.push_back(Checkpoint{step, MlpSpec(w1, b1, w2, b2, cfg.activation)});
        }
    };
    capture(0);

    const MixtureSampler sampler(task.mixture);
    Rng rdata(derive_seed(cfg.seed, 1));
    Eigen::MatrixXd x(cfg.batch, d);
    std::vector<int> y(static_cast<std::size_t>(cfg.batch));

    Eigen::MatrixXd vw1 = Eigen::MatrixXd::Zero(h, d), vw2 = Eigen::MatrixXd::Zero(o, h);
    Eigen::VectorXd vb1 = Eigen::VectorXd::Zero(h), vb2 = Eigen::VectorXd::Zero(o);
    const double mu = 0.9;
    const double lr = cfg.step_size;
    const double decay = 1.0 - lr * cfg.weight_decay;

    for (std::int64_t step = 1; step <= cfg.steps; ++step) {
        sampler.draw(rdata, x, y);

        Eigen::MatrixXd pre = x * w1.transpose();
        pre.rowwise() += b1.transpose();
        Eigen::MatrixXd a(cfg.batch, h), da(cfg.batch, h);
        switch (cfg.activation) {
            case Activation::relu:
                a = pre.cwiseMax(0.0);
                da = (pre.array() > 0.0).cast<double>();
                break;
            case Activation::gelu:
                for (Eigen::Index i = 0; i < pre.size(); ++i) {
                    const double z = pre(i);
                    const double cdf = 0.5 * std::erfc(-z * M_SQRT1_2);
                    a(i) = z * cdf;
                    da(i) = cdf + z * 0.3989422804014327 * std::exp(-0.5 * z * z);
                }
                break;
            case Activation::identity:
                a = pre;
                da.setOnes();
                break;
        }
        Eigen::MatrixXd logits = a * w2.transpose();
        logits.rowwise() += b2.transpose();

        // Stable softmax and mean cross-entropy.
        Eigen::MatrixXd p(cfg.batch, o);
        double loss = 0.0;
        for (int r = 0; r < cfg.batch; ++r) {
            const double mx = logits.row(r).maxCoeff();
            const Eigen::RowVectorXd shifted = logits.row(r).array() - mx;
            const Eigen::RowVectorXd e = shifted.array().exp();
            const double z = e.sum();
            p.row(r) = e / z;
            loss += std::log(z) - shifted(y[static_cast<std::size_t>(r)]);
        }
        loss /= static_cast<double>(cfg.batch);
        if (!std::isfinite(loss)) {
            throw training_diverged_error(
                "train_mlp: non-finite loss at step " + std::to_string(step), step);
        }

        Eigen::MatrixXd dlogits = p;
        for (int r = 0; r < cfg.batch; ++r) dlogits(r, y[static_cast<std::size_t>(r)]) -= 1.0;
        dlogits /= static_cast<double>(cfg.batch);

        const Eigen::MatrixXd gw2 = dlogits.transpose() * a;
        const Eigen::VectorXd gb2 = dlogits.colwise().sum().transpose();
        const Eigen::MatrixXd dpre = (dlogits * w2).cwiseProduct(da);
        const Eigen::MatrixXd gw1 = dpre.transpose() * x;
        const Eigen::VectorXd gb1 = dpre.colwise().sum().transpose();

        vw1 = mu * vw1 + gw1;
        vb1 = mu * vb1 + gb1;
        vw2 = mu * vw2 + gw2;
        vb2 = mu * vb2 + gb2;
        w1 -= lr * vw1;
        b1 -= lr * vb1;
        w2 -= lr * vw2;
        b2 -= lr * vb2;
        // Decoupled weight decay on the weight matrices, not the biases.
        w1 *= decay;
        w2 *= decay;

        capture(step);
    }
    return out;
}

std::vector<MetricsRecord> complexity_sweep(const TaskSpec& task,
                                            const std::vector<Checkpoint>& checkpoints,
                                            std::int64_t eval_n, std::uint64_t seed) {
    if (checkpoints.empty()) throw invalid_input_error("complexity_sweep: no checkpoints");
    const ApproxOptions opts;
    std::vector<MetricsRecord> out;
    out.reserve(checkpoints.size() * 2);
    for (const Checkpoint& chk : checkpoints) {
        const LinearApproximant lin = linear_approx(chk.net, task.mixture);
        QuadraticApproximant quad = [&] {
            if (task.d <= opts.mixture_quadratic_max_dim) {
                return quadratic_approx(chk.net, task.mixture, opts);
            }
            const Gaussian standard(Eigen::VectorXd::Zero(task.d),
                                    Eigen::MatrixXd::Identity(task.d, task.d));
            const QuadraticApproximant init = quadratic_approx(chk.net, standard, opts);
            RefineOptions ropts;
            ropts.steps = 20000;
            ropts.batch = 256;
            ropts.step_size = 1e-3;
            ropts.seed = derive_seed(seed, 0x5eed0000ull + static_cast<std::uint64_t>(chk.step));
            return refine_quadratic(init, AnyNet(chk.net), task.mixture, ropts);
        }();

        const std::uint64_t eval_seed =
            derive_seed(seed, static_cast<std::uint64_t>(chk.step) + 1);
        const AnyNet net(chk.net);
        const AnyDist dist(task.mixture);
        const EvalReport lin_rep = evaluate(net, AnyApprox(lin), dist, eval_n, eval_seed);
        const EvalReport quad_rep = evaluate(net, AnyApprox(quad), dist, eval_n, eval_seed);
        out.push_back(MetricsRecord{chk.step, "linear", lin_rep.fvu, lin_rep.kl,
                                    lin_rep.accuracy_net, lin_rep.accuracy_approx, eval_n,
                                    eval_seed});
        out.push_back(MetricsRecord{chk.step, "quadratic", quad_rep.fvu, quad_rep.kl,
                                    quad_rep.accuracy_net, quad_rep.accuracy_approx, eval_n,
                                    eval_seed});
    }
    return out;
}

}  // namespace polyapx
