#include "polyapx/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace polyapx {

int dist_dim(const AnyDist& dist) {
    return std::visit([](const auto& d) { return d.dim(); }, dist);
}

namespace {

// Row-wise log-softmax with max-subtraction.
Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        const Eigen::RowVectorXd shifted = logits.row(r).array() - mx;
        const double lse = std::log(shifted.array().exp().sum());
        out.row(r) = shifted.array() - lse;
    }
    return out;
}

}  // namespace

double mean_softmax_kl(const Eigen::MatrixXd& net_logits, const Eigen::MatrixXd& approx_logits) {
    if (net_logits.rows() != approx_logits.rows() ||
        net_logits.cols() != approx_logits.cols()) {
        throw invalid_input_error("mean_softmax_kl: shape mismatch");
    }
    const Eigen::MatrixXd lp = log_softmax_rows(net_logits);
    const Eigen::MatrixXd lq = log_softmax_rows(approx_logits);
    double total = 0.0;
    for (Eigen::Index r = 0; r < lp.rows(); ++r) {
        total += (lp.row(r).array().exp() * (lp.row(r) - lq.row(r)).array()).sum();
    }
    return total / static_cast<double>(lp.rows());
}

double argmax_accuracy(const Eigen::MatrixXd& outputs, const std::vector<int>& labels) {
    if (static_cast<std::size_t>(outputs.rows()) != labels.size()) {
        throw invalid_input_error("argmax_accuracy: label count mismatch");
    }
    std::int64_t hits = 0;
    for (Eigen::Index r = 0; r < outputs.rows(); ++r) {
        Eigen::Index arg = 0;
        outputs.row(r).maxCoeff(&arg);
        if (static_cast<int>(arg) == labels[static_cast<std::size_t>(r)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(outputs.rows());
}

EvalReport evaluate(const AnyNet& net, const AnyApprox& approx, const AnyDist& dist,
                    std::int64_t n, std::uint64_t seed, const LabelRule& labels) {
    if (n < 1000) {
        throw invalid_input_error("evaluate: n must be >= 1000 for stable estimates");
    }
    const int d = dist_dim(dist);
    if (net_input_dim(net) != d) {
        throw invalid_input_error("evaluate: net input dim does not match distribution");
    }
    if (net_output_dim(net) != approx_output_dim(approx)) {
        throw invalid_input_error("evaluate: net and approximant output dims differ");
    }

    Eigen::MatrixXd x;
    std::vector<int> label_values;
    bool have_labels = false;
    if (const auto* mix = std::get_if<GaussianMixture>(&dist)) {
        std::vector<int> components;
        x = sample(*mix, n, seed, &components);
        label_values = std::move(components);
        have_labels = true;
    } else {
        x = sample(std::get<Gaussian>(dist), n, seed);
    }
    if (labels) {
        label_values.resize(static_cast<std::size_t>(n));
        for (std::int64_t r = 0; r < n; ++r) {
            label_values[static_cast<std::size_t>(r)] = labels(x.row(r).transpose());
        }
        have_labels = true;
    }

    const Eigen::MatrixXd f = forward_batch(net, x);
    const Eigen::MatrixXd g = predict_batch(approx, x);

    EvalReport report;
    report.n_samples = n;
    report.seed = seed;
    report.fvu = fvu_on_samples(f, g);
    report.kl = mean_softmax_kl(f, g);
    if (have_labels) {
        report.accuracy_net = argmax_accuracy(f, label_values);
        report.accuracy_approx = argmax_accuracy(g, label_values);
        report.has_accuracy = true;
    }
    return report;
}

Spectrum quadratic_spectrum(const QuadraticApproximant& approx, int class_index) {
    if (class_index < 0 || class_index >= approx.output_dim()) {
        throw invalid_input_error("quadratic_spectrum: class index out of range");
    }
    const Eigen::MatrixXd& qk = approx.q[static_cast<std::size_t>(class_index)];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(qk));
    if (es.info() != Eigen::Success) {
        throw numerical_error("quadratic_spectrum: eigendecomposition failed");
    }
    const int d = static_cast<int>(qk.rows());
    std::vector<int> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    const Eigen::VectorXd& ev = es.eigenvalues();
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return std::abs(ev(a)) > std::abs(ev(b)); });

    Spectrum s;
    s.class_index = class_index;
    s.eigenvalues.resize(d);
    s.eigenvectors.resize(d, d);
    for (int i = 0; i < d; ++i) {
        s.eigenvalues(i) = ev(order[static_cast<std::size_t>(i)]);
        Eigen::VectorXd v = es.eigenvectors().col(order[static_cast<std::size_t>(i)]);
        for (int j = 0; j < d; ++j) {
            if (std::abs(v(j)) > 1e-12) {
                if (v(j) < 0.0) v = -v;
                break;
            }
        }
        s.eigenvectors.col(i) = v;
    }
    return s;
}

int beta_rank(const LinearApproximant& approx) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(approx.beta);
    svd.setThreshold(Eigen::Default);
    return static_cast<int>(svd.rank());
}

AttackProjection svd_attack_projection(const LinearApproximant& approx, int k) {
    const int d = approx.input_dim();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(approx.beta, Eigen::ComputeThinU);
    svd.setThreshold(Eigen::Default);
    const int rank = static_cast<int>(svd.rank());
    if (k < 0 || k > rank) {
        throw invalid_input_error("svd_attack_projection: k = " + std::to_string(k) +
                                  " outside [0, rank(beta) = " + std::to_string(rank) + "]");
    }
    Eigen::MatrixXd p = Eigen::MatrixXd::Identity(d, d);
    for (int i = 0; i < k; ++i) {
        const Eigen::VectorXd u = svd.matrixU().col(i);
        p -= u * u.transpose();
    }
    return AttackProjection{symmetrized(p), k};
}

Eigen::MatrixXd apply_attack(const Eigen::MatrixXd& inputs, const AttackProjection& proj) {
    if (inputs.cols() != proj.matrix.rows()) {
        throw invalid_input_error("apply_attack: input dim does not match projection");
    }
    // P symmetric, so x -> P x per row is X P.
    return inputs * proj.matrix;
}

}  // namespace polyapx
