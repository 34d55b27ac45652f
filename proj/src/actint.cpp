#include "polyapx/actint.hpp"

#include <array>
#include <map>
#include <mutex>

#include "polyapx/quadrature.hpp"

namespace polyapx {

const GaussLegendreRule& gauss_legendre(int order) {
    static std::map<int, GaussLegendreRule> cache;
    static std::mutex mutex;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(order);
    if (it != cache.end()) return it->second;

    GaussLegendreRule rule;
    rule.nodes.resize(order);
    rule.weights.resize(order);
    for (int i = 0; i < order; ++i) {
        // Chebyshev-like initial guess, then Newton on P_n.
        double x = std::cos(M_PI * (i + 0.75) / (order + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= order; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = order * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        rule.nodes[i] = x;
        rule.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return cache.emplace(order, std::move(rule)).first->second;
}

double integrate_composite(const std::function<double(double)>& f, double a, double b,
                           int panels, int order) {
    const GaussLegendreRule& rule = gauss_legendre(order);
    const double h = (b - a) / panels;
    double total = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double lo = a + p * h;
        const double mid = lo + 0.5 * h;
        double acc = 0.0;
        for (int i = 0; i < order; ++i) {
            acc += rule.weights[i] * f(mid + 0.5 * h * rule.nodes[i]);
        }
        total += 0.5 * h * acc;
    }
    return total;
}

Activation activation_from_string(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "gelu") return Activation::gelu;
    if (name == "identity") return Activation::identity;
    throw invalid_input_error("unknown activation: " + name);
}

const char* activation_name(Activation act) {
    switch (act) {
        case Activation::relu: return "relu";
        case Activation::gelu: return "gelu";
        case Activation::identity: return "identity";
    }
    return "?";
}

double norm_pdf(double x) { return std::exp(-0.5 * x * x) * 0.3989422804014326779; }

double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

double activation_value(Activation act, double x) {
    switch (act) {
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::gelu: return x * norm_cdf(x);
        case Activation::identity: return x;
    }
    return 0.0;
}

double activation_deriv(Activation act, double x) {
    switch (act) {
        case Activation::relu: return x > 0.0 ? 1.0 : (x < 0.0 ? 0.0 : 0.5);
        case Activation::gelu: return norm_cdf(x) + x * norm_pdf(x);
        case Activation::identity: return 1.0;
    }
    return 0.0;
}

double halfline_gaussian_moment(int k, double a) {
    if (k < 0) throw invalid_input_error("halfline_gaussian_moment: k must be nonnegative");
    if (k > actcfg::kMaxHalflineDegree) {
        throw degree_too_high_error("halfline_gaussian_moment: degree " + std::to_string(k) +
                                    " exceeds maximum " + std::to_string(actcfg::kMaxHalflineDegree));
    }
    const double phi_a = norm_pdf(a);
    double im2 = 1.0 - norm_cdf(a);  // I_0
    if (k == 0) return im2;
    double im1 = phi_a;  // I_1
    if (k == 1) return im1;
    double ik = 0.0;
    double a_pow = a;  // a^{j-1} for j = 2
    for (int j = 2; j <= k; ++j) {
        ik = a_pow * phi_a + (j - 1) * im2;
        im2 = im1;
        im1 = ik;
        a_pow *= a;
    }
    return ik;
}

namespace {

double binomial(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

// E[X^k ReLU(X)] via the binomial expansion over half-line moments.
double relu_moment(int k, double mu, double sigma) {
    const double a = -mu / sigma;
    std::array<double, actcfg::kMaxMomentDegree + 2> mu_pows{};
    mu_pows[0] = 1.0;
    for (int j = 1; j <= k + 1; ++j) mu_pows[j] = mu_pows[j - 1] * mu;
    double total = 0.0;
    double sigma_pow = 1.0;
    for (int j = 0; j <= k + 1; ++j) {
        total += binomial(k + 1, j) * mu_pows[k + 1 - j] * sigma_pow * halfline_gaussian_moment(j, a);
        sigma_pow *= sigma;
    }
    return total;
}

// Noncentral Gaussian moment E[X^k]: M_j = mu M_{j-1} + (j-1) sigma^2 M_{j-2}.
double gaussian_raw_moment(int k, double mu, double sigma) {
    double m0 = 1.0;
    if (k == 0) return m0;
    double m1 = mu;
    for (int j = 2; j <= k; ++j) {
        const double m2 = mu * m1 + (j - 1) * sigma * sigma * m0;
        m0 = m1;
        m1 = m2;
    }
    return m1;
}

}  // namespace

double gelu_moment_quadrature(int k, ScalarGaussian g, int panels, int order) {
    const double mu = g.mu;
    const double sigma = g.sigma;
    auto integrand = [&](double z) {
        const double x = mu + sigma * z;
        return std::pow(x, k) * x * norm_cdf(x) * norm_pdf(z);
    };
    return integrate_composite(integrand, -actcfg::kGeluHalfWidth, actcfg::kGeluHalfWidth,
                               panels, order);
}

double act_moment(Activation act, int k, ScalarGaussian g) {
    if (k < 0) throw invalid_input_error("act_moment: k must be nonnegative");
    if (k > actcfg::kMaxMomentDegree) {
        throw degree_too_high_error("act_moment: degree " + std::to_string(k) +
                                    " exceeds maximum " + std::to_string(actcfg::kMaxMomentDegree));
    }
    if (g.sigma < 0.0) throw invalid_input_error("act_moment: sigma must be nonnegative");
    if (g.sigma == 0.0) {
        return activation_value(act, g.mu) * std::pow(g.mu, k);
    }
    switch (act) {
        case Activation::relu: return relu_moment(k, g.mu, g.sigma);
        case Activation::gelu:
            return gelu_moment_quadrature(k, g, actcfg::kGeluPanels, actcfg::kGeluOrder);
        case Activation::identity: return gaussian_raw_moment(k + 1, g.mu, g.sigma);
    }
    return 0.0;
}

double act_mean(Activation act, ScalarGaussian g) {
    if (g.sigma < 0.0) throw invalid_input_error("act_mean: sigma must be nonnegative");
    if (g.sigma == 0.0) return activation_value(act, g.mu);
    switch (act) {
        case Activation::relu: {
            const double t = g.mu / g.sigma;
            return g.mu * norm_cdf(t) + g.sigma * norm_pdf(t);
        }
        case Activation::gelu: {
            const double denom = std::sqrt(1.0 + g.sigma * g.sigma);
            const double t = g.mu / denom;
            return g.mu * norm_cdf(t) + (g.sigma * g.sigma / denom) * norm_pdf(t);
        }
        case Activation::identity: return g.mu;
    }
    return 0.0;
}

double act_deriv_mean(Activation act, ScalarGaussian g, bool* used_subgradient_convention) {
    if (used_subgradient_convention) *used_subgradient_convention = false;
    if (g.sigma < 0.0) throw invalid_input_error("act_deriv_mean: sigma must be nonnegative");
    switch (act) {
        case Activation::relu: {
            if (g.sigma == 0.0) {
                if (g.mu == 0.0) {
                    if (used_subgradient_convention) *used_subgradient_convention = true;
                    return 0.5;
                }
                return g.mu > 0.0 ? 1.0 : 0.0;
            }
            return norm_cdf(g.mu / g.sigma);
        }
        case Activation::gelu: {
            const double s2 = g.sigma * g.sigma;
            const double denom = std::sqrt(1.0 + s2);
            const double t = g.mu / denom;
            return norm_cdf(t) + norm_pdf(t) * (t - g.mu * s2 / (denom * denom * denom));
        }
        case Activation::identity: return 1.0;
    }
    return 0.0;
}

}  // namespace polyapx
