#pragma once

#include <cmath>
#include <string>

#include "polyapx/errors.hpp"

namespace polyapx {

enum class Activation { relu, gelu, identity };

Activation activation_from_string(const std::string& name);
const char* activation_name(Activation act);

// GELU is the exact x * Phi(x), not the tanh approximation.
double activation_value(Activation act, double x);

// Pointwise derivative; ReLU at exactly 0 uses the subgradient midpoint 0.5.
double activation_deriv(Activation act, double x);

// X ~ N(mu, sigma^2); sigma = 0 is the degenerate point mass.
struct ScalarGaussian {
    double mu = 0.0;
    double sigma = 1.0;
};

double norm_pdf(double x);
double norm_cdf(double x);

namespace actcfg {
// Quadrature defaults for the GELU moment path; abs accuracy ~1e-10 or better.
inline constexpr int kGeluPanels = 48;
inline constexpr int kGeluOrder = 20;
inline constexpr double kGeluHalfWidth = 12.0;  // phi(z) tail is negligible beyond
inline constexpr int kMaxMomentDegree = 6;
inline constexpr int kMaxHalflineDegree = 8;
}  // namespace actcfg

// int_a^inf z^k phi(z) dz via the recursion
//   I_k = a^{k-1} phi(a) + (k-1) I_{k-2},  I_0 = 1 - Phi(a),  I_1 = phi(a).
double halfline_gaussian_moment(int k, double a);

// E[act(X) * X^k] for X ~ N(mu, sigma^2), k <= 6.
double act_moment(Activation act, int k, ScalarGaussian g);

// Closed-form E[act(X)]; agrees with act_moment(act, 0, g).
double act_mean(Activation act, ScalarGaussian g);

// E[act'(X)]. For ReLU with sigma = 0 and mu = 0 the value 0.5 is returned by
// convention; *used_subgradient_convention (when given) is set in that case.
double act_deriv_mean(Activation act, ScalarGaussian g,
                      bool* used_subgradient_convention = nullptr);

// Quadrature backend of the GELU moment path, exposed so callers can probe
// convergence by varying the panel count.
double gelu_moment_quadrature(int k, ScalarGaussian g, int panels, int order);

}  // namespace polyapx
