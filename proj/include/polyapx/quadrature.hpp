#pragma once

#include <functional>
#include <vector>

namespace polyapx {

// Gauss-Legendre nodes/weights on [-1, 1], computed by Newton iteration on
// the Legendre recurrence; cached per order.
struct GaussLegendreRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

const GaussLegendreRule& gauss_legendre(int order);

// Composite Gauss-Legendre integration of f over [a, b] with equal panels.
double integrate_composite(const std::function<double(double)>& f, double a, double b,
                           int panels, int order);

}  // namespace polyapx
