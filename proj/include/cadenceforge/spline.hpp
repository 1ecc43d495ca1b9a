#pragma once

#include <cstddef>
#include <vector>

#include "cadenceforge/common.hpp"

namespace cforge {

// Natural cubic spline through (x_i, y_i); second derivative zero at both
// ends. Knot abscissae must be strictly increasing. Evaluation outside the
// knot span extrapolates the boundary segment.
class NaturalCubicSpline {
public:
    NaturalCubicSpline(std::vector<double> xs, std::vector<double> ys)
        : xs_(std::move(xs)), ys_(std::move(ys)) {
        require(xs_.size() == ys_.size() && xs_.size() >= 2, "spline needs >= 2 knots");
        for (std::size_t i = 1; i < xs_.size(); ++i)
            require(xs_[i] > xs_[i - 1], "spline knots must be strictly increasing");
        const std::size_t n = xs_.size();
        m_.assign(n, 0.0);
        if (n == 2) return;  // degenerates to the linear segment

        // Thomas algorithm on the tridiagonal system for the second
        // derivatives; natural boundary rows are identity.
        std::vector<double> diag(n, 1.0), upper(n, 0.0), rhs(n, 0.0);
        std::vector<double> lower(n, 0.0);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double h0 = xs_[i] - xs_[i - 1];
            const double h1 = xs_[i + 1] - xs_[i];
            lower[i] = h0 / 6.0;
            diag[i] = (h0 + h1) / 3.0;
            upper[i] = h1 / 6.0;
            rhs[i] = (ys_[i + 1] - ys_[i]) / h1 - (ys_[i] - ys_[i - 1]) / h0;
        }
        for (std::size_t i = 1; i < n; ++i) {
            const double f = lower[i] / diag[i - 1];
            diag[i] -= f * upper[i - 1];
            rhs[i] -= f * rhs[i - 1];
        }
        m_[n - 1] = rhs[n - 1] / diag[n - 1];
        for (std::size_t i = n - 1; i-- > 0;)
            m_[i] = (rhs[i] - upper[i] * m_[i + 1]) / diag[i];
    }

    double operator()(double x) const {
        std::size_t seg = 0;
        while (seg + 2 < xs_.size() && x > xs_[seg + 1]) ++seg;
        const double h = xs_[seg + 1] - xs_[seg];
        const double u = (xs_[seg + 1] - x) / h;
        const double v = (x - xs_[seg]) / h;
        return u * ys_[seg] + v * ys_[seg + 1] +
               ((u * u * u - u) * m_[seg] + (v * v * v - v) * m_[seg + 1]) * h * h / 6.0;
    }

private:
    std::vector<double> xs_, ys_;
    std::vector<double> m_;  // second derivatives at the knots
};

}  // namespace cforge
