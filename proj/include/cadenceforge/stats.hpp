#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cadenceforge/common.hpp"

namespace cforge {

namespace detail {

// Regularized incomplete beta I_x(a, b) via the continued fraction with
// Lentz's algorithm; standard numerical-recipes construction.
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    // use the symmetry relation so the fraction converges fast
    if (x > (a + 1.0) / (a + b + 2.0))
        return 1.0 - incomplete_beta(b, a, 1.0 - x);

    constexpr double tiny = 1e-30;
    constexpr double eps = 1e-14;
    double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double f = d;
    for (int m = 1; m <= 300; ++m) {
        const double dm = double(m);
        // even step
        double num = dm * (b - dm) * x / ((a + 2.0 * dm - 1.0) * (a + 2.0 * dm));
        d = 1.0 + num * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        f *= c * d;
        // odd step
        num = -(a + dm) * (a + b + dm) * x / ((a + 2.0 * dm) * (a + 2.0 * dm + 1.0));
        d = 1.0 + num * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = c * d;
        f *= delta;
        if (std::abs(delta - 1.0) < eps) break;
    }
    return std::exp(ln_front) * f / a;
}

}  // namespace detail

// CDF of Student's t with `dof` degrees of freedom.
inline double student_t_cdf(double t, double dof) {
    require(dof > 0.0, "degrees of freedom must be positive");
    if (t == 0.0) return 0.5;
    const double x = dof / (t * t + dof);
    const double tail = 0.5 * detail::incomplete_beta(dof / 2.0, 0.5, x);
    return t > 0.0 ? 1.0 - tail : tail;
}

struct TTestResult {
    std::size_t k = 0;        // paired folds
    double mean_diff = 0.0;
    double sd_diff = 0.0;     // sample sd (ddof = 1)
    double rho = 0.0;         // train/test overlap correction
    double se = 0.0;          // sd * sqrt(1/k + rho)
    double t = 0.0;
    double dof = 0.0;         // k - 1
    double p = 0.0;           // two-sided
    double cohen_d = 0.0;     // mean / sd of the differences
};

// Variance-corrected paired t-test for cross-validated scores: the standard
// error is inflated by the train-set overlap term rho (defaults to
// 1/(k-1), the usual choice for k-fold splits). rho = 0 recovers the
// classical paired test.
inline TTestResult corrected_paired_ttest(const std::vector<double>& a,
                                          const std::vector<double>& b, double rho = -1.0) {
    require(a.size() == b.size(), "paired test needs equal-length score vectors");
    const std::size_t k = a.size();
    require(k >= 2, "paired test needs at least 2 folds");
    if (rho < 0.0) rho = 1.0 / double(k - 1);

    TTestResult r;
    r.k = k;
    r.rho = rho;
    for (std::size_t i = 0; i < k; ++i) r.mean_diff += a[i] - b[i];
    r.mean_diff /= double(k);
    double ss = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double d = (a[i] - b[i]) - r.mean_diff;
        ss += d * d;
    }
    r.sd_diff = std::sqrt(ss / double(k - 1));
    require(r.sd_diff > 0.0, "zero variance in score differences; test undefined");
    r.se = r.sd_diff * std::sqrt(1.0 / double(k) + rho);
    r.t = r.mean_diff / r.se;
    r.dof = double(k - 1);
    r.p = 2.0 * (1.0 - student_t_cdf(std::abs(r.t), r.dof));
    r.cohen_d = r.mean_diff / r.sd_diff;
    return r;
}

inline TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    return corrected_paired_ttest(a, b, 0.0);
}

// ---- confusion matrix --------------------------------------------------------

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes)
        : n_(num_classes), counts_(num_classes * num_classes, 0) {
        require(num_classes >= 2, "confusion matrix needs >= 2 classes");
    }

    static ConfusionMatrix from_predictions(const std::vector<std::size_t>& truths,
                                            const std::vector<std::size_t>& preds,
                                            std::size_t num_classes) {
        require(truths.size() == preds.size(), "prediction/label length mismatch");
        ConfusionMatrix cm(num_classes);
        for (std::size_t i = 0; i < truths.size(); ++i) cm.add(truths[i], preds[i]);
        return cm;
    }

    void add(std::size_t truth, std::size_t pred, std::size_t count = 1) {
        require(truth < n_ && pred < n_, "class index out of range");
        counts_[truth * n_ + pred] += count;
    }

    std::size_t at(std::size_t truth, std::size_t pred) const {
        return counts_[truth * n_ + pred];
    }
    std::size_t num_classes() const { return n_; }

    std::size_t total() const {
        std::size_t s = 0;
        for (auto c : counts_) s += c;
        return s;
    }

    double top1() const {
        const std::size_t tot = total();
        require(tot > 0, "empty confusion matrix");
        std::size_t hit = 0;
        for (std::size_t c = 0; c < n_; ++c) hit += at(c, c);
        return double(hit) / double(tot);
    }

    // Recall per class; classes with no samples report -1.
    std::vector<double> per_class_recall() const {
        std::vector<double> out(n_);
        for (std::size_t c = 0; c < n_; ++c) {
            std::size_t row = 0;
            for (std::size_t p = 0; p < n_; ++p) row += at(c, p);
            out[c] = row == 0 ? -1.0 : double(at(c, c)) / double(row);
        }
        return out;
    }

    // Classes involved in the largest off-diagonal counts, in order of first
    // involvement; ties break on (count desc, row asc, col asc).
    std::vector<std::size_t> most_confused(std::size_t max_classes) const {
        struct Cell {
            std::size_t count, row, col;
        };
        std::vector<Cell> cells;
        for (std::size_t r = 0; r < n_; ++r)
            for (std::size_t c = 0; c < n_; ++c)
                if (r != c && at(r, c) > 0) cells.push_back({at(r, c), r, c});
        std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
            if (a.count != b.count) return a.count > b.count;
            if (a.row != b.row) return a.row < b.row;
            return a.col < b.col;
        });
        std::vector<std::size_t> out;
        const auto push = [&](std::size_t cls) {
            if (out.size() >= max_classes) return;
            if (std::find(out.begin(), out.end(), cls) == out.end()) out.push_back(cls);
        };
        for (const auto& cell : cells) {
            push(cell.row);
            push(cell.col);
            if (out.size() >= max_classes) break;
        }
        return out;
    }

    std::string to_csv() const {
        std::string s = "true\\pred";
        for (std::size_t c = 0; c < n_; ++c) s += "," + std::to_string(c);
        s += "\n";
        for (std::size_t r = 0; r < n_; ++r) {
            s += std::to_string(r);
            for (std::size_t c = 0; c < n_; ++c) s += "," + std::to_string(at(r, c));
            s += "\n";
        }
        return s;
    }

private:
    std::size_t n_;
    std::vector<std::size_t> counts_;
};

}  // namespace cforge
