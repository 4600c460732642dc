#include "anderson/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "anderson/common.hpp"

namespace anderson::stats {

double mean(std::span<const double> x) {
    if (x.empty()) return 0.0;
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

double quantile(std::vector<double> x, double q) {
    if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(x.begin(), x.end());
    const double pos = q * static_cast<double>(x.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, x.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return x[lo] + frac * (x[hi] - x[lo]);
}

double median(std::vector<double> x) { return quantile(std::move(x), 0.5); }

double iqr(std::vector<double> x) { return quantile(x, 0.75) - quantile(x, 0.25); }

double log_sum_exp(std::span<const double> v) {
    if (v.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

double student_t_quantile(double p, double dof) {
    boost::math::students_t dist(dof);
    return boost::math::quantile(dist, p);
}

LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 2) throw NumericalError("fit_line: need at least two points");
    const double mx = mean(x), my = mean(y);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 1e-300 * std::max(1.0, mx * mx)))
        throw NumericalError("fit_line: singular design (all abscissae equal)");
    LinearFit f;
    f.n = n;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - f.intercept - f.slope * x[i];
        f.rss += r * r;
    }
    if (n > 2) {
        const double s2 = f.rss / static_cast<double>(n - 2);
        f.slope_se = std::sqrt(s2 / sxx);
        double sx2 = 0.0;
        for (double v : x) sx2 += v * v;
        f.intercept_se = std::sqrt(s2 * sx2 / (static_cast<double>(n) * sxx));
        const double tq = student_t_quantile(0.975, static_cast<double>(n - 2));
        f.slope_lo = f.slope - tq * f.slope_se;
        f.slope_hi = f.slope + tq * f.slope_se;
        f.intercept_lo = f.intercept - tq * f.intercept_se;
        f.intercept_hi = f.intercept + tq * f.intercept_se;
    } else {
        f.slope_lo = f.slope_hi = f.slope;
        f.intercept_lo = f.intercept_hi = f.intercept;
    }
    return f;
}

double fit_through_origin(std::span<const double> x, std::span<const double> y, double* rss) {
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    if (sxx <= 0.0) throw NumericalError("fit_through_origin: zero design");
    const double a = sxy / sxx;
    if (rss) {
        *rss = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) *rss += (y[i] - a * x[i]) * (y[i] - a * x[i]);
    }
    return a;
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double ne = na * nb / (na + nb);
    const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
        p += term;
        if (std::abs(term) < 1e-12) break;
    }
    return {d, std::clamp(p, 0.0, 1.0)};
}

}  // namespace anderson::stats
