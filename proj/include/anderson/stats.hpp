#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace anderson::stats {

double mean(std::span<const double> x);
double variance(std::span<const double> x);  // unbiased
double quantile(std::vector<double> x, double q);  // linear interpolation
double median(std::vector<double> x);
double iqr(std::vector<double> x);

// log(sum(exp(v))) with a running max.
double log_sum_exp(std::span<const double> v);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
    double intercept_se = 0.0;
    double rss = 0.0;
    std::size_t n = 0;
    // 95% confidence intervals from the Student-t distribution.
    double slope_lo = 0.0, slope_hi = 0.0;
    double intercept_lo = 0.0, intercept_hi = 0.0;
};

// Ordinary least squares y = intercept + slope * x. Throws NumericalError if
// the design is singular (fewer than two distinct x values).
LinearFit fit_line(std::span<const double> x, std::span<const double> y);

// Least squares through the origin y = a * x; returns a and sets rss.
double fit_through_origin(std::span<const double> x, std::span<const double> y, double* rss);

double student_t_quantile(double p, double dof);

// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

}  // namespace anderson::stats
