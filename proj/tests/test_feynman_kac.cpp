#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <random>
#include <vector>

#include "anderson/feynman_kac.hpp"
#include "anderson/stats.hpp"

using namespace anderson;

namespace {

constexpr double kPi = std::numbers::pi;

CovarianceSpec triangular(int d) {
    CovarianceSpec s;
    s.dim = d;
    return s;
}

// P(T_(-1,1) > t) for Brownian motion from 0.
double interval_survival(double t) {
    double s = 0.0;
    for (int k = 1; k < 200; k += 2) s += 4.0 / (k * kPi) * ((k / 2) % 2 ? -1.0 : 1.0) * std::exp(-t * k * k * kPi * kPi / 8.0);
    return s;
}

// Independent fine-step oracle: plain loop, own generator, Riemann-trapezoid integral.
void fine_oracle(const FieldSample& f, double sigma, double t, double dt, long M, std::uint64_t seed, double* log_mean,
                 double* se) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    const long n = std::lround(t / dt);
    std::vector<double> logw(M);
    for (long m = 0; m < M; ++m) {
        double x = 0.0, prev = f.interpolate({0, 0, 0}), acc = 0.0;
        for (long k = 1; k <= n; ++k) {
            x += std::sqrt(dt) * g(rng);
            const double cur = f.interpolate({x, 0, 0});
            acc += 0.5 * dt * (prev + cur);
            prev = cur;
        }
        logw[m] = sigma * acc;
    }
    const double mx = *std::max_element(logw.begin(), logw.end());
    std::vector<double> w(M);
    for (long m = 0; m < M; ++m) w[m] = std::exp(logw[m] - mx);
    const double mean = stats::mean(w);
    *log_mean = mx + std::log(mean);
    *se = std::sqrt(stats::variance(w)) / (std::sqrt(double(M)) * mean);
}

}  // namespace

TEST_CASE("zero potential gives total mass one exactly") {
    const auto f = FieldSample::constant(2, 8.0, 0.25, 0.0);
    PathConfig c;
    c.t = 2.0;
    c.dt = 0.05;
    c.paths = 500;
    const auto e = total_mass(f, 1.0, c);
    CHECK(e.log_mean == 0.0);
    CHECK(e.std_error == 0.0);
    CHECK(e.M == 500);
}

TEST_CASE("constant potential gives e^{ct}") {
    const double c = 0.8;
    const auto f = FieldSample::constant(1, 10.0, 0.25, c);
    PathConfig cfg;
    cfg.t = 1.7;
    cfg.dt = 0.01;
    cfg.paths = 200;
    const auto e = total_mass(f, 1.0, cfg);
    CHECK(std::abs(e.log_mean - c * cfg.t) <= 3.0 * e.std_error + 1e-12);
}

TEST_CASE("total mass matches a fine-step oracle") {
    const auto f = sample_field(triangular(1), 8.0, 1.0, 1.0 / 16, 123);
    PathConfig cfg;
    cfg.t = 1.0;
    cfg.dt = 0.05;
    cfg.paths = 4000;
    cfg.seed = 99;
    const auto e = total_mass(f, 1.0, cfg);
    double lm = 0, se = 0;
    fine_oracle(f, 1.0, 1.0, 0.05 / 16, 4000, 31337, &lm, &se);
    CHECK(std::abs(e.log_mean - lm) <= 3.0 * std::hypot(e.std_error, se));
    CHECK(e.exit_fraction == 0.0);
}

TEST_CASE("preconditions are enforced") {
    const auto f = FieldSample::constant(1, 2.0, 0.125, 0.0);
    PathConfig cfg;
    cfg.t = 1.0;
    cfg.dt = 0.01;
    cfg.paths = 100;
    CHECK_THROWS_AS(total_mass(f, 1.0, cfg), ConfigError);  // exit bound
    cfg.t = 0.1;
    cfg.paths = 50;
    CHECK_THROWS_AS(total_mass(f, 1.0, cfg), ConfigError);  // M >= 100
    cfg.paths = 100;
    cfg.dt = 0.3;
    CHECK_THROWS_AS(total_mass(f, 1.0, cfg), ConfigError);  // dt <= eps^2/4
}

TEST_CASE("weight degeneracy is reported") {
    const auto f = sample_field(triangular(1), 40.0, 1.0, 1.0 / 8, 5);
    PathConfig cfg;
    cfg.t = 30.0;
    cfg.dt = 0.1;
    cfg.paths = 100;
    CHECK_THROWS_AS(total_mass(f, 20.0, cfg), NumericalError);
}

TEST_CASE("results do not depend on the worker count") {
    const auto f = sample_field(triangular(2), 6.0, 1.0, 1.0 / 8, 8);
    PathConfig cfg;
    cfg.t = 0.5;
    cfg.dt = 0.02;
    cfg.paths = 300;
    const auto a = total_mass(f, 1.0, cfg);
    cfg.workers = 3;
    const auto b = total_mass(f, 1.0, cfg);
    CHECK(a.log_mean == b.log_mean);
    CHECK(a.std_error == b.std_error);
}

TEST_CASE("Dirichlet survival matches the eigenfunction series") {
    const auto f = FieldSample::constant(1, 2.0, 0.125, 0.0);
    PathConfig cfg;
    cfg.t = 2.0;
    cfg.dt = 0.01;
    cfg.paths = 20000;
    const auto e = dirichlet_total_mass(f, 1.0, Box{{}, 1.0}, cfg);
    const double oracle = interval_survival(2.0);
    CHECK(std::abs(std::exp(e.log_mean) - oracle) <= 3.0 * e.std_error * std::exp(e.log_mean));
    CHECK(e.exit_fraction == doctest::Approx(1.0 - oracle).epsilon(0.05));
}

TEST_CASE("Dirichlet estimate near zero horizon and with an unreachable boundary") {
    const auto zero = FieldSample::constant(1, 2.0, 0.125, 0.0);
    PathConfig cfg;
    cfg.t = 1e-3;
    cfg.dt = 1e-4;
    cfg.paths = 1000;
    const auto e = dirichlet_total_mass(zero, 1.0, Box{{}, 1.0}, cfg);
    CHECK(std::abs(e.log_mean) <= 3.0 * e.std_error);

    const auto f = sample_field(triangular(1), 30.0, 1.0, 1.0 / 16, 17);
    cfg.t = 1.0;
    cfg.dt = 0.02;
    const auto free = total_mass(f, 1.0, cfg);
    const auto wide = dirichlet_total_mass(f, 1.0, Box{{}, 29.0}, cfg);
    CHECK(wide.log_mean == free.log_mean);
    const auto tight = dirichlet_total_mass(f, 1.0, Box{{0.3, 0, 0}, 1.0}, cfg);
    CHECK(tight.log_mean <= free.log_mean);
    CHECK_THROWS_AS(dirichlet_total_mass(f, 1.0, Box{{}, 0.01}, cfg), NumericalError);
}

TEST_CASE("total mass is monotone in sigma for a nonnegative field") {
    auto f = sample_field(triangular(1), 10.0, 1.0, 1.0 / 16, 4);
    for (double& v : f.values) v = std::abs(v);
    PathConfig cfg;
    cfg.t = 1.0;
    cfg.dt = 0.02;
    cfg.paths = 300;
    double prev = -1.0;
    for (double s : {0.0, 0.5, 1.0, 2.0}) {
        const double lm = total_mass(f, s, cfg).log_mean;
        CHECK(lm >= prev);
        prev = lm;
    }
}

TEST_CASE("annealed mean is nondecreasing in |sigma| with common random numbers") {
    std::vector<double> mean_u(3, 0.0);
    const double sig[] = {0.25, 0.5, 1.0};
    const int R = 40;
    for (int r = 0; r < R; ++r) {
        const auto f = sample_field(triangular(1), 8.0, 1.0, 1.0 / 16, 800 + r);
        PathConfig cfg;
        cfg.t = 1.0;
        cfg.dt = 0.05;
        cfg.paths = 200;
        cfg.seed = 12 + r;
        for (int i = 0; i < 3; ++i) mean_u[i] += std::exp(total_mass(f, -sig[i], cfg).log_mean) / R;
    }
    CHECK(mean_u[0] <= mean_u[1]);
    CHECK(mean_u[1] <= mean_u[2]);
}

TEST_CASE("total mass has the same law under xi and -xi") {
    std::vector<double> a, b;
    SampleOptions neg;
    neg.negate_noise = true;
    for (int r = 0; r < 60; ++r) {
        PathConfig cfg;
        cfg.t = 1.0;
        cfg.dt = 0.05;
        cfg.paths = 100;
        cfg.seed = 3 + r;
        a.push_back(total_mass(sample_field(triangular(1), 8.0, 1.0, 1.0 / 8, 2 * r), 1.0, cfg).log_mean);
        b.push_back(total_mass(sample_field(triangular(1), 8.0, 1.0, 1.0 / 8, 2 * r + 1, neg), 1.0, cfg).log_mean);
    }
    CHECK(stats::ks_two_sample(a, b).p_value > 0.01);
}

TEST_CASE("trace formula on the zero potential") {
    const double dx = 1.0 / 64;
    auto f = std::make_shared<const FieldSample>(FieldSample::constant(1, 1.0, dx, 0.0));
    const auto op = assemble(f, Box{{}, 1.0}, 1.0);
    PathConfig cfg;
    cfg.dt = 0.005;
    cfg.paths = 20000;
    for (double t : {0.5, 1.0}) {
        const int k = trace_truncation_bound(op, -kPi * kPi / 8.0, t);
        const auto sp = top_eigenpairs(op, k);
        const auto rep = trace_check(op, sp, t, cfg);
        double analytic = 0.0;
        for (int j = 1; j < 200; ++j) analytic += std::exp(-j * j * kPi * kPi * t / 8.0);
        CHECK(std::abs(rep.spectral - analytic) <= 3.0 * rep.mc_std_error);
        CHECK(std::abs(rep.monte_carlo - analytic) <= 3.0 * rep.mc_std_error);
        CHECK(rep.z_score <= 3.0);
        CHECK(rep.truncation_ratio < 1e-6);
    }
}

TEST_CASE("trace check rejects a truncated spectral sum and agrees with the dense route") {
    auto f = std::make_shared<const FieldSample>(sample_field(triangular(1), 2.5, 1.0, 1.0 / 32, 61));
    const auto op = assemble(f, Box{{}, 2.0}, 1.0);
    PathConfig cfg;
    cfg.dt = 0.01;
    cfg.paths = 200;
    const auto few = top_eigenpairs(op, 2);
    CHECK_THROWS_AS(trace_check(op, few, 0.5, cfg), ConfigError);
    const int k = trace_truncation_bound(op, few.values[0], 0.5);
    const auto sp = top_eigenpairs(op, k), de = dense_eigenpairs(op, k);
    double s1 = 0, s2 = 0;
    for (int i = 0; i < k; ++i) {
        s1 += std::exp(0.5 * sp.values[i]);
        s2 += std::exp(0.5 * de.values[i]);
    }
    CHECK(std::abs(s1 - s2) <= 1e-6 * s2);
}

TEST_CASE("trace formula on a random field, short and long horizon") {
    auto f = std::make_shared<const FieldSample>(sample_field(triangular(1), 4.5, 1.0, 1.0 / 32, 62));
    const auto op = assemble(f, Box{{}, 3.0}, 1.0);
    PathConfig cfg;
    cfg.dt = 0.01;
    cfg.paths = 20000;
    const double l1 = principal_eigenvalue(op);
    const auto sp1 = top_eigenpairs(op, trace_truncation_bound(op, l1, 1.0));
    const auto short_rep = trace_check(op, sp1, 1.0, cfg);
    CHECK(short_rep.z_score <= 3.0);

    cfg.dt = 0.05;
    const auto sp20 = top_eigenpairs(op, trace_truncation_bound(op, l1, 20.0));
    const auto long_rep = trace_check(op, sp20, 20.0, cfg);
    CHECK(long_rep.spectral / std::exp(20.0 * l1) == doctest::Approx(1.0).epsilon(0.05));
    CHECK(std::abs(long_rep.monte_carlo / long_rep.spectral - 1.0) <= 3.0 * long_rep.mc_std_error / long_rep.spectral);
}

TEST_CASE("annealed moment hooks and bounds") {
    CovarianceSpec spec = triangular(1);
    const auto kern = build_kernel(spec, 1.0 / 16);
    PathConfig cfg;
    cfg.t = 0.5;
    cfg.dt = 0.01;
    cfg.paths = 200;
    AnnealedOptions zero;
    zero.zero_covariance = true;
    const auto z = annealed_moment(kern, 1.0, 2, cfg, zero);
    CHECK(z.log_mean == 0.0);
    CHECK(z.std_error == 0.0);
    CHECK_THROWS_AS(annealed_moment(kern, 1.0, 4, cfg), ConfigError);

    // trivial bound R <= R(0) in d = 2
    const double eps = 0.5;
    const auto k2 = build_kernel(triangular(2).scaled(eps), eps / 8);
    for (int p : {1, 2}) {
        cfg.dt = 0.02;
        cfg.t = 0.5;
        const auto e = annealed_moment(k2, 1.0, p, cfg);
        CHECK(e.log_mean / (p * p) <= k2.cov0() * cfg.t * cfg.t / 2.0 * (1.0 + 1e-9));
    }
}

TEST_CASE("annealed first moment matches two-stage sampling") {
    const auto kern = build_kernel(triangular(1), 1.0 / 16);
    PathConfig cfg;
    cfg.t = 0.5;
    cfg.dt = 0.01;
    cfg.paths = 4000;
    const auto e = annealed_moment(kern, 1.0, 1, cfg);

    // oracle: average U over independent fields, each with its own paths
    const int R = 400;
    std::vector<double> u(R);
    for (int r = 0; r < R; ++r) {
        PathConfig c = cfg;
        c.paths = 100;
        c.seed = 5000 + r;
        u[r] = std::exp(total_mass(sample_field(triangular(1), 6.0, 1.0, 1.0 / 16, 70000 + r), 1.0, c).log_mean);
    }
    const double m = stats::mean(u);
    const double se_oracle = std::sqrt(stats::variance(u) / R) / m;
    CHECK(std::abs(e.log_mean - std::log(m)) <= 3.0 * std::hypot(e.std_error, se_oracle));
}

TEST_CASE("annealed second moment approaches p^2 R(0)/2 from below as t shrinks") {
    const auto kern = build_kernel(triangular(1), 1.0 / 16);
    const double target = 4.0 * kern.cov0() / 2.0;
    double prev = 0.0;
    for (double t : {1.0, 0.5, 0.25}) {
        PathConfig cfg;
        cfg.t = t;
        cfg.dt = 0.005;
        cfg.paths = 2000;
        const auto e = annealed_moment(kern, 1.0, 2, cfg);
        const double stat = e.log_mean / (t * t);
        CHECK(stat <= target * (1.0 + 1e-9));
        CHECK(stat > prev);
        prev = stat;
    }
}

TEST_CASE("growth statistic on constant and random fields") {
    SUBCASE("constant potential") {
        const double c = 0.3;
        std::vector<GrowthInput> grid;
        for (double t : {4.0, 8.0}) grid.push_back({t, 1.0, std::make_shared<const FieldSample>(FieldSample::constant(1, 20.0, 0.125, c))});
        PathConfig cfg;
        cfg.dt = 0.05;
        cfg.paths = 100;
        const auto pts = quenched_growth_statistic(grid, 1.0, cfg);
        for (const auto& p : pts) {
            CHECK_FALSE(p.proxy);
            CHECK(p.regular_stat == doctest::Approx(c * p.t / p.regular_normalizer).epsilon(1e-12));
        }
    }
    SUBCASE("non-increasing t grid is rejected") {
        auto f = std::make_shared<const FieldSample>(FieldSample::constant(1, 20.0, 0.125, 0.0));
        PathConfig cfg;
        CHECK_THROWS_AS(quenched_growth_statistic({{4.0, 1.0, f}, {4.0, 1.0, f}}, 1.0, cfg), ConfigError);
    }
    SUBCASE("proxy and direct estimates agree where both are available") {
        const double t = std::exp(2.5);
        auto f = std::make_shared<const FieldSample>(sample_field(triangular(1), 3.5 * std::sqrt(t) + 2.0, 1.0, 1.0 / 16, 404));
        PathConfig cfg;
        cfg.dt = 0.05;
        cfg.paths = 4000;
        const auto pts = quenched_growth_statistic({{t, 1.0, f}}, 1.0, cfg);
        REQUIRE_FALSE(pts[0].proxy);
        CHECK(std::abs(pts[0].direct_log_u - t * pts[0].lambda1) / pts[0].regular_normalizer < 0.2);
    }
    SUBCASE("regular statistic rises toward sqrt(2 R(0))") {
        const double R0 = build_kernel(triangular(1), 1.0 / 8).cov0();
        std::vector<double> med;
        for (double lt : {2.0, 4.0, 6.0}) {
            const double t = std::exp(lt);
            std::vector<double> s;
            for (int r = 0; r < 20; ++r) {
                auto f = std::make_shared<const FieldSample>(sample_field(triangular(1), t + 1.0, 1.0, 1.0 / 8, 900 + 31 * r + int(lt)));
                PathConfig cfg;
                cfg.dt = 0.25;
                cfg.paths = 100;
                s.push_back(quenched_growth_statistic({{t, 1.0, f}}, 1.0, cfg).front().regular_stat);
            }
            med.push_back(stats::median(s));
        }
        CHECK(med[0] < med[1]);
        CHECK(med[1] < med[2]);
        CHECK(med[2] < std::sqrt(2.0 * R0));
    }
}
