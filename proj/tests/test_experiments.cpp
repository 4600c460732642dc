#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "anderson/experiments.hpp"

using namespace anderson;

namespace {

constexpr double kPi = std::numbers::pi;

CovarianceSpec kernel(int d, double h = 1.0) {
    CovarianceSpec s;
    s.dim = d;
    s.holder_h = h;
    return s;
}

EpsSchedule schedule(ScheduleKind kind, double gamma, int d = 1, double h = 1.0) {
    EpsSchedule s;
    s.kind = kind;
    s.gamma = gamma;
    s.dim = d;
    s.holder_h = h;
    return s;
}

SweepOptions small_sweep() {
    SweepOptions o;
    o.t_grid = {std::exp(2.0), std::exp(2.5), std::exp(3.0)};
    o.replicas = 4;
    o.k = 4;
    o.seed = 77;
    return o;
}

}  // namespace

TEST_CASE("schedule bounds are enforced per kind") {
    CHECK_NOTHROW(schedule(ScheduleKind::Regular, 0.2).validate());
    CHECK_THROWS_AS(schedule(ScheduleKind::Regular, 1.0 / 3.0).validate(), ConfigError);
    CHECK_THROWS_AS(schedule(ScheduleKind::Regular, -0.1).validate(), ConfigError);
    CHECK_NOTHROW(schedule(ScheduleKind::Singular, 0.4).validate());
    CHECK_THROWS_AS(schedule(ScheduleKind::Singular, 1.0 / 3.0).validate(), ConfigError);
    CHECK_NOTHROW(schedule(ScheduleKind::Critical, 1.0 / 3.0).validate());
    CHECK_THROWS_AS(schedule(ScheduleKind::Critical, 0.3).validate(), ConfigError);

    // d = 2, h = 1: critical 1/2, window width c_2 = 1/6.
    CHECK(schedule(ScheduleKind::Singular, 0.6, 2).c_d() == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
    CHECK_NOTHROW(schedule(ScheduleKind::Singular, 0.6, 2).validate());
    CHECK_THROWS_AS(schedule(ScheduleKind::Singular, 0.7, 2).validate(), ConfigError);
    EpsSchedule beyond = schedule(ScheduleKind::Singular, 0.7, 2);
    beyond.allow_unsupported = true;
    CHECK_NOTHROW(beyond.validate());
    CHECK(beyond.unsupported());
    // h <= d/4 has no singular phase in d = 2.
    CHECK_THROWS_AS(schedule(ScheduleKind::Singular, 0.55, 2, 0.5).validate(), ConfigError);
    CHECK_THROWS_AS(schedule(ScheduleKind::Regular, 0.1, 4).validate(), ConfigError);
}

TEST_CASE("eps schedule is min(1, (log t)^-gamma)") {
    const EpsSchedule s = schedule(ScheduleKind::Regular, 0.2);
    for (double lt : {0.5, 1.0, 2.0, 6.0}) {
        const double oracle = std::min(1.0, std::pow(lt, -0.2));
        CHECK(s.eps(std::exp(lt)) == doctest::Approx(oracle).epsilon(1e-14));
    }
    EpsSchedule c;
    c.eps0 = 0.3;
    CHECK(c.eps(100.0) == 0.3);
}

TEST_CASE("scale diagnostics at eps = 1 reduce to the unscaled scales") {
    const DiscreteKernel k = build_kernel(kernel(1), 1.0 / 64.0);
    EpsSchedule c;
    c.eps0 = 1.0;
    for (double t : {10.0, 100.0, 1000.0}) {
        const ScaleDiagnostics s = scale_diagnostics(k, c, t);
        const double lt = std::log(t);
        CHECK(s.big_l == doctest::Approx(std::sqrt(2.0 * k.cov0() * lt)).epsilon(1e-14));
        CHECK(s.s == doctest::Approx(1.0 / std::sqrt(2.0 * k.cov0() * lt)).epsilon(1e-14));
        REQUIRE(s.hessian_available);
        CHECK(s.ratio == doctest::Approx(s.small_l / s.big_l).epsilon(1e-14));
    }
}

TEST_CASE("predicted phase matches the schedule kind") {
    for (int d : {1, 2, 3}) {
        const DiscreteKernel k = build_kernel(kernel(d), 0.25);
        const double gc = 1.0 / (4.0 - d);
        const EpsSchedule reg = schedule(ScheduleKind::Regular, 0.5 * gc, d);
        const EpsSchedule sing = schedule(ScheduleKind::Singular, gc + 0.05, d);
        const EpsSchedule crit = schedule(ScheduleKind::Critical, gc, d);
        for (double lt : {2.0, 4.0, 8.0}) {
            CHECK(scale_diagnostics(k, reg, std::exp(lt)).predicted == ScheduleKind::Regular);
            CHECK(scale_diagnostics(k, sing, std::exp(lt)).predicted == ScheduleKind::Singular);
            CHECK(scale_diagnostics(k, crit, std::exp(lt)).predicted == ScheduleKind::Critical);
        }
    }
}

TEST_CASE("sweep spacing satisfies every mesh rule") {
    const DiscreteKernel k = build_kernel(kernel(1), 1.0 / 64.0);
    const EpsSchedule s = schedule(ScheduleKind::Singular, 0.4);
    const MeshRule rule;
    for (double lt : {2.0, 4.0, 6.0}) {
        const double t = std::exp(lt);
        const double dx = sweep_spacing(k, s, t, rule);
        CHECK(dx <= s.eps(t) / 8.0 + 1e-15);
        CHECK(dx <= s.eps(t) / 4.0 + 1e-15);
        CHECK(dx <= scale_diagnostics(k, s, t).s / 8.0 + 1e-15);
    }
}

TEST_CASE("sweep records satisfy the per-record invariants") {
    const SweepResult r = run_sweep(kernel(1), schedule(ScheduleKind::Regular, 0.2), small_sweep());
    REQUIRE(r.records.size() == 12);
    CHECK_FALSE(r.truncated);
    double prev_t = 0.0;
    for (const auto& rec : r.records) {
        CHECK(rec.t >= prev_t);
        prev_t = rec.t;
        CHECK(rec.regular_normalizer > 0.0);
        CHECK(rec.singular_normalizer > 0.0);
        REQUIRE(rec.lambdas.size() == 4);
        for (std::size_t i = 1; i < rec.lambdas.size(); ++i) CHECK(rec.lambdas[i] <= rec.lambdas[i - 1]);
        CHECK(rec.regular_stat == doctest::Approx(rec.lambdas[0] / rec.regular_normalizer).epsilon(1e-14));
        CHECK(rec.singular_stat == doctest::Approx(rec.lambdas[0] / rec.singular_normalizer).epsilon(1e-14));
        CHECK(rec.spread_stat >= 0.0);
        CHECK(rec.regular_normalizer ==
              doctest::Approx(std::pow(rec.eps, -0.5) * std::sqrt(std::log(rec.t))).epsilon(1e-14));
        CHECK(rec.singular_normalizer == doctest::Approx(std::pow(std::log(rec.t), 2.0 / 3.0)).epsilon(1e-14));
        CHECK(rec.scales.predicted == ScheduleKind::Regular);
        CHECK(rec.proxy);
        CHECK(rec.log_u == doctest::Approx(rec.t * rec.lambdas[0]).epsilon(1e-14));
        CHECK(rec.localization_length > 0.0);
    }
}

TEST_CASE("sweeps are reproducible bit for bit and independent of the worker count") {
    SweepOptions o = small_sweep();
    const SweepResult a = run_sweep(kernel(1), schedule(ScheduleKind::Singular, 0.4), o);
    const SweepResult b = run_sweep(kernel(1), schedule(ScheduleKind::Singular, 0.4), o);
    o.workers = 3;
    const SweepResult c = run_sweep(kernel(1), schedule(ScheduleKind::Singular, 0.4), o);
    REQUIRE(a.records.size() == b.records.size());
    REQUIRE(a.records.size() == c.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].seed == b.records[i].seed);
        CHECK(a.records[i].lambdas == b.records[i].lambdas);
        CHECK(a.records[i].lambdas == c.records[i].lambdas);
    }
}

TEST_CASE("fresh noise per grid point unless common random numbers are requested") {
    SweepOptions o = small_sweep();
    const SweepResult fresh = run_sweep(kernel(1), schedule(ScheduleKind::Regular, 0.2), o);
    o.common_random_numbers = true;
    const SweepResult crn = run_sweep(kernel(1), schedule(ScheduleKind::Regular, 0.2), o);
    auto seed_of = [](const SweepResult& r, std::size_t ti, int rep) {
        return r.records[ti * 4 + static_cast<std::size_t>(rep)].seed;
    };
    CHECK(seed_of(fresh, 0, 1) != seed_of(fresh, 1, 1));
    CHECK(seed_of(crn, 0, 1) == seed_of(crn, 1, 1));
    CHECK(seed_of(crn, 0, 1) != seed_of(crn, 0, 2));
}

TEST_CASE("zero potential sweep gives the pure Laplacian statistic") {
    SweepOptions o = small_sweep();
    o.sigma = 0.0;
    o.replicas = 1;
    const SweepResult r = run_sweep(kernel(1), schedule(ScheduleKind::Regular, 0.2), o);
    double prev = HUGE_VAL;
    for (const auto& rec : r.records) {
        const double lambda = -kPi * kPi / (8.0 * rec.t * rec.t);
        CHECK(rec.lambdas[0] == doctest::Approx(lambda).epsilon(1e-3));
        CHECK(rec.regular_stat == doctest::Approx(lambda / rec.regular_normalizer).epsilon(1e-3));
        CHECK(std::abs(rec.regular_stat) < prev);
        prev = std::abs(rec.regular_stat);
    }
}

TEST_CASE("memory budget breach returns partial results with a truncation marker") {
    SweepOptions o = small_sweep();
    o.memory_cap_bytes = 1;
    const SweepResult r = run_sweep(kernel(1), schedule(ScheduleKind::Regular, 0.2), o);
    CHECK(r.truncated);
    CHECK(r.truncated_at == o.t_grid[0]);
    CHECK(r.records.empty());
}

TEST_CASE("invalid sweep inputs are rejected") {
    SweepOptions o = small_sweep();
    o.t_grid = {std::exp(3.0), std::exp(2.0)};
    CHECK_THROWS_AS(run_sweep(kernel(1), schedule(ScheduleKind::Regular, 0.2), o), ConfigError);
    o.t_grid = {2.0, 10.0};
    CHECK_THROWS_AS(run_sweep(kernel(1), schedule(ScheduleKind::Regular, 0.2), o), ConfigError);
    o = small_sweep();
    CHECK_THROWS_AS(run_sweep(kernel(2), schedule(ScheduleKind::Regular, 0.2), o), ConfigError);
}

TEST_CASE("noiseless synthetic records recover the singular scaling law exactly") {
    const double l_d = 0.6551853;
    std::vector<ScalingPoint> pts;
    for (double lt : {2.0, 3.0, 4.0, 5.0, 6.0})
        for (int rep = 0; rep < 10; ++rep) pts.push_back({std::exp(lt), std::pow(lt, -0.4), 1, l_d * std::pow(lt, 2.0 / 3.0)});
    const ScalingFit f = fit_scaling(pts, ScalingModel::Singular, 200, 1);
    CHECK(f.prefactor == doctest::Approx(l_d).epsilon(1e-10));
    CHECK(f.exponent == doctest::Approx(2.0 / 3.0).epsilon(1e-10));
    CHECK(f.points == 50);

    // Regular model: Λ_1 = A ε^{-1/2} (log t)^{1/2}.
    std::vector<ScalingPoint> reg;
    for (double lt : {2.0, 3.0, 4.0, 5.0}) {
        const double eps = std::pow(lt, -0.2);
        for (int rep = 0; rep < 10; ++rep) reg.push_back({std::exp(lt), eps, 1, 1.1547 * std::pow(eps, -0.5) * std::sqrt(lt)});
    }
    const ScalingFit g = fit_scaling(reg, ScalingModel::Regular, 200, 1);
    CHECK(g.prefactor == doctest::Approx(1.1547).epsilon(1e-10));
    CHECK(g.exponent == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("bootstrap interval covers the truth under 10% multiplicative noise") {
    const double l_d = 0.6551853;
    std::mt19937_64 rng(2718);
    std::normal_distribution<double> z;
    std::vector<ScalingPoint> pts;
    for (double lt : {2.0, 3.0, 4.0, 5.0, 6.0, 7.0})
        for (int rep = 0; rep < 20; ++rep)
            pts.push_back({std::exp(lt), 0.5, 1, l_d * std::pow(lt, 2.0 / 3.0) * (1.0 + 0.1 * z(rng))});
    const ScalingFit f = fit_scaling(pts, ScalingModel::Singular, 2000, 5);
    CHECK(f.prefactor_lo <= l_d);
    CHECK(f.prefactor_hi >= l_d);
    CHECK(std::abs(f.prefactor / l_d - 1.0) < 0.15);
    CHECK(f.exponent_lo <= 2.0 / 3.0);
    CHECK(f.exponent_hi >= 2.0 / 3.0);
}

TEST_CASE("fit_scaling requires four grid points and ten replicas") {
    std::vector<ScalingPoint> pts;
    for (double lt : {2.0, 3.0, 4.0})
        for (int rep = 0; rep < 10; ++rep) pts.push_back({std::exp(lt), 1.0, 1, lt});
    CHECK_THROWS_AS(fit_scaling(pts, ScalingModel::Singular), ConfigError);
    pts.clear();
    for (double lt : {2.0, 3.0, 4.0, 5.0})
        for (int rep = 0; rep < 9; ++rep) pts.push_back({std::exp(lt), 1.0, 1, lt});
    CHECK_THROWS_AS(fit_scaling(pts, ScalingModel::Singular), ConfigError);
}

TEST_CASE("identical schedules on both arms give equal rows and no discrimination") {
    const SweepResult r = run_sweep(kernel(1), schedule(ScheduleKind::Regular, 0.2), small_sweep());
    const DiscriminationReport rep = discrimination_matrix(r, r, 200, 0.05, 3);
    for (int n = 0; n < 2; ++n) CHECK(rep.slope[0][n] == rep.slope[1][n]);
    CHECK(rep.correct_flattest[0] != rep.correct_flattest[1]);
    CHECK_FALSE(rep.pass);
}

TEST_CASE("discrimination matrix on synthetic arms with the correct pattern passes") {
    // Each arm is exactly flat under its own normalizer.
    auto arm = [](ScheduleKind kind, double gamma, bool own_regular) {
        SweepResult r;
        r.schedule = schedule(kind, gamma);
        r.kernel = kernel(1);
        std::mt19937_64 rng(kind == ScheduleKind::Regular ? 1 : 2);
        std::normal_distribution<double> z;
        for (double lt : {2.0, 3.0, 4.0, 5.0, 6.0})
            for (int rep = 0; rep < 20; ++rep) {
                SweepRecord rec;
                rec.t = std::exp(lt);
                rec.eps = std::pow(lt, -gamma);
                rec.regular_normalizer = std::pow(rec.eps, -0.5) * std::sqrt(lt);
                rec.singular_normalizer = std::pow(lt, 2.0 / 3.0);
                const double base = own_regular ? rec.regular_normalizer : rec.singular_normalizer;
                rec.lambdas = {base * (1.0 + 0.02 * z(rng))};
                rec.regular_stat = rec.lambdas[0] / rec.regular_normalizer;
                rec.singular_stat = rec.lambdas[0] / rec.singular_normalizer;
                r.records.push_back(rec);
            }
        return r;
    };
    // Wide gamma gap so the wrong normalizer has a clearly nonzero slope.
    const SweepResult reg = arm(ScheduleKind::Regular, 0.0, true);
    const SweepResult sing = arm(ScheduleKind::Singular, 1.0, false);
    const DiscriminationReport rep = discrimination_matrix(reg, sing, 500, 0.05, 9);
    CHECK(std::abs(rep.slope[0][0]) < std::abs(rep.slope[0][1]));
    CHECK(std::abs(rep.slope[1][1]) < std::abs(rep.slope[1][0]));
    CHECK(rep.correct_flattest[0]);
    CHECK(rep.correct_flattest[1]);
    CHECK(rep.p_value[0] < 0.05);
    CHECK(rep.p_value[1] < 0.05);
    CHECK(rep.pass);
}

TEST_CASE("trend helpers") {
    TrendSummary s;
    s.t = {1, 2, 3};
    s.median = {0.5, 0.7, 0.9};
    CHECK(monotone_toward(s, 1.0));
    CHECK_FALSE(monotone_toward(s, 0.6));
    CHECK_FALSE(strictly_shrinking(s));
    s.median = {0.9, 0.5, 0.1};
    CHECK(strictly_shrinking(s));
}

TEST_CASE("model selection recognises the generating growth law") {
    std::vector<AnnealedPoint> t3, t2;
    for (double t : {0.25, 0.5, 1.0, 2.0})
        for (int p : {1, 2}) {
            AnnealedPoint a;
            a.t = t;
            a.p = p;
            a.eps = 0.1 * std::pow(t, -1.5);
            a.estimate.log_mean = 0.05 * p * p * p * t * t * t;
            t3.push_back(a);
            AnnealedPoint b = a;
            b.eps = std::min(1.0, std::pow(t, -0.5));
            b.estimate.log_mean = 0.33 * p * p * t * t / b.eps;
            t2.push_back(b);
        }
    CHECK(select_growth_model(t3).margin > 0.0);
    CHECK(select_growth_model(t2).margin < 0.0);
}

TEST_CASE("annealed moments respect the bound and approach it at small t") {
    AnnealedSweepOptions o;
    o.t_grid = {0.05, 0.25};
    o.paths = 300;
    o.seed = 21;
    const AnnealedReport rep = annealed_sweep(kernel(1), o);
    CHECK(rep.bound_respected);
    for (const auto& p : rep.slow) {
        CHECK(p.normalized <= p.bound * (1.0 + o.bound_slack));
        CHECK(p.bound == doctest::Approx(p.p * p.p * p.r0 / 2.0).epsilon(1e-14));
        // At t = 0.05 with eps = 1 the paths barely move: log E[U^p] ≈ p² R(0) t² / 2.
        if (p.t == 0.05) CHECK(p.normalized == doctest::Approx(p.bound).epsilon(0.05));
    }
    CHECK_THROWS_AS(annealed_sweep(kernel(2), o), ConfigError);
}
