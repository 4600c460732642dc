#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anderson/feynman_kac.hpp"
#include "anderson/noise.hpp"
#include "anderson/operator.hpp"

namespace anderson {

enum class ScheduleKind { Constant, Regular, Singular, Critical };

std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);

/// ε(t) = (log t)^{-γ}, or the constant eps0.
struct EpsSchedule {
    ScheduleKind kind = ScheduleKind::Constant;
    double gamma = 0.0;
    double eps0 = 1.0;
    int dim = 1;
    double holder_h = 1.0;
    /// Accept a singular γ above the proven window (d = 2, 3) and flag it.
    bool allow_unsupported = false;

    double critical_gamma() const { return 1.0 / (4.0 - dim); }
    /// h / (d (d + h)), the width of the proven singular window in d = 2, 3.
    double c_d() const { return holder_h / (dim * (dim + holder_h)); }
    /// Singular γ beyond critical_gamma() + c_d() in d = 2, 3.
    bool unsupported() const;
    void validate() const;
    double eps(double t) const;
};

struct MeshRule {
    double points_per_eps = 8.0;     ///< Δx <= ε / points_per_eps
    double points_per_rho = 4.0;     ///< Δx <= ε ρ / points_per_rho (the noise module's rule)
    double points_per_scale = 8.0;   ///< Δx <= s̃_t / points_per_scale
};

struct ScaleDiagnostics {
    double big_l = 0.0;        ///< L̃_t = ε^{(4-d)/2} sqrt(2 d R(0) log t)
    double small_l = 0.0;      ///< l̃_t; NaN when the Hessian trace is unavailable
    double s = 0.0;            ///< s̃_t = ε^{(d-2)/2} (2 d R(0) log t)^{-1/2}
    double ratio = 0.0;        ///< l̃_t / L̃_t; NaN when unavailable
    bool hessian_available = false;
    double hessian_trace = 0.0;   ///< Tr[(-R''(0))^{1/2}]
    /// Phase predicted by the exponent of ratio in log t: ε^{-(4-d)/4} (log t)^{-1/4}
    /// decays iff γ < 1/(4-d).
    ScheduleKind predicted = ScheduleKind::Regular;
};

/// Scales for one (t, ε) with R(0) and the Hessian trace taken from the
/// unscaled kernel table `kernel`.
ScaleDiagnostics scale_diagnostics(const DiscreteKernel& kernel, const EpsSchedule& schedule, double t);

struct SweepRecord {
    double t = 0.0;
    double eps = 1.0;
    int dim = 1;
    int replica = 0;
    std::uint64_t seed = 0;
    double spacing = 0.0;
    std::vector<double> lambdas;        ///< Λ_1 >= ... >= Λ_k on Q_t
    double regular_normalizer = 0.0;    ///< ε^{-d/2} sqrt(log t)
    double singular_normalizer = 0.0;   ///< (log t)^{2/(4-d)}
    double regular_stat = 0.0;          ///< Λ_1 / regular_normalizer
    double singular_stat = 0.0;
    double spread_stat = 0.0;           ///< (Λ_1 - Λ_k) / regular_normalizer
    double log_u = 0.0;                 ///< direct MC, or tΛ_1 when proxy
    double log_u_se = 0.0;
    bool proxy = true;
    double tm_regular_stat = 0.0;       ///< log U / (t ε^{-d/2} sqrt(log t))
    double tm_singular_stat = 0.0;      ///< log U / (t (log t)^{2/(4-d)})
    ScaleDiagnostics scales;
    double localization_length = 0.0;   ///< (participation · Δx^d)^{1/d} of Ψ_1
};

struct SweepOptions {
    std::vector<double> t_grid;
    int replicas = 20;
    int k = 4;
    double sigma = 1.0;
    std::uint64_t seed = 1;
    bool common_random_numbers = false;  ///< same field seed for every t of a replica
    bool direct_mc = false;              ///< attempt Feynman-Kac MC before the eigenvalue proxy
    PathConfig paths;                    ///< t and seed are set per point
    MeshRule mesh;
    EigenOptions eig;
    std::size_t memory_cap_bytes = std::size_t{1} << 30;
    int workers = 1;
};

struct SweepResult {
    EpsSchedule schedule;
    CovarianceSpec kernel;
    std::vector<SweepRecord> records;  ///< ordered by (t, replica)
    bool truncated = false;            ///< a grid point exceeded the memory cap
    double truncated_at = 0.0;         ///< first t not computed
    std::string note;
};

/// Δx for one grid point: the smallest of the three mesh rules.
double sweep_spacing(const DiscreteKernel& kernel, const EpsSchedule& schedule, double t, const MeshRule& rule);

/// Fresh ξ_{ε(t)} per (t, replica) unless common_random_numbers. The t grid
/// must be strictly increasing with t > e.
SweepResult run_sweep(const CovarianceSpec& kernel, const EpsSchedule& schedule, const SweepOptions& opts);

enum class ScalingModel { Regular, Singular };

std::string to_string(ScalingModel m);

/// Points for fit_scaling: one per (t, replica).
struct ScalingPoint {
    double t = 0.0;
    double eps = 1.0;
    int dim = 1;
    double lambda1 = 0.0;
};

std::vector<ScalingPoint> scaling_points(const std::vector<SweepRecord>& records);

struct ScalingFit {
    ScalingModel model = ScalingModel::Regular;
    double prefactor = 0.0;   ///< exp(intercept)
    double exponent = 0.0;    ///< on log t
    double prefactor_lo = 0.0, prefactor_hi = 0.0;
    double exponent_lo = 0.0, exponent_hi = 0.0;
    std::size_t points = 0;
};

/// log(Λ_1 ε^{d/2}) (regular) or log Λ_1 (singular) against log log t;
/// 95% percentile bootstrap over replicas within each t.
ScalingFit fit_scaling(const std::vector<ScalingPoint>& points, ScalingModel model, int bootstrap = 2000,
                       std::uint64_t seed = 7);

struct DiscriminationReport {
    int dim = 1;
    double gamma_regular = 0.0, gamma_singular = 0.0;
    /// slope[s][n]: slope of log median(Λ_1 / normalizer n) against log log t
    /// on schedule s. Index 0 = regular, 1 = singular.
    double slope[2][2] = {{0, 0}, {0, 0}};
    double slope_lo[2][2] = {{0, 0}, {0, 0}};
    double slope_hi[2][2] = {{0, 0}, {0, 0}};
    /// Bootstrap fraction with |slope[s][s]| >= |slope[s][1-s]|.
    double p_value[2] = {1.0, 1.0};
    bool correct_flattest[2] = {false, false};
    bool pass = false;
    SweepResult regular, singular;
};

struct DiscriminationOptions {
    SweepOptions sweep;
    int bootstrap = 2000;
    double alpha = 0.05;
};

/// Runs both sweeps on common seeds and builds the two-normalizer matrix.
DiscriminationReport phase_discrimination(const CovarianceSpec& kernel, const EpsSchedule& regular,
                                          const EpsSchedule& singular, const DiscriminationOptions& opts);

/// Matrix from existing sweeps (used by phase_discrimination and the report command).
DiscriminationReport discrimination_matrix(const SweepResult& regular, const SweepResult& singular, int bootstrap,
                                           double alpha, std::uint64_t seed);

enum class SweepStatistic { Regular, Singular, Spread };

/// Median and interquartile range of one statistic per grid point.
struct TrendSummary {
    std::vector<double> t, median, iqr;
};

TrendSummary summarize(const std::vector<SweepRecord>& records, SweepStatistic stat);
/// |median - limit| strictly decreasing along the grid.
bool monotone_toward(const TrendSummary& s, double limit);
/// Medians strictly decreasing along the grid.
bool strictly_shrinking(const TrendSummary& s);

/// ε(t) = min(1, a t^{-β}) for the annealed schedules.
struct PowerSchedule {
    double a = 1.0;
    double beta = 0.5;
    double eps(double t) const;
};

struct AnnealedPoint {
    double t = 0.0;
    double eps = 1.0;
    int p = 1;
    FKEstimate estimate;
    double r0 = 0.0;             ///< R(0) of the unscaled discrete kernel (ε R_ε(0))
    double normalized = 0.0;     ///< log E[U^p] / (ε^{-1} t²)
    double bound = 0.0;          ///< p² R(0) / 2
};

/// Growth models y = θ_p ε^{-1} t² and y = θ_p t³, one θ per p, fitted by
/// least squares on log y.
struct ModelSelection {
    double rss_t2 = 0.0;
    double rss_t3 = 0.0;
    double aic_t2 = 0.0, aic_t3 = 0.0;
    double margin = 0.0;   ///< aic_t2 - aic_t3; positive favours t³
};

struct AnnealedReport {
    std::vector<AnnealedPoint> slow, fast;
    ModelSelection slow_selection, fast_selection;
    double slow_p_exponent = 0.0;  ///< slope of log log-moment on log p at the largest t
    double fast_p_exponent = 0.0;
    bool bound_respected = true;
};

struct AnnealedSweepOptions {
    std::vector<double> t_grid{0.25, 0.5, 1.0, 2.0};
    std::vector<int> p_values{1, 2};
    PowerSchedule slow{1.0, 0.5};
    PowerSchedule fast{0.1, 1.5};
    long paths = 2000;
    double dt_fraction = 1.0;   ///< dt = dt_fraction (ε ρ)² / 4
    double max_dt = 0.01;
    double bound_slack = 1e-9;
    std::uint64_t seed = 3;
    int workers = 1;
};

/// d = 1 only.
AnnealedReport annealed_sweep(const CovarianceSpec& kernel, const AnnealedSweepOptions& opts);

ModelSelection select_growth_model(const std::vector<AnnealedPoint>& points);

/// For every p, |normalized - bound| strictly decreasing in t.
bool trends_toward_bound(const std::vector<AnnealedPoint>& points);

}  // namespace anderson
