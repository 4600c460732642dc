#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "anderson/noise.hpp"
#include "anderson/operator.hpp"

namespace anderson {

enum class Interpolation { NearestLattice, Multilinear };

std::string to_string(Interpolation i);
Interpolation interpolation_from_string(const std::string& s);

struct PathConfig {
    double t = 1.0;
    double dt = 0.01;
    long paths = 1000;
    std::uint64_t seed = 1;
    Interpolation interpolation = Interpolation::Multilinear;
    int workers = 1;
};

/// Log-domain Monte-Carlo estimate. std_error is the delta-method standard
/// error of log_mean, sd(w) / (sqrt(M) mean(w)).
struct FKEstimate {
    double log_mean = 0.0;
    double std_error = 0.0;
    long M = 0;
    double exit_fraction = 0.0;
    double ess = 0.0;
};

/// log-sum-exp aggregation of per-sample log-weights (-inf allowed). Throws
/// NumericalError when the effective sample size drops below `min_ess`.
FKEstimate aggregate_log_weights(std::span<const double> log_w, double min_ess = 10.0);

/// U(t) = E^0 exp(σ ∫_0^t ξ(B_s) ds) with exact Gaussian increments and the
/// trapezoid rule in time. The field must cover the region a path reaches
/// with probability above 1 - 1e-3; the rare paths that still leave it see
/// ξ = 0 there and are counted in exit_fraction.
FKEstimate total_mass(const FieldSample& field, double sigma, const PathConfig& cfg);

/// Paths killed on leaving the open box, including the Brownian-bridge
/// crossing probability between grid times. exit_fraction is the mean killed
/// mass. Uses the same per-path streams as total_mass.
FKEstimate dirichlet_total_mass(const FieldSample& field, double sigma, const Box& box, const PathConfig& cfg);

struct TraceReport {
    double t = 0.0;
    double spectral = 0.0;           ///< Σ_k e^{tΛ_k} over the supplied eigenvalues
    double truncation_ratio = 0.0;   ///< e^{t(Λ_k* - Λ_1)}
    double monte_carlo = 0.0;        ///< ∫_Ω G_t(x,x) E^{x,x}[...] dx
    double mc_std_error = 0.0;
    double relative_discrepancy = 0.0;
    double z_score = 0.0;            ///< |spectral - mc| / mc_std_error
    int k_used = 0;
};

/// Upper bound on the number of eigenvalues of the operator above
/// Λ_1 - log(1e6)/t, from the free discrete spectrum shifted by max σξ.
/// Enough eigenpairs for trace_check's truncation precondition.
int trace_truncation_bound(const DiscreteOperator& op, double lambda1, double t);

/// Trace formula check: the spectral sum against a Brownian-bridge estimate
/// of the diagonal of the Dirichlet Feynman-Kac kernel, with start points
/// stratified over the operator's lattice. cfg.paths bridges.
TraceReport trace_check(const DiscreteOperator& op, const SpectralResult& spectral, double t, const PathConfig& cfg);

struct GrowthInput {
    double t = 0.0;
    double eps = 1.0;
    std::shared_ptr<const FieldSample> field;  ///< covers Q_t
};

struct GrowthPoint {
    double t = 0.0;
    double eps = 1.0;
    double lambda1 = 0.0;          ///< Λ_1(A, Q_t)
    double log_u = 0.0;            ///< direct MC, or tΛ_1 when proxy
    double log_u_se = 0.0;
    double direct_log_u = 0.0;     ///< NaN when the direct estimate failed
    double regular_normalizer = 0.0;   ///< t ε^{-d/2} sqrt(log t)
    double singular_normalizer = 0.0;  ///< t (log t)^{2/(4-d)}
    double regular_stat = 0.0;
    double singular_stat = 0.0;
    bool proxy = false;
};

/// log U_{ε(t)}(t) on each grid point, normalized both ways. Falls back to the
/// eigenvalue proxy tΛ_1(A, Q_t) when the direct estimate degenerates.
std::vector<GrowthPoint> quenched_growth_statistic(const std::vector<GrowthInput>& grid, double sigma,
                                                   const PathConfig& cfg, const EigenOptions& eig = {});

struct AnnealedOptions {
    bool zero_covariance = false;  ///< test hook: R replaced by 0
};

/// E[U(t)^p] = E exp(σ²/2 Σ_{i,j} ∫∫ R_ε(B^i_u - B^j_v) du dv) over p-tuples
/// of independent paths. `kernel` holds the R_ε table (build_kernel of the
/// eps-scaled spec). The double time integral uses trapezoid weights on the
/// cfg.dt grid.
FKEstimate annealed_moment(const DiscreteKernel& kernel, double sigma, int p, const PathConfig& cfg,
                           const AnnealedOptions& opts = {});

}  // namespace anderson
