#pragma once

#include <cstdint>
#include <vector>

#include "anderson/common.hpp"

namespace anderson {

/// Lattice resolution for the variational problems, in units of the natural
/// width of the maximizer (c^{-2/(4-d)} for the sphere problem, 1 for W).
/// The lattice spacing is rounded down to a power of two so that different
/// coefficients do not see exactly self-similar grids.
struct GridSpec {
    int dim = 1;
    double points_per_width = 32.0;
    double halfwidth = 12.0;   ///< initial box half-width; grown by half until boundary mass < 1e-8
    bool richardson = true;    ///< combine spacings a and a/2 as (4 v(a/2) - v(a)) / 3
};

/// Per-dimension defaults. In d=3 the sphere maximizer's tail is long
/// compared with its core, so the box is large and the resolution coarse.
GridSpec default_grid(int d);

struct FlowOptions {
    double tol = 1e-12;        ///< relative objective change at convergence
    int max_iterations = 20000;
    int starts = 5;            ///< multi-start count; start 0 is the centered Gaussian bump
    std::uint64_t seed = 0;
    int workers = 1;
};

/// Zero-extended function on the open box (-L, L)^d with n interior points
/// per axis at spacing a = 2L / (n + 1), row-major.
struct LatticeFunction {
    int dim = 1;
    double spacing = 0.0;
    long n = 0;
    std::vector<double> values;

    double halfwidth() const { return 0.5 * static_cast<double>(n + 1) * spacing; }
    Point position(std::size_t flat) const;
    double interpolate(const Point& x) const;  ///< multilinear, zero outside
};

double l2_norm_sq(const LatticeFunction& f);
double l4_norm_pow4(const LatticeFunction& f);
/// Σ|∇_h f|² a^d with forward differences and zero exterior, as in the operator module.
double dirichlet_energy(const LatticeFunction& f);
/// ‖f‖₄⁴ / (ℰ(f)^{d/2} ‖f‖₂^{4-d}).
double gns_ratio(const LatticeFunction& f);
/// c‖f‖₄² − ½ℰ(f) for ‖f‖₂ = 1 (the function is normalized first).
double sphere_objective(const LatticeFunction& f, double c);
/// ‖f‖₂² + ½ℰ(f).
double ellipsoid_norm(const LatticeFunction& f);
/// Fraction of ‖f‖₂² in the shell |x|_∞ > 0.9 L.
double boundary_mass(const LatticeFunction& f);

struct FlowDiagnostics {
    std::vector<double> history;  ///< objective after each accepted step (finest grid)
    int iterations = 0;
    double residual = 0.0;        ///< preconditioned gradient norm at exit, relative to |objective|
    double boundary_mass = 0.0;
    double coarse_value = 0.0;    ///< value at spacing a (before Richardson)
    double fine_value = 0.0;      ///< value at spacing a/2 (equals coarse_value without Richardson)
    int expansions = 0;
};

struct VariationalResult {
    int dim = 1;
    double value = 0.0;  ///< the quantity the routine computes
    double g_d = 0.0;
    double l_d = 0.0;
    double s_sup = 0.0;
    LatticeFunction extremal;
    FlowDiagnostics flow;
    std::vector<double> start_values;  ///< per multi-start value
};

// Closed-form relations between the constants.
double lyapunov_from_gns(int d, double g);
double sphere_sup_from_gns(int d, double g);      ///< sup_S(‖φ‖₄² − ½ℰ)
double w_sup_from_gns(int d, double g);           ///< 𝔰
double gns_from_sphere_sup(int d, double sup1);
double gns_from_w_sup(int d, double s);
double lyapunov_from_sphere_sup(int d, double sup1);  ///< (2d)^{2/(4-d)} sup1
double lyapunov_from_w_sup(int d, double s);          ///< (2d s)^{2/(4-d)}

/// 𝔾_d as the GNS ratio at the maximizer of ‖φ‖₄² − ½ℰ(φ) on the unit
/// sphere (the ground state of the normalized gradient flow). Maximizing the
/// ratio directly on a lattice is ill-posed: a single-site spike beats the
/// continuum constant.
VariationalResult gns_constant(const GridSpec& grid, const FlowOptions& opts = {});

/// sup over the unit L² sphere of c‖φ‖₄² − ½ℰ(φ).
VariationalResult s_variational_sup(double c, const GridSpec& grid, const FlowOptions& opts = {});

/// 𝔰 = sup ‖ψ‖₄⁴ over ‖ψ‖₂² + ½ℰ(ψ) = 1.
VariationalResult w_space_sup(const GridSpec& grid, const FlowOptions& opts = {});

}  // namespace anderson
