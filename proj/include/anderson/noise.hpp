#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "anderson/common.hpp"

namespace anderson {

enum class KernelFamily { TriangularTensor, CosineBump, QuarticSpline };

std::string to_string(KernelFamily f);
KernelFamily kernel_family_from_string(const std::string& s);

/// Mollifier R̄ (an even, compactly supported probability density) and the
/// covariance R = R̄ * R̄ it induces. All families are tensor products of a
/// one-dimensional profile f on [-1, 1]:
///
///   R̄(x) = prod_i f(x_i / rho) / rho,   rho = support_radius.
struct CovarianceSpec {
    KernelFamily family = KernelFamily::TriangularTensor;
    double support_radius = 1.0;
    double holder_h = 1.0;
    int dim = 1;

    void validate() const;

    /// Continuum density R̄(x).
    double density(const Point& x) const;

    /// Hölder constant C such that |R̄(x) - R̄(y)| <= C |x - y|_2^h. Derived
    /// from the profile's Lipschitz bound L and sup M as L^h (2M)^(1-h).
    double declared_holder_constant() const;

    /// Same family with the support scaled by eps; this is R̄_eps(x) = eps^-d R̄(x/eps).
    CovarianceSpec scaled(double eps) const;
};

/// One-dimensional profile f(u) on [-1, 1] with integral 1.
double kernel_profile(KernelFamily f, double u);

/// Lattice tables of R̄ and R at a fixed spacing. Both are tensor products of
/// one-dimensional factors; the full tables are materialized row-major with the
/// last coordinate fastest.
struct DiscreteKernel {
    CovarianceSpec spec;
    double spacing = 0.0;
    long half = 0;      ///< R̄ table covers offsets [-half, half] per axis
    long cov_half = 0;  ///< R table covers offsets [-2 half, 2 half] per axis
    std::vector<double> rbar_1d;  ///< normalized so sum * spacing = 1
    std::vector<double> cov_1d;   ///< discrete self-convolution of rbar_1d
    std::vector<double> rbar;     ///< full R̄ table, sum * spacing^d = 1
    std::vector<double> cov;      ///< full R table
    double lipschitz_estimate = 0.0;  ///< metadata, max neighbor slope of the R̄ table

    int dim() const { return spec.dim; }
    double rbar_at(const Index& offset) const;
    double cov_at(const Index& offset) const;
    double cov0() const;

    /// Continuous R(x) by multilinear interpolation of the R table; zero
    /// outside the support.
    double cov_interpolate(const Point& x) const;

    /// Trace of (-R''(0))^(1/2) from central second differences of the R table
    /// at steps h and 2h. Returns false when the two estimates disagree by more
    /// than `rel_tol` (a kink at the origin makes the Hessian unavailable).
    bool hessian_trace_sqrt(double* out, double rel_tol = 0.1) const;
};

/// Builds R̄ and R tables at `spacing`. Rejects spacing > support_radius / 4.
DiscreteKernel build_kernel(const CovarianceSpec& spec, double spacing);

/// Maximum of |R̄(x) - R̄(y)| / |x - y|_2^h over all pairs of table points.
double empirical_holder_constant(const DiscreteKernel& k, double h);

struct SampleOptions {
    std::size_t memory_cap_bytes = std::size_t{2} << 30;
    bool negate_noise = false;  ///< sign-flip hook on the white-noise input
};

/// Lattice realization of xi_eps on the closed box [-r, r]^d with points
/// j * spacing, |j_i| <= n_half.
struct FieldSample {
    int dim = 1;
    double halfwidth = 0.0;
    double spacing = 0.0;
    double eps = 1.0;
    double sigma = 1.0;
    std::uint64_t seed = 0;
    CovarianceSpec spec;
    long n_half = 0;
    std::vector<double> values;

    long side() const { return 2 * n_half + 1; }
    std::size_t size() const { return values.size(); }
    std::size_t flat(const Index& j) const;
    Index lattice_index(std::size_t flat) const;
    double at(const Index& j) const { return values[flat(j)]; }
    bool covers(const Point& x) const;

    double interpolate(const Point& x) const;  ///< multilinear
    double nearest(const Point& x) const;

    /// Test hook: a deterministic field identically equal to c.
    static FieldSample constant(int dim, double r, double spacing, double c, double eps = 1.0);
};

/// Samples xi_eps = xi * R̄_eps by direct lattice convolution of seeded
/// white noise with the eps-scaled kernel. The box is padded internally by
/// the kernel support so every point of [-r, r]^d sees full kernel mass.
/// Pointwise variance equals the discrete R_eps(0) = sum R̄_eps^2 dx^d.
FieldSample sample_field(const CovarianceSpec& spec, double r, double eps, double spacing,
                         std::uint64_t seed, const SampleOptions& opts = {});

/// Bytes needed by sample_field for these parameters.
std::size_t sample_memory_estimate(const CovarianceSpec& spec, double r, double eps, double spacing);

/// The coupling xi_eps(x) = eps^(-d/2) xi_1(x / eps) as a view over a fixed
/// xi_1 lattice: same indices, spacing and box scaled by eps.
FieldSample rescaled_view(const FieldSample& xi1, double eps);

/// Same coupling evaluated on a different lattice: values eps^(-d/2) xi_1(x/eps)
/// at the points of [-r, r]^d with the given spacing, by multilinear
/// interpolation of the xi_1 lattice.
FieldSample rescaled_view(const FieldSample& xi1, double eps, double spacing, double r);

struct MaxStatistic {
    double max_value = 0.0;
    double normalized = 0.0;  ///< max / sqrt(log r)
};

/// Requires r >= e.
MaxStatistic max_field_statistic(const FieldSample& sample);

/// Flat little-endian binary dump: one text header line, then doubles.
void write_field_binary(const std::filesystem::path& path, const FieldSample& sample);
FieldSample read_field_binary(const std::filesystem::path& path);

}  // namespace anderson
