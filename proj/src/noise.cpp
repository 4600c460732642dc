#include "anderson/noise.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "anderson/rng.hpp"

namespace anderson {

namespace {

// Lipschitz bound and sup of the one-dimensional profile on [-1, 1].
struct ProfileBounds {
    double lipschitz;
    double sup;
};

ProfileBounds profile_bounds(KernelFamily f) {
    switch (f) {
        case KernelFamily::TriangularTensor: return {1.0, 1.0};
        case KernelFamily::CosineBump: return {std::numbers::pi / 2.0, 1.0};
        case KernelFamily::QuarticSpline:
            // max |d/du (15/16)(1-u^2)^2| at u = 1/sqrt(3)
            return {15.0 / 16.0 * 8.0 / (3.0 * std::sqrt(3.0)), 15.0 / 16.0};
    }
    return {1.0, 1.0};
}

long lattice_half(double extent, double spacing) {
    return static_cast<long>(std::floor(extent / spacing + 1e-9));
}

std::size_t ipow_size(std::size_t b, int e) {
    std::size_t r = 1;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

// Materializes prod_i t[j_i] over the full d-dimensional index box.
std::vector<double> tensor_table(const std::vector<double>& t, int dim) {
    const std::size_t s = t.size();
    std::vector<double> out(ipow_size(s, dim));
    for (std::size_t f = 0; f < out.size(); ++f) {
        std::size_t rem = f;
        double v = 1.0;
        for (int a = 0; a < dim; ++a) {
            v *= t[rem % s];
            rem /= s;
        }
        out[f] = v;
    }
    return out;
}

std::size_t table_flat(const Index& off, long half, int dim) {
    const long s = 2 * half + 1;
    std::size_t f = 0;
    for (int a = 0; a < dim; ++a) f = f * s + static_cast<std::size_t>(off[a] + half);
    return f;
}

// Convolves `data` (row-major, shape dims) along `axis` with `g` of
// half-width K in valid mode: the axis shrinks by 2K.
std::vector<double> convolve_axis(const std::vector<double>& data, std::vector<long>& dims, int axis,
                                  const std::vector<double>& g, long K) {
    std::size_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= dims[a];
    for (std::size_t a = axis + 1; a < dims.size(); ++a) inner *= dims[a];
    const long n_in = dims[axis];
    const long n_out = n_in - 2 * K;
    std::vector<double> out(outer * n_out * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = data.data() + o * n_in * inner;
        double* dst = out.data() + o * n_out * inner;
        for (long z = 0; z < n_out; ++z) {
            double* drow = dst + z * inner;
            // offset k in [-K, K] pairs output z with input z + K - k
            for (long k = -K; k <= K; ++k) {
                const double w = g[k + K];
                if (w == 0.0) continue;
                const double* srow = src + (z + K - k) * inner;
                for (std::size_t i = 0; i < inner; ++i) drow[i] += w * srow[i];
            }
        }
    }
    dims[axis] = n_out;
    return out;
}

}  // namespace

std::string to_string(KernelFamily f) {
    switch (f) {
        case KernelFamily::TriangularTensor: return "triangular-tensor";
        case KernelFamily::CosineBump: return "cosine-bump";
        case KernelFamily::QuarticSpline: return "quartic-spline";
    }
    return "unknown";
}

KernelFamily kernel_family_from_string(const std::string& s) {
    if (s == "triangular-tensor" || s == "triangular") return KernelFamily::TriangularTensor;
    if (s == "cosine-bump" || s == "cosine") return KernelFamily::CosineBump;
    if (s == "quartic-spline" || s == "quartic") return KernelFamily::QuarticSpline;
    throw ConfigError("unknown kernel family '" + s + "'");
}

double kernel_profile(KernelFamily f, double u) {
    const double a = std::abs(u);
    if (a >= 1.0) return 0.0;
    switch (f) {
        case KernelFamily::TriangularTensor: return 1.0 - a;
        case KernelFamily::CosineBump: return 0.5 * (1.0 + std::cos(std::numbers::pi * a));
        case KernelFamily::QuarticSpline: {
            const double b = 1.0 - a * a;
            return 15.0 / 16.0 * b * b;
        }
    }
    return 0.0;
}

void CovarianceSpec::validate() const {
    require(dim >= 1 && dim <= kMaxDim, "dimension must be 1, 2 or 3");
    require(support_radius > 0.0 && std::isfinite(support_radius), "support_radius must be positive");
    require(holder_h > 0.0 && holder_h <= 1.0, "holder exponent h must lie in (0, 1]");
}

double CovarianceSpec::density(const Point& x) const {
    double v = 1.0;
    for (int a = 0; a < dim; ++a) v *= kernel_profile(family, x[a] / support_radius) / support_radius;
    return v;
}

double CovarianceSpec::declared_holder_constant() const {
    const auto b = profile_bounds(family);
    const double rho = support_radius;
    // |grad R̄|_2 <= sqrt(d) L M^(d-1) / rho^(d+1); sup R̄ = M^d / rho^d
    const double lip = std::sqrt(static_cast<double>(dim)) * b.lipschitz * std::pow(b.sup, dim - 1) /
                       std::pow(rho, dim + 1);
    const double sup = std::pow(b.sup / rho, dim);
    return std::pow(lip, holder_h) * std::pow(2.0 * sup, 1.0 - holder_h);
}

CovarianceSpec CovarianceSpec::scaled(double eps) const {
    CovarianceSpec s = *this;
    s.support_radius *= eps;
    return s;
}

double DiscreteKernel::rbar_at(const Index& off) const {
    for (int a = 0; a < dim(); ++a)
        if (std::abs(off[a]) > half) return 0.0;
    return rbar[table_flat(off, half, dim())];
}

double DiscreteKernel::cov_at(const Index& off) const {
    for (int a = 0; a < dim(); ++a)
        if (std::abs(off[a]) > cov_half) return 0.0;
    return cov[table_flat(off, cov_half, dim())];
}

double DiscreteKernel::cov0() const { return std::pow(cov_1d[cov_half], dim()); }

double DiscreteKernel::cov_interpolate(const Point& x) const {
    // tensor structure: interpolate each one-dimensional factor
    double v = 1.0;
    for (int a = 0; a < dim(); ++a) {
        const double u = x[a] / spacing + static_cast<double>(cov_half);
        if (u <= 0.0 || u >= static_cast<double>(2 * cov_half)) return 0.0;
        const auto i = static_cast<long>(u);
        const double fr = u - static_cast<double>(i);
        v *= (1.0 - fr) * cov_1d[i] + fr * cov_1d[i + 1];
    }
    return v;
}

bool DiscreteKernel::hessian_trace_sqrt(double* out, double rel_tol) const {
    const long c = cov_half;
    if (c < 3) return false;
    const double h = spacing;
    const double r0 = cov_1d[c];
    const double d1 = (cov_1d[c + 1] - 2.0 * r0 + cov_1d[c - 1]) / (h * h);
    const double d2 = (cov_1d[c + 2] - 2.0 * r0 + cov_1d[c - 2]) / (4.0 * h * h);
    if (!(d1 < 0.0) || !(d2 < 0.0)) return false;
    if (std::abs(d1 - d2) > rel_tol * std::abs(d1)) return false;
    const double second = 2.0 * d1 - d2;  // Richardson on the O(h) term
    if (!(second < 0.0)) return false;
    // Hessian is diagonal with entries R1''(0) R1(0)^(d-1)
    const double diag = -second * std::pow(r0, dim() - 1);
    if (out) *out = static_cast<double>(dim()) * std::sqrt(diag);
    return true;
}

DiscreteKernel build_kernel(const CovarianceSpec& spec, double spacing) {
    spec.validate();
    require(spacing > 0.0 && std::isfinite(spacing), "kernel spacing must be positive");
    if (spacing > spec.support_radius / 4.0 * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "mesh rule violated: spacing " << spacing << " exceeds support_radius/4 = "
           << spec.support_radius / 4.0 << " (kernel unresolvable)";
        throw ConfigError(os.str());
    }
    DiscreteKernel k;
    k.spec = spec;
    k.spacing = spacing;
    k.half = lattice_half(spec.support_radius, spacing);
    k.cov_half = 2 * k.half;

    k.rbar_1d.resize(2 * k.half + 1);
    double sum = 0.0;
    for (long j = -k.half; j <= k.half; ++j) {
        const double v = kernel_profile(spec.family, static_cast<double>(j) * spacing / spec.support_radius);
        k.rbar_1d[j + k.half] = v;
        sum += v;
    }
    for (double& v : k.rbar_1d) v /= sum * spacing;

    k.cov_1d.assign(2 * k.cov_half + 1, 0.0);
    for (long m = -k.cov_half; m <= k.cov_half; ++m) {
        double s = 0.0;
        for (long j = std::max(-k.half, m - k.half); j <= std::min(k.half, m + k.half); ++j)
            s += k.rbar_1d[j + k.half] * k.rbar_1d[m - j + k.half];
        k.cov_1d[m + k.cov_half] = s * spacing;
    }
    k.rbar = tensor_table(k.rbar_1d, spec.dim);
    k.cov = tensor_table(k.cov_1d, spec.dim);

    // neighbor slopes give a cheap Lipschitz estimate for the metadata
    const long s = 2 * k.half + 1;
    double lip = 0.0;
    for (std::size_t f = 0; f < k.rbar.size(); ++f) {
        std::size_t rem = f;
        Index j{};
        for (int a = spec.dim - 1; a >= 0; --a) {
            j[a] = static_cast<long>(rem % s) - k.half;
            rem /= s;
        }
        for (int a = 0; a < spec.dim; ++a) {
            Index n = j;
            n[a] += 1;
            lip = std::max(lip, std::abs(k.rbar_at(n) - k.rbar[f]) / spacing);
        }
    }
    k.lipschitz_estimate = lip;
    return k;
}

double empirical_holder_constant(const DiscreteKernel& k, double h) {
    const int d = k.dim();
    const long s = 2 * k.half + 1;
    const std::size_t n = k.rbar.size();
    std::vector<Index> idx(n);
    for (std::size_t f = 0; f < n; ++f) {
        std::size_t rem = f;
        for (int a = d - 1; a >= 0; --a) {
            idx[f][a] = static_cast<long>(rem % s) - k.half;
            rem /= s;
        }
    }
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double r2 = 0.0;
            for (int a = 0; a < d; ++a) {
                const double dx = static_cast<double>(idx[i][a] - idx[j][a]) * k.spacing;
                r2 += dx * dx;
            }
            c = std::max(c, std::abs(k.rbar[i] - k.rbar[j]) / std::pow(std::sqrt(r2), h));
        }
    }
    return c;
}

std::size_t FieldSample::flat(const Index& j) const {
    const long s = side();
    std::size_t f = 0;
    for (int a = 0; a < dim; ++a) f = f * s + static_cast<std::size_t>(j[a] + n_half);
    return f;
}

Index FieldSample::lattice_index(std::size_t f) const {
    Index j{};
    const long s = side();
    for (int a = dim - 1; a >= 0; --a) {
        j[a] = static_cast<long>(f % s) - n_half;
        f /= s;
    }
    return j;
}

bool FieldSample::covers(const Point& x) const {
    const double lim = static_cast<double>(n_half) * spacing;
    for (int a = 0; a < dim; ++a)
        if (!(std::abs(x[a]) <= lim)) return false;
    return true;
}

double FieldSample::interpolate(const Point& x) const {
    const long s = side();
    long base[kMaxDim]{};
    double fr[kMaxDim]{};
    for (int a = 0; a < dim; ++a) {
        double u = x[a] / spacing + static_cast<double>(n_half);
        u = std::clamp(u, 0.0, static_cast<double>(s - 1));
        long i = static_cast<long>(u);
        if (i >= s - 1) i = s - 2;
        if (i < 0) i = 0;
        base[a] = i;
        fr[a] = u - static_cast<double>(i);
    }
    if (s == 1) return values.empty() ? 0.0 : values[0];
    double v = 0.0;
    for (int corner = 0; corner < (1 << dim); ++corner) {
        double w = 1.0;
        std::size_t f = 0;
        for (int a = 0; a < dim; ++a) {
            const int bit = (corner >> a) & 1;
            w *= bit ? fr[a] : 1.0 - fr[a];
            f = f * s + static_cast<std::size_t>(base[a] + bit);
        }
        if (w != 0.0) v += w * values[f];
    }
    return v;
}

double FieldSample::nearest(const Point& x) const {
    Index j{};
    for (int a = 0; a < dim; ++a)
        j[a] = std::clamp(std::lround(x[a] / spacing), -n_half, n_half);
    return at(j);
}

FieldSample FieldSample::constant(int dim, double r, double spacing, double c, double eps) {
    FieldSample f;
    f.dim = dim;
    f.halfwidth = r;
    f.spacing = spacing;
    f.eps = eps;
    f.n_half = lattice_half(r, spacing);
    f.values.assign(ipow_size(f.side(), dim), c);
    return f;
}

std::size_t sample_memory_estimate(const CovarianceSpec& spec, double r, double eps, double spacing) {
    const long K = lattice_half(spec.support_radius * eps, spacing);
    const long n = lattice_half(r, spacing);
    const auto padded = static_cast<double>(2 * (n + K) + 1);
    // white noise plus one convolution buffer
    return static_cast<std::size_t>(2.0 * std::pow(padded, spec.dim) * sizeof(double));
}

FieldSample sample_field(const CovarianceSpec& spec, double r, double eps, double spacing, std::uint64_t seed,
                         const SampleOptions& opts) {
    spec.validate();
    require(r > 0.0 && std::isfinite(r), "box half-width r must be positive");
    require(eps > 0.0 && eps <= 1.0, "eps must lie in (0, 1]");
    require(spacing > 0.0, "spacing must be positive");
    if (eps * spec.support_radius < 4.0 * spacing * (1.0 - 1e-12)) {
        std::ostringstream os;
        os << "mesh rule violated: eps*support_radius = " << eps * spec.support_radius
           << " must be >= 4*spacing = " << 4.0 * spacing;
        throw ConfigError(os.str());
    }
    const std::size_t need = sample_memory_estimate(spec, r, eps, spacing);
    if (need > opts.memory_cap_bytes) {
        std::ostringstream os;
        os << "field sample needs " << need << " bytes, above the configured cap of " << opts.memory_cap_bytes
           << " bytes (d=" << spec.dim << ", r=" << r << ", spacing=" << spacing << ")";
        throw ConfigError(os.str());
    }

    const DiscreteKernel kern = build_kernel(spec.scaled(eps), spacing);
    const long K = kern.half;

    FieldSample out;
    out.dim = spec.dim;
    out.halfwidth = r;
    out.spacing = spacing;
    out.eps = eps;
    out.seed = seed;
    out.spec = spec;
    out.n_half = lattice_half(r, spacing);

    const long padded = 2 * (out.n_half + K) + 1;
    std::vector<long> dims(spec.dim, padded);
    std::vector<double> noise(ipow_size(padded, spec.dim));
    Rng rng = make_stream(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sign = opts.negate_noise ? -1.0 : 1.0;
    for (double& v : noise) v = sign * normal(rng);

    for (int a = 0; a < spec.dim; ++a) noise = convolve_axis(noise, dims, a, kern.rbar_1d, K);
    const double scale = std::pow(spacing, 0.5 * spec.dim);
    for (double& v : noise) v *= scale;
    out.values = std::move(noise);
    return out;
}

FieldSample rescaled_view(const FieldSample& xi1, double eps) {
    require(eps > 0.0, "rescaling eps must be positive");
    FieldSample v = xi1;
    v.spacing = xi1.spacing * eps;
    v.halfwidth = xi1.halfwidth * eps;
    v.eps = xi1.eps * eps;
    const double amp = std::pow(eps, -0.5 * xi1.dim);
    for (double& x : v.values) x *= amp;
    return v;
}

FieldSample rescaled_view(const FieldSample& xi1, double eps, double spacing, double r) {
    require(eps > 0.0 && spacing > 0.0 && r > 0.0, "rescaled view needs positive eps, spacing and r");
    const double reach = static_cast<double>(xi1.n_half) * xi1.spacing * eps;
    if (r > reach * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "rescaled view: box half-width " << r << " exceeds the xi_1 lattice reach " << reach;
        throw ConfigError(os.str());
    }
    FieldSample v;
    v.dim = xi1.dim;
    v.halfwidth = r;
    v.spacing = spacing;
    v.eps = xi1.eps * eps;
    v.seed = xi1.seed;
    v.spec = xi1.spec;
    v.n_half = lattice_half(r, spacing);
    v.values.resize(ipow_size(v.side(), v.dim));
    const double amp = std::pow(eps, -0.5 * xi1.dim);
    for (std::size_t f = 0; f < v.values.size(); ++f) {
        const Index j = v.lattice_index(f);
        Point x{};
        for (int a = 0; a < v.dim; ++a) x[a] = static_cast<double>(j[a]) * spacing / eps;
        v.values[f] = amp * xi1.interpolate(x);
    }
    return v;
}

MaxStatistic max_field_statistic(const FieldSample& sample) {
    require(sample.halfwidth >= std::numbers::e, "max statistic needs r >= e so that log r >= 1");
    require(!sample.values.empty(), "empty field");
    MaxStatistic m;
    m.max_value = *std::max_element(sample.values.begin(), sample.values.end());
    m.normalized = m.max_value / std::sqrt(std::log(sample.halfwidth));
    return m;
}

void write_field_binary(const std::filesystem::path& path, const FieldSample& s) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open field dump " + path.string());
    char header[256];
    std::snprintf(header, sizeof header, "anderson-field d=%d r=%.17g dx=%.17g eps=%.17g seed=%llu side=%ld\n",
                  s.dim, s.halfwidth, s.spacing, s.eps, static_cast<unsigned long long>(s.seed), s.side());
    os << header;
    for (double v : s.values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
}

FieldSample read_field_binary(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open field dump " + path.string());
    std::string header;
    std::getline(is, header);
    FieldSample s;
    unsigned long long seed = 0;
    long side = 0;
    if (std::sscanf(header.c_str(), "anderson-field d=%d r=%lg dx=%lg eps=%lg seed=%llu side=%ld", &s.dim,
                    &s.halfwidth, &s.spacing, &s.eps, &seed, &side) != 6)
        throw ConfigError("malformed field dump header");
    s.seed = seed;
    s.n_half = (side - 1) / 2;
    s.values.resize(ipow_size(side, s.dim));
    for (double& v : s.values) {
        std::uint64_t bits;
        is.read(reinterpret_cast<char*>(&bits), sizeof bits);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        std::memcpy(&v, &bits, sizeof v);
    }
    if (!is) throw ConfigError("truncated field dump");
    return s;
}

}  // namespace anderson
