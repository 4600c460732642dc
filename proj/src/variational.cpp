#include "anderson/variational.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>

#include <fftw3.h>

#include "anderson/parallel.hpp"
#include "anderson/rng.hpp"

namespace anderson {

namespace {

std::size_t total_points(long n, int d) {
    std::size_t s = 1;
    for (int a = 0; a < d; ++a) s *= static_cast<std::size_t>(n);
    return s;
}

// Δ_h with zero exterior: out = Σ_axes (x_{i+e} - 2 x_i + x_{i-e}) / a^2.
void apply_laplacian(const LatticeFunction& f, const std::vector<double>& x, std::vector<double>& out) {
    const int d = f.dim;
    const long n = f.n;
    const std::size_t N = x.size();
    const double inv = 1.0 / (f.spacing * f.spacing);
    out.assign(N, 0.0);
    std::size_t stride = 1;
    for (int axis = d - 1; axis >= 0; --axis) {
        const std::size_t outer = N / (stride * static_cast<std::size_t>(n));
        for (std::size_t o = 0; o < outer; ++o) {
            const std::size_t base0 = o * stride * static_cast<std::size_t>(n);
            for (std::size_t s = 0; s < stride; ++s) {
                const std::size_t base = base0 + s;
                for (long i = 0; i < n; ++i) {
                    const std::size_t k = base + static_cast<std::size_t>(i) * stride;
                    const double left = i > 0 ? x[k - stride] : 0.0;
                    const double right = i + 1 < n ? x[k + stride] : 0.0;
                    out[k] += (left - 2.0 * x[k] + right) * inv;
                }
            }
        }
        stride *= static_cast<std::size_t>(n);
    }
}

std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

// Exact inverse of (alpha - ½Δ_h) with zero exterior by a type-I sine transform.
class SobolevPreconditioner {
public:
    SobolevPreconditioner(const LatticeFunction& f, double alpha) : dim_(f.dim), n_(f.n) {
        const std::size_t N = total_points(n_, dim_);
        buf_ = fftw_alloc_real(N);
        std::vector<int> dims(dim_, static_cast<int>(n_));
        std::vector<fftw_r2r_kind> kinds(dim_, FFTW_RODFT00);
        {
            std::lock_guard<std::mutex> lock(fftw_planner_mutex());
            plan_ = fftw_plan_r2r(dim_, dims.data(), buf_, buf_, kinds.data(), FFTW_ESTIMATE);
        }
        if (!plan_) throw NumericalError("fftw: sine transform plan failed");
        std::vector<double> lam1(n_);
        const double h2 = f.spacing * f.spacing;
        for (long k = 0; k < n_; ++k) {
            const double s = std::sin(std::numbers::pi * static_cast<double>(k + 1) / (2.0 * static_cast<double>(n_ + 1)));
            lam1[k] = 4.0 / h2 * s * s;  // eigenvalue of -Δ_h along one axis
        }
        inv_.resize(N);
        const double norm = std::pow(2.0 * static_cast<double>(n_ + 1), dim_);
        for (std::size_t flat = 0; flat < N; ++flat) {
            std::size_t rem = flat;
            double lam = 0.0;
            for (int a = 0; a < dim_; ++a) {
                lam += lam1[rem % static_cast<std::size_t>(n_)];
                rem /= static_cast<std::size_t>(n_);
            }
            inv_[flat] = 1.0 / ((alpha + 0.5 * lam) * norm);
        }
    }
    ~SobolevPreconditioner() {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        fftw_destroy_plan(plan_);
        fftw_free(buf_);
    }
    SobolevPreconditioner(const SobolevPreconditioner&) = delete;
    SobolevPreconditioner& operator=(const SobolevPreconditioner&) = delete;

    void apply(const std::vector<double>& in, std::vector<double>& out) {
        const std::size_t N = in.size();
        std::copy(in.begin(), in.end(), buf_);
        fftw_execute(plan_);
        for (std::size_t i = 0; i < N; ++i) buf_[i] *= inv_[i];
        fftw_execute(plan_);
        out.assign(buf_, buf_ + N);
    }

private:
    int dim_;
    long n_;
    double* buf_ = nullptr;
    fftw_plan plan_ = nullptr;
    std::vector<double> inv_;
};

enum class Kind { Sphere, Ellipsoid };

// Degree-zero objectives; normalization leaves the value unchanged.
//   sphere:    J(φ) = (c‖φ‖₄² − ½ℰ(φ)) / ‖φ‖₂²
//   ellipsoid: Q(ψ) = ‖ψ‖₄⁴ / (‖ψ‖₂² + ½ℰ(ψ))²
struct Objective {
    Kind kind;
    double c = 1.0;

    double eval(const LatticeFunction& f, const std::vector<double>& x, std::vector<double>* grad,
                std::vector<double>& lap) const {
        const double w = std::pow(f.spacing, f.dim);
        apply_laplacian(f, x, lap);
        double s2 = 0.0, s4 = 0.0, sl = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double v = x[i], v2 = v * v;
            s2 += v2;
            s4 += v2 * v2;
            sl += v * lap[i];
        }
        const double n2 = w * s2, n4 = w * s4, E = -w * sl;
        if (kind == Kind::Sphere) {
            const double q = std::sqrt(n4);
            const double J = (c * q - 0.5 * E) / n2;
            if (grad) {
                grad->resize(x.size());
                for (std::size_t i = 0; i < x.size(); ++i)
                    (*grad)[i] = (2.0 * c * x[i] * x[i] * x[i] / q + lap[i] - 2.0 * J * x[i]) / n2;
            }
            return J;
        }
        const double N = n2 + 0.5 * E;
        const double Q = n4 / (N * N);
        if (grad) {
            grad->resize(x.size());
            for (std::size_t i = 0; i < x.size(); ++i)
                (*grad)[i] = 4.0 * x[i] * x[i] * x[i] / (N * N) - 2.0 * n4 * (2.0 * x[i] - lap[i]) / (N * N * N);
        }
        return Q;
    }

    void normalize(const LatticeFunction& f, std::vector<double>& x, std::vector<double>& lap) const {
        const double w = std::pow(f.spacing, f.dim);
        double s2 = 0.0;
        for (double v : x) s2 += v * v;
        double norm = w * s2;
        if (kind == Kind::Ellipsoid) {
            apply_laplacian(f, x, lap);
            double sl = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) sl += x[i] * lap[i];
            norm += -0.5 * w * sl;
        }
        const double s = 1.0 / std::sqrt(norm);
        for (double& v : x) v *= s;
    }
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Preconditioned Barzilai-Borwein ascent with Armijo backtracking; the
// objective is nondecreasing along accepted steps.
double run_flow(const Objective& obj, LatticeFunction& f, double alpha, const FlowOptions& opts,
                FlowDiagnostics& diag) {
    SobolevPreconditioner P(f, alpha);
    const double w = std::pow(f.spacing, f.dim);
    std::vector<double>& x = f.values;
    std::vector<double> lap, g, pg, trial, gnew, s, ms;
    obj.normalize(f, x, lap);
    double F = obj.eval(f, x, &g, lap);
    if (!std::isfinite(F)) throw NumericalError("variational flow: non-finite objective at start");
    P.apply(g, pg);
    double tau = 1.0;
    int quiet = 0;
    diag.history.clear();
    diag.history.push_back(F);
    for (int it = 1; it <= opts.max_iterations; ++it) {
        const double slope = w * dot(g, pg);
        diag.residual = std::sqrt(std::max(0.0, slope)) / std::max(std::abs(F), 1e-300);
        diag.iterations = it;
        if (diag.residual < 1e-11) return F;
        double Ft = -std::numeric_limits<double>::infinity();
        int backtracks = 0;
        for (;;) {
            trial.resize(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) trial[i] = x[i] + tau * pg[i];
            obj.normalize(f, trial, lap);
            Ft = obj.eval(f, trial, nullptr, lap);
            if (std::isfinite(Ft) && Ft >= F + 1e-4 * tau * slope) break;
            tau *= 0.5;
            if (++backtracks > 60) {
                // no ascent left at working precision
                return F;
            }
        }
        s.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) s[i] = trial[i] - x[i];
        x.swap(trial);
        const double Fold = F;
        F = obj.eval(f, x, &gnew, lap);
        diag.history.push_back(F);
        if (F < Fold - 1e-12 * std::abs(Fold)) throw NumericalError("variational flow: objective decreased");

        // BB1 step in the preconditioner metric
        apply_laplacian(f, s, ms);
        for (std::size_t i = 0; i < s.size(); ++i) ms[i] = alpha * s[i] - 0.5 * ms[i];
        double sy = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) sy += s[i] * (gnew[i] - g[i]);
        const double sms = dot(s, ms);
        tau = sy < 0.0 ? sms / (-sy) : 2.0 * tau;
        tau = std::clamp(tau, 1e-8, 1e8);
        g.swap(gnew);
        P.apply(g, pg);

        quiet = (std::abs(F - Fold) <= opts.tol * std::abs(F)) ? quiet + 1 : 0;
        if (quiet >= 5) return F;
    }
    std::ostringstream os;
    os << "iterations=" << opts.max_iterations << " residual=" << diag.residual << " value=" << F;
    throw NumericalError("variational flow did not converge", os.str());
}

LatticeFunction make_grid(int d, double spacing, double halfwidth) {
    LatticeFunction f;
    f.dim = d;
    f.spacing = spacing;
    const long m = static_cast<long>(std::ceil(halfwidth / spacing - 1e-9));
    f.n = 2 * m - 1;  // odd, so the origin is a lattice point
    f.values.assign(total_points(f.n, d), 0.0);
    return f;
}

// Same spacing, at least `pad` more points on every side; old values
// embedded at the center.
LatticeFunction expand(const LatticeFunction& f, long pad) {
    LatticeFunction g;
    g.dim = f.dim;
    g.spacing = f.spacing;
    const long off = std::max(1L, pad);
    g.n = f.n + 2 * off;
    g.values.assign(total_points(g.n, g.dim), 0.0);
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        std::size_t rem = i, flat = 0;
        long idx[kMaxDim]{};
        for (int a = f.dim - 1; a >= 0; --a) {
            idx[a] = static_cast<long>(rem % static_cast<std::size_t>(f.n));
            rem /= static_cast<std::size_t>(f.n);
        }
        for (int a = 0; a < f.dim; ++a) flat = flat * static_cast<std::size_t>(g.n) + static_cast<std::size_t>(idx[a] + off);
        g.values[flat] = f.values[i];
    }
    return g;
}

// Same box, half the spacing, values by multilinear interpolation.
LatticeFunction refine(const LatticeFunction& f) {
    LatticeFunction g;
    g.dim = f.dim;
    g.spacing = 0.5 * f.spacing;
    g.n = 2 * f.n + 1;
    g.values.resize(total_points(g.n, g.dim));
    for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = f.interpolate(g.position(i));
    return g;
}

void initialize(LatticeFunction& f, double width, int start, std::uint64_t seed) {
    Point center{};
    double wf = 1.0;
    double noise = 0.0;
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(start), 0x6e5);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::normal_distribution<double> normal;
    if (start > 0) {
        for (int a = 0; a < f.dim; ++a) center[a] = 0.5 * width * uni(rng);
        wf = std::exp(0.7 * uni(rng));
        noise = 0.1;
    }
    const double s = width * wf;
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        const Point x = f.position(i);
        double r2 = 0.0;
        for (int a = 0; a < f.dim; ++a) r2 += (x[a] - center[a]) * (x[a] - center[a]);
        f.values[i] = std::exp(-0.5 * r2 / (s * s)) * (1.0 + noise * normal(rng));
    }
}

// sqrt(2) times the per-axis standard deviation of f², so a Gaussian
// exp(-|x|²/(2w²)) has width w.
double profile_width(const LatticeFunction& f) {
    double m0 = 0.0;
    Point m1{};
    double m2 = 0.0;
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        const Point x = f.position(i);
        const double v = f.values[i] * f.values[i];
        m0 += v;
        for (int a = 0; a < f.dim; ++a) {
            m1[a] += v * x[a];
            m2 += v * x[a] * x[a];
        }
    }
    double var = m2 / m0;
    for (int a = 0; a < f.dim; ++a) var -= (m1[a] / m0) * (m1[a] / m0);
    return std::sqrt(2.0 * std::max(var, 0.0) / f.dim);
}

struct Solved {
    double value = 0.0;   // Richardson-combined objective
    double coarse = 0.0, fine = 0.0;
    LatticeFunction profile;  // finest grid
    LatticeFunction coarse_profile;
    FlowDiagnostics diag;
};

// Solves one start on the coarse grid (with box expansion) and, when
// requested, again on the refined grid.
Solved solve(const Objective& obj, const GridSpec& grid, double width, const FlowOptions& opts, int start) {
    require(grid.dim >= 1 && grid.dim <= 3, "variational: d must be 1, 2 or 3");
    require(grid.points_per_width >= 2.0, "variational: points_per_width must be >= 2");
    require(grid.halfwidth > 0.0, "variational: halfwidth must be positive");
    Solved out;
    auto alpha_for = [&](double w) { return obj.kind == Kind::Sphere ? 1.0 / (w * w) : 1.0; };
    auto grid_for = [&](double w) {
        const double spacing = std::exp2(std::floor(std::log2(w / grid.points_per_width)));
        return make_grid(grid.dim, spacing, grid.halfwidth * w);
    };
    // The nominal width can be far from the maximizer's; re-grid on the
    // measured width until the two agree within a factor of two.
    LatticeFunction f = grid_for(width);
    initialize(f, width, start, opts.seed);
    for (int pass = 0;; ++pass) {
        out.coarse = run_flow(obj, f, alpha_for(width), opts, out.diag);
        const double measured = profile_width(f);
        if ((measured > 0.5 * width && measured < 2.0 * width) || pass >= 8) break;
        width = measured;
        LatticeFunction g = grid_for(width);
        for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = f.interpolate(g.position(i));
        f = std::move(g);
    }
    const double alpha = alpha_for(width);
    for (int expansion = 0;; ++expansion) {
        out.coarse = run_flow(obj, f, alpha, opts, out.diag);
        out.diag.boundary_mass = boundary_mass(f);
        if (out.diag.boundary_mass < 1e-8) break;
        if (expansion >= 6) {
            std::ostringstream os;
            os << "boundary mass " << out.diag.boundary_mass << " at half-width " << f.halfwidth();
            throw NumericalError("variational: boundary-mass breach after box expansion", os.str());
        }
        // Tail decay rate from the stationarity equation: Δφ = 2Jφ (sphere)
        // or Δψ = 2ψ (ellipsoid) far out.
        const double kappa = std::sqrt(2.0 * (obj.kind == Kind::Sphere ? std::max(out.coarse, 1e-12) : 1.0));
        const double target =
            std::clamp(1.15 * std::log(1e8) / (1.8 * kappa), 1.5 * f.halfwidth(), 4.0 * f.halfwidth());
        f = expand(f, static_cast<long>(std::ceil((target - f.halfwidth()) / f.spacing)));
        ++out.diag.expansions;
    }
    out.coarse_profile = f;
    out.fine = out.coarse;
    if (grid.richardson) {
        LatticeFunction g = refine(f);
        out.fine = run_flow(obj, g, alpha, opts, out.diag);
        out.diag.boundary_mass = boundary_mass(g);
        out.profile = std::move(g);
        out.value = (4.0 * out.fine - out.coarse) / 3.0;
    } else {
        out.profile = f;
        out.value = out.coarse;
    }
    out.diag.coarse_value = out.coarse;
    out.diag.fine_value = out.fine;
    return out;
}

// Runs all starts; returns the index of the best.
std::vector<Solved> solve_starts(const Objective& obj, const GridSpec& grid, double width,
                                 const FlowOptions& opts) {
    const int starts = std::max(1, opts.starts);
    std::vector<Solved> all(starts);
    parallel_for(static_cast<std::size_t>(starts), opts.workers,
                 [&](std::size_t k) { all[k] = solve(obj, grid, width, opts, static_cast<int>(k)); });
    return all;
}

std::size_t best_index(const std::vector<Solved>& all) {
    std::size_t b = 0;
    for (std::size_t k = 1; k < all.size(); ++k)
        if (all[k].fine > all[b].fine) b = k;
    return b;
}

double natural_width(int d, double c) { return std::pow(c, -2.0 / (4.0 - d)); }

}  // namespace

GridSpec default_grid(int d) {
    switch (d) {
        case 1: return {1, 32.0, 12.0, true};
        case 2: return {2, 8.0, 8.0, true};
        case 3: return {3, 2.0, 5.0, false};
        default: throw ConfigError("variational: d must be 1, 2 or 3");
    }
}

Point LatticeFunction::position(std::size_t flat) const {
    Point x{};
    const double L = halfwidth();
    for (int a = dim - 1; a >= 0; --a) {
        const auto i = static_cast<long>(flat % static_cast<std::size_t>(n));
        flat /= static_cast<std::size_t>(n);
        x[a] = -L + static_cast<double>(i + 1) * spacing;
    }
    return x;
}

double LatticeFunction::interpolate(const Point& x) const {
    const double L = halfwidth();
    long base[kMaxDim]{};
    double fr[kMaxDim]{};
    for (int a = 0; a < dim; ++a) {
        const double u = (x[a] + L) / spacing - 1.0;  // index coordinate; -1 and n are the zero walls
        if (!(u > -1.0 && u < static_cast<double>(n))) return 0.0;
        long i = static_cast<long>(std::floor(u));
        base[a] = i;
        fr[a] = u - static_cast<double>(i);
    }
    double v = 0.0;
    for (int corner = 0; corner < (1 << dim); ++corner) {
        double wgt = 1.0;
        std::size_t flat = 0;
        bool zero = false;
        for (int a = 0; a < dim; ++a) {
            const int bit = (corner >> a) & 1;
            wgt *= bit ? fr[a] : 1.0 - fr[a];
            const long j = base[a] + bit;
            if (j < 0 || j >= n) zero = true;
            flat = flat * static_cast<std::size_t>(n) + static_cast<std::size_t>(std::max(0L, std::min(j, n - 1)));
        }
        if (!zero && wgt != 0.0) v += wgt * values[flat];
    }
    return v;
}

double l2_norm_sq(const LatticeFunction& f) {
    double s = 0.0;
    for (double v : f.values) s += v * v;
    return s * std::pow(f.spacing, f.dim);
}

double l4_norm_pow4(const LatticeFunction& f) {
    double s = 0.0;
    for (double v : f.values) s += v * v * v * v;
    return s * std::pow(f.spacing, f.dim);
}

double dirichlet_energy(const LatticeFunction& f) {
    std::vector<double> lap;
    apply_laplacian(f, f.values, lap);
    return -dot(f.values, lap) * std::pow(f.spacing, f.dim);
}

double gns_ratio(const LatticeFunction& f) {
    const int d = f.dim;
    return l4_norm_pow4(f) / (std::pow(dirichlet_energy(f), 0.5 * d) * std::pow(l2_norm_sq(f), 0.5 * (4 - d)));
}

double sphere_objective(const LatticeFunction& f, double c) {
    const double n2 = l2_norm_sq(f);
    return (c * std::sqrt(l4_norm_pow4(f)) - 0.5 * dirichlet_energy(f)) / n2;
}

double ellipsoid_norm(const LatticeFunction& f) { return l2_norm_sq(f) + 0.5 * dirichlet_energy(f); }

double boundary_mass(const LatticeFunction& f) {
    const double L = f.halfwidth();
    double inner = 0.0, all = 0.0;
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        const Point x = f.position(i);
        double m = 0.0;
        for (int a = 0; a < f.dim; ++a) m = std::max(m, std::abs(x[a]));
        const double v2 = f.values[i] * f.values[i];
        all += v2;
        if (m > 0.9 * L) inner += v2;
    }
    return all > 0.0 ? inner / all : 1.0;
}

double lyapunov_from_gns(int d, double g) {
    const double e = 4.0 - d;
    return (e / 4.0) * std::pow(0.5 * d, d / e) * std::pow(2.0 * d * g, 2.0 / e);
}

double sphere_sup_from_gns(int d, double g) {
    const double e = 4.0 - d;
    return (e / 4.0) * std::pow(0.5 * d, d / e) * std::pow(g, 2.0 / e);
}

double w_sup_from_gns(int d, double g) {
    const double e = 4.0 - d;
    return std::pow(e / 4.0, e / 2.0) * std::pow(0.5 * d, 0.5 * d) * g;
}

double gns_from_sphere_sup(int d, double sup1) {
    const double e = 4.0 - d;
    return std::pow(sup1 / ((e / 4.0) * std::pow(0.5 * d, d / e)), e / 2.0);
}

double gns_from_w_sup(int d, double s) {
    const double e = 4.0 - d;
    return s / (std::pow(e / 4.0, e / 2.0) * std::pow(0.5 * d, 0.5 * d));
}

double lyapunov_from_sphere_sup(int d, double sup1) { return std::pow(2.0 * d, 2.0 / (4.0 - d)) * sup1; }

double lyapunov_from_w_sup(int d, double s) { return std::pow(2.0 * d * s, 2.0 / (4.0 - d)); }

VariationalResult gns_constant(const GridSpec& grid, const FlowOptions& opts) {
    const int d = grid.dim;
    Objective obj{Kind::Sphere, 1.0};
    auto all = solve_starts(obj, grid, 1.0, opts);
    VariationalResult r;
    r.dim = d;
    for (const auto& s : all) {
        const double gc = gns_ratio(s.coarse_profile), gf = gns_ratio(s.profile);
        r.start_values.push_back(grid.richardson ? (4.0 * gf - gc) / 3.0 : gf);
    }
    const std::size_t b = best_index(all);
    r.value = r.start_values[b];
    r.g_d = r.value;
    r.l_d = lyapunov_from_gns(d, r.g_d);
    r.s_sup = w_sup_from_gns(d, r.g_d);
    r.extremal = all[b].profile;
    r.flow = all[b].diag;
    return r;
}

VariationalResult s_variational_sup(double c, const GridSpec& grid, const FlowOptions& opts) {
    require(c > 0.0 && std::isfinite(c), "s_variational_sup: c must be positive");
    const int d = grid.dim;
    const double w = natural_width(d, c);
    Objective obj{Kind::Sphere, c};
    auto all = solve_starts(obj, grid, w, opts);
    VariationalResult r;
    r.dim = d;
    for (const auto& s : all) r.start_values.push_back(s.value);
    const std::size_t b = best_index(all);
    r.value = all[b].value;
    // sup(c) = c^{4/(4-d)} sup(1)
    const double sup1 = r.value / std::pow(c, 4.0 / (4.0 - d));
    r.g_d = gns_from_sphere_sup(d, sup1);
    r.l_d = lyapunov_from_sphere_sup(d, sup1);
    r.s_sup = w_sup_from_gns(d, r.g_d);
    r.extremal = all[b].profile;
    r.flow = all[b].diag;
    return r;
}

VariationalResult w_space_sup(const GridSpec& grid, const FlowOptions& opts) {
    const int d = grid.dim;
    Objective obj{Kind::Ellipsoid, 1.0};
    auto all = solve_starts(obj, grid, 1.0, opts);
    VariationalResult r;
    r.dim = d;
    for (const auto& s : all) r.start_values.push_back(s.value);
    const std::size_t b = best_index(all);
    r.value = all[b].value;
    r.s_sup = r.value;
    r.g_d = gns_from_w_sup(d, r.s_sup);
    r.l_d = lyapunov_from_w_sup(d, r.s_sup);
    r.extremal = all[b].profile;
    r.flow = all[b].diag;
    return r;
}

}  // namespace anderson
