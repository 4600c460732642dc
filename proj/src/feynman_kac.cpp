#include "anderson/feynman_kac.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "anderson/parallel.hpp"
#include "anderson/rng.hpp"

namespace anderson {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

int step_count(double t, double dt) {
    return std::max(1, static_cast<int>(std::ceil(t / dt - 1e-9)));
}

void validate_paths(const PathConfig& cfg, double eps) {
    require(cfg.t > 0.0 && std::isfinite(cfg.t), "path config: t must be positive");
    require(cfg.dt > 0.0, "path config: dt must be positive");
    require(cfg.paths >= 100, "path config: at least 100 paths are required");
    if (cfg.dt > eps * eps / 4.0 * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "path config: dt = " << cfg.dt << " does not resolve the noise scale (needs dt <= eps^2/4 = "
           << eps * eps / 4.0 << ")";
        throw ConfigError(os.str());
    }
}

// P(sup_{s<=t} |B_s|_inf >= L) <= 4 d P(N(0,1) >= L / sqrt t)
double exit_bound(int dim, double reach, double t) {
    return 4.0 * dim * 0.5 * std::erfc(reach / std::sqrt(2.0 * t));
}

double field_value(const FieldSample& f, const Point& x, Interpolation mode, bool& outside) {
    if (!f.covers(x)) {
        outside = true;
        return 0.0;
    }
    return mode == Interpolation::Multilinear ? f.interpolate(x) : f.nearest(x);
}

// Survival probability of a Brownian bridge of duration h between x0 and x1
// (both inside) with respect to the two walls of one axis.
double bridge_survival(double x0, double x1, double lo, double hi, double h) {
    const double p = std::exp(-2.0 * (x0 - lo) * (x1 - lo) / h) + std::exp(-2.0 * (hi - x0) * (hi - x1) / h);
    return std::max(0.0, 1.0 - p);
}

struct PathOutcome {
    double log_w = 0.0;
    double killed = 0.0;   // 1 - survival
    bool left_field = false;
};

// One Feynman-Kac path from the origin (or a bridge from x back to x when
// `bridge` is set). A null box means no killing.
PathOutcome run_path(const FieldSample& field, double sigma, const PathConfig& cfg, std::uint64_t index,
                     const Box* box, const Point* bridge_start) {
    const int d = field.dim;
    const int n = step_count(cfg.t, cfg.dt);
    const double h = cfg.t / n;
    const double sh = std::sqrt(h);
    Rng rng = make_stream(cfg.seed, index);
    std::normal_distribution<double> normal;

    std::vector<Point> pts(static_cast<std::size_t>(n) + 1);
    Point x{};
    if (bridge_start) x = *bridge_start;
    pts[0] = x;
    for (int k = 1; k <= n; ++k) {
        for (int a = 0; a < d; ++a) x[a] += sh * normal(rng);
        pts[k] = x;
    }
    if (bridge_start) {
        // X(s) = x + W(s) - (s/t) W(t)
        Point wt{};
        for (int a = 0; a < d; ++a) wt[a] = pts[n][a] - (*bridge_start)[a];
        for (int k = 1; k <= n; ++k)
            for (int a = 0; a < d; ++a) pts[k][a] -= static_cast<double>(k) / n * wt[a];
        pts[n] = *bridge_start;
    }

    PathOutcome out;
    double survival = 1.0;
    double integral = 0.0;
    for (int k = 0; k <= n; ++k) {
        const Point& p = pts[k];
        if (box) {
            for (int a = 0; a < d; ++a) {
                const double lo = box->center[a] - box->halfwidth, hi = box->center[a] + box->halfwidth;
                if (!(p[a] > lo && p[a] < hi)) survival = 0.0;
                if (survival > 0.0 && k > 0) survival *= bridge_survival(pts[k - 1][a], p[a], lo, hi, h);
            }
            if (survival == 0.0) break;
        }
        const double wk = (k == 0 || k == n) ? 0.5 : 1.0;
        integral += wk * field_value(field, p, cfg.interpolation, out.left_field);
    }
    out.killed = 1.0 - survival;
    out.log_w = survival > 0.0 ? sigma * h * integral + std::log(survival) : kNegInf;
    return out;
}

}  // namespace

std::string to_string(Interpolation i) {
    return i == Interpolation::Multilinear ? "multilinear" : "nearest-lattice";
}

Interpolation interpolation_from_string(const std::string& s) {
    if (s == "multilinear" || s == "linear") return Interpolation::Multilinear;
    if (s == "nearest-lattice" || s == "nearest") return Interpolation::NearestLattice;
    throw ConfigError("unknown interpolation mode '" + s + "' (expected multilinear or nearest-lattice)");
}

FKEstimate aggregate_log_weights(std::span<const double> log_w, double min_ess) {
    FKEstimate e;
    e.M = static_cast<long>(log_w.size());
    require(e.M > 0, "aggregate: no samples");
    double mx = kNegInf;
    for (double v : log_w) mx = std::max(mx, v);
    if (mx == kNegInf) throw NumericalError("all Monte-Carlo weights vanish", "every path was killed");
    std::vector<double> w(log_w.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_w[i] - mx);
    const double s1 = pairwise_sum(w.data(), w.size());
    std::vector<double> sq(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) sq[i] = w[i] * w[i];
    const double s2 = pairwise_sum(sq.data(), sq.size());
    const double M = static_cast<double>(e.M);
    e.log_mean = mx + std::log(s1) - std::log(M);
    e.ess = s1 * s1 / s2;
    const double mean = s1 / M;
    const double var = e.M > 1 ? std::max(0.0, (s2 - M * mean * mean) / (M - 1.0)) : 0.0;
    e.std_error = std::sqrt(var) / (std::sqrt(M) * mean);
    if (e.ess < min_ess) {
        std::ostringstream os;
        os << "ess=" << e.ess << " M=" << e.M << " log_mean=" << e.log_mean;
        throw NumericalError("weight degeneracy: effective sample size below " + std::to_string(min_ess) +
                                 "; increase the number of paths or reduce t",
                             os.str());
    }
    return e;
}

FKEstimate total_mass(const FieldSample& field, double sigma, const PathConfig& cfg) {
    validate_paths(cfg, field.eps);
    const double reach = static_cast<double>(field.n_half) * field.spacing;
    const double bound = exit_bound(field.dim, reach, cfg.t);
    if (bound >= 1e-3) {
        std::ostringstream os;
        os << "total_mass: field half-width " << reach << " too small for horizon t=" << cfg.t
           << " (exit probability bound " << bound << " >= 1e-3)";
        throw ConfigError(os.str());
    }
    std::vector<double> logw(static_cast<std::size_t>(cfg.paths));
    std::vector<char> left(logw.size(), 0);
    parallel_for(logw.size(), cfg.workers, [&](std::size_t m) {
        const auto o = run_path(field, sigma, cfg, m, nullptr, nullptr);
        logw[m] = o.log_w;
        left[m] = o.left_field;
    });
    FKEstimate e = aggregate_log_weights(logw);
    e.exit_fraction = static_cast<double>(std::count(left.begin(), left.end(), 1)) / static_cast<double>(left.size());
    return e;
}

FKEstimate dirichlet_total_mass(const FieldSample& field, double sigma, const Box& box, const PathConfig& cfg) {
    validate_paths(cfg, field.eps);
    const double reach = static_cast<double>(field.n_half) * field.spacing;
    for (int a = 0; a < field.dim; ++a)
        require(std::abs(box.center[a]) + box.halfwidth <= reach * (1.0 + 1e-12),
                "dirichlet_total_mass: box exceeds the sampled region");
    std::vector<double> logw(static_cast<std::size_t>(cfg.paths)), killed(logw.size());
    parallel_for(logw.size(), cfg.workers, [&](std::size_t m) {
        const auto o = run_path(field, sigma, cfg, m, &box, nullptr);
        logw[m] = o.log_w;
        killed[m] = o.killed;
    });
    FKEstimate e = aggregate_log_weights(logw);
    e.exit_fraction = pairwise_sum(killed.data(), killed.size()) / static_cast<double>(killed.size());
    return e;
}

int trace_truncation_bound(const DiscreteOperator& op, double lambda1, double t) {
    require(t > 0.0, "trace bound: t must be positive");
    const double vmax = *std::max_element(op.potential.begin(), op.potential.end());
    const double thr = lambda1 - std::log(1e6) / t - vmax;
    const double h = op.spacing;
    std::vector<std::vector<double>> modes(op.dim);
    for (int a = 0; a < op.dim; ++a) {
        const long n = op.extent[a];
        for (long k = 1; k <= n; ++k) {
            const double s = std::sin(static_cast<double>(k) * std::numbers::pi / (2.0 * static_cast<double>(n + 1)));
            modes[a].push_back(-2.0 / (h * h) * s * s);
        }
    }
    // count tuples with Σ modes >= thr; modes are sorted descending
    long count = 0;
    const long cap = static_cast<long>(op.size());
    auto rec = [&](auto&& self, int axis, double acc) -> void {
        if (count > cap) return;
        if (axis == op.dim) {
            ++count;
            return;
        }
        double rest = 0.0;  // best case for the remaining axes
        for (int b = axis + 1; b < op.dim; ++b) rest += modes[b].front();
        for (double m : modes[axis]) {
            if (acc + m + rest < thr) break;
            self(self, axis + 1, acc + m);
        }
    };
    rec(rec, 0, 0.0);
    return static_cast<int>(std::min(count + 1, cap));
}

TraceReport trace_check(const DiscreteOperator& op, const SpectralResult& spectral, double t, const PathConfig& cfg) {
    require(!spectral.values.empty(), "trace_check: empty spectral result");
    require(cfg.paths >= 100, "trace_check: at least 100 bridges are required");
    const int d = op.dim;
    TraceReport rep;
    rep.t = t;
    rep.k_used = static_cast<int>(spectral.values.size());
    const double l1 = spectral.values.front();
    const double lk = spectral.values.back();
    rep.truncation_ratio = rep.k_used >= static_cast<int>(op.size()) ? 0.0 : std::exp(t * (lk - l1));
    if (rep.truncation_ratio >= 1e-6) {
        std::ostringstream os;
        os << "trace_check: spectral sum truncated too early (e^{t(Λ_k*-Λ_1)} = " << rep.truncation_ratio
           << " >= 1e-6 with k*=" << rep.k_used << "); required k* <= " << trace_truncation_bound(op, l1, t);
        throw ConfigError(os.str());
    }
    std::vector<double> terms;
    for (double v : spectral.values) terms.push_back(std::exp(t * v));
    rep.spectral = pairwise_sum(terms.data(), terms.size());

    PathConfig c = cfg;
    c.t = t;
    validate_paths(c, op.field->eps);
    const std::size_t N = op.size();
    const std::size_t M = static_cast<std::size_t>(cfg.paths);
    const double gauss = std::pow(2.0 * std::numbers::pi * t, -0.5 * d);
    const double scale = static_cast<double>(N) * std::pow(op.spacing, d) * gauss;
    std::vector<double> contrib(M);
    parallel_for(M, cfg.workers, [&](std::size_t m) {
        // stratified start point: one uniform draw in the m-th slice of the lattice
        Rng rng = make_stream(cfg.seed ^ 0x7ace5eedULL, m);
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        const double u = (static_cast<double>(m) + uni(rng)) * static_cast<double>(N) / static_cast<double>(M);
        const std::size_t idx = std::min(N - 1, static_cast<std::size_t>(u));
        const Point x0 = op.position(idx);
        const auto o = run_path(*op.field, op.sigma, c, m, &op.box, &x0);
        contrib[m] = o.log_w == kNegInf ? 0.0 : scale * std::exp(o.log_w);
    });
    const double mean = pairwise_sum(contrib.data(), M) / static_cast<double>(M);
    double ss = 0.0;
    for (double v : contrib) ss += (v - mean) * (v - mean);
    rep.monte_carlo = mean;
    rep.mc_std_error = std::sqrt(ss / static_cast<double>(M - 1)) / std::sqrt(static_cast<double>(M));
    rep.relative_discrepancy = std::abs(rep.spectral - rep.monte_carlo) / rep.spectral;
    rep.z_score = rep.mc_std_error > 0.0 ? std::abs(rep.spectral - rep.monte_carlo) / rep.mc_std_error
                                         : std::numeric_limits<double>::infinity();
    return rep;
}

std::vector<GrowthPoint> quenched_growth_statistic(const std::vector<GrowthInput>& grid, double sigma,
                                                   const PathConfig& cfg, const EigenOptions& eig) {
    std::vector<GrowthPoint> out;
    double prev = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const GrowthInput& g = grid[i];
        require(g.field != nullptr, "growth statistic: missing field");
        require(g.t > 1.0, "growth statistic: t must exceed 1 so that log t > 0");
        require(i == 0 || g.t > prev, "growth statistic: t grid must be strictly increasing");
        prev = g.t;
        const int d = g.field->dim;
        GrowthPoint p;
        p.t = g.t;
        p.eps = g.eps;
        p.lambda1 = principal_eigenvalue(assemble(g.field, Box{Point{}, g.t}, sigma), eig);
        const double lt = std::log(g.t);
        p.regular_normalizer = g.t * std::pow(g.eps, -0.5 * d) * std::sqrt(lt);
        p.singular_normalizer = g.t * std::pow(lt, 2.0 / (4.0 - d));
        p.direct_log_u = std::numeric_limits<double>::quiet_NaN();

        PathConfig c = cfg;
        c.t = g.t;
        c.seed = cfg.seed + 0x9e3779b97f4a7c15ULL * (i + 1);
        const double reach = static_cast<double>(g.field->n_half) * g.field->spacing;
        if (exit_bound(d, reach, g.t) < 1e-3) {
            try {
                const FKEstimate e = total_mass(*g.field, sigma, c);
                p.direct_log_u = e.log_mean;
                p.log_u = e.log_mean;
                p.log_u_se = e.std_error;
            } catch (const NumericalError&) {
                p.proxy = true;
            }
        } else {
            p.proxy = true;
        }
        if (p.proxy) {
            p.log_u = g.t * p.lambda1;
            p.log_u_se = 0.0;
        }
        p.regular_stat = p.log_u / p.regular_normalizer;
        p.singular_stat = p.log_u / p.singular_normalizer;
        out.push_back(p);
    }
    return out;
}

FKEstimate annealed_moment(const DiscreteKernel& kernel, double sigma, int p, const PathConfig& cfg,
                           const AnnealedOptions& opts) {
    require(p >= 1 && p <= 3, "annealed moment: p must be 1, 2 or 3");
    validate_paths(cfg, kernel.spec.support_radius);
    const int d = kernel.dim();
    const int n = step_count(cfg.t, cfg.dt);
    const double h = cfg.t / n;
    const double sh = std::sqrt(h);
    const double reach = static_cast<double>(kernel.cov_half) * kernel.spacing;  // R vanishes beyond
    std::vector<double> wt(static_cast<std::size_t>(n) + 1, h);
    wt.front() = wt.back() = 0.5 * h;

    std::vector<double> logw(static_cast<std::size_t>(cfg.paths));
    parallel_for(logw.size(), cfg.workers, [&](std::size_t m) {
        if (opts.zero_covariance) {
            logw[m] = 0.0;
            return;
        }
        Rng rng = make_stream(cfg.seed, m);
        std::normal_distribution<double> normal;
        std::vector<std::vector<Point>> paths(p, std::vector<Point>(static_cast<std::size_t>(n) + 1));
        for (int i = 0; i < p; ++i) {
            Point x{};
            paths[i][0] = x;
            for (int k = 1; k <= n; ++k) {
                for (int a = 0; a < d; ++a) x[a] += sh * normal(rng);
                paths[i][k] = x;
            }
        }
        double total = 0.0;
        if (d == 1) {
            // sort each path's positions; only pairs within the support of R contribute
            std::vector<std::vector<std::pair<double, double>>> sorted(p);
            for (int j = 0; j < p; ++j) {
                for (int k = 0; k <= n; ++k) sorted[j].emplace_back(paths[j][k][0], wt[k]);
                std::sort(sorted[j].begin(), sorted[j].end());
            }
            for (int i = 0; i < p; ++i)
                for (int j = 0; j < p; ++j) {
                    const auto& sj = sorted[j];
                    for (int a = 0; a <= n; ++a) {
                        const double x = paths[i][a][0];
                        auto it = std::lower_bound(sj.begin(), sj.end(), std::make_pair(x - reach, -1.0));
                        double s = 0.0;
                        for (; it != sj.end() && it->first < x + reach; ++it)
                            s += it->second * kernel.cov_interpolate(Point{x - it->first, 0.0, 0.0});
                        total += wt[a] * s;
                    }
                }
        } else {
            for (int i = 0; i < p; ++i)
                for (int j = 0; j < p; ++j)
                    for (int a = 0; a <= n; ++a) {
                        double s = 0.0;
                        for (int b = 0; b <= n; ++b) {
                            Point diff{};
                            bool near = true;
                            for (int c = 0; c < d; ++c) {
                                diff[c] = paths[i][a][c] - paths[j][b][c];
                                if (std::abs(diff[c]) >= reach) near = false;
                            }
                            if (near) s += wt[b] * kernel.cov_interpolate(diff);
                        }
                        total += wt[a] * s;
                    }
        }
        logw[m] = 0.5 * sigma * sigma * total;
    });
    return aggregate_log_weights(logw);
}

}  // namespace anderson
