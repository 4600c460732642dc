#include "anderson/operator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "lanczos.hpp"

namespace anderson {

namespace {

std::size_t flat_in(const Index& rel, const Index& extent, int dim) {
    std::size_t f = 0;
    for (int a = 0; a < dim; ++a) f = f * static_cast<std::size_t>(extent[a]) + static_cast<std::size_t>(rel[a]);
    return f;
}

void fill_diagnostics(const DiscreteOperator& op, SpectralResult& r) {
    r.participation.clear();
    r.peaks.clear();
    for (Eigen::Index c = 0; c < r.vectors.cols(); ++c) {
        const auto v = r.vectors.col(c);
        const double s2 = v.squaredNorm();
        const double s4 = v.array().square().square().sum();
        r.participation.push_back(s4 > 0.0 ? s2 * s2 / s4 : 0.0);
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        r.peaks.push_back(op.position(static_cast<std::size_t>(imax)));
    }
}

}  // namespace

Index DiscreteOperator::lattice_index(std::size_t i) const {
    Index j{};
    for (int a = dim - 1; a >= 0; --a) {
        j[a] = lo[a] + static_cast<long>(i % static_cast<std::size_t>(extent[a]));
        i /= static_cast<std::size_t>(extent[a]);
    }
    return j;
}

Point DiscreteOperator::position(std::size_t i) const {
    const Index j = lattice_index(i);
    Point x{};
    for (int a = 0; a < dim; ++a) x[a] = static_cast<double>(j[a]) * spacing;
    return x;
}

double DiscreteOperator::dirichlet_energy(const Eigen::VectorXd& phi) const {
    require(static_cast<std::size_t>(phi.size()) == size(), "dirichlet_energy: size mismatch");
    std::size_t stride[kMaxDim]{};
    std::size_t s = 1;
    for (int a = dim - 1; a >= 0; --a) {
        stride[a] = s;
        s *= static_cast<std::size_t>(extent[a]);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
        const Index j = lattice_index(i);
        for (int a = 0; a < dim; ++a) {
            // forward edge to j + e_a, and the edge entering from the exterior at the low face
            const double next = j[a] < hi[a] ? phi[static_cast<Eigen::Index>(i + stride[a])] : 0.0;
            const double d = next - phi[static_cast<Eigen::Index>(i)];
            sum += d * d;
            if (j[a] == lo[a]) sum += phi[static_cast<Eigen::Index>(i)] * phi[static_cast<Eigen::Index>(i)];
        }
    }
    return sum * std::pow(spacing, dim - 2);
}

double DiscreteOperator::quadratic_form(const Eigen::VectorXd& phi) const {
    double pot = 0.0;
    for (std::size_t i = 0; i < size(); ++i) pot += potential[i] * phi[static_cast<Eigen::Index>(i)] * phi[static_cast<Eigen::Index>(i)];
    return pot * std::pow(spacing, dim) - 0.5 * dirichlet_energy(phi);
}

DiscreteOperator assemble(std::shared_ptr<const FieldSample> sample, const Box& box, double sigma) {
    require(sample != nullptr, "assemble: no field sample");
    require(box.halfwidth > 0.0, "assemble: box half-width must be positive");
    const FieldSample& f = *sample;
    DiscreteOperator op;
    op.dim = f.dim;
    op.spacing = f.spacing;
    op.box = box;
    op.sigma = sigma;
    op.field = sample;
    std::size_t n = 1;
    for (int a = 0; a < f.dim; ++a) {
        const double lo_edge = (box.center[a] - box.halfwidth) / f.spacing;
        const double hi_edge = (box.center[a] + box.halfwidth) / f.spacing;
        op.lo[a] = static_cast<long>(std::floor(lo_edge + 1e-9)) + 1;
        op.hi[a] = static_cast<long>(std::ceil(hi_edge - 1e-9)) - 1;
        if (op.hi[a] < op.lo[a]) throw ConfigError("assemble: box contains no lattice points");
        if (op.lo[a] < -f.n_half || op.hi[a] > f.n_half) {
            std::ostringstream os;
            os << "assemble: box exceeds the sampled region (axis " << a << ", needs indices [" << op.lo[a] << ", "
               << op.hi[a] << "], field has [" << -f.n_half << ", " << f.n_half << "])";
            throw ConfigError(os.str());
        }
        op.extent[a] = op.hi[a] - op.lo[a] + 1;
        n *= static_cast<std::size_t>(op.extent[a]);
    }

    op.potential.resize(n);
    const double h2 = f.spacing * f.spacing;
    const double off = 0.5 / h2;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(n * (1 + 2 * static_cast<std::size_t>(f.dim)));
    for (std::size_t i = 0; i < n; ++i) {
        const Index j = op.lattice_index(i);
        op.potential[i] = sigma * f.at(j);
        const auto ii = static_cast<Eigen::Index>(i);
        trip.emplace_back(ii, ii, -static_cast<double>(f.dim) / h2 + op.potential[i]);
        Index rel{};
        for (int a = 0; a < f.dim; ++a) rel[a] = j[a] - op.lo[a];
        for (int a = 0; a < f.dim; ++a) {
            if (j[a] < op.hi[a]) {
                Index nb = rel;
                nb[a] += 1;
                const auto jj = static_cast<Eigen::Index>(flat_in(nb, op.extent, f.dim));
                trip.emplace_back(ii, jj, off);
                trip.emplace_back(jj, ii, off);
            }
        }
    }
    op.matrix.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    op.matrix.setFromTriplets(trip.begin(), trip.end());
    op.matrix.makeCompressed();
    return op;
}

SpectralResult top_eigenpairs(const DiscreteOperator& op, int k, const EigenOptions& opts) {
    const double n = static_cast<double>(op.size());
    const int cap = opts.max_iterations > 0 ? opts.max_iterations
                                            : std::max(60, static_cast<int>(std::ceil(10.0 * std::sqrt(n))));
    const double vol = std::pow(op.spacing, op.dim);
    auto rq = [&](const Eigen::VectorXd& x) { return op.quadratic_form(x) / (vol * x.squaredNorm()); };
    auto out = detail::shift_invert_lanczos(op.matrix, k, opts.tol, cap, opts.seed, rq);
    SpectralResult r;
    r.values = std::move(out.values);
    r.vectors = std::move(out.vectors);
    r.residuals = std::move(out.residuals);
    r.warnings = std::move(out.warnings);
    r.iterations = out.iterations;
    fill_diagnostics(op, r);
    return r;
}

SpectralResult dense_eigenpairs(const DiscreteOperator& op, int k) {
    const auto n = static_cast<Eigen::Index>(op.size());
    require(k >= 1, "dense_eigenpairs: k must be >= 1");
    SpectralResult r;
    if (k > n) {
        r.warnings.push_back("requested k=" + std::to_string(k) + " exceeds dimension " + std::to_string(n) +
                             "; clamped");
        k = static_cast<int>(n);
    }
    const Eigen::MatrixXd dense(op.matrix);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
    if (es.info() != Eigen::Success) throw NumericalError("dense eigensolver failed");
    r.vectors.resize(n, k);
    for (int i = 0; i < k; ++i) {
        const Eigen::Index c = n - 1 - i;
        r.values.push_back(es.eigenvalues()[c]);
        r.vectors.col(i) = es.eigenvectors().col(c);
        r.residuals.push_back((op.matrix * r.vectors.col(i) - r.values.back() * r.vectors.col(i)).norm());
    }
    fill_diagnostics(op, r);
    return r;
}

double principal_eigenvalue(const DiscreteOperator& op, const EigenOptions& opts) {
    return top_eigenpairs(op, 1, opts).values.front();
}

LowerBoundReport localization_lower_bound_check(const DiscreteOperator& op, const std::vector<Box>& subboxes,
                                                const EigenOptions& opts) {
    LowerBoundReport rep;
    rep.lambda_full = principal_eigenvalue(op, opts);
    double best = -std::numeric_limits<double>::infinity();
    for (const Box& b : subboxes) {
        const DiscreteOperator sub = assemble(op.field, b, op.sigma);
        for (int a = 0; a < op.dim; ++a)
            require(sub.lo[a] >= op.lo[a] && sub.hi[a] <= op.hi[a], "lower bound check: sub-box leaves the domain");
        rep.lambda_sub.push_back(principal_eigenvalue(sub, opts));
        best = std::max(best, rep.lambda_sub.back());
    }
    rep.margin = rep.lambda_full - best;
    return rep;
}

std::vector<Box> quadrant_subboxes(const Box& box, int dim) {
    std::vector<Box> out;
    const double h = 0.5 * box.halfwidth;
    for (int mask = 0; mask < (1 << dim); ++mask) {
        Box b;
        b.halfwidth = h;
        b.center = box.center;
        for (int a = 0; a < dim; ++a) b.center[a] += ((mask >> a) & 1) ? h : -h;
        out.push_back(b);
    }
    return out;
}

std::vector<Box> interval_subboxes(const Box& box, int count) {
    require(count >= 1, "interval_subboxes: count must be >= 1");
    std::vector<Box> out;
    const double w = 2.0 * box.halfwidth / count;
    for (int i = 0; i < count; ++i) {
        Box b = box;
        b.halfwidth = 0.5 * w;
        b.center[0] = box.center[0] - box.halfwidth + (i + 0.5) * w;
        out.push_back(b);
    }
    return out;
}

UpperBoundScan localization_upper_bound_scan(const DiscreteOperator& op, double kappa, const EigenOptions& opts) {
    const double r = op.box.halfwidth;
    if (!(kappa > 0.0) || !(r > kappa)) throw ConfigError("upper bound scan requires 0 < kappa < r");
    // offsets 2 kappa * i with |2 kappa i| < r
    long mmax = 0;
    while (2.0 * kappa * static_cast<double>(mmax + 1) < r) ++mmax;
    UpperBoundScan scan;
    scan.kappa = kappa;
    scan.lambda_full = principal_eigenvalue(op, opts);
    scan.max_sub = -std::numeric_limits<double>::infinity();
    const long side = 2 * mmax + 1;
    long total = 1;
    for (int a = 0; a < op.dim; ++a) total *= side;
    for (long f = 0; f < total; ++f) {
        Box b;
        b.halfwidth = kappa + 1.0;
        b.center = op.box.center;
        long rest = f;
        for (int a = 0; a < op.dim; ++a) {
            b.center[a] += 2.0 * kappa * static_cast<double>(rest % side - mmax);
            rest /= side;
        }
        const DiscreteOperator sub = assemble(op.field, b, op.sigma);
        const double lam = principal_eigenvalue(sub, opts);
        ++scan.boxes;
        if (lam > scan.max_sub) {
            scan.max_sub = lam;
            scan.argmax = b.center;
        }
    }
    if (scan.boxes == 0) throw ConfigError("upper bound scan: empty sub-box grid");
    scan.gap = scan.lambda_full - scan.max_sub;
    return scan;
}

RescaledPair rescaled_eigenvalue_view(const FieldSample& xi1, double eps, double eta, double sigma, double r,
                                      double spacing, const EigenOptions& opts) {
    require(eta > 0.0, "rescaled eigenvalue view: eta must be positive");
    const double rho = xi1.spec.support_radius;
    auto check_mesh = [&](double e) {
        if (e * rho < 4.0 * spacing * (1.0 - 1e-12)) {
            std::ostringstream os;
            os << "mesh rule violated: eps*rho = " << e * rho << " < 4 dx = " << 4.0 * spacing;
            throw ConfigError(os.str());
        }
    };
    check_mesh(eps);
    check_mesh(eps / eta);
    const int d = xi1.dim;
    auto lhs_field = std::make_shared<const FieldSample>(rescaled_view(xi1, eps, spacing, r));
    RescaledPair out;
    out.lhs = principal_eigenvalue(assemble(lhs_field, Box{Point{}, r}, sigma), opts);
    auto rhs_field = std::make_shared<const FieldSample>(rescaled_view(xi1, eps / eta, spacing, r / eta));
    const double sigma_eta = sigma * std::pow(eta, 0.5 * (4.0 - d));
    out.rhs = principal_eigenvalue(assemble(rhs_field, Box{Point{}, r / eta}, sigma_eta), opts) / (eta * eta);
    return out;
}

}  // namespace anderson
