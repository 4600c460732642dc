#include "lanczos.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/SparseCholesky>

#include "anderson/common.hpp"
#include "anderson/rng.hpp"

namespace anderson::detail {

namespace {

struct RitzPair {
    double value;
    double residual;
    Eigen::VectorXd vector;
};

}  // namespace

LanczosOutput shift_invert_lanczos(const Eigen::SparseMatrix<double>& A, int k, double tol, int max_iter,
                                   std::uint64_t seed,
                                   const std::function<double(const Eigen::VectorXd&)>& rayleigh) {
    using Eigen::VectorXd;
    const Eigen::Index n = A.rows();
    LanczosOutput out;
    if (n == 0) throw ConfigError("eigensolver: empty operator");
    if (k < 1) throw ConfigError("eigensolver: k must be >= 1");
    if (k > n) {
        out.warnings.push_back("requested k=" + std::to_string(k) + " exceeds dimension " + std::to_string(n) +
                               "; clamped");
        k = static_cast<int>(n);
    }

    // Gershgorin upper bound; the shifted operator s - A is positive definite.
    double upper = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < A.outerSize(); ++j) {
        double diag = 0.0, off = 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(A, j); it; ++it) {
            if (it.row() == j)
                diag += it.value();
            else
                off += std::abs(it.value());
        }
        upper = std::max(upper, diag + off);
    }
    const double shift = upper + 1.0;
    Eigen::SparseMatrix<double> P(n, n);
    P.setIdentity();
    P *= shift;
    P -= A;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(P);
    if (ldlt.info() != Eigen::Success) throw NumericalError("eigensolver: factorization of shifted operator failed");

    auto residual_of = [&](const VectorXd& x, double lambda) { return (A * x - lambda * x).norm(); };
    auto accept = [&](double lambda, double res) { return res <= tol * (std::abs(lambda) + 1.0); };

    Eigen::MatrixXd locked(n, 0);
    std::vector<double> locked_vals, locked_res;
    int used = 0;
    int restart = 0;
    const int budget = max_iter;

    auto deflate = [&](VectorXd& w) {
        if (locked.cols() > 0) w -= locked * (locked.transpose() * w);
    };

    // One Lanczos run in the complement of the locked vectors. Returns the top
    // `want` Ritz pairs, converged or not.
    auto run = [&](int want) {
        std::vector<RitzPair> pairs;
        const Eigen::Index room = n - locked.cols();
        if (room <= 0) return pairs;
        Rng rng = make_stream(seed, static_cast<std::uint64_t>(restart++));
        std::normal_distribution<double> normal;
        VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
        deflate(v);
        deflate(v);
        double nv = v.norm();
        if (nv < 1e-12) return pairs;
        v /= nv;

        std::vector<VectorXd> basis{v};
        std::vector<double> alpha, beta;
        const int max_steps = static_cast<int>(std::min<Eigen::Index>(room, budget - used));
        if (max_steps <= 0) return pairs;
        want = std::min<int>(want, static_cast<int>(room));

        for (int j = 0; j < max_steps; ++j) {
            VectorXd w = ldlt.solve(basis[j]);
            ++used;
            const double a = basis[j].dot(w);
            w -= a * basis[j];
            if (j > 0) w -= beta[j - 1] * basis[j - 1];
            for (int pass = 0; pass < 2; ++pass) {
                for (const auto& q : basis) w -= q.dot(w) * q;
                deflate(w);
            }
            alpha.push_back(a);
            const double b = w.norm();
            double amax = 0.0;
            for (double x : alpha) amax = std::max(amax, std::abs(x));
            const bool invariant = b <= 1e-13 * amax;
            const bool last = invariant || j + 1 == max_steps;
            const int m = j + 1;

            if (m >= want && (m % 5 == 0 || last)) {
                Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
                for (int i = 0; i < m; ++i) {
                    T(i, i) = alpha[i];
                    if (i + 1 < m) T(i, i + 1) = T(i + 1, i) = beta[i];
                }
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
                bool estimates_small = true;
                for (int i = 0; i < want; ++i) {
                    const Eigen::Index col = m - 1 - i;
                    const double theta = es.eigenvalues()[col];
                    const double est = b * std::abs(es.eigenvectors()(m - 1, col));
                    if (!(est <= 1e-9 * std::abs(theta))) estimates_small = false;
                }
                if (estimates_small || last) {
                    pairs.clear();
                    bool all_ok = true;
                    for (int i = 0; i < want; ++i) {
                        const Eigen::Index col = m - 1 - i;
                        VectorXd x = VectorXd::Zero(n);
                        for (int r = 0; r < m; ++r) x += es.eigenvectors()(r, col) * basis[r];
                        x.normalize();
                        const double lambda = rayleigh ? rayleigh(x) : x.dot(A * x);
                        const double res = residual_of(x, lambda);
                        all_ok = all_ok && accept(lambda, res);
                        pairs.push_back({lambda, res, std::move(x)});
                    }
                    if (all_ok || last) return pairs;
                }
            }
            if (invariant) break;
            beta.push_back(b);
            basis.push_back(w / b);
        }
        return pairs;
    };

    auto lock = [&](RitzPair& p) {
        locked.conservativeResize(n, locked.cols() + 1);
        locked.col(locked.cols() - 1) = p.vector;
        locked_vals.push_back(p.value);
        locked_res.push_back(p.residual);
    };

    while (static_cast<int>(locked.cols()) < k) {
        const int want = k - static_cast<int>(locked.cols());
        auto pairs = run(want);
        int added = 0;
        for (auto& p : pairs)
            if (accept(p.value, p.residual)) {
                lock(p);
                ++added;
            }
        if (added == 0) {
            std::ostringstream diag;
            diag << "iterations=" << used << " cap=" << budget << " locked=" << locked.cols() << " best residuals:";
            for (const auto& p : pairs) diag << ' ' << p.residual << "@" << p.value;
            throw NumericalError("eigensolver did not converge within the iteration cap", diag.str());
        }
    }

    // Restart in the complement: anything above the current k-th value was
    // missed (degenerate or nearly invisible to the first start vector).
    while (locked.cols() < n) {
        if (used >= budget) {
            out.warnings.push_back("iteration cap reached before the missed-eigenvalue check completed");
            break;
        }
        auto pairs = run(1);
        if (pairs.empty() || !accept(pairs[0].value, pairs[0].residual)) {
            if (!pairs.empty()) out.warnings.push_back("missed-eigenvalue check did not converge");
            break;
        }
        std::vector<double> sorted = locked_vals;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        const double kth = sorted[k - 1];
        if (pairs[0].value > kth + 1e-12 * (1.0 + std::abs(kth)))
            lock(pairs[0]);
        else
            break;
    }

    std::vector<std::size_t> order(locked_vals.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return locked_vals[a] > locked_vals[b]; });
    out.vectors.resize(n, k);
    for (int i = 0; i < k; ++i) {
        out.values.push_back(locked_vals[order[i]]);
        out.residuals.push_back(locked_res[order[i]]);
        out.vectors.col(i) = locked.col(static_cast<Eigen::Index>(order[i]));
    }
    out.iterations = used;
    return out;
}

}  // namespace anderson::detail
