#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "anderson/common.hpp"
#include "anderson/noise.hpp"

namespace anderson {

/// Open box center + (-halfwidth, halfwidth)^d.
struct Box {
    Point center{};
    double halfwidth = 1.0;
};

/// ½Δ_h + σ ξ restricted to the lattice points strictly inside a box, with
/// zero (Dirichlet) exterior. Immutable after assembly.
struct DiscreteOperator {
    int dim = 1;
    double spacing = 0.0;
    Box box;
    double sigma = 1.0;
    Index lo{}, hi{};          ///< inclusive field-lattice index range of the unknowns
    Index extent{};            ///< points per axis
    std::vector<double> potential;  ///< σ ξ at each unknown, row-major
    Eigen::SparseMatrix<double> matrix;
    std::shared_ptr<const FieldSample> field;

    std::size_t size() const { return potential.size(); }
    Point position(std::size_t i) const;
    Index lattice_index(std::size_t i) const;

    /// Σ|∇_h φ|² dx^d with forward differences and zero exterior.
    double dirichlet_energy(const Eigen::VectorXd& phi) const;
    /// σ Σ ξ φ² dx^d − ½ Σ|∇_h φ|² dx^d, evaluated without the matrix.
    double quadratic_form(const Eigen::VectorXd& phi) const;
};

/// Throws ConfigError if the box interior leaves the sampled region.
DiscreteOperator assemble(std::shared_ptr<const FieldSample> sample, const Box& box, double sigma);

struct SpectralResult {
    std::vector<double> values;  ///< Λ_1 >= Λ_2 >= ... >= Λ_k
    Eigen::MatrixXd vectors;     ///< columns, unit Euclidean norm
    std::vector<double> residuals;
    std::vector<double> participation;  ///< (Σψ²)² / Σψ⁴, in lattice sites
    std::vector<Point> peaks;
    std::vector<std::string> warnings;
    int iterations = 0;
};

struct EigenOptions {
    double tol = 1e-8;
    int max_iterations = 0;  ///< 0: 10 sqrt(dim), at least 60
    std::uint64_t seed = 0x5eed;
};

/// k largest eigenpairs by shift-invert Lanczos with full reorthogonalization,
/// locking and a restart that checks for missed (e.g. degenerate) eigenvalues.
/// Residual contract: |AΨ - ΛΨ| <= tol (|Λ| + 1).
SpectralResult top_eigenpairs(const DiscreteOperator& op, int k, const EigenOptions& opts = {});

/// Dense symmetric eigensolver; the independent reference route.
SpectralResult dense_eigenpairs(const DiscreteOperator& op, int k);

/// Principal eigenvalue only.
double principal_eigenvalue(const DiscreteOperator& op, const EigenOptions& opts = {});

struct LowerBoundReport {
    double lambda_full = 0.0;
    std::vector<double> lambda_sub;
    double margin = 0.0;  ///< Λ_1(Ω) - max_i Λ_1(Ω_i); nonnegative unless something is broken
};

/// Checks Λ_1(A, Ω) >= max_i Λ_1(A, Ω_i) on one realization.
LowerBoundReport localization_lower_bound_check(const DiscreteOperator& op, const std::vector<Box>& subboxes,
                                                const EigenOptions& opts = {});

std::vector<Box> quadrant_subboxes(const Box& box, int dim);
std::vector<Box> interval_subboxes(const Box& box, int count);

struct UpperBoundScan {
    double kappa = 0.0;
    double lambda_full = 0.0;
    double max_sub = 0.0;
    double gap = 0.0;  ///< Λ_1(Q_r) - max_z Λ_1(z + Q_{κ+1})
    Point argmax{};
    std::size_t boxes = 0;
};

/// Scans Z = 2κZ^d ∩ Q_r around the operator's box. Requires r > κ and a
/// field that covers every z + Q_{κ+1}.
UpperBoundScan localization_upper_bound_scan(const DiscreteOperator& op, double kappa,
                                             const EigenOptions& opts = {});

struct RescaledPair {
    double lhs = 0.0;
    double rhs = 0.0;
};

/// Λ_1(A_ε^(σ), Q_r) versus η^-2 Λ_1(A_{ε/η}^(σ η^((4-d)/2)), Q_{r/η}) on the
/// same ξ_1 realization, both discretized at `spacing`.
RescaledPair rescaled_eigenvalue_view(const FieldSample& xi1, double eps, double eta, double sigma, double r,
                                      double spacing, const EigenOptions& opts = {});

}  // namespace anderson
