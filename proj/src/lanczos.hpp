#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace anderson::detail {

struct LanczosOutput {
    std::vector<double> values;
    Eigen::MatrixXd vectors;
    std::vector<double> residuals;
    std::vector<std::string> warnings;
    int iterations = 0;
};

// k largest eigenpairs of the symmetric matrix A. `rayleigh` returns the
// Rayleigh quotient of a unit vector; it lets the caller avoid the
// cancellation in x^T A x when A has large diagonal and off-diagonal parts.
LanczosOutput shift_invert_lanczos(const Eigen::SparseMatrix<double>& A, int k, double tol, int max_iter,
                                   std::uint64_t seed,
                                   const std::function<double(const Eigen::VectorXd&)>& rayleigh);

}  // namespace anderson::detail
