#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace anderson {

inline constexpr int kMaxDim = 3;
using Point = std::array<double, kMaxDim>;
using Index = std::array<long, kMaxDim>;

// Invalid parameters, violated preconditions and mesh rules. The CLI maps
// these to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failures: non-convergence, weight degeneracy, flow divergence.
// The CLI maps these to exit code 3.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::string diagnostics = {})
        : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}
    const std::string& diagnostics() const { return diagnostics_; }

private:
    std::string diagnostics_;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

inline double ipow(double x, int n) {
    double r = 1.0;
    for (int i = 0; i < n; ++i) r *= x;
    return r;
}

}  // namespace anderson
