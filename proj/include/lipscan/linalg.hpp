#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>

#include "lipscan/errors.hpp"

namespace lipscan::linalg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Matrix-free linear map with an explicit adjoint. Spectral estimators
// below never materialize the operator.
struct LinearOperator {
    Eigen::Index rows = 0; // m
    Eigen::Index cols = 0; // n
    std::function<Vec(const Vec&)> apply;         // n -> m
    std::function<Vec(const Vec&)> apply_adjoint; // m -> n

    static LinearOperator from_matrix(const Mat& m);
    static LinearOperator symmetric(Eigen::Index n, std::function<Vec(const Vec&)> apply);
};

struct PowerConfig {
    double rel_tol = 1e-6;
    int max_iters = 1000;
    std::uint64_t seed = 0;
};

struct PowerResult {
    double sigma = 0.0;
    int iters = 0;
    bool converged = false;
};

struct SymPowerResult {
    double lambda = 0.0; // eigenvalue of largest magnitude, signed
    Vec eigvec;
    int iters = 0;
    bool converged = false;
};

struct LanczosResult {
    double lambda_max = 0.0;
    double lambda_min = 0.0;
    std::optional<double> lambda_min_nonzero;
    int steps = 0;
};

// Largest singular value via alternating u/v power iteration.
PowerResult power_method(const LinearOperator& op, const PowerConfig& cfg);

// Eigenvalue of largest magnitude (with sign) of a symmetric operator,
// via power iteration with Rayleigh-quotient readout.
SymPowerResult sym_power_method(const LinearOperator& op, const PowerConfig& cfg);

// Extreme Ritz values of a symmetric operator from k Lanczos steps with
// full reorthogonalization. lambda_min_nonzero is the smallest Ritz value
// with |lambda| > zero_tol * max(1, |lambda_max|).
LanczosResult lanczos_extremes(const LinearOperator& op, int k, double zero_tol,
                               std::uint64_t seed);

// Dense oracles. Small inputs only (<= 256x256 by policy).
Vec dense_svd_oracle(const Mat& m);          // singular values, descending
Vec exact_eig_symmetric(const Mat& m);       // eigenvalues, ascending

// Adjoint consistency check: |<u, Av> - <A^T u, v>| <= tol * scale for
// a few random probe pairs.
bool adjoint_consistent(const LinearOperator& op, std::uint64_t seed, double tol = 1e-8);

} // namespace lipscan::linalg
