#pragma once

#include <map>
#include <string>

#include "lipscan/data.hpp"
#include "lipscan/loss.hpp"
#include "lipscan/nn.hpp"

namespace lipscan::bounds {

using linalg::Mat;
using linalg::PowerConfig;
using linalg::Vec;

// LHS/RHS/slack record certifying one inequality.
struct BoundReport {
    std::string id;
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0; // rhs - lhs
    bool holds = false; // slack >= -1e-9 * max(1, |rhs|)
    std::map<std::string, double> constants;
    Eigen::Index sample_count = 0;
    std::string notes;
};

// (x_min^2/||theta^1||^2) E||grad_x f||_2^2 <= E||grad_theta f||_2^2,
// spectral norms of the K x d and K x p Jacobians. Frobenius variants are
// recorded in constants.
BoundReport verify_thm1(const nn::Network& net, const data::Dataset& ds, const PowerConfig& cfg);

// same prefactor, loss gradients (vectors) on both sides
BoundReport verify_cor1(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind,
                        const PowerConfig& cfg);

// MSE-only curvature certificate: mean||grad_theta L_n||^2 <= 2 L_max trace(G)
// with G the Gauss-Newton matrix; trace(H) and the residual gap are reported
// in constants, not asserted.
BoundReport verify_thm2(const nn::Network& net, const data::Dataset& ds,
                        loss::LossKind kind = loss::LossKind::MSE);

// B = 1: exact identity mean||grad_theta L_n||^2 = trace(S) within 1e-10
// relative.  B > 1: Monte-Carlo estimate of the uncentered covariance trace
// against the input-space side.
BoundReport verify_cor2(const nn::Network& net, const data::Dataset& ds, int b,
                        loss::LossKind kind = loss::LossKind::MSE, int num_draws = 50,
                        std::uint64_t seed = 0, const PowerConfig& cfg = {});

// max elementwise residual of df/dx^{l-1} x^{l-1}^T = theta^l^T df/dtheta^l
// for one dense layer, both sides assembled through independent routes
double verify_layer_duality(const nn::Network& net, const Vec& x, int layer);

bool report_holds(double lhs, double rhs);

} // namespace lipscan::bounds
