#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lipscan/data.hpp"
#include "lipscan/linalg.hpp"
#include "lipscan/loss.hpp"
#include "lipscan/nn.hpp"

namespace lipscan::probes {

using linalg::LinearOperator;
using linalg::Mat;
using linalg::PowerConfig;
using linalg::Vec;

struct HutchinsonConfig {
    int num_probes = 100; // V
    std::uint64_t seed = 0;
};

// Full metric row for one (width, checkpoint): what the sweep CSV serializes.
struct ProbeReport {
    int width = 0;
    long long params = 0;
    std::uint64_t seed = 0;
    int epoch = 0;
    std::string split = "train";
    double train_err = 0.0, test_err = 0.0;
    double train_loss = 0.0, test_loss = 0.0;
    double emp_lipschitz = 0.0;
    double emp_lipschitz_max = 0.0;
    double lip_upper = 0.0;
    double loss_jac_norm_sq = 0.0;
    double param_grad_norm_sq = 0.0;
    double hessian_trace = 0.0, hessian_trace_stderr = 0.0;
    double lambda_max_H = 0.0, lambda_min_H = 0.0;
    std::optional<double> lambda_min_nonzero_H;
    double noise_top_eig = 0.0;
    double confidence = 0.0;
    double stability_margin = 0.0;
    std::vector<double> dist_from_init;
    double wall_s = 0.0;
};

struct LipschitzResult {
    double aggregate = 0.0; // sqrt(mean sigma_n^2), the Eq.-1 headline number
    double mean = 0.0, median = 0.0, max = 0.0;
    std::vector<double> per_sample;
    int skipped = 0;
};

// per-sample spectral norm of the region-local Jacobian via power method
// over the (input_jvp, input_vjp) pair
LipschitzResult empirical_lipschitz(const nn::Network& net, const data::Dataset& ds,
                                    const PowerConfig& cfg);

// product of layer spectral norms; pooling layers excluded.
// include_gap_correction multiplies in the exact (H*W)^{-1/2} norm of the
// global average pool.
double lipschitz_upper_bound(const nn::Network& net, const PowerConfig& cfg,
                             bool include_gap_correction = false);

struct NormStats {
    double mean_sq = 0.0; // E ||.||^2
    std::vector<double> per_sample; // norms, not squared
};

NormStats loss_jacobian_norm(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind);
NormStats param_grad_norm(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind);

struct TraceEstimate {
    double trace = 0.0;
    double stderr_ = 0.0;
};

// Hutchinson estimator with Rademacher probes over the mean-loss Hessian
TraceEstimate hessian_trace(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind,
                            const HutchinsonConfig& hcfg);

struct HessianExtremes {
    double lambda_max = 0.0;
    double lambda_min = 0.0;
    std::optional<double> lambda_min_nonzero;
};

HessianExtremes hessian_extremes(const nn::Network& net, const data::Dataset& ds,
                                 loss::LossKind kind, int k, double zero_tol,
                                 std::uint64_t seed = 0);

// top eigenvalue of the minibatch gradient noise covariance, matrix-free.
// When M*B == N the index sets partition the dataset (each sample used once).
double noise_covariance_top(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind,
                            int B, int M, std::uint64_t seed, const PowerConfig& cfg);

// per parameterized layer: ||theta_T - theta_0||_F / ||theta_0||_F
std::vector<double> distance_from_init(const nn::Network& net);
std::vector<double> distance_from_init(const nn::Network& net, const nn::Network& reference);

struct StabilityResult {
    bool satisfied = false;
    double margin = 0.0; // 2/eta - lambda_max
};

StabilityResult stability_check(double lambda_max_H, double eta);

// dense p x p Hessian assembled column-wise from hvp on basis vectors;
// symmetrized on return. p <= 2000.
Mat exact_hessian_small(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind);

// symmetric matrix-free operator for the mean-loss Hessian over ds
LinearOperator hessian_operator(const nn::Network& net, const data::Dataset& ds,
                                loss::LossKind kind);

} // namespace lipscan::probes
