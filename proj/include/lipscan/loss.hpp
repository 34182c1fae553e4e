#pragma once

#include "lipscan/linalg.hpp"

namespace lipscan::loss {

using linalg::Vec;

enum class LossKind {
    MSE,          // one-hot targets, 0.5 * squared residual per sample
    CrossEntropy, // softmax + negative log-likelihood
};

// softmax with max-shift
Vec softmax(const Vec& logits);

double loss_value(LossKind kind, const Vec& logits, int label);

// dL/df per sample: p_n - e_{y_n} for both losses (p = softmax for CE,
// p = f for MSE)
Vec loss_upstream(LossKind kind, const Vec& logits, int label);

// directional derivative of loss_upstream along a logits tangent
Vec loss_upstream_tangent(LossKind kind, const Vec& logits, int label, const Vec& logits_tangent);

} // namespace lipscan::loss

namespace lipscan::nn { class Network; }
namespace lipscan::data { struct Dataset; }

namespace lipscan::loss {

// confidence sigma = 1 - mean_n ||p_n - e_{y_n}||_2, p_n = softmax outputs
double confidence(const nn::Network& net, const data::Dataset& ds);

} // namespace lipscan::loss
