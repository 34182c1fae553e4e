#include "lipscan/loss.hpp"

#include <cmath>

namespace lipscan::loss {

Vec softmax(const Vec& logits) {
    const double shift = logits.maxCoeff();
    Vec p = (logits.array() - shift).exp();
    return p / p.sum();
}

namespace {
void check_label(const Vec& logits, int label) {
    if (label < 0 || label >= logits.size())
        throw LabelOutOfRange("loss: label out of range for logit dimension");
}
} // namespace

double loss_value(LossKind kind, const Vec& logits, int label) {
    check_label(logits, label);
    if (kind == LossKind::MSE) {
        Vec r = logits;
        r[label] -= 1.0;
        return 0.5 * r.squaredNorm();
    }
    const double shift = logits.maxCoeff();
    const double lse = shift + std::log((logits.array() - shift).exp().sum());
    return lse - logits[label];
}

Vec loss_upstream(LossKind kind, const Vec& logits, int label) {
    check_label(logits, label);
    Vec p = kind == LossKind::MSE ? logits : softmax(logits);
    p[label] -= 1.0;
    return p;
}

Vec loss_upstream_tangent(LossKind kind, const Vec& logits, int label, const Vec& logits_tangent) {
    check_label(logits, label);
    if (kind == LossKind::MSE) return logits_tangent;
    const Vec p = softmax(logits);
    // d softmax = (diag(p) - p p^T) dz
    return p.cwiseProduct(logits_tangent) - p * p.dot(logits_tangent);
}

} // namespace lipscan::loss
