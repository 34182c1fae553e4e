#include "lipscan/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <variant>

#include "lipscan/probes.hpp"
#include "lipscan/rng.hpp"
#include "lipscan/train.hpp"

namespace lipscan::bounds {

namespace {

constexpr double kAtolScale = 1e-9;

double spectral_norm_rect(const Mat& j) {
    // ||J||_2 = sqrt(lambda_max(J J^T)); J J^T is K x K, K small
    const Mat gram = j * j.transpose();
    const Vec eigs = linalg::exact_eig_symmetric(gram);
    return std::sqrt(std::max(0.0, eigs[eigs.size() - 1]));
}

Mat input_jacobian_dense(const nn::Network& net, const nn::ActivationTrace& trace) {
    const int k = net.num_classes();
    Mat jac(k, net.input_shape().size());
    for (int r = 0; r < k; ++r) {
        Vec e = Vec::Zero(k);
        e[r] = 1.0;
        jac.row(r) = nn::input_vjp(net, trace, e).transpose();
    }
    return jac;
}

struct Preconditions {
    double x_min = 0.0;
    double theta1_norm = 0.0;
    std::vector<Eigen::Index> usable; // samples with nonzero norm
};

Preconditions check_preconditions(const nn::Network& net, const data::Dataset& ds,
                                  const PowerConfig& cfg) {
    if (net.param_views().size() < 2)
        throw PreconditionViolated("bound verification requires at least one hidden layer");
    Preconditions pre;
    pre.theta1_norm = nn::layer_spectral_norms(net, cfg).per_layer.front();
    if (pre.theta1_norm <= 0.0)
        throw PreconditionViolated("bound verification requires ||theta^1|| > 0");
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index n = 0; n < ds.size(); ++n) {
        const double nrm = ds.inputs.col(n).norm();
        if (nrm == 0.0) continue; // zero-norm samples are excluded from aggregation
        pre.usable.push_back(n);
        best = std::min(best, nrm);
    }
    if (pre.usable.empty())
        throw PreconditionViolated("bound verification requires x_min > 0");
    pre.x_min = best;
    return pre;
}

} // namespace

bool report_holds(double lhs, double rhs) {
    return rhs - lhs >= -kAtolScale * std::max(1.0, std::abs(rhs));
}

BoundReport verify_thm1(const nn::Network& net, const data::Dataset& ds, const PowerConfig& cfg) {
    const Preconditions pre = check_preconditions(net, ds, cfg);

    double lhs_spec = 0.0, rhs_spec = 0.0, lhs_frob = 0.0, rhs_frob = 0.0;
    for (Eigen::Index n : pre.usable) {
        const nn::ActivationTrace trace = nn::forward(net, ds.sample(n)).trace;
        const Mat jx = input_jacobian_dense(net, trace);
        const Mat jt = nn::param_jacobian_dense(net, ds.sample(n));
        const double sx = spectral_norm_rect(jx);
        const double st = spectral_norm_rect(jt);
        lhs_spec += sx * sx;
        rhs_spec += st * st;
        lhs_frob += jx.squaredNorm();
        rhs_frob += jt.squaredNorm();
    }
    const double count = static_cast<double>(pre.usable.size());
    const double prefactor = pre.x_min * pre.x_min / (pre.theta1_norm * pre.theta1_norm);

    BoundReport report;
    report.id = "thm1";
    report.lhs = prefactor * lhs_spec / count;
    report.rhs = rhs_spec / count;
    report.slack = report.rhs - report.lhs;
    report.holds = report_holds(report.lhs, report.rhs);
    report.sample_count = static_cast<Eigen::Index>(pre.usable.size());
    report.constants["x_min"] = pre.x_min;
    report.constants["theta1_norm"] = pre.theta1_norm;
    report.constants["lhs_frobenius"] = prefactor * lhs_frob / count;
    report.constants["rhs_frobenius"] = rhs_frob / count;
    report.notes = "spectral-norm convention; Frobenius variant in constants";
    return report;
}

BoundReport verify_cor1(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind,
                        const PowerConfig& cfg) {
    const Preconditions pre = check_preconditions(net, ds, cfg);

    double lhs_sum = 0.0, rhs_sum = 0.0;
    for (Eigen::Index n : pre.usable) {
        const nn::ForwardResult fr = nn::forward(net, ds.sample(n));
        const Vec upstream =
            loss::loss_upstream(kind, fr.logits, ds.labels[static_cast<size_t>(n)]);
        lhs_sum += nn::input_vjp(net, fr.trace, upstream).squaredNorm();
        rhs_sum += nn::param_gradient(net, fr.trace, upstream).squaredNorm();
    }
    const double count = static_cast<double>(pre.usable.size());
    const double prefactor = pre.x_min * pre.x_min / (pre.theta1_norm * pre.theta1_norm);

    BoundReport report;
    report.id = "cor1";
    report.lhs = prefactor * lhs_sum / count;
    report.rhs = rhs_sum / count;
    report.slack = report.rhs - report.lhs;
    report.holds = report_holds(report.lhs, report.rhs);
    report.sample_count = static_cast<Eigen::Index>(pre.usable.size());
    report.constants["x_min"] = pre.x_min;
    report.constants["theta1_norm"] = pre.theta1_norm;
    return report;
}

BoundReport verify_thm2(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind) {
    if (kind != loss::LossKind::MSE)
        throw WrongLoss("verify_thm2: the curvature certificate is MSE-only");
    const PowerConfig cfg{};
    const Preconditions pre = check_preconditions(net, ds, cfg);

    const int k = net.num_classes();
    double grad_sq_sum = 0.0;   // mean ||grad_theta L_n||^2 numerator
    double trace_g_sum = 0.0;   // mean ||J_n||_F^2 numerator
    double loss_max = 0.0;
    double lhs_input_sum = 0.0; // input-space side of the full inequality
    for (Eigen::Index n : pre.usable) {
        const nn::ForwardResult fr = nn::forward(net, ds.sample(n));
        const int label = ds.labels[static_cast<size_t>(n)];
        const Vec upstream = loss::loss_upstream(kind, fr.logits, label);
        grad_sq_sum += nn::param_gradient(net, fr.trace, upstream).squaredNorm();
        lhs_input_sum += nn::input_vjp(net, fr.trace, upstream).squaredNorm();
        loss_max = std::max(loss_max, loss::loss_value(kind, fr.logits, label));
        for (int r = 0; r < k; ++r) {
            Vec e = Vec::Zero(k);
            e[r] = 1.0;
            trace_g_sum += nn::param_gradient(net, fr.trace, e).squaredNorm();
        }
    }
    const double count = static_cast<double>(pre.usable.size());
    const double trace_g = trace_g_sum / count;
    const double prefactor = pre.x_min * pre.x_min / (pre.theta1_norm * pre.theta1_norm);

    double trace_h;
    if (net.num_params() <= 2000) {
        trace_h = probes::exact_hessian_small(net, ds, kind).trace();
    } else {
        trace_h = probes::hessian_trace(net, ds, kind, probes::HutchinsonConfig{200, 0}).trace;
    }

    BoundReport report;
    report.id = "thm2";
    // exact Gauss-Newton certificate: the asserted inequality
    report.lhs = grad_sq_sum / count;
    report.rhs = 2.0 * loss_max * trace_g;
    report.slack = report.rhs - report.lhs;
    report.holds = report_holds(report.lhs, report.rhs);
    report.sample_count = static_cast<Eigen::Index>(pre.usable.size());
    report.constants["x_min"] = pre.x_min;
    report.constants["theta1_norm"] = pre.theta1_norm;
    report.constants["loss_max"] = loss_max;
    report.constants["trace_gauss_newton"] = trace_g;
    report.constants["trace_hessian"] = trace_h;
    report.constants["hessian_residual_gap"] = std::abs(trace_h - trace_g);
    report.constants["lhs_input_space"] = prefactor * lhs_input_sum / count;
    report.notes = "asserted side is the Gauss-Newton certificate; the Hessian residual gap is "
                   "the reported (not asserted) vanishing term";
    return report;
}

BoundReport verify_cor2(const nn::Network& net, const data::Dataset& ds, int b,
                        loss::LossKind kind, int num_draws, std::uint64_t seed,
                        const PowerConfig& cfg) {
    if (b < 1 || b > ds.size()) throw PreconditionViolated("verify_cor2: invalid batch size B");
    const Eigen::Index n = ds.size();

    std::vector<Eigen::Index> all(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
    const Vec g_bar = train::minibatch_gradient(net, ds, all, kind);

    BoundReport report;
    report.id = "cor2";
    report.sample_count = n;
    if (b == 1) {
        // exact identity: mean ||grad_theta L_n||^2 == trace(S)
        double grad_sq = 0.0, trace_c = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const Vec g = nn::sample_loss_gradient(net, kind, ds.sample(i),
                                                   ds.labels[static_cast<size_t>(i)]);
            grad_sq += g.squaredNorm();
            trace_c += (g - g_bar).squaredNorm();
        }
        grad_sq /= static_cast<double>(n);
        trace_c /= static_cast<double>(n);
        const double trace_s = trace_c + g_bar.squaredNorm();
        report.lhs = grad_sq;
        report.rhs = trace_s;
        report.slack = report.rhs - report.lhs;
        report.holds =
            std::abs(report.lhs - report.rhs) <= 1e-10 * std::max(1.0, std::abs(report.rhs));
        report.constants["trace_noise_covariance"] = trace_c;
        report.constants["mean_grad_sq_norm"] = g_bar.squaredNorm();
        report.notes = "exact B=1 identity mode";
        return report;
    }

    // estimate mode: Monte-Carlo trace of the uncentered covariance
    if (num_draws < 2) throw PreconditionViolated("verify_cor2: estimate mode needs M >= 2");
    const Preconditions pre = check_preconditions(net, ds, cfg);
    double trace_c = 0.0;
    for (int i = 0; i < num_draws; ++i) {
        Rng rng(seed, "cor2_draw", static_cast<std::uint64_t>(i));
        std::vector<Eigen::Index> pool = all;
        for (int k2 = 0; k2 < b; ++k2) {
            const Eigen::Index j =
                k2 + static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(n - k2)));
            std::swap(pool[static_cast<size_t>(k2)], pool[static_cast<size_t>(j)]);
        }
        std::vector<Eigen::Index> set(pool.begin(), pool.begin() + b);
        std::sort(set.begin(), set.end());
        trace_c += (train::minibatch_gradient(net, ds, set, kind) - g_bar).squaredNorm();
    }
    trace_c /= static_cast<double>(num_draws);
    const double trace_s = trace_c + g_bar.squaredNorm() / static_cast<double>(b);

    double lhs_input = 0.0;
    for (Eigen::Index i : pre.usable) {
        const nn::ForwardResult fr = nn::forward(net, ds.sample(i));
        const Vec upstream =
            loss::loss_upstream(kind, fr.logits, ds.labels[static_cast<size_t>(i)]);
        lhs_input += nn::input_vjp(net, fr.trace, upstream).squaredNorm();
    }
    const double prefactor = pre.x_min * pre.x_min / (pre.theta1_norm * pre.theta1_norm);
    report.lhs = prefactor * lhs_input / static_cast<double>(pre.usable.size());
    report.rhs = trace_s;
    report.slack = report.rhs - report.lhs;
    report.holds = report_holds(report.lhs, report.rhs);
    report.constants["x_min"] = pre.x_min;
    report.constants["theta1_norm"] = pre.theta1_norm;
    report.constants["trace_noise_covariance"] = trace_c;
    report.notes = "Monte-Carlo estimate mode";
    return report;
}

double verify_layer_duality(const nn::Network& net, const Vec& x, int layer) {
    if (layer < 0 || static_cast<size_t>(layer) >= net.layers().size())
        throw IndexOutOfRange("verify_layer_duality: layer index out of range");
    const auto* target = std::get_if<nn::DenseSpec>(&net.layers()[static_cast<size_t>(layer)]);
    if (!target)
        throw UnsupportedLayer("verify_layer_duality: dense assembly only");
    for (size_t l = static_cast<size_t>(layer); l < net.layers().size(); ++l)
        if (!std::holds_alternative<nn::DenseSpec>(net.layers()[l]))
            throw UnsupportedLayer("verify_layer_duality: non-dense layer above target");

    const nn::ActivationTrace trace = nn::forward(net, x).trace;
    const Mat jt = nn::param_jacobian_dense(net, x);

    // locate the theta^l weight block
    const nn::ParamView* view = nullptr;
    for (const nn::ParamView& v : net.param_views())
        if (v.layer == layer) view = &v;
    const Eigen::Map<const linalg::RowMat> w(net.theta().data() + view->offset, target->out,
                                             target->in);
    const Vec& layer_input = trace.inputs[static_cast<size_t>(layer)];

    double residual = 0.0;
    for (int k = 0; k < net.num_classes(); ++k) {
        // route 1: cotangent walked down to the layer input
        Vec cot = Vec::Zero(net.num_classes());
        cot[k] = 1.0;
        for (size_t li = net.layers().size(); li-- > static_cast<size_t>(layer);) {
            const auto* d = std::get_if<nn::DenseSpec>(&net.layers()[li]);
            if (!trace.masks[li].empty())
                for (Eigen::Index i = 0; i < cot.size(); ++i)
                    if (!trace.masks[li][static_cast<size_t>(i)]) cot[i] = 0.0;
            const nn::ParamView* lv = nullptr;
            for (const nn::ParamView& v : net.param_views())
                if (v.layer == static_cast<int>(li)) lv = &v;
            const Eigen::Map<const linalg::RowMat> wl(net.theta().data() + lv->offset, d->out,
                                                      d->in);
            cot = wl.transpose() * cot;
        }
        const Mat side_a = cot * layer_input.transpose();

        // route 2: theta^l block of the dense parameter Jacobian
        const Vec row_k = jt.row(k); // jt is column-major, copy for a contiguous view
        const Eigen::Map<const linalg::RowMat> block(row_k.data() + view->offset, target->out,
                                                     target->in);
        const Mat side_b = w.transpose() * block;

        residual = std::max(residual, (side_a - side_b).cwiseAbs().maxCoeff());
    }
    return residual;
}

} // namespace lipscan::bounds
