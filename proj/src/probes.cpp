#include "lipscan/probes.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lipscan/rng.hpp"
#include "lipscan/train.hpp"

namespace lipscan::probes {

LipschitzResult empirical_lipschitz(const nn::Network& net, const data::Dataset& ds,
                                    const PowerConfig& cfg) {
    if (ds.size() == 0) throw EmptyDataset("empirical_lipschitz: empty dataset");
    LipschitzResult res;
    res.per_sample.reserve(static_cast<size_t>(ds.size()));
    double sum_sq = 0.0;
    for (Eigen::Index n = 0; n < ds.size(); ++n) {
        const nn::ActivationTrace trace = nn::forward(net, ds.sample(n)).trace;
        const LinearOperator op = nn::input_jacobian_operator(net, trace);
        bool ok = false;
        double sigma = 0.0;
        for (int attempt = 0; attempt < 3 && !ok; ++attempt) {
            PowerConfig c = cfg;
            c.seed = Rng(cfg.seed, "lip_sample", static_cast<std::uint64_t>(n)).next_u64() +
                     static_cast<std::uint64_t>(attempt);
            const auto pm = linalg::power_method(op, c);
            if (pm.converged) {
                sigma = pm.sigma;
                ok = true;
            }
        }
        if (!ok) {
            ++res.skipped;
            continue;
        }
        res.per_sample.push_back(sigma);
        sum_sq += sigma * sigma;
        res.max = std::max(res.max, sigma);
    }
    if (res.skipped > 0 &&
        static_cast<double>(res.skipped) > 0.01 * static_cast<double>(ds.size())) {
        std::ostringstream os;
        os << "empirical_lipschitz: power method failed on " << res.skipped << " of " << ds.size()
           << " samples (> 1%)";
        throw NoConvergence(os.str());
    }
    const auto count = static_cast<double>(res.per_sample.size());
    res.aggregate = std::sqrt(sum_sq / count);
    res.mean = 0.0;
    for (double s : res.per_sample) res.mean += s;
    res.mean /= count;
    std::vector<double> sorted = res.per_sample;
    std::sort(sorted.begin(), sorted.end());
    const size_t m = sorted.size();
    res.median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    return res;
}

double lipschitz_upper_bound(const nn::Network& net, const PowerConfig& cfg,
                             bool include_gap_correction) {
    const nn::SpectralNorms norms = nn::layer_spectral_norms(net, cfg);
    double prod = 1.0;
    for (double s : norms.per_layer) prod *= s;
    if (include_gap_correction) prod *= norms.gap_correction;
    return prod;
}

NormStats loss_jacobian_norm(const nn::Network& net, const data::Dataset& ds,
                             loss::LossKind kind) {
    NormStats stats;
    for (Eigen::Index n = 0; n < ds.size(); ++n) {
        const nn::ForwardResult fr = nn::forward(net, ds.sample(n));
        const Vec grad_x = nn::input_vjp(
            net, fr.trace, loss::loss_upstream(kind, fr.logits, ds.labels[static_cast<size_t>(n)]));
        const double nrm = grad_x.norm();
        stats.per_sample.push_back(nrm);
        stats.mean_sq += nrm * nrm;
    }
    stats.mean_sq /= static_cast<double>(ds.size());
    return stats;
}

NormStats param_grad_norm(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind) {
    NormStats stats;
    for (Eigen::Index n = 0; n < ds.size(); ++n) {
        const Vec g = nn::sample_loss_gradient(net, kind, ds.sample(n),
                                               ds.labels[static_cast<size_t>(n)]);
        const double nrm = g.norm();
        stats.per_sample.push_back(nrm);
        stats.mean_sq += nrm * nrm;
    }
    stats.mean_sq /= static_cast<double>(ds.size());
    return stats;
}

LinearOperator hessian_operator(const nn::Network& net, const data::Dataset& ds,
                                loss::LossKind kind) {
    return LinearOperator::symmetric(net.num_params(), [&net, &ds, kind](const Vec& v) {
        return nn::hvp(net, kind, ds.inputs, ds.labels, v);
    });
}

TraceEstimate hessian_trace(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind,
                            const HutchinsonConfig& hcfg) {
    if (hcfg.num_probes < 1) throw Error("hessian_trace: V must be >= 1");
    const Eigen::Index p = net.num_params();
    std::vector<double> draws;
    draws.reserve(static_cast<size_t>(hcfg.num_probes));
    double sum = 0.0;
    for (int i = 0; i < hcfg.num_probes; ++i) {
        Rng rng(hcfg.seed, "hutchinson", static_cast<std::uint64_t>(i));
        Vec v(p);
        for (Eigen::Index j = 0; j < p; ++j) v[j] = rng.rademacher();
        const double est = v.dot(nn::hvp(net, kind, ds.inputs, ds.labels, v));
        draws.push_back(est);
        sum += est;
    }
    TraceEstimate res;
    res.trace = sum / static_cast<double>(hcfg.num_probes);
    if (hcfg.num_probes > 1) {
        double ss = 0.0;
        for (double d : draws) ss += (d - res.trace) * (d - res.trace);
        const double sample_var = ss / static_cast<double>(hcfg.num_probes - 1);
        res.stderr_ = std::sqrt(sample_var / static_cast<double>(hcfg.num_probes));
    }
    return res;
}

HessianExtremes hessian_extremes(const nn::Network& net, const data::Dataset& ds,
                                 loss::LossKind kind, int k, double zero_tol, std::uint64_t seed) {
    const LinearOperator op = hessian_operator(net, ds, kind);
    const auto lz = linalg::lanczos_extremes(op, k, zero_tol, seed);
    return HessianExtremes{lz.lambda_max, lz.lambda_min, lz.lambda_min_nonzero};
}

double noise_covariance_top(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind,
                            int B, int M, std::uint64_t seed, const PowerConfig& cfg) {
    const Eigen::Index n = ds.size();
    if (B < 1 || B > n) throw Error("noise_covariance_top: invalid batch size B");
    if (M < 1) throw Error("noise_covariance_top: M must be >= 1");

    std::vector<Eigen::Index> all(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
    const Vec g_bar = train::minibatch_gradient(net, ds, all, kind);

    // Index sets are sorted ascending so identical sets accumulate in
    // identical order (B = N then yields exactly zero noise).
    std::vector<std::vector<Eigen::Index>> sets;
    if (static_cast<Eigen::Index>(B) * M == n) {
        std::vector<Eigen::Index> perm = all;
        Rng rng(seed, "noise_partition", 0);
        for (Eigen::Index i = n - 1; i > 0; --i) {
            const Eigen::Index j =
                static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
            std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
        }
        for (int i = 0; i < M; ++i) {
            std::vector<Eigen::Index> set(perm.begin() + static_cast<long>(i) * B,
                                          perm.begin() + static_cast<long>(i + 1) * B);
            std::sort(set.begin(), set.end());
            sets.push_back(std::move(set));
        }
    } else {
        for (int i = 0; i < M; ++i) {
            Rng rng(seed, "noise_draw", static_cast<std::uint64_t>(i));
            std::vector<Eigen::Index> pool = all;
            for (int k2 = 0; k2 < B; ++k2) {
                const Eigen::Index j =
                    k2 + static_cast<Eigen::Index>(
                             rng.uniform_int(static_cast<std::uint64_t>(n - k2)));
                std::swap(pool[static_cast<size_t>(k2)], pool[static_cast<size_t>(j)]);
            }
            std::vector<Eigen::Index> set(pool.begin(), pool.begin() + B);
            std::sort(set.begin(), set.end());
            sets.push_back(std::move(set));
        }
    }

    std::vector<Vec> deltas;
    deltas.reserve(sets.size());
    for (const auto& set : sets)
        deltas.push_back(train::minibatch_gradient(net, ds, set, kind) - g_bar);

    const LinearOperator op = LinearOperator::symmetric(
        net.num_params(), [&deltas, M](const Vec& v) -> Vec {
            Vec out = Vec::Zero(v.size());
            for (const Vec& d : deltas) out += d.dot(v) * d;
            // .eval() forces materialization here; returning the lazy quotient
            // would reference the dead stack slot of `out`
            return (out / static_cast<double>(M)).eval();
        });
    PowerConfig pc = cfg;
    pc.seed = Rng(seed, "noise_power", 0).next_u64();
    return linalg::sym_power_method(op, pc).lambda;
}

std::vector<double> distance_from_init(const nn::Network& net) {
    std::vector<double> out;
    for (const nn::ParamView& view : net.param_views()) {
        const double init_norm = net.theta_init().segment(view.offset, view.weight_size).norm();
        const double diff = (net.theta().segment(view.offset, view.weight_size) -
                             net.theta_init().segment(view.offset, view.weight_size))
                                .norm();
        if (init_norm == 0.0) { // ZeroInitNorm: flagged in-band
            out.push_back(diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
        } else {
            out.push_back(diff / init_norm);
        }
    }
    return out;
}

std::vector<double> distance_from_init(const nn::Network& net, const nn::Network& reference) {
    if (net.fingerprint() != reference.fingerprint())
        throw ArchMismatch("distance_from_init: architectures differ");
    std::vector<double> out;
    for (const nn::ParamView& view : net.param_views()) {
        const double init_norm = reference.theta().segment(view.offset, view.weight_size).norm();
        const double diff = (net.theta().segment(view.offset, view.weight_size) -
                             reference.theta().segment(view.offset, view.weight_size))
                                .norm();
        if (init_norm == 0.0) {
            out.push_back(diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
        } else {
            out.push_back(diff / init_norm);
        }
    }
    return out;
}

StabilityResult stability_check(double lambda_max_H, double eta) {
    if (eta <= 0.0) throw Error("stability_check: eta must be positive");
    StabilityResult res;
    res.margin = 2.0 / eta - lambda_max_H;
    res.satisfied = lambda_max_H >= 0.0 && res.margin >= 0.0;
    return res;
}

Mat exact_hessian_small(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind) {
    const Eigen::Index p = net.num_params();
    if (p > 2000) throw TooLarge("exact_hessian_small: p exceeds the 2000-parameter policy");
    Mat h(p, p);
    Vec e = Vec::Zero(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        e[j] = 1.0;
        h.col(j) = nn::hvp(net, kind, ds.inputs, ds.labels, e);
        e[j] = 0.0;
    }
    return 0.5 * (h + h.transpose());
}

} // namespace lipscan::probes

namespace lipscan::loss {

double confidence(const nn::Network& net, const data::Dataset& ds) {
    if (ds.size() == 0) throw EmptyDataset("confidence: empty dataset");
    double sum = 0.0;
    for (Eigen::Index n = 0; n < ds.size(); ++n) {
        Vec residual = softmax(nn::forward(net, ds.sample(n)).logits);
        residual[ds.labels[static_cast<size_t>(n)]] -= 1.0;
        sum += residual.norm();
    }
    return 1.0 - sum / static_cast<double>(ds.size());
}

} // namespace lipscan::loss
