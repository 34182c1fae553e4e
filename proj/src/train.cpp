#include "lipscan/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "lipscan/rng.hpp"

namespace lipscan::train {

double warmup_lr(const TrainConfig& cfg, int epoch) {
    if (cfg.warmup_epochs <= 0 || epoch >= cfg.warmup_epochs) return cfg.lr;
    const double t = static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs);
    return cfg.lr * (cfg.warmup_start_factor + (1.0 - cfg.warmup_start_factor) * t);
}

EvalResult evaluate(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind) {
    EvalResult res;
    long long wrong = 0;
    double loss_sum = 0.0;
    for (Eigen::Index n = 0; n < ds.size(); ++n) {
        const Vec logits = nn::forward(net, ds.sample(n)).logits;
        Eigen::Index pred = 0;
        logits.maxCoeff(&pred); // Eigen reports the first maximum: lowest-index tie break
        if (static_cast<int>(pred) != ds.labels[static_cast<size_t>(n)]) ++wrong;
        loss_sum += loss::loss_value(kind, logits, ds.labels[static_cast<size_t>(n)]);
    }
    res.error_rate = static_cast<double>(wrong) / static_cast<double>(ds.size());
    res.mean_loss = loss_sum / static_cast<double>(ds.size());
    return res;
}

Vec minibatch_gradient(const nn::Network& net, const data::Dataset& ds,
                       const std::vector<Eigen::Index>& indices, loss::LossKind kind) {
    if (indices.empty()) throw IndexOutOfRange("minibatch_gradient: empty index set");
    Vec grad = Vec::Zero(net.num_params());
    for (Eigen::Index idx : indices) {
        if (idx < 0 || idx >= ds.size())
            throw IndexOutOfRange("minibatch_gradient: index out of range");
        grad += nn::sample_loss_gradient(net, kind, ds.sample(idx),
                                         ds.labels[static_cast<size_t>(idx)]);
    }
    return grad / static_cast<double>(indices.size());
}

TrainHistory sgd_train(nn::Network& net, const data::Dataset& train_ds,
                       const data::Dataset& test_ds, const TrainConfig& cfg,
                       const ProbeHook& probe_hook) {
    const Eigen::Index n = train_ds.size();
    if (n == 0) throw EmptyDataset("sgd_train: empty training set");
    TrainHistory hist;
    Vec velocity = Vec::Zero(net.num_params());

    const auto scheduled = [&cfg](int epoch) {
        return std::find(cfg.checkpoint_epochs.begin(), cfg.checkpoint_epochs.end(), epoch) !=
               cfg.checkpoint_epochs.end();
    };
    if (probe_hook && scheduled(0)) probe_hook(0, net);

    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = warmup_lr(cfg, epoch);

        if (cfg.shuffle) {
            Rng rng(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
            for (Eigen::Index i = n - 1; i > 0; --i) {
                const Eigen::Index j =
                    static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
                std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
            }
        }

        for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
            const Eigen::Index bsz = std::min<Eigen::Index>(cfg.batch_size, n - start);
            Vec grad = Vec::Zero(net.num_params());
            double batch_loss = 0.0;
            for (Eigen::Index k = 0; k < bsz; ++k) {
                const Eigen::Index idx = order[static_cast<size_t>(start + k)];
                const nn::ForwardResult fr = nn::forward(net, train_ds.sample(idx));
                const int label = train_ds.labels[static_cast<size_t>(idx)];
                batch_loss += loss::loss_value(cfg.loss_kind, fr.logits, label);
                grad += nn::param_gradient(net, fr.trace,
                                           loss::loss_upstream(cfg.loss_kind, fr.logits, label));
            }
            grad /= static_cast<double>(bsz);
            batch_loss /= static_cast<double>(bsz);
            if (!std::isfinite(batch_loss)) {
                std::ostringstream os;
                os << "sgd_train: non-finite training loss at epoch " << epoch << ", batch offset "
                   << start;
                throw DivergenceAbort(os.str());
            }
            velocity = cfg.momentum * velocity - lr * grad;
            net.theta() += velocity;
        }

        const EvalResult tr = evaluate(net, train_ds, cfg.loss_kind);
        const EvalResult te = test_ds.size() > 0 ? evaluate(net, test_ds, cfg.loss_kind)
                                                 : EvalResult{};
        hist.train_error.push_back(tr.error_rate);
        hist.train_loss.push_back(tr.mean_loss);
        hist.test_error.push_back(te.error_rate);
        hist.test_loss.push_back(te.mean_loss);
        hist.learning_rate.push_back(lr);
        hist.wall_s.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

        if (probe_hook && scheduled(epoch + 1)) probe_hook(epoch + 1, net);
    }
    return hist;
}

} // namespace lipscan::train
