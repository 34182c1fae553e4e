#pragma once

#include <functional>
#include <vector>

#include "lipscan/data.hpp"
#include "lipscan/loss.hpp"
#include "lipscan/nn.hpp"

namespace lipscan::train {

using linalg::Vec;

struct TrainConfig {
    double lr = 5e-3;
    double momentum = 0.9;
    int batch_size = 128;
    int epochs = 500;
    int warmup_epochs = 5;
    double warmup_start_factor = 0.1;
    std::uint64_t seed = 0;
    loss::LossKind loss_kind = loss::LossKind::CrossEntropy;
    std::vector<int> checkpoint_epochs;
    bool shuffle = true;
};

struct TrainHistory {
    std::vector<double> train_error;
    std::vector<double> train_loss;
    std::vector<double> test_error;
    std::vector<double> test_loss;
    std::vector<double> learning_rate;
    std::vector<double> wall_s;
};

// invoked at scheduled epochs with a read-only view of the network
using ProbeHook = std::function<void(int epoch, const nn::Network&)>;

double warmup_lr(const TrainConfig& cfg, int epoch);

// heavy-ball SGD: velocity <- momentum*velocity - lr_t*grad; theta += velocity
TrainHistory sgd_train(nn::Network& net, const data::Dataset& train_ds,
                       const data::Dataset& test_ds, const TrainConfig& cfg,
                       const ProbeHook& probe_hook = nullptr);

struct EvalResult {
    double error_rate = 0.0;
    double mean_loss = 0.0;
};

// argmax prediction, ties broken by lowest class index
EvalResult evaluate(const nn::Network& net, const data::Dataset& ds, loss::LossKind kind);

// mean per-sample loss gradient over the given indices
Vec minibatch_gradient(const nn::Network& net, const data::Dataset& ds,
                       const std::vector<Eigen::Index>& indices, loss::LossKind kind);

} // namespace lipscan::train
