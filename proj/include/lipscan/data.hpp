#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lipscan/linalg.hpp"
#include "lipscan/nn.hpp"

namespace lipscan::data {

using linalg::Mat;
using linalg::Vec;

struct ChannelStats {
    Vec mean; // per channel
    Vec std;  // per channel
};

struct Dataset {
    Mat inputs;                         // d x N, one sample per column
    std::vector<int> labels;            // N, each < num_classes
    std::vector<std::uint8_t> noise_mask; // 1 where the label was corrupted
    nn::Shape input_shape;
    int num_classes = 0;
    std::string split = "train";

    Eigen::Index size() const { return inputs.cols(); }
    Vec sample(Eigen::Index n) const { return inputs.col(n); }
    ChannelStats channel_stats() const;
};

struct BlobsSplit {
    Dataset train;
    Dataset test;
};

// Gaussian class clusters with means on a scaled simplex; 80/20
// train/test split by index hash.
BlobsSplit gen_blobs(int n, nn::Shape shape, int classes, double separation, std::uint64_t seed);

// floor(fraction * N) uniformly chosen samples receive a uniformly random
// *different* label; noise_mask records them
Dataset corrupt_labels(const Dataset& ds, double fraction, std::uint64_t seed);

enum class ProbeKind { UniformBand, Gaussian, Sphere, Jitter };

// Label-free probe sets for Lipschitz probing (labels are dummies).
// Jitter requires a reference dataset; the other kinds take reference
// per-channel statistics.
Dataset gen_probe_set(ProbeKind kind, const ChannelStats& stats, nn::Shape shape, int n,
                      std::uint64_t seed);
Dataset gen_probe_set_jitter(const Dataset& ref, int n, std::uint64_t seed,
                             double amplitude = 1.0);

Dataset load_csv(const std::string& path, bool has_header, int label_col, int num_classes,
                 nn::Shape shape = {});

struct XMinResult {
    double x_min = 0.0;
    int zero_norm_samples = 0; // excluded from the minimum
};

XMinResult x_min(const Dataset& ds);

const char* probe_kind_name(ProbeKind k);

} // namespace lipscan::data
