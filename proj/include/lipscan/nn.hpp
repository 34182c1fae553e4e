#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "lipscan/linalg.hpp"
#include "lipscan/loss.hpp"

namespace lipscan::nn {

using linalg::Mat;
using linalg::PowerConfig;
using linalg::Vec;

// Activations are flattened row-major in channel-height-width order.
struct Shape {
    int c = 0;
    int h = 1;
    int w = 1;
    Eigen::Index size() const { return static_cast<Eigen::Index>(c) * h * w; }
    bool operator==(const Shape&) const = default;
};

struct DenseSpec {
    int in = 0;
    int out = 0;
    bool relu = false;
};
// 3x3 kernel, unit stride, same padding
struct Conv2dSpec {
    int in_ch = 0;
    int out_ch = 0;
    bool relu = false;
};
// 2x2 window, stride 2, ceil mode (partial windows at odd edges)
struct MaxPoolSpec {};
struct GlobalAvgPoolSpec {};

using LayerSpec = std::variant<DenseSpec, Conv2dSpec, MaxPoolSpec, GlobalAvgPoolSpec>;

// Slice of theta owned by one parameterized layer: weights first
// (row-major for dense, [out_ch][in_ch][ky][kx] for conv), then biases.
struct ParamView {
    int layer = 0;
    Eigen::Index offset = 0;
    Eigen::Index weight_size = 0;
    Eigen::Index bias_size = 0;
    Eigen::Index size() const { return weight_size + bias_size; }
};

class Network {
public:
    Network(std::vector<LayerSpec> layers, Shape input_shape, int num_classes);

    const std::vector<LayerSpec>& layers() const { return layers_; }
    Shape input_shape() const { return shapes_.front(); }
    Shape output_shape() const { return shapes_.back(); }
    int num_classes() const { return num_classes_; }
    Eigen::Index num_params() const { return theta_.size(); }

    Vec& theta() { return theta_; }
    const Vec& theta() const { return theta_; }
    Vec& theta_init() { return theta_init_; }
    const Vec& theta_init() const { return theta_init_; }
    void snapshot_init() { theta_init_ = theta_; }

    const std::vector<ParamView>& param_views() const { return views_; }
    // input shape of every layer; shapes()[l] feeds layer l, back() is the output
    const std::vector<Shape>& shapes() const { return shapes_; }

    // architecture hash; traces are only valid against the network that made them
    std::uint64_t fingerprint() const { return fingerprint_; }
    std::string describe() const;

private:
    std::vector<LayerSpec> layers_;
    std::vector<Shape> shapes_;
    std::vector<ParamView> views_;
    Vec theta_;
    Vec theta_init_;
    int num_classes_ = 0;
    std::uint64_t fingerprint_ = 0;
};

// Frozen activation pattern of one (network, input) pair: ReLU masks,
// maxpool selections, and every layer input, fixing one linear region.
struct ActivationTrace {
    std::uint64_t fingerprint = 0;
    std::vector<Vec> inputs;                       // inputs[l] feeds layer l
    std::vector<std::vector<std::uint8_t>> masks;  // 0/1 per unit, empty if layer has no relu
    std::vector<std::vector<Eigen::Index>> argmax; // per maxpool output, chosen source index
};

struct ForwardResult {
    Vec logits;
    ActivationTrace trace;
};

enum class InitScheme { He, Glorot };

// -- builders -----------------------------------------------------------

// Four [Conv2d(relu), MaxPool] stages with channel progression
// [w, 2w, 4w, 8w], GlobalAvgPool, Dense(8w -> num_classes).
Network build_convnet(int omega, int in_channels, int num_classes,
                      int height = 16, int width = 16);

// layer_widths = [input_dim, hidden...]; at least one hidden layer required.
Network build_mlp(const std::vector<int>& layer_widths, int num_classes);

// closed-form parameter count of the convnet family
long long convnet_param_count(int omega, int in_channels, int num_classes);

void init_params(Network& net, std::uint64_t seed, InitScheme scheme = InitScheme::He);

// -- evaluation and derivatives ------------------------------------------

ForwardResult forward(const Network& net, const Vec& x);

// region-local Jacobian-vector / vector-Jacobian products with frozen masks
Vec input_jvp(const Network& net, const ActivationTrace& trace, const Vec& v);
Vec input_vjp(const Network& net, const ActivationTrace& trace, const Vec& u);

// upstream^T * df/dtheta, exact reverse-mode accumulation
Vec param_gradient(const Network& net, const ActivationTrace& trace, const Vec& upstream);
Vec param_gradient(const Network& net, const Vec& x, const Vec& upstream);

// K x p Jacobian, row k = param_gradient with upstream e_k; p <= 20000
Mat param_jacobian_dense(const Network& net, const Vec& x);

// exact Hessian-vector product of the mean loss over the batch, via
// forward-tangent propagation composed with the reverse pass
Vec hvp(const Network& net, loss::LossKind kind, const Mat& inputs,
        const std::vector<int>& labels, const Vec& v);

// per-sample loss gradient (for batch/minibatch accumulation elsewhere)
Vec sample_loss_gradient(const Network& net, loss::LossKind kind, const Vec& x, int label);

struct SpectralNorms {
    std::vector<double> per_layer;  // parameterized layers, network order
    double gap_correction = 1.0;    // (H*W)^{-1/2} of the global-avg-pool input
};

SpectralNorms layer_spectral_norms(const Network& net, const PowerConfig& cfg);

// matrix-free operator for the region-local input Jacobian of one trace
linalg::LinearOperator input_jacobian_operator(const Network& net, const ActivationTrace& trace);

// -- checkpoints ----------------------------------------------------------

struct CheckpointMeta {
    int epoch = 0;
    std::uint64_t seed = 0;
    std::string config_fingerprint;
};

void save_checkpoint(const Network& net, const CheckpointMeta& meta, const std::string& path);

struct LoadedCheckpoint {
    Network net;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace lipscan::nn
