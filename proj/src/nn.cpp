#include "lipscan/nn.hpp"

#include <cmath>
#include <sstream>

#include "lipscan/rng.hpp"

namespace lipscan::nn {

namespace {

using linalg::LinearOperator;

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline Eigen::Index at(Shape s, int c, int y, int x) {
    return (static_cast<Eigen::Index>(c) * s.h + y) * s.w + x;
}

// 3x3 convolution, pad 1, stride 1. Weight layout [out_ch][in_ch][ky][kx].
void conv3x3_forward(const double* w, const double* b, const Vec& in, Shape is,
                     int out_ch, Vec& out) {
    const Shape os{out_ch, is.h, is.w};
    out.setZero(os.size());
    for (int co = 0; co < out_ch; ++co) {
        for (int ci = 0; ci < is.c; ++ci) {
            const double* k = w + ((static_cast<Eigen::Index>(co) * is.c + ci) * 9);
            for (int y = 0; y < is.h; ++y) {
                for (int x = 0; x < is.w; ++x) {
                    double acc = 0.0;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int yy = y + ky - 1;
                        if (yy < 0 || yy >= is.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int xx = x + kx - 1;
                            if (xx < 0 || xx >= is.w) continue;
                            acc += k[ky * 3 + kx] * in[at(is, ci, yy, xx)];
                        }
                    }
                    out[at(os, co, y, x)] += acc;
                }
            }
        }
        if (b) {
            for (int y = 0; y < is.h; ++y)
                for (int x = 0; x < is.w; ++x) out[at(os, co, y, x)] += b[co];
        }
    }
}

void conv3x3_input_adjoint(const double* w, const Vec& gout, Shape is, int out_ch,
                           Vec& gin) {
    const Shape os{out_ch, is.h, is.w};
    gin.setZero(is.size());
    for (int co = 0; co < out_ch; ++co) {
        for (int ci = 0; ci < is.c; ++ci) {
            const double* k = w + ((static_cast<Eigen::Index>(co) * is.c + ci) * 9);
            for (int y = 0; y < is.h; ++y) {
                for (int x = 0; x < is.w; ++x) {
                    const double g = gout[at(os, co, y, x)];
                    if (g == 0.0) continue;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int yy = y + ky - 1;
                        if (yy < 0 || yy >= is.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int xx = x + kx - 1;
                            if (xx < 0 || xx >= is.w) continue;
                            gin[at(is, ci, yy, xx)] += k[ky * 3 + kx] * g;
                        }
                    }
                }
            }
        }
    }
}

void conv3x3_weight_grad(const Vec& gout, const Vec& in, Shape is, int out_ch,
                         double* gw, double* gb) {
    const Shape os{out_ch, is.h, is.w};
    for (int co = 0; co < out_ch; ++co) {
        for (int ci = 0; ci < is.c; ++ci) {
            double* k = gw + ((static_cast<Eigen::Index>(co) * is.c + ci) * 9);
            for (int y = 0; y < is.h; ++y) {
                for (int x = 0; x < is.w; ++x) {
                    const double g = gout[at(os, co, y, x)];
                    if (g == 0.0) continue;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int yy = y + ky - 1;
                        if (yy < 0 || yy >= is.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int xx = x + kx - 1;
                            if (xx < 0 || xx >= is.w) continue;
                            k[ky * 3 + kx] += g * in[at(is, ci, yy, xx)];
                        }
                    }
                }
            }
        }
        if (gb) {
            for (int y = 0; y < is.h; ++y)
                for (int x = 0; x < is.w; ++x) gb[co] += gout[at(os, co, y, x)];
        }
    }
}

Shape maxpool_out_shape(Shape is) { return Shape{is.c, (is.h + 1) / 2, (is.w + 1) / 2}; }

// 2x2 stride-2 maxpool, partial windows at odd edges; ties broken by
// lowest spatial index (iteration order)
void maxpool_forward(const Vec& in, Shape is, Vec& out, std::vector<Eigen::Index>& argmax) {
    const Shape os = maxpool_out_shape(is);
    out.resize(os.size());
    argmax.assign(static_cast<size_t>(os.size()), 0);
    for (int c = 0; c < is.c; ++c) {
        for (int oy = 0; oy < os.h; ++oy) {
            for (int ox = 0; ox < os.w; ++ox) {
                double best = -std::numeric_limits<double>::infinity();
                Eigen::Index best_idx = -1;
                for (int dy = 0; dy < 2; ++dy) {
                    const int y = 2 * oy + dy;
                    if (y >= is.h) continue;
                    for (int dx = 0; dx < 2; ++dx) {
                        const int x = 2 * ox + dx;
                        if (x >= is.w) continue;
                        const Eigen::Index idx = at(is, c, y, x);
                        if (in[idx] > best) {
                            best = in[idx];
                            best_idx = idx;
                        }
                    }
                }
                const Eigen::Index o = at(os, c, oy, ox);
                out[o] = best;
                argmax[static_cast<size_t>(o)] = best_idx;
            }
        }
    }
}

void pool_gather(const Vec& v, const std::vector<Eigen::Index>& argmax, Vec& out) {
    out.resize(static_cast<Eigen::Index>(argmax.size()));
    for (size_t i = 0; i < argmax.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[argmax[i]];
}

void pool_scatter(const Vec& u, const std::vector<Eigen::Index>& argmax, Eigen::Index in_size,
                  Vec& gin) {
    gin.setZero(in_size);
    for (size_t i = 0; i < argmax.size(); ++i) gin[argmax[i]] += u[static_cast<Eigen::Index>(i)];
}

void gap_forward(const Vec& in, Shape is, Vec& out) {
    out.resize(is.c);
    const Eigen::Index hw = static_cast<Eigen::Index>(is.h) * is.w;
    for (int c = 0; c < is.c; ++c) out[c] = in.segment(static_cast<Eigen::Index>(c) * hw, hw).mean();
}

void gap_adjoint(const Vec& u, Shape is, Vec& gin) {
    const Eigen::Index hw = static_cast<Eigen::Index>(is.h) * is.w;
    gin.resize(is.size());
    for (int c = 0; c < is.c; ++c)
        gin.segment(static_cast<Eigen::Index>(c) * hw, hw).setConstant(u[c] / static_cast<double>(hw));
}

void apply_mask(const std::vector<std::uint8_t>& mask, Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (!mask[static_cast<size_t>(i)]) v[i] = 0.0;
}

struct ViewLookup {
    std::vector<int> layer_to_view;
    explicit ViewLookup(const Network& net) {
        layer_to_view.assign(net.layers().size(), -1);
        for (size_t vi = 0; vi < net.param_views().size(); ++vi)
            layer_to_view[static_cast<size_t>(net.param_views()[vi].layer)] = static_cast<int>(vi);
    }
};

void check_trace(const Network& net, const ActivationTrace& trace) {
    if (trace.fingerprint != net.fingerprint())
        throw StaleTrace("activation trace does not belong to this network architecture");
}

} // namespace

Network::Network(std::vector<LayerSpec> layers, Shape input_shape, int num_classes)
    : layers_(std::move(layers)), num_classes_(num_classes) {
    shapes_.push_back(input_shape);
    Eigen::Index offset = 0;
    for (size_t l = 0; l < layers_.size(); ++l) {
        const Shape in = shapes_.back();
        Shape out;
        if (const auto* d = std::get_if<DenseSpec>(&layers_[l])) {
            if (d->in != in.size())
                throw ShapeMismatch("dense layer input does not chain with previous shape");
            out = Shape{d->out, 1, 1};
            views_.push_back(ParamView{static_cast<int>(l), offset,
                                       static_cast<Eigen::Index>(d->out) * d->in, d->out});
            offset += views_.back().size();
        } else if (const auto* c = std::get_if<Conv2dSpec>(&layers_[l])) {
            if (c->in_ch != in.c) throw ShapeMismatch("conv layer channels do not chain");
            out = Shape{c->out_ch, in.h, in.w};
            views_.push_back(ParamView{static_cast<int>(l), offset,
                                       static_cast<Eigen::Index>(c->out_ch) * c->in_ch * 9,
                                       c->out_ch});
            offset += views_.back().size();
        } else if (std::holds_alternative<MaxPoolSpec>(layers_[l])) {
            out = maxpool_out_shape(in);
        } else {
            out = Shape{in.c, 1, 1};
        }
        shapes_.push_back(out);
    }
    if (shapes_.back().size() != num_classes_)
        throw ShapeMismatch("network output size does not equal num_classes");
    theta_ = Vec::Zero(offset);
    theta_init_ = theta_;
    fingerprint_ = fnv1a(describe());
}

std::string Network::describe() const {
    std::ostringstream os;
    os << "in:" << shapes_.front().c << "x" << shapes_.front().h << "x" << shapes_.front().w
       << ";K:" << num_classes_;
    for (const auto& layer : layers_) {
        if (const auto* d = std::get_if<DenseSpec>(&layer))
            os << ";dense(" << d->in << "," << d->out << "," << (d->relu ? 1 : 0) << ")";
        else if (const auto* c = std::get_if<Conv2dSpec>(&layer))
            os << ";conv(" << c->in_ch << "," << c->out_ch << "," << (c->relu ? 1 : 0) << ")";
        else if (std::holds_alternative<MaxPoolSpec>(layer))
            os << ";maxpool";
        else
            os << ";gap";
    }
    return os.str();
}

long long convnet_param_count(int omega, int in_channels, int num_classes) {
    const long long w = omega;
    const long long conv_w = 9LL * (static_cast<long long>(in_channels) * w + 42LL * w * w);
    const long long conv_b = 15LL * w;
    const long long head = (8LL * w + 1) * num_classes;
    return conv_w + conv_b + head;
}

Network build_convnet(int omega, int in_channels, int num_classes, int height, int width) {
    if (omega < 1) throw Error("build_convnet: omega must be >= 1");
    std::vector<LayerSpec> layers;
    int ch = in_channels;
    for (int stage = 0; stage < 4; ++stage) {
        const int out_ch = omega << stage;
        layers.push_back(Conv2dSpec{ch, out_ch, true});
        layers.push_back(MaxPoolSpec{});
        ch = out_ch;
    }
    layers.push_back(GlobalAvgPoolSpec{});
    layers.push_back(DenseSpec{8 * omega, num_classes, false});
    return Network(std::move(layers), Shape{in_channels, height, width}, num_classes);
}

Network build_mlp(const std::vector<int>& layer_widths, int num_classes) {
    if (layer_widths.size() < 2)
        throw RejectNoHidden("build_mlp: at least one hidden layer required");
    std::vector<LayerSpec> layers;
    for (size_t i = 0; i + 1 < layer_widths.size(); ++i)
        layers.push_back(DenseSpec{layer_widths[i], layer_widths[i + 1], true});
    layers.push_back(DenseSpec{layer_widths.back(), num_classes, false});
    return Network(std::move(layers), Shape{layer_widths.front(), 1, 1}, num_classes);
}

void init_params(Network& net, std::uint64_t seed, InitScheme scheme) {
    for (size_t vi = 0; vi < net.param_views().size(); ++vi) {
        const ParamView& view = net.param_views()[vi];
        double fan_in = 0.0, fan_out = 0.0;
        const LayerSpec& layer = net.layers()[static_cast<size_t>(view.layer)];
        if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            fan_in = d->in;
            fan_out = d->out;
        } else if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
            fan_in = 9.0 * c->in_ch;
            fan_out = 9.0 * c->out_ch;
        }
        const double stddev = scheme == InitScheme::He ? std::sqrt(2.0 / fan_in)
                                                       : std::sqrt(2.0 / (fan_in + fan_out));
        Rng rng(seed, "init_params", vi);
        for (Eigen::Index i = 0; i < view.weight_size; ++i)
            net.theta()[view.offset + i] = stddev * rng.normal();
        net.theta().segment(view.offset + view.weight_size, view.bias_size).setZero();
    }
    net.snapshot_init();
}

ForwardResult forward(const Network& net, const Vec& x) {
    if (x.size() != net.input_shape().size())
        throw ShapeMismatch("forward: input size does not match the network input shape");
    if (!x.allFinite()) throw ShapeMismatch("forward: input contains non-finite values");

    ForwardResult res;
    ActivationTrace& tr = res.trace;
    tr.fingerprint = net.fingerprint();
    tr.inputs.resize(net.layers().size());
    tr.masks.resize(net.layers().size());
    tr.argmax.resize(net.layers().size());

    ViewLookup lut(net);
    Vec cur = x;
    for (size_t l = 0; l < net.layers().size(); ++l) {
        tr.inputs[l] = cur;
        const Shape is = net.shapes()[l];
        const LayerSpec& layer = net.layers()[l];
        bool relu = false;
        Vec z;
        if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            const ParamView& view = net.param_views()[static_cast<size_t>(lut.layer_to_view[l])];
            Eigen::Map<const linalg::RowMat> W(net.theta().data() + view.offset, d->out, d->in);
            z = W * cur + net.theta().segment(view.offset + view.weight_size, d->out);
            relu = d->relu;
        } else if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
            const ParamView& view = net.param_views()[static_cast<size_t>(lut.layer_to_view[l])];
            conv3x3_forward(net.theta().data() + view.offset,
                            net.theta().data() + view.offset + view.weight_size, cur, is,
                            c->out_ch, z);
            relu = c->relu;
        } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
            maxpool_forward(cur, is, z, tr.argmax[l]);
        } else {
            gap_forward(cur, is, z);
        }
        if (relu) {
            tr.masks[l].resize(static_cast<size_t>(z.size()));
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                const bool on = z[i] > 0.0;
                tr.masks[l][static_cast<size_t>(i)] = on ? 1 : 0;
                if (!on) z[i] = 0.0;
            }
        }
        cur = std::move(z);
    }
    res.logits = std::move(cur);
    return res;
}

Vec input_jvp(const Network& net, const ActivationTrace& trace, const Vec& v) {
    check_trace(net, trace);
    if (v.size() != net.input_shape().size()) throw ShapeMismatch("input_jvp: bad tangent size");
    ViewLookup lut(net);
    Vec cur = v;
    for (size_t l = 0; l < net.layers().size(); ++l) {
        const Shape is = net.shapes()[l];
        const LayerSpec& layer = net.layers()[l];
        Vec z;
        if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            const ParamView& view = net.param_views()[static_cast<size_t>(lut.layer_to_view[l])];
            Eigen::Map<const linalg::RowMat> W(net.theta().data() + view.offset, d->out, d->in);
            z = W * cur;
        } else if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
            const ParamView& view = net.param_views()[static_cast<size_t>(lut.layer_to_view[l])];
            conv3x3_forward(net.theta().data() + view.offset, nullptr, cur, is, c->out_ch, z);
        } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
            pool_gather(cur, trace.argmax[l], z);
        } else {
            gap_forward(cur, is, z);
        }
        if (!trace.masks[l].empty()) apply_mask(trace.masks[l], z);
        cur = std::move(z);
    }
    return cur;
}

Vec input_vjp(const Network& net, const ActivationTrace& trace, const Vec& u) {
    check_trace(net, trace);
    if (u.size() != net.num_classes()) throw ShapeMismatch("input_vjp: bad cotangent size");
    ViewLookup lut(net);
    Vec cur = u;
    for (size_t li = net.layers().size(); li-- > 0;) {
        const Shape is = net.shapes()[li];
        const LayerSpec& layer = net.layers()[li];
        if (!trace.masks[li].empty()) apply_mask(trace.masks[li], cur);
        Vec g;
        if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            const ParamView& view = net.param_views()[static_cast<size_t>(lut.layer_to_view[li])];
            Eigen::Map<const linalg::RowMat> W(net.theta().data() + view.offset, d->out, d->in);
            g = W.transpose() * cur;
        } else if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
            const ParamView& view = net.param_views()[static_cast<size_t>(lut.layer_to_view[li])];
            conv3x3_input_adjoint(net.theta().data() + view.offset, cur, is, c->out_ch, g);
        } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
            pool_scatter(cur, trace.argmax[li], is.size(), g);
        } else {
            gap_adjoint(cur, is, g);
        }
        cur = std::move(g);
    }
    return cur;
}

Vec param_gradient(const Network& net, const ActivationTrace& trace, const Vec& upstream) {
    check_trace(net, trace);
    if (upstream.size() != net.num_classes())
        throw ShapeMismatch("param_gradient: bad upstream size");
    ViewLookup lut(net);
    Vec grad = Vec::Zero(net.num_params());
    Vec cur = upstream;
    for (size_t li = net.layers().size(); li-- > 0;) {
        const Shape is = net.shapes()[li];
        const LayerSpec& layer = net.layers()[li];
        if (!trace.masks[li].empty()) apply_mask(trace.masks[li], cur);
        Vec g;
        if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            const ParamView& view = net.param_views()[static_cast<size_t>(lut.layer_to_view[li])];
            Eigen::Map<const linalg::RowMat> W(net.theta().data() + view.offset, d->out, d->in);
            Eigen::Map<linalg::RowMat> gW(grad.data() + view.offset, d->out, d->in);
            gW.noalias() += cur * trace.inputs[li].transpose();
            grad.segment(view.offset + view.weight_size, d->out) += cur;
            g = W.transpose() * cur;
        } else if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
            const ParamView& view = net.param_views()[static_cast<size_t>(lut.layer_to_view[li])];
            conv3x3_weight_grad(cur, trace.inputs[li], is, c->out_ch, grad.data() + view.offset,
                                grad.data() + view.offset + view.weight_size);
            conv3x3_input_adjoint(net.theta().data() + view.offset, cur, is, c->out_ch, g);
        } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
            pool_scatter(cur, trace.argmax[li], is.size(), g);
        } else {
            gap_adjoint(cur, is, g);
        }
        cur = std::move(g);
    }
    return grad;
}

Vec param_gradient(const Network& net, const Vec& x, const Vec& upstream) {
    return param_gradient(net, forward(net, x).trace, upstream);
}

Mat param_jacobian_dense(const Network& net, const Vec& x) {
    if (net.num_params() > 20000)
        throw TooLarge("param_jacobian_dense: p exceeds the 20000-parameter policy");
    const ActivationTrace trace = forward(net, x).trace;
    Mat jac(net.num_classes(), net.num_params());
    for (int k = 0; k < net.num_classes(); ++k) {
        Vec e = Vec::Zero(net.num_classes());
        e[k] = 1.0;
        jac.row(k) = param_gradient(net, trace, e).transpose();
    }
    return jac;
}

namespace {

// one Pearlmutter pass: given a parameter tangent, accumulate the
// directional derivative of the per-sample loss gradient
void hvp_sample(const Network& net, loss::LossKind kind, const Vec& x, int label,
                const Vec& tangent, Vec& r_grad_accum) {
    const size_t L = net.layers().size();
    ViewLookup lut(net);

    std::vector<Vec> a(L), ra(L);                 // layer inputs and their tangents
    std::vector<std::vector<std::uint8_t>> masks(L);
    std::vector<std::vector<Eigen::Index>> argmax(L);

    Vec cur = x;
    Vec rcur = Vec::Zero(x.size());
    for (size_t l = 0; l < L; ++l) {
        a[l] = cur;
        ra[l] = rcur;
        const Shape is = net.shapes()[l];
        const LayerSpec& layer = net.layers()[l];
        bool relu = false;
        Vec z, rz;
        if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            const ParamView& view = net.param_views()[static_cast<size_t>(lut.layer_to_view[l])];
            Eigen::Map<const linalg::RowMat> W(net.theta().data() + view.offset, d->out, d->in);
            Eigen::Map<const linalg::RowMat> V(tangent.data() + view.offset, d->out, d->in);
            z = W * cur + net.theta().segment(view.offset + view.weight_size, d->out);
            rz = W * rcur + V * cur + tangent.segment(view.offset + view.weight_size, d->out);
            relu = d->relu;
        } else if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
            const ParamView& view = net.param_views()[static_cast<size_t>(lut.layer_to_view[l])];
            conv3x3_forward(net.theta().data() + view.offset,
                            net.theta().data() + view.offset + view.weight_size, cur, is,
                            c->out_ch, z);
            Vec rz_w;
            conv3x3_forward(net.theta().data() + view.offset, nullptr, rcur, is, c->out_ch, rz);
            conv3x3_forward(tangent.data() + view.offset,
                            tangent.data() + view.offset + view.weight_size, cur, is, c->out_ch,
                            rz_w);
            rz += rz_w;
            relu = c->relu;
        } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
            maxpool_forward(cur, is, z, argmax[l]);
            pool_gather(rcur, argmax[l], rz);
        } else {
            gap_forward(cur, is, z);
            gap_forward(rcur, is, rz);
        }
        if (relu) {
            masks[l].resize(static_cast<size_t>(z.size()));
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                const bool on = z[i] > 0.0;
                masks[l][static_cast<size_t>(i)] = on ? 1 : 0;
                if (!on) {
                    z[i] = 0.0;
                    rz[i] = 0.0;
                }
            }
        }
        cur = std::move(z);
        rcur = std::move(rz);
    }

    Vec g = loss::loss_upstream(kind, cur, label);
    Vec rg = loss::loss_upstream_tangent(kind, cur, label, rcur);

    for (size_t li = L; li-- > 0;) {
        const Shape is = net.shapes()[li];
        const LayerSpec& layer = net.layers()[li];
        if (!masks[li].empty()) {
            apply_mask(masks[li], g);
            apply_mask(masks[li], rg);
        }
        Vec g_next, rg_next;
        if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            const ParamView& view = net.param_views()[static_cast<size_t>(lut.layer_to_view[li])];
            Eigen::Map<const linalg::RowMat> W(net.theta().data() + view.offset, d->out, d->in);
            Eigen::Map<const linalg::RowMat> V(tangent.data() + view.offset, d->out, d->in);
            Eigen::Map<linalg::RowMat> rgW(r_grad_accum.data() + view.offset, d->out, d->in);
            rgW.noalias() += rg * a[li].transpose();
            rgW.noalias() += g * ra[li].transpose();
            r_grad_accum.segment(view.offset + view.weight_size, d->out) += rg;
            g_next = W.transpose() * g;
            rg_next = W.transpose() * rg + V.transpose() * g;
        } else if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
            const ParamView& view = net.param_views()[static_cast<size_t>(lut.layer_to_view[li])];
            conv3x3_weight_grad(rg, a[li], is, c->out_ch, r_grad_accum.data() + view.offset,
                                r_grad_accum.data() + view.offset + view.weight_size);
            conv3x3_weight_grad(g, ra[li], is, c->out_ch, r_grad_accum.data() + view.offset,
                                nullptr);
            conv3x3_input_adjoint(net.theta().data() + view.offset, g, is, c->out_ch, g_next);
            conv3x3_input_adjoint(net.theta().data() + view.offset, rg, is, c->out_ch, rg_next);
            Vec rg_v;
            conv3x3_input_adjoint(tangent.data() + view.offset, g, is, c->out_ch, rg_v);
            rg_next += rg_v;
        } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
            pool_scatter(g, argmax[li], is.size(), g_next);
            pool_scatter(rg, argmax[li], is.size(), rg_next);
        } else {
            gap_adjoint(g, is, g_next);
            gap_adjoint(rg, is, rg_next);
        }
        g = std::move(g_next);
        rg = std::move(rg_next);
    }
}

} // namespace

Vec hvp(const Network& net, loss::LossKind kind, const Mat& inputs,
        const std::vector<int>& labels, const Vec& v) {
    if (v.size() != net.num_params()) throw ShapeMismatch("hvp: bad tangent size");
    if (inputs.cols() != static_cast<Eigen::Index>(labels.size()))
        throw ShapeMismatch("hvp: inputs/labels count mismatch");
    if (labels.empty()) throw ShapeMismatch("hvp: empty batch");
    Vec acc = Vec::Zero(net.num_params());
    for (Eigen::Index n = 0; n < inputs.cols(); ++n)
        hvp_sample(net, kind, inputs.col(n), labels[static_cast<size_t>(n)], v, acc);
    return acc / static_cast<double>(labels.size());
}

Vec sample_loss_gradient(const Network& net, loss::LossKind kind, const Vec& x, int label) {
    const ForwardResult fr = forward(net, x);
    return param_gradient(net, fr.trace, loss::loss_upstream(kind, fr.logits, label));
}

SpectralNorms layer_spectral_norms(const Network& net, const PowerConfig& cfg) {
    SpectralNorms result;
    for (const ParamView& view : net.param_views()) {
        const Shape is = net.shapes()[static_cast<size_t>(view.layer)];
        const LayerSpec& layer = net.layers()[static_cast<size_t>(view.layer)];
        LinearOperator op;
        if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            Eigen::Map<const linalg::RowMat> W(net.theta().data() + view.offset, d->out, d->in);
            op = LinearOperator::from_matrix(W);
        } else {
            const auto* c = std::get_if<Conv2dSpec>(&layer);
            const double* w = net.theta().data() + view.offset;
            const int out_ch = c->out_ch;
            op.rows = static_cast<Eigen::Index>(out_ch) * is.h * is.w;
            op.cols = is.size();
            op.apply = [w, is, out_ch](const Vec& v) {
                Vec out;
                conv3x3_forward(w, nullptr, v, is, out_ch, out);
                return out;
            };
            op.apply_adjoint = [w, is, out_ch](const Vec& u) {
                Vec out;
                conv3x3_input_adjoint(w, u, is, out_ch, out);
                return out;
            };
        }
        const auto pm = linalg::power_method(op, cfg);
        result.per_layer.push_back(pm.sigma);
    }
    for (size_t l = 0; l < net.layers().size(); ++l) {
        if (std::holds_alternative<GlobalAvgPoolSpec>(net.layers()[l])) {
            const Shape is = net.shapes()[l];
            result.gap_correction = 1.0 / std::sqrt(static_cast<double>(is.h) * is.w);
        }
    }
    return result;
}

linalg::LinearOperator input_jacobian_operator(const Network& net, const ActivationTrace& trace) {
    check_trace(net, trace);
    LinearOperator op;
    op.rows = net.num_classes();
    op.cols = net.input_shape().size();
    op.apply = [&net, &trace](const Vec& v) { return input_jvp(net, trace, v); };
    op.apply_adjoint = [&net, &trace](const Vec& u) { return input_vjp(net, trace, u); };
    return op;
}

} // namespace lipscan::nn
