#include <doctest.h>

#include <cmath>

#include "lipscan/bounds.hpp"
#include "lipscan/rng.hpp"
#include "lipscan/train.hpp"

using namespace lipscan;
using namespace lipscan::bounds;
using linalg::Mat;
using linalg::Vec;

namespace {

nn::Network random_net(std::uint64_t seed) {
    Rng rng(seed, "bounds_arch", 0);
    const int hidden = 1 + static_cast<int>(rng.uniform_int(3)); // depth 2..4 overall
    std::vector<int> widths{2 + static_cast<int>(rng.uniform_int(5))};
    for (int i = 0; i < hidden; ++i) widths.push_back(2 + static_cast<int>(rng.uniform_int(15)));
    nn::Network net = nn::build_mlp(widths, 2 + static_cast<int>(rng.uniform_int(3)));
    nn::init_params(net, seed);
    return net;
}

data::Dataset rand_dataset(const nn::Network& net, int n, std::uint64_t seed) {
    return data::gen_blobs(n, net.input_shape(), net.num_classes(), 2.5, seed).train;
}

} // namespace

TEST_CASE("the input-vs-parameter gradient inequality holds on randomized instances") {
    linalg::PowerConfig cfg;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const nn::Network net = random_net(seed);
        const data::Dataset ds = rand_dataset(net, 25, seed);
        const BoundReport r = verify_thm1(net, ds, cfg);
        CHECK(r.holds);
        CHECK(r.slack >= -1e-9 * std::max(1.0, std::abs(r.rhs)));
        // Frobenius convention must hold too
        CHECK(r.constants.at("lhs_frobenius") <=
              r.constants.at("rhs_frobenius") + 1e-9 * std::max(1.0, r.constants.at("rhs_frobenius")));
    }
}

TEST_CASE("a dead network satisfies the gradient inequality with zero left side") {
    nn::Network net = nn::build_mlp({3, 4}, 2);
    nn::init_params(net, 1);
    // large negative biases kill every hidden unit on this data
    const nn::ParamView& v = net.param_views()[0];
    net.theta().segment(v.offset + v.weight_size, v.bias_size).setConstant(-100.0);
    const data::Dataset ds = rand_dataset(net, 15, 2);
    const BoundReport r = verify_thm1(net, ds, linalg::PowerConfig{});
    CHECK(r.lhs == 0.0);
    CHECK(r.rhs >= 0.0);
    CHECK(r.holds);
}

TEST_CASE("per-sample first-layer sharpness identity on a 2-2-2 net") {
    // ||df/dtheta1||_2 = ||df/dz1||_2 * ||x|| for the first-layer block,
    // so thm1's chain is tight at the Kronecker level
    nn::Network net = nn::build_mlp({2, 2}, 2);
    nn::init_params(net, 3);
    const Vec x = (Vec(2) << 0.7, -1.1).finished();
    const nn::ActivationTrace trace = nn::forward(net, x).trace;

    const int k = net.num_classes();
    Mat dz(k, 2); // df/dz1, rows per class
    const auto& d1 = std::get<nn::DenseSpec>(net.layers()[0]);
    for (int r = 0; r < k; ++r) {
        Vec e = Vec::Zero(k);
        e[r] = 1.0;
        // chain the upper layers by hand: mask then W2^T
        const auto& d2 = std::get<nn::DenseSpec>(net.layers()[1]);
        const nn::ParamView& v2 = net.param_views()[1];
        const Eigen::Map<const linalg::RowMat> w2(net.theta().data() + v2.offset, d2.out, d2.in);
        Vec cot = w2.transpose() * e;
        for (Eigen::Index i = 0; i < cot.size(); ++i)
            if (!trace.masks[0][static_cast<size_t>(i)]) cot[i] = 0.0;
        dz.row(r) = cot.transpose();
    }
    (void)d1;
    const Mat jt = nn::param_jacobian_dense(net, x);
    const nn::ParamView& v1 = net.param_views()[0];
    const Mat block = jt.block(0, v1.offset, k, v1.weight_size);
    CHECK(std::abs(linalg::dense_svd_oracle(block)[0] -
                   linalg::dense_svd_oracle(dz)[0] * x.norm()) <= 1e-9);
}

TEST_CASE("the loss-gradient inequality holds for both losses and rescales exactly") {
    linalg::PowerConfig cfg;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const nn::Network net = random_net(seed + 100);
        const data::Dataset ds = rand_dataset(net, 25, seed + 100);
        for (loss::LossKind kind : {loss::LossKind::MSE, loss::LossKind::CrossEntropy}) {
            const BoundReport r = verify_cor1(net, ds, kind, cfg);
            CHECK(r.holds);
        }
    }

    // scaling theta1 <- c*theta1 changes only the prefactor bookkeeping:
    // lhs_prefactor scales by 1/c^2 via ||theta1||
    nn::Network net = random_net(200);
    const data::Dataset ds = rand_dataset(net, 15, 200);
    const BoundReport before = verify_cor1(net, ds, loss::LossKind::MSE, cfg);
    const double c = 3.0;
    nn::Network scaled = net;
    const nn::ParamView& v = scaled.param_views()[0];
    scaled.theta().segment(v.offset, v.weight_size) *= c;
    const BoundReport after = verify_cor1(scaled, ds, loss::LossKind::MSE, cfg);
    CHECK(after.constants.at("theta1_norm") ==
          doctest::Approx(c * before.constants.at("theta1_norm")).epsilon(1e-6));
}

TEST_CASE("the Gauss-Newton certificate holds on MSE nets trained near interpolation") {
    int done = 0;
    for (std::uint64_t seed = 0; done < 10; ++seed) {
        REQUIRE(seed < 60);
        nn::Network net = nn::build_mlp({2, 16}, 2);
        nn::init_params(net, seed);
        data::Dataset ds = data::gen_blobs(10, nn::Shape{2, 1, 1}, 2, 2.0, seed).train;

        train::TrainConfig cfg;
        cfg.loss_kind = loss::LossKind::MSE;
        cfg.lr = 0.05;
        cfg.momentum = 0.9;
        cfg.epochs = 20000;
        cfg.batch_size = static_cast<int>(ds.size());
        cfg.warmup_epochs = 0;
        cfg.shuffle = false;
        cfg.seed = seed;
        try {
            train::sgd_train(net, ds, ds, cfg);
        } catch (const lipscan::DivergenceAbort&) {
            continue; // unlucky init at this lr; try another seed
        }
        const double final_loss = train::evaluate(net, ds, cfg.loss_kind).mean_loss;
        if (final_loss > 1e-8) continue; // this init did not interpolate; try another
        ++done;

        const BoundReport r = verify_thm2(net, ds);
        CHECK(r.holds);
        CHECK(r.slack >= -1e-9 * std::max(1.0, std::abs(r.rhs)));
        // near interpolation the Hessian is Gauss-Newton dominated
        CHECK(r.constants.at("hessian_residual_gap") <=
              0.05 * std::max(1.0, r.constants.at("trace_gauss_newton")));
    }
}

TEST_CASE("the certificate is refused for the wrong loss") {
    const nn::Network net = random_net(7);
    const data::Dataset ds = rand_dataset(net, 10, 7);
    CHECK_THROWS_AS(verify_thm2(net, ds, loss::LossKind::CrossEntropy), WrongLoss);
}

TEST_CASE("one-layer linear MSE regression has trace(G) = mean squared input norm") {
    // f = W x + b with K outputs: d f_k / dW rows are x, plus K bias entries,
    // so ||J_n||_F^2 = K * (||x_n||^2 + 1)
    nn::Network net(std::vector<nn::LayerSpec>{nn::DenseSpec{3, 3, true}, nn::DenseSpec{3, 2, false}},
                    nn::Shape{3, 1, 1}, 2);
    nn::init_params(net, 4);
    // make the hidden layer the identity-ish positive map so the chain stays linear
    const nn::ParamView& v0 = net.param_views()[0];
    net.theta().segment(v0.offset, v0.size()).setZero();
    for (int i = 0; i < 3; ++i) net.theta()[v0.offset + i * 3 + i] = 1.0;
    const nn::ParamView& v1 = net.param_views()[1];

    data::Dataset ds = rand_dataset(net, 20, 4);
    ds.inputs = ds.inputs.cwiseAbs(); // keep every relu strictly active

    const BoundReport r = verify_thm2(net, ds);
    // restrict the analytic count to the head block: rows of df/dW2 are the
    // hidden activation (= x here), biases contribute K ones
    double expected = 0.0;
    for (Eigen::Index n = 0; n < ds.size(); ++n)
        expected += 2.0 * (ds.sample(n).squaredNorm() + 1.0);
    expected /= static_cast<double>(ds.size());
    // the first layer adds its own block; subtract it via the dense Jacobian
    double first_block = 0.0;
    for (Eigen::Index n = 0; n < ds.size(); ++n) {
        const Mat jt = nn::param_jacobian_dense(net, ds.sample(n));
        first_block += jt.block(0, v0.offset, 2, v0.size()).squaredNorm();
        // head block sanity against the closed form
        CHECK(jt.block(0, v1.offset, 2, v1.size()).squaredNorm() ==
              doctest::Approx(2.0 * (ds.sample(n).squaredNorm() + 1.0)).epsilon(1e-9));
    }
    first_block /= static_cast<double>(ds.size());
    CHECK(r.constants.at("trace_gauss_newton") ==
          doctest::Approx(expected + first_block).epsilon(1e-9));
}

TEST_CASE("the B=1 uncentered covariance identity is exact") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const nn::Network net = random_net(seed + 300);
        const data::Dataset ds = rand_dataset(net, 20, seed + 300);
        const loss::LossKind kind = seed % 2 ? loss::LossKind::MSE : loss::LossKind::CrossEntropy;
        const BoundReport r = verify_cor2(net, ds, 1, kind);
        CHECK(r.holds);
        CHECK(std::abs(r.lhs - r.rhs) <= 1e-10 * std::max(1.0, std::abs(r.rhs)));
    }
}

TEST_CASE("at B=N the covariance term vanishes and trace(S) collapses to the mean gradient") {
    const nn::Network net = random_net(400);
    const data::Dataset ds = rand_dataset(net, 18, 400);
    const int n = static_cast<int>(ds.size());
    const BoundReport r = verify_cor2(net, ds, n, loss::LossKind::MSE, 5, 0);
    CHECK(r.constants.at("trace_noise_covariance") == 0.0);

    std::vector<Eigen::Index> all(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
    const double gbar_sq =
        train::minibatch_gradient(net, ds, all, loss::LossKind::MSE).squaredNorm();
    CHECK(r.rhs == doctest::Approx(gbar_sq / n).epsilon(1e-12));
}

TEST_CASE("estimate-mode covariance verification holds on random instances") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const nn::Network net = random_net(seed + 500);
        const data::Dataset ds = rand_dataset(net, 24, seed + 500);
        const BoundReport r = verify_cor2(net, ds, 4, loss::LossKind::MSE, 40, seed);
        CHECK(r.holds);
    }
    const nn::Network net = random_net(501);
    const data::Dataset ds = rand_dataset(net, 10, 501);
    CHECK_THROWS_AS(verify_cor2(net, ds, 0, loss::LossKind::MSE), PreconditionViolated);
    CHECK_THROWS_AS(verify_cor2(net, ds, 99, loss::LossKind::MSE), PreconditionViolated);
}

TEST_CASE("layer duality residual is tiny on every dense layer of a deep net") {
    nn::Network net = nn::build_mlp({3, 3, 3}, 2);
    nn::init_params(net, 8);
    Rng rng(8, "duality_x", 0);
    Vec x(3);
    for (int i = 0; i < 3; ++i) x[i] = rng.normal();
    for (int l = 0; l < static_cast<int>(net.layers().size()); ++l)
        CHECK(verify_layer_duality(net, x, l) <= 1e-9);

    CHECK(verify_layer_duality(net, Vec::Zero(3), 0) <= 1e-15); // x = 0: both sides vanish
    CHECK_THROWS_AS(verify_layer_duality(net, x, 5), IndexOutOfRange);

    nn::Network conv = nn::build_convnet(1, 1, 2, 4, 4);
    nn::init_params(conv, 1);
    CHECK_THROWS_AS(verify_layer_duality(conv, Vec::Zero(16), 0), UnsupportedLayer);
}

TEST_CASE("precondition violations are reported, not silently certified") {
    nn::Network net = nn::build_mlp({3, 4}, 2);
    nn::init_params(net, 9);
    data::Dataset ds = rand_dataset(net, 8, 9);
    ds.inputs.setZero(); // x_min undefined
    CHECK_THROWS_AS(verify_thm1(net, ds, linalg::PowerConfig{}), PreconditionViolated);

    nn::Network zeroed = net;
    zeroed.theta().setZero();
    const data::Dataset ok = rand_dataset(net, 8, 9);
    CHECK_THROWS_AS(verify_cor1(zeroed, ok, loss::LossKind::MSE, linalg::PowerConfig{}),
                    PreconditionViolated);
}
