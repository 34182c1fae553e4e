#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lipscan/data.hpp"

using namespace lipscan;
using namespace lipscan::data;

TEST_CASE("blobs are deterministic, balanced and split roughly 80/20") {
    const BlobsSplit a = gen_blobs(500, nn::Shape{20, 1, 1}, 4, 3.0, 9);
    const BlobsSplit b = gen_blobs(500, nn::Shape{20, 1, 1}, 4, 3.0, 9);
    CHECK(a.train.inputs == b.train.inputs);
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.train.size() + a.test.size() == 500);
    CHECK(a.test.size() > 50);
    CHECK(a.test.size() < 150);
    CHECK(a.train.num_classes == 4);
    CHECK(a.train.split == "train");
    CHECK(a.test.split == "test");

    // all four classes present, and class means separated
    std::vector<int> counts(4, 0);
    for (int l : a.train.labels) counts[static_cast<size_t>(l)]++;
    for (int c : counts) CHECK(c > 50);

    const BlobsSplit c = gen_blobs(500, nn::Shape{20, 1, 1}, 4, 3.0, 10);
    CHECK(a.train.inputs != c.train.inputs);
}

TEST_CASE("label corruption flips exactly floor(fraction*N) labels to different classes") {
    const Dataset ds = gen_blobs(400, nn::Shape{10, 1, 1}, 5, 3.0, 3).train;
    const Dataset noisy = corrupt_labels(ds, 0.2, 3);
    REQUIRE(noisy.size() == ds.size());
    int flipped = 0;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        const size_t s = static_cast<size_t>(i);
        if (noisy.noise_mask[s]) {
            ++flipped;
            CHECK(noisy.labels[s] != ds.labels[s]); // corrupted means different
        } else {
            CHECK(noisy.labels[s] == ds.labels[s]);
        }
        CHECK(noisy.labels[s] >= 0);
        CHECK(noisy.labels[s] < 5);
    }
    CHECK(flipped == static_cast<int>(0.2 * static_cast<double>(ds.size())));
    CHECK(noisy.inputs == ds.inputs); // inputs untouched

    const Dataset clean = corrupt_labels(ds, 0.0, 3);
    CHECK(clean.labels == ds.labels);
}

TEST_CASE("probe sets match the requested geometry") {
    const Dataset ref = gen_blobs(300, nn::Shape{8, 1, 1}, 2, 3.0, 5).train;
    const ChannelStats stats = ref.channel_stats();

    const Dataset sphere = gen_probe_set(ProbeKind::Sphere, stats, ref.input_shape, 50, 1);
    REQUIRE(sphere.size() == 50);
    CHECK(sphere.split == "probe:sphere");
    for (Eigen::Index i = 0; i < 50; ++i)
        CHECK(sphere.inputs.col(i).norm() == doctest::Approx(1.0).epsilon(1e-9));

    const Dataset band = gen_probe_set(ProbeKind::UniformBand, stats, ref.input_shape, 400, 2);
    for (int c = 0; c < 8; ++c) {
        const double lo = stats.mean[c] - stats.std[c];
        const double hi = stats.mean[c] + stats.std[c];
        for (Eigen::Index i = 0; i < band.size(); ++i) {
            CHECK(band.inputs(c, i) >= lo);
            CHECK(band.inputs(c, i) <= hi);
        }
    }

    const Dataset gauss = gen_probe_set(ProbeKind::Gaussian, stats, ref.input_shape, 5000, 3);
    const double m0 = gauss.inputs.row(0).mean();
    CHECK(std::abs(m0 - stats.mean[0]) < 0.15 * std::max(1.0, std::abs(stats.mean[0])) + 0.1);

    // jitter stays within amplitude*std of its reference points
    const Dataset jit = gen_probe_set_jitter(ref, 60, 4, 0.5);
    REQUIRE(jit.size() == 60);
    for (Eigen::Index i = 0; i < jit.size(); ++i) {
        const Vec delta = jit.inputs.col(i) - ref.inputs.col(i % ref.size());
        for (int c = 0; c < 8; ++c) CHECK(std::abs(delta[c]) <= 0.5 * stats.std[c] + 1e-12);
    }

    CHECK_THROWS_AS(gen_probe_set(ProbeKind::Jitter, stats, ref.input_shape, 10, 0),
                    MissingReference);
}

TEST_CASE("csv loading round-trips values and reports malformed cells") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "lipscan_data_test.csv").string();
    {
        std::ofstream f(path);
        f << "a,b,label\n";
        f << "0.5,-1.25,0\n";
        f << "1e-3,2.5,1\n";
        f << "-0.125,0.0078125,1\n";
    }
    const Dataset ds = load_csv(path, true, 2, 2);
    REQUIRE(ds.size() == 3);
    CHECK(ds.inputs(0, 0) == 0.5);
    CHECK(ds.inputs(1, 0) == -1.25);
    CHECK(ds.inputs(0, 1) == 1e-3);
    CHECK(ds.labels == std::vector<int>{0, 1, 1});
    CHECK(ds.input_shape.size() == 2);

    {
        std::ofstream f(path);
        f << "a,b,label\n0.5,oops,0\n";
    }
    CHECK_THROWS_AS(load_csv(path, true, 2, 2), ParseError);

    {
        std::ofstream f(path);
        f << "a,b,label\n0.5,1.0,7\n";
    }
    CHECK_THROWS_AS(load_csv(path, true, 2, 2), LabelOutOfRange);

    {
        std::ofstream f(path);
        f << "a,b,label\n";
    }
    CHECK_THROWS_AS(load_csv(path, true, 2, 2), EmptyDataset);
    fs::remove(path);
}

TEST_CASE("x_min skips zero-norm samples and counts them") {
    Dataset ds;
    ds.inputs = Mat::Zero(3, 4);
    ds.inputs.col(1) << 3, 4, 0; // norm 5
    ds.inputs.col(3) << 0, 0, 1; // norm 1
    ds.labels = {0, 0, 0, 0};
    ds.input_shape = nn::Shape{3, 1, 1};
    ds.num_classes = 1;
    const XMinResult r = x_min(ds);
    CHECK(r.x_min == doctest::Approx(1.0));
    CHECK(r.zero_norm_samples == 2);
}
