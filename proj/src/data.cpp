#include "lipscan/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lipscan/rng.hpp"

namespace lipscan::data {

ChannelStats Dataset::channel_stats() const {
    const int c = input_shape.c;
    const Eigen::Index per_channel = static_cast<Eigen::Index>(input_shape.h) * input_shape.w;
    ChannelStats stats;
    stats.mean = Vec::Zero(c);
    stats.std = Vec::Zero(c);
    const Eigen::Index n_entries = per_channel * size();
    for (int ch = 0; ch < c; ++ch) {
        double sum = 0.0, sumsq = 0.0;
        for (Eigen::Index n = 0; n < size(); ++n) {
            for (Eigen::Index i = 0; i < per_channel; ++i) {
                const double v = inputs(ch * per_channel + i, n);
                sum += v;
                sumsq += v * v;
            }
        }
        const double mean = sum / static_cast<double>(n_entries);
        stats.mean[ch] = mean;
        const double var = sumsq / static_cast<double>(n_entries) - mean * mean;
        stats.std[ch] = std::sqrt(std::max(0.0, var));
    }
    return stats;
}

BlobsSplit gen_blobs(int n, nn::Shape shape, int classes, double separation, std::uint64_t seed) {
    if (classes < 2) throw Error("gen_blobs: need at least 2 classes");
    const Eigen::Index d = shape.size();

    Mat inputs(d, n);
    std::vector<int> labels(static_cast<size_t>(n));
    std::vector<bool> is_test(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int label = i % classes;
        labels[static_cast<size_t>(i)] = label;
        Rng rng(seed, "blobs", static_cast<std::uint64_t>(i));
        Vec x(d);
        for (Eigen::Index j = 0; j < d; ++j) x[j] = rng.normal();
        // class means sit on the scaled simplex spanned by the basis vectors
        x[label % d] += separation;
        inputs.col(i) = x;
        is_test[static_cast<size_t>(i)] = Rng(seed, "split", static_cast<std::uint64_t>(i)).uniform01() < 0.2;
    }

    BlobsSplit out;
    for (int pass = 0; pass < 2; ++pass) {
        const bool want_test = pass == 1;
        Dataset& ds = want_test ? out.test : out.train;
        std::vector<Eigen::Index> idx;
        for (int i = 0; i < n; ++i)
            if (is_test[static_cast<size_t>(i)] == want_test) idx.push_back(i);
        ds.inputs.resize(d, static_cast<Eigen::Index>(idx.size()));
        ds.labels.resize(idx.size());
        ds.noise_mask.assign(idx.size(), 0);
        for (size_t k = 0; k < idx.size(); ++k) {
            ds.inputs.col(static_cast<Eigen::Index>(k)) = inputs.col(idx[k]);
            ds.labels[k] = labels[static_cast<size_t>(idx[k])];
        }
        ds.input_shape = shape;
        ds.num_classes = classes;
        ds.split = want_test ? "test" : "train";
    }
    return out;
}

Dataset corrupt_labels(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0) throw Error("corrupt_labels: fraction must be in [0,1]");
    Dataset out = ds;
    out.noise_mask.assign(static_cast<size_t>(ds.size()), 0);
    const Eigen::Index n_flip = static_cast<Eigen::Index>(fraction * static_cast<double>(ds.size()));
    if (n_flip == 0) return out;

    // choose n_flip victims by partial Fisher-Yates
    std::vector<Eigen::Index> idx(static_cast<size_t>(ds.size()));
    for (Eigen::Index i = 0; i < ds.size(); ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(seed, "corrupt_labels", 0);
    for (Eigen::Index i = 0; i < n_flip; ++i) {
        const Eigen::Index j =
            i + static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(ds.size() - i)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    for (Eigen::Index i = 0; i < n_flip; ++i) {
        const Eigen::Index victim = idx[static_cast<size_t>(i)];
        const int old = out.labels[static_cast<size_t>(victim)];
        // uniformly random *different* label
        int fresh = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(ds.num_classes - 1)));
        if (fresh >= old) ++fresh;
        out.labels[static_cast<size_t>(victim)] = fresh;
        out.noise_mask[static_cast<size_t>(victim)] = 1;
    }
    return out;
}

const char* probe_kind_name(ProbeKind k) {
    switch (k) {
        case ProbeKind::UniformBand: return "uniform_band";
        case ProbeKind::Gaussian: return "gaussian";
        case ProbeKind::Sphere: return "sphere";
        case ProbeKind::Jitter: return "jitter";
    }
    return "?";
}

Dataset gen_probe_set(ProbeKind kind, const ChannelStats& stats, nn::Shape shape, int n,
                      std::uint64_t seed) {
    if (kind == ProbeKind::Jitter)
        throw MissingReference("gen_probe_set: jitter requires a reference dataset");
    const Eigen::Index d = shape.size();
    const Eigen::Index per_channel = static_cast<Eigen::Index>(shape.h) * shape.w;

    Dataset ds;
    ds.inputs.resize(d, n);
    ds.labels.assign(static_cast<size_t>(n), 0);
    ds.noise_mask.assign(static_cast<size_t>(n), 0);
    ds.input_shape = shape;
    ds.num_classes = 1;
    ds.split = std::string("probe:") + probe_kind_name(kind);

    for (int i = 0; i < n; ++i) {
        Rng rng(seed, "probe_set", static_cast<std::uint64_t>(i));
        Vec x(d);
        if (kind == ProbeKind::Sphere) {
            for (Eigen::Index j = 0; j < d; ++j) x[j] = rng.normal();
            x /= x.norm();
        } else {
            for (int ch = 0; ch < shape.c; ++ch) {
                const double mu = stats.mean[ch];
                const double sd = stats.std[ch];
                for (Eigen::Index j = 0; j < per_channel; ++j) {
                    x[ch * per_channel + j] = kind == ProbeKind::UniformBand
                                                  ? mu + sd * (2.0 * rng.uniform01() - 1.0)
                                                  : mu + sd * rng.normal();
                }
            }
        }
        ds.inputs.col(i) = x;
    }
    return ds;
}

Dataset gen_probe_set_jitter(const Dataset& ref, int n, std::uint64_t seed, double amplitude) {
    if (ref.size() == 0) throw MissingReference("gen_probe_set_jitter: empty reference dataset");
    const ChannelStats stats = ref.channel_stats();
    const nn::Shape shape = ref.input_shape;
    const Eigen::Index per_channel = static_cast<Eigen::Index>(shape.h) * shape.w;

    Dataset ds;
    ds.inputs.resize(shape.size(), n);
    ds.labels.assign(static_cast<size_t>(n), 0);
    ds.noise_mask.assign(static_cast<size_t>(n), 0);
    ds.input_shape = shape;
    ds.num_classes = 1;
    ds.split = "probe:jitter";

    for (int i = 0; i < n; ++i) {
        Rng rng(seed, "probe_jitter", static_cast<std::uint64_t>(i));
        Vec x = ref.inputs.col(i % ref.size());
        for (int ch = 0; ch < shape.c; ++ch) {
            const double amp = amplitude * stats.std[ch];
            for (Eigen::Index j = 0; j < per_channel; ++j)
                x[ch * per_channel + j] += amp * (2.0 * rng.uniform01() - 1.0);
        }
        ds.inputs.col(i) = x;
    }
    return ds;
}

namespace {

double parse_double(const std::string& field, Eigen::Index row, int col) {
    double value = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end) {
        std::ostringstream os;
        os << "load_csv: cannot parse numeric field at row " << row << ", column " << col;
        throw ParseError(os.str());
    }
    if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "load_csv: non-finite value at row " << row << ", column " << col;
        throw ParseError(os.str());
    }
    return value;
}

} // namespace

Dataset load_csv(const std::string& path, bool has_header, int label_col, int num_classes,
                 nn::Shape shape) {
    std::ifstream in(path);
    if (!in) throw IoError("load_csv: cannot open " + path);

    std::vector<std::vector<double>> rows;
    std::string line;
    Eigen::Index row_idx = 0;
    bool first = true;
    size_t n_cols = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first && has_header) {
            first = false;
            continue;
        }
        first = false;
        std::vector<double> fields;
        std::stringstream ss(line);
        std::string field;
        int col = 0;
        while (std::getline(ss, field, ',')) {
            fields.push_back(parse_double(field, row_idx, col));
            ++col;
        }
        if (n_cols == 0) n_cols = fields.size();
        if (fields.size() != n_cols) {
            std::ostringstream os;
            os << "load_csv: row " << row_idx << " has " << fields.size() << " columns, expected "
               << n_cols;
            throw ParseError(os.str());
        }
        rows.push_back(std::move(fields));
        ++row_idx;
    }
    if (rows.empty()) throw EmptyDataset("load_csv: no data rows in " + path);
    if (label_col < 0 || static_cast<size_t>(label_col) >= n_cols)
        throw ParseError("load_csv: label column out of range");

    const Eigen::Index d = static_cast<Eigen::Index>(n_cols) - 1;
    Dataset ds;
    ds.inputs.resize(d, static_cast<Eigen::Index>(rows.size()));
    ds.labels.resize(rows.size());
    ds.noise_mask.assign(rows.size(), 0);
    int max_label = 0;
    for (size_t r = 0; r < rows.size(); ++r) {
        Eigen::Index j = 0;
        for (size_t c = 0; c < n_cols; ++c) {
            if (static_cast<int>(c) == label_col) {
                const double lv = rows[r][c];
                const int label = static_cast<int>(std::llround(lv));
                if (std::abs(lv - label) > 1e-9 || label < 0) {
                    std::ostringstream os;
                    os << "load_csv: invalid label at row " << r << ", column " << c;
                    throw ParseError(os.str());
                }
                if (num_classes > 0 && label >= num_classes) {
                    std::ostringstream os;
                    os << "load_csv: label " << label << " at row " << r << " exceeds num_classes "
                       << num_classes;
                    throw LabelOutOfRange(os.str());
                }
                ds.labels[r] = label;
                max_label = std::max(max_label, label);
            } else {
                ds.inputs(j++, static_cast<Eigen::Index>(r)) = rows[r][c];
            }
        }
    }
    ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
    ds.input_shape = shape.size() > 0 ? shape : nn::Shape{static_cast<int>(d), 1, 1};
    if (ds.input_shape.size() != d) throw ParseError("load_csv: shape does not match feature count");
    return ds;
}

XMinResult x_min(const Dataset& ds) {
    if (ds.size() == 0) throw EmptyDataset("x_min: empty dataset");
    XMinResult res;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index n = 0; n < ds.size(); ++n) {
        const double nrm = ds.inputs.col(n).norm();
        if (nrm == 0.0) {
            ++res.zero_norm_samples;
            continue;
        }
        best = std::min(best, nrm);
    }
    res.x_min = std::isfinite(best) ? best : 0.0;
    return res;
}

} // namespace lipscan::data
