#include "lipscan/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "lipscan/bounds.hpp"
#include "lipscan/rng.hpp"

namespace lipscan::sweep {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::vector<std::string> kCsvColumns = {
    "width",         "params",
    "seed",          "epoch",
    "split",         "train_err",
    "test_err",      "train_loss",
    "test_loss",     "emp_lipschitz",
    "emp_lipschitz_max", "lip_upper",
    "loss_jac_norm_sq",  "param_grad_norm_sq",
    "hessian_trace", "hessian_trace_stderr",
    "lambda_max_H",  "lambda_min_H",
    "lambda_min_nonzero_H", "noise_top_eig",
    "confidence",    "stability_margin",
    "dist_init_json", "wall_s"};

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string dist_json(const std::vector<double>& d) {
    json arr = json::array();
    for (double v : d) arr.push_back(v);
    return arr.dump();
}

// split one CSV line; double quotes delimit fields that contain commas
std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s) {
    if (s.empty()) return 0.0;
    return std::strtod(s.c_str(), nullptr);
}

std::uint64_t derive_seed(std::uint64_t seed, const char* tag, int width, int epoch) {
    return Rng(seed, tag, (static_cast<std::uint64_t>(width) << 20) | static_cast<std::uint64_t>(epoch))
        .next_u64();
}

struct CellOutput {
    std::vector<ProbeReport> rows;
    std::vector<std::string> bound_lines;
    std::string failure; // empty on success
};

ProbeReport probe_network(const SweepConfig& cfg, const nn::Network& net, int width,
                          std::uint64_t seed, int epoch, const data::Dataset& train_ds,
                          const data::Dataset& test_ds) {
    const auto t0 = std::chrono::steady_clock::now();
    const loss::LossKind kind = cfg.train.loss_kind;

    ProbeReport r;
    r.width = width;
    r.params = net.num_params();
    r.seed = seed;
    r.epoch = epoch;
    r.split = "train";

    const train::EvalResult tr = train::evaluate(net, train_ds, kind);
    const train::EvalResult te = train::evaluate(net, test_ds, kind);
    r.train_err = tr.error_rate;
    r.train_loss = tr.mean_loss;
    r.test_err = te.error_rate;
    r.test_loss = te.mean_loss;

    PowerConfig pcfg = cfg.power;
    pcfg.seed = derive_seed(seed, "probe_power", width, epoch);
    const probes::LipschitzResult lip = probes::empirical_lipschitz(net, train_ds, pcfg);
    r.emp_lipschitz = lip.aggregate;
    r.emp_lipschitz_max = lip.max;
    r.lip_upper = probes::lipschitz_upper_bound(net, pcfg);

    r.loss_jac_norm_sq = probes::loss_jacobian_norm(net, train_ds, kind).mean_sq;
    r.param_grad_norm_sq = probes::param_grad_norm(net, train_ds, kind).mean_sq;

    HutchinsonConfig hcfg = cfg.hutchinson;
    hcfg.seed = derive_seed(seed, "probe_hutch", width, epoch);
    const probes::TraceEstimate trace = probes::hessian_trace(net, train_ds, kind, hcfg);
    r.hessian_trace = trace.trace;
    r.hessian_trace_stderr = trace.stderr_;

    const probes::HessianExtremes ext = probes::hessian_extremes(
        net, train_ds, kind, cfg.lanczos_k, cfg.zero_tol, derive_seed(seed, "probe_lanczos", width, epoch));
    r.lambda_max_H = ext.lambda_max;
    r.lambda_min_H = ext.lambda_min;
    r.lambda_min_nonzero_H = ext.lambda_min_nonzero;

    r.noise_top_eig = probes::noise_covariance_top(net, train_ds, kind, cfg.noise_batch,
                                                   cfg.noise_draws,
                                                   derive_seed(seed, "probe_noise", width, epoch),
                                                   pcfg);
    r.confidence = loss::confidence(net, train_ds);
    r.stability_margin = probes::stability_check(ext.lambda_max, cfg.train.lr).margin;
    r.dist_from_init = probes::distance_from_init(net);
    r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

ProbeReport probe_set_row(const SweepConfig& cfg, const nn::Network& net, int width,
                          std::uint64_t seed, int epoch, const data::Dataset& train_ds,
                          data::ProbeKind kind) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t pseed = derive_seed(seed, data::probe_kind_name(kind), width, epoch);
    data::Dataset probe_ds =
        kind == data::ProbeKind::Jitter
            ? data::gen_probe_set_jitter(train_ds, static_cast<int>(cfg.probe_set_size), pseed)
            : data::gen_probe_set(kind, train_ds.channel_stats(), train_ds.input_shape,
                                  static_cast<int>(cfg.probe_set_size), pseed);

    ProbeReport r;
    r.width = width;
    r.params = net.num_params();
    r.seed = seed;
    r.epoch = epoch;
    r.split = std::string("probe:") + data::probe_kind_name(kind);

    PowerConfig pcfg = cfg.power;
    pcfg.seed = derive_seed(seed, "probe_set_power", width, epoch);
    const probes::LipschitzResult lip = probes::empirical_lipschitz(net, probe_ds, pcfg);
    r.emp_lipschitz = lip.aggregate;
    r.emp_lipschitz_max = lip.max;
    r.lip_upper = probes::lipschitz_upper_bound(net, pcfg);
    r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

json bound_to_json(const bounds::BoundReport& b, int width, std::uint64_t seed, int epoch) {
    json j;
    j["bound"] = b.id;
    j["width"] = width;
    j["seed"] = seed;
    j["epoch"] = epoch;
    j["lhs"] = b.lhs;
    j["rhs"] = b.rhs;
    j["slack"] = b.slack;
    j["holds"] = b.holds;
    j["sample_count"] = b.sample_count;
    j["constants"] = b.constants;
    if (!b.notes.empty()) j["notes"] = b.notes;
    return j;
}

CellOutput run_cell(const SweepConfig& cfg, int width, std::uint64_t seed,
                    const data::Dataset& train_ds, const data::Dataset& test_ds,
                    const std::set<std::tuple<int, std::uint64_t, int, std::string>>& done_rows) {
    CellOutput out;
    try {
        nn::Network net = build_family_member(cfg, width, seed);
        train::TrainConfig tcfg = cfg.train;
        tcfg.seed = seed;
        tcfg.checkpoint_epochs = cfg.probe_epochs;

        const int final_epoch = cfg.train.epochs;
        auto row_done = [&](int epoch, const std::string& split) {
            return done_rows.count({width, seed, epoch, split}) != 0;
        };

        train::ProbeHook hook = [&](int epoch, const nn::Network& snapshot) {
            if (!row_done(epoch, "train"))
                out.rows.push_back(probe_network(cfg, snapshot, width, seed, epoch, train_ds, test_ds));
            for (data::ProbeKind k : cfg.probe_sets) {
                const std::string split = std::string("probe:") + data::probe_kind_name(k);
                if (!row_done(epoch, split))
                    out.rows.push_back(probe_set_row(cfg, snapshot, width, seed, epoch, train_ds, k));
            }
            if (epoch == final_epoch) {
                const PowerConfig pcfg = cfg.power;
                try {
                    out.bound_lines.push_back(
                        bound_to_json(bounds::verify_thm1(snapshot, train_ds, pcfg), width, seed, epoch)
                            .dump());
                } catch (const Error&) {
                    // dense parameter Jacobian too large for this width; skip
                }
                out.bound_lines.push_back(
                    bound_to_json(bounds::verify_cor1(snapshot, train_ds, cfg.train.loss_kind, pcfg),
                                  width, seed, epoch)
                        .dump());
                if (cfg.train.loss_kind == loss::LossKind::MSE)
                    out.bound_lines.push_back(
                        bound_to_json(bounds::verify_thm2(snapshot, train_ds), width, seed, epoch)
                            .dump());
                out.bound_lines.push_back(
                    bound_to_json(bounds::verify_cor2(snapshot, train_ds, 1, cfg.train.loss_kind),
                                  width, seed, epoch)
                        .dump());
            }
        };

        bool all_done = true;
        std::vector<int> epochs = cfg.probe_epochs;
        if (epochs.empty() || epochs.back() != final_epoch) epochs.push_back(final_epoch);
        for (int e : epochs) {
            if (!row_done(e, "train")) all_done = false;
            for (data::ProbeKind k : cfg.probe_sets)
                if (!row_done(e, std::string("probe:") + data::probe_kind_name(k))) all_done = false;
        }
        if (all_done) return out;

        if (tcfg.checkpoint_epochs.empty() ||
            tcfg.checkpoint_epochs.back() != final_epoch)
            tcfg.checkpoint_epochs.push_back(final_epoch);
        train::sgd_train(net, train_ds, test_ds, tcfg, hook);
    } catch (const std::exception& e) {
        out.failure = std::to_string(width) + "/" + std::to_string(seed) + ": " + e.what();
    }
    return out;
}

int worker_count(const SweepConfig& cfg, int num_cells) {
    int n = cfg.workers > 0 ? cfg.workers
                            : static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("LIPSCAN_WORKERS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) n = std::min(n, cap);
    }
    return std::min(n, std::max(1, num_cells));
}

bool canonical_less(const ProbeReport& a, const ProbeReport& b) {
    return std::tie(a.width, a.seed, a.epoch, a.split) <
           std::tie(b.width, b.seed, b.epoch, b.split);
}

} // namespace

void validate(const SweepConfig& cfg) {
    if (cfg.widths.empty()) throw ConfigError("sweep: width list is empty");
    for (size_t i = 1; i < cfg.widths.size(); ++i)
        if (cfg.widths[i] <= cfg.widths[i - 1])
            throw ConfigError("sweep: widths must be strictly increasing");
    if (cfg.widths.front() < 1) throw ConfigError("sweep: widths must be positive");
    if (cfg.seeds.empty()) throw ConfigError("sweep: seeds list is empty");
    if (cfg.family != "mlp" && cfg.family != "convnet")
        throw ConfigError("sweep: unknown family '" + cfg.family + "'");
    for (int e : cfg.probe_epochs)
        if (e < 0 || e > cfg.train.epochs)
            throw ConfigError("sweep: probe epoch outside the training range");
}

nn::Network build_family_member(const SweepConfig& cfg, int width, std::uint64_t seed) {
    nn::Network net =
        cfg.family == "convnet"
            ? nn::build_convnet(width, cfg.dataset.dim, cfg.dataset.classes)
            : nn::build_mlp({cfg.dataset.dim, width}, cfg.dataset.classes);
    nn::init_params(net, seed);
    return net;
}

std::string csv_header() {
    std::string out;
    for (size_t i = 0; i < kCsvColumns.size(); ++i) {
        if (i) out += ',';
        out += kCsvColumns[i];
    }
    return out + "\n";
}

std::string csv_row(const ProbeReport& r) {
    std::ostringstream os;
    os << r.width << ',' << r.params << ',' << r.seed << ',' << r.epoch << ',' << r.split << ','
       << fmt(r.train_err) << ',' << fmt(r.test_err) << ',' << fmt(r.train_loss) << ','
       << fmt(r.test_loss) << ',' << fmt(r.emp_lipschitz) << ',' << fmt(r.emp_lipschitz_max)
       << ',' << fmt(r.lip_upper) << ',' << fmt(r.loss_jac_norm_sq) << ','
       << fmt(r.param_grad_norm_sq) << ',' << fmt(r.hessian_trace) << ','
       << fmt(r.hessian_trace_stderr) << ',' << fmt(r.lambda_max_H) << ',' << fmt(r.lambda_min_H)
       << ',' << (r.lambda_min_nonzero_H ? fmt(*r.lambda_min_nonzero_H) : std::string()) << ','
       << fmt(r.noise_top_eig) << ',' << fmt(r.confidence) << ',' << fmt(r.stability_margin)
       << ',' << '"' << dist_json(r.dist_from_init) << '"' << ',' << fmt(r.wall_s) << '\n';
    return os.str();
}

std::vector<ProbeReport> load_results_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<ProbeReport> rows;
    std::string line;
    if (!std::getline(in, line)) return rows;
    if (split_csv_line(line) != kCsvColumns)
        throw ParseError(path + ": unexpected results.csv header");
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != kCsvColumns.size())
            throw ParseError(path + ":" + std::to_string(lineno) + ": wrong field count");
        ProbeReport r;
        r.width = std::atoi(f[0].c_str());
        r.params = std::atoll(f[1].c_str());
        r.seed = std::strtoull(f[2].c_str(), nullptr, 10);
        r.epoch = std::atoi(f[3].c_str());
        r.split = f[4];
        r.train_err = parse_double(f[5]);
        r.test_err = parse_double(f[6]);
        r.train_loss = parse_double(f[7]);
        r.test_loss = parse_double(f[8]);
        r.emp_lipschitz = parse_double(f[9]);
        r.emp_lipschitz_max = parse_double(f[10]);
        r.lip_upper = parse_double(f[11]);
        r.loss_jac_norm_sq = parse_double(f[12]);
        r.param_grad_norm_sq = parse_double(f[13]);
        r.hessian_trace = parse_double(f[14]);
        r.hessian_trace_stderr = parse_double(f[15]);
        r.lambda_max_H = parse_double(f[16]);
        r.lambda_min_H = parse_double(f[17]);
        if (!f[18].empty()) r.lambda_min_nonzero_H = parse_double(f[18]);
        r.noise_top_eig = parse_double(f[19]);
        r.confidence = parse_double(f[20]);
        r.stability_margin = parse_double(f[21]);
        try {
            for (const json& v : json::parse(f[22])) r.dist_from_init.push_back(v.get<double>());
        } catch (const json::exception&) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": bad dist_init_json");
        }
        r.wall_s = parse_double(f[23]);
        rows.push_back(std::move(r));
    }
    return rows;
}

SweepResult run_sweep(const SweepConfig& cfg) {
    validate(cfg);
    fs::create_directories(cfg.out_dir);
    const std::string csv_path = (fs::path(cfg.out_dir) / "results.csv").string();
    const std::string jsonl_path = (fs::path(cfg.out_dir) / "bounds.jsonl").string();

    // shared dataset across all cells
    const nn::Shape shape = cfg.family == "convnet"
                                ? nn::Shape{cfg.dataset.dim, 16, 16}
                                : nn::Shape{cfg.dataset.dim, 1, 1};
    data::BlobsSplit blobs = data::gen_blobs(static_cast<int>(cfg.dataset.n), shape,
                                             cfg.dataset.classes, cfg.dataset.separation,
                                             cfg.dataset.seed);
    const data::Dataset train_ds =
        data::corrupt_labels(blobs.train, cfg.dataset.noise_fraction, cfg.dataset.seed);
    const data::Dataset& test_ds = blobs.test;

    SweepResult result;
    std::set<std::tuple<int, std::uint64_t, int, std::string>> done_rows;
    bool fresh_file = true;
    if (fs::exists(csv_path)) {
        for (ProbeReport& r : load_results_csv(csv_path)) {
            done_rows.insert({r.width, r.seed, r.epoch, r.split});
            result.rows.push_back(std::move(r));
        }
        fresh_file = false;
    }

    struct Cell {
        int width;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (int w : cfg.widths)
        for (std::uint64_t s : cfg.seeds) cells.push_back({w, s});

    std::vector<CellOutput> outputs(cells.size());
    std::vector<char> ready(cells.size(), 0);
    std::atomic<size_t> next{0};
    std::mutex commit_mu;
    size_t committed = 0;

    std::ofstream csv(csv_path, std::ios::app);
    std::ofstream jsonl(jsonl_path, std::ios::app);
    if (!csv || !jsonl) throw IoError("cannot open sweep output files in " + cfg.out_dir);
    if (fresh_file) csv << csv_header();

    // flush completed cells strictly in canonical order so the file layout
    // does not depend on worker scheduling
    auto commit = [&]() {
        std::lock_guard<std::mutex> lock(commit_mu);
        while (committed < cells.size() && ready[committed]) {
            for (const ProbeReport& r : outputs[committed].rows) csv << csv_row(r);
            for (const std::string& l : outputs[committed].bound_lines) jsonl << l << '\n';
            csv.flush();
            jsonl.flush();
            ++committed;
        }
    };

    auto work = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            outputs[i] = run_cell(cfg, cells[i].width, cells[i].seed, train_ds, test_ds, done_rows);
            {
                std::lock_guard<std::mutex> lock(commit_mu);
                ready[i] = 1;
            }
            commit();
        }
    };

    const int nw = worker_count(cfg, static_cast<int>(cells.size()));
    if (nw <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nw; ++i) pool.emplace_back(work);
        for (std::thread& t : pool) t.join();
    }
    commit();

    for (CellOutput& out : outputs) {
        if (!out.failure.empty()) result.failures.push_back(out.failure);
        for (ProbeReport& r : out.rows) result.rows.push_back(std::move(r));
    }
    std::sort(result.rows.begin(), result.rows.end(), canonical_less);

    if (result.failures.size() * 10 > cells.size()) {
        std::string msg = "sweep: more than 10% of cells failed:";
        for (const std::string& f : result.failures) msg += "\n  " + f;
        throw Error(msg);
    }
    result.threshold_per_seed = find_interpolation_threshold(result, cfg);
    return result;
}

std::map<std::uint64_t, std::optional<int>> find_interpolation_threshold(
    const SweepResult& result, const SweepConfig& cfg) {
    std::map<std::uint64_t, std::optional<int>> out;
    for (std::uint64_t s : cfg.seeds) {
        std::optional<int> omega0;
        for (const ProbeReport& r : result.rows) {
            if (r.seed != s || r.epoch != cfg.train.epochs || r.split != "train") continue;
            if (r.train_err == 0.0 && (!omega0 || r.width < *omega0)) omega0 = r.width;
        }
        out[s] = omega0;
    }
    return out;
}

double metric_value(const ProbeReport& r, const std::string& metric) {
    if (metric == "train_err") return r.train_err;
    if (metric == "test_err") return r.test_err;
    if (metric == "train_loss") return r.train_loss;
    if (metric == "test_loss") return r.test_loss;
    if (metric == "emp_lipschitz") return r.emp_lipschitz;
    if (metric == "emp_lipschitz_max") return r.emp_lipschitz_max;
    if (metric == "lip_upper") return r.lip_upper;
    if (metric == "loss_jac_norm_sq") return r.loss_jac_norm_sq;
    if (metric == "param_grad_norm_sq") return r.param_grad_norm_sq;
    if (metric == "hessian_trace") return r.hessian_trace;
    if (metric == "hessian_trace_stderr") return r.hessian_trace_stderr;
    if (metric == "lambda_max_H") return r.lambda_max_H;
    if (metric == "lambda_min_H") return r.lambda_min_H;
    if (metric == "noise_top_eig") return r.noise_top_eig;
    if (metric == "confidence") return r.confidence;
    if (metric == "stability_margin") return r.stability_margin;
    if (metric == "wall_s") return r.wall_s;
    throw ConfigError("unknown metric '" + metric + "'");
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
        i = j + 1;
    }
    return rank;
}

} // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw InsufficientData("spearman: need two equal-length series of size >= 2");
    const std::vector<double> ra = average_ranks(a);
    const std::vector<double> rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0)
        throw InsufficientData("spearman: constant series has no rank correlation");
    return cov / std::sqrt(va * vb);
}

double correlate(const SweepResult& result, const SweepConfig& cfg, const std::string& metric_a,
                 const std::string& metric_b) {
    if (cfg.widths.size() < 4) throw InsufficientData("correlate: need at least 4 widths");
    double sum = 0.0;
    int count = 0;
    for (std::uint64_t s : cfg.seeds) {
        std::vector<double> a, b;
        for (int w : cfg.widths) {
            for (const ProbeReport& r : result.rows) {
                if (r.seed == s && r.width == w && r.epoch == cfg.train.epochs &&
                    r.split == "train") {
                    a.push_back(metric_value(r, metric_a));
                    b.push_back(metric_value(r, metric_b));
                    break;
                }
            }
        }
        if (a.size() < 4) continue;
        sum += spearman(a, b);
        ++count;
    }
    if (count == 0) throw InsufficientData("correlate: no seed had enough final-epoch rows");
    return sum / count;
}

std::string render_chart_svg(const SweepResult& result, const SweepConfig& cfg,
                             const std::string& metric) {
    const double width_px = 640, height_px = 480;
    const double ml = 70, mr = 20, mt = 30, mb = 50;

    // final-epoch train-split series per seed
    std::map<std::uint64_t, std::vector<std::pair<int, double>>> series;
    double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
    for (const ProbeReport& r : result.rows) {
        if (r.epoch != cfg.train.epochs || r.split != "train") continue;
        const double y = metric_value(r, metric);
        series[r.seed].push_back({r.width, y});
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
    }
    if (series.empty()) throw InsufficientData("chart: no final-epoch rows for " + metric);
    const double xmin = std::log(static_cast<double>(cfg.widths.front()));
    const double xmax = std::log(static_cast<double>(cfg.widths.back()));
    const double yspan = ymax > ymin ? ymax - ymin : 1.0;
    const double xspan = xmax > xmin ? xmax - xmin : 1.0;
    auto px = [&](int w) {
        return ml + (std::log(static_cast<double>(w)) - xmin) / xspan * (width_px - ml - mr);
    };
    auto py = [&](double y) { return height_px - mb - (y - ymin) / yspan * (height_px - mt - mb); };

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_px << "\" height=\""
       << height_px << "\" viewBox=\"0 0 " << width_px << " " << height_px << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << width_px / 2 << "\" y=\"20\" text-anchor=\"middle\">" << metric
       << " vs width (log scale)</text>\n"
       << "<line x1=\"" << ml << "\" y1=\"" << height_px - mb << "\" x2=\"" << width_px - mr
       << "\" y2=\"" << height_px - mb << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
       << height_px - mb << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << ml - 8 << "\" y=\"" << py(ymin) << "\" text-anchor=\"end\" "
       << "data-role=\"y-min\">" << fmt(ymin) << "</text>\n"
       << "<text x=\"" << ml - 8 << "\" y=\"" << py(ymax) + 10 << "\" text-anchor=\"end\" "
       << "data-role=\"y-max\">" << fmt(ymax) << "</text>\n";
    for (int w : cfg.widths)
        os << "<text x=\"" << px(w) << "\" y=\"" << height_px - mb + 18
           << "\" text-anchor=\"middle\">" << w << "</text>\n";

    const std::vector<std::string> palette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                              "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    size_t color = 0;
    std::map<int, std::pair<double, int>> mean_acc;
    for (auto& [seed, pts] : series) {
        std::sort(pts.begin(), pts.end());
        os << "<polyline fill=\"none\" stroke=\"" << palette[color++ % palette.size()]
           << "\" stroke-width=\"1\" points=\"";
        for (auto& [w, y] : pts) {
            os << px(w) << "," << py(y) << " ";
            mean_acc[w].first += y;
            mean_acc[w].second += 1;
        }
        os << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"2\" points=\"";
    for (auto& [w, acc] : mean_acc) os << px(w) << "," << py(acc.first / acc.second) << " ";
    os << "\"/>\n</svg>\n";
    return os.str();
}

void emit_reports(const SweepResult& result, const SweepConfig& cfg, const std::string& dir) {
    fs::create_directories(dir);
    {
        std::ofstream csv(fs::path(dir) / "results.csv", std::ios::trunc);
        if (!csv) throw IoError("cannot write results.csv in " + dir);
        csv << csv_header();
        for (const ProbeReport& r : result.rows) csv << csv_row(r);
    }
    const std::vector<std::string> metrics = {
        "train_err",     "test_err",      "emp_lipschitz", "emp_lipschitz_max",
        "lip_upper",     "hessian_trace", "lambda_max_H",  "noise_top_eig",
        "confidence",    "stability_margin"};
    for (const std::string& m : metrics) {
        std::ofstream svg(fs::path(dir) / (m + ".svg"), std::ios::trunc);
        if (!svg) throw IoError("cannot write chart for " + m);
        svg << render_chart_svg(result, cfg, m);
    }
}

} // namespace lipscan::sweep
