#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lipscan/bounds.hpp"
#include "lipscan/sweep.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lipscan;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitData = 4;
constexpr int kExitNumerical = 5;

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// --set a.b.c=value, applied after file parsing
void apply_overrides(json& cfg, const std::vector<std::string>& sets) {
    for (const std::string& s : sets) {
        const size_t eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("override '" + s + "' is not key=value");
        const std::string key = s.substr(0, eq);
        const std::string val = s.substr(eq + 1);
        json* node = &cfg;
        size_t start = 0;
        for (;;) {
            const size_t dot = key.find('.', start);
            const std::string part = key.substr(start, dot - start);
            if (part.empty()) throw ConfigError("override '" + s + "' has an empty key segment");
            if (dot == std::string::npos) {
                json parsed;
                try {
                    parsed = json::parse(val);
                } catch (const json::exception&) {
                    parsed = val; // bare strings stay strings
                }
                (*node)[part] = parsed;
                break;
            }
            node = &(*node)[part];
            if (!node->is_object()) *node = json::object();
            start = dot + 1;
        }
    }
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& path) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown config key '" + (path.empty() ? it.key() : path + "." + it.key()) + "'");
}

void check_schema_version(const json& cfg) {
    if (cfg.contains("schema_version") && cfg["schema_version"].get<int>() != 1)
        throw ConfigError("unsupported schema_version " + cfg["schema_version"].dump());
}

template <typename T>
T field(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj[key].get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

loss::LossKind parse_loss(const std::string& name) {
    if (name == "ce" || name == "cross_entropy") return loss::LossKind::CrossEntropy;
    if (name == "mse") return loss::LossKind::MSE;
    throw ConfigError("unknown loss '" + name + "' (expected ce or mse)");
}

data::ProbeKind parse_probe_kind(const std::string& name) {
    if (name == "uniform_band") return data::ProbeKind::UniformBand;
    if (name == "gaussian") return data::ProbeKind::Gaussian;
    if (name == "sphere") return data::ProbeKind::Sphere;
    if (name == "jitter") return data::ProbeKind::Jitter;
    throw ConfigError("unknown probe set kind '" + name + "'");
}

sweep::DatasetSpec parse_dataset(const json& obj, const std::string& path) {
    reject_unknown(obj, {"n", "dim", "classes", "separation", "noise_fraction", "seed"}, path);
    sweep::DatasetSpec d;
    d.n = field<Eigen::Index>(obj, "n", d.n);
    d.dim = field<int>(obj, "dim", d.dim);
    d.classes = field<int>(obj, "classes", d.classes);
    d.separation = field<double>(obj, "separation", d.separation);
    d.noise_fraction = field<double>(obj, "noise_fraction", d.noise_fraction);
    d.seed = field<std::uint64_t>(obj, "seed", d.seed);
    return d;
}

train::TrainConfig parse_train(const json& obj, const std::string& path) {
    reject_unknown(obj,
                   {"lr", "momentum", "batch_size", "epochs", "warmup_epochs",
                    "warmup_start_factor", "seed", "loss", "checkpoint_epochs", "shuffle"},
                   path);
    train::TrainConfig t;
    t.lr = field<double>(obj, "lr", t.lr);
    t.momentum = field<double>(obj, "momentum", t.momentum);
    t.batch_size = field<int>(obj, "batch_size", t.batch_size);
    t.epochs = field<int>(obj, "epochs", t.epochs);
    t.warmup_epochs = field<int>(obj, "warmup_epochs", t.warmup_epochs);
    t.warmup_start_factor = field<double>(obj, "warmup_start_factor", t.warmup_start_factor);
    t.seed = field<std::uint64_t>(obj, "seed", t.seed);
    if (obj.contains("loss")) t.loss_kind = parse_loss(obj["loss"].get<std::string>());
    t.checkpoint_epochs = field<std::vector<int>>(obj, "checkpoint_epochs", {});
    t.shuffle = field<bool>(obj, "shuffle", t.shuffle);
    return t;
}

// an empty config is valid and describes the smoke sweep
sweep::SweepConfig parse_sweep(const json& cfg) {
    check_schema_version(cfg);
    reject_unknown(cfg,
                   {"schema_version", "family", "widths", "dataset", "train", "probe_epochs",
                    "power", "hutchinson", "lanczos_k", "zero_tol", "noise_batch", "noise_draws",
                    "seeds", "out_dir", "workers", "probe_sets", "probe_set_size"},
                   "");
    sweep::SweepConfig s;
    s.family = field<std::string>(cfg, "family", s.family);
    s.widths = field<std::vector<int>>(cfg, "widths", {2, 8, 32});
    if (cfg.contains("dataset")) s.dataset = parse_dataset(cfg["dataset"], "dataset");
    if (cfg.contains("train")) {
        s.train = parse_train(cfg["train"], "train");
    } else {
        s.train.epochs = 50;
    }
    s.probe_epochs = field<std::vector<int>>(cfg, "probe_epochs", {});
    if (cfg.contains("power")) {
        reject_unknown(cfg["power"], {"rel_tol", "max_iters", "seed"}, "power");
        s.power.rel_tol = field<double>(cfg["power"], "rel_tol", s.power.rel_tol);
        s.power.max_iters = field<int>(cfg["power"], "max_iters", s.power.max_iters);
        s.power.seed = field<std::uint64_t>(cfg["power"], "seed", s.power.seed);
    }
    if (cfg.contains("hutchinson")) {
        reject_unknown(cfg["hutchinson"], {"num_probes", "seed"}, "hutchinson");
        s.hutchinson.num_probes =
            field<int>(cfg["hutchinson"], "num_probes", s.hutchinson.num_probes);
        s.hutchinson.seed = field<std::uint64_t>(cfg["hutchinson"], "seed", s.hutchinson.seed);
    }
    s.lanczos_k = field<int>(cfg, "lanczos_k", s.lanczos_k);
    s.zero_tol = field<double>(cfg, "zero_tol", s.zero_tol);
    s.noise_batch = field<int>(cfg, "noise_batch", s.noise_batch);
    s.noise_draws = field<int>(cfg, "noise_draws", s.noise_draws);
    s.seeds = field<std::vector<std::uint64_t>>(cfg, "seeds", {0});
    s.out_dir = field<std::string>(cfg, "out_dir", s.out_dir);
    s.workers = field<int>(cfg, "workers", s.workers);
    for (const std::string& name : field<std::vector<std::string>>(cfg, "probe_sets", {}))
        s.probe_sets.push_back(parse_probe_kind(name));
    s.probe_set_size = field<Eigen::Index>(cfg, "probe_set_size", s.probe_set_size);
    return s;
}

data::Dataset load_data(const std::string& path, int label_col, int classes,
                        const nn::Network& net) {
    if (!path.empty()) return data::load_csv(path, true, label_col, classes);
    // no file given: synthesize blobs matching the checkpoint geometry
    data::BlobsSplit blobs =
        data::gen_blobs(200, net.input_shape(), net.num_classes(), 3.0, 0);
    return blobs.train;
}

json bound_json(const bounds::BoundReport& b) {
    json j;
    j["bound"] = b.id;
    j["lhs"] = b.lhs;
    j["rhs"] = b.rhs;
    j["slack"] = b.slack;
    j["holds"] = b.holds;
    j["sample_count"] = b.sample_count;
    j["constants"] = b.constants;
    if (!b.notes.empty()) j["notes"] = b.notes;
    return j;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& out_dir) {
    json cfg = load_config(config_path);
    apply_overrides(cfg, sets);
    check_schema_version(cfg);
    reject_unknown(cfg, {"schema_version", "family", "width", "dataset", "train"}, "");

    const std::string family = field<std::string>(cfg, "family", "mlp");
    const int width = field<int>(cfg, "width", 8);
    const sweep::DatasetSpec dspec =
        cfg.contains("dataset") ? parse_dataset(cfg["dataset"], "dataset") : sweep::DatasetSpec{};
    const train::TrainConfig tcfg =
        cfg.contains("train") ? parse_train(cfg["train"], "train") : train::TrainConfig{};

    sweep::SweepConfig scfg;
    scfg.family = family;
    scfg.dataset = dspec;
    nn::Network net = sweep::build_family_member(scfg, width, tcfg.seed);

    const nn::Shape shape =
        family == "convnet" ? nn::Shape{dspec.dim, 16, 16} : nn::Shape{dspec.dim, 1, 1};
    data::BlobsSplit blobs = data::gen_blobs(static_cast<int>(dspec.n), shape, dspec.classes,
                                             dspec.separation, dspec.seed);
    data::Dataset train_ds = data::corrupt_labels(blobs.train, dspec.noise_fraction, dspec.seed);

    fs::create_directories(out_dir);
    train::TrainHistory hist = train::sgd_train(net, train_ds, blobs.test, tcfg);

    nn::CheckpointMeta meta;
    meta.epoch = tcfg.epochs;
    meta.seed = tcfg.seed;
    meta.config_fingerprint = cfg.dump();
    nn::save_checkpoint(net, meta, (fs::path(out_dir) / "checkpoint.bin").string());

    std::ofstream hcsv(fs::path(out_dir) / "history.csv", std::ios::trunc);
    hcsv << "epoch,train_err,train_loss,test_err,test_loss,lr,wall_s\n";
    for (size_t e = 0; e < hist.train_error.size(); ++e)
        hcsv << e + 1 << ',' << hist.train_error[e] << ',' << hist.train_loss[e] << ','
             << hist.test_error[e] << ',' << hist.test_loss[e] << ',' << hist.learning_rate[e]
             << ',' << hist.wall_s[e] << '\n';
    std::cerr << "trained " << family << " width " << width << " for " << tcfg.epochs
              << " epochs; final train err " << hist.train_error.back() << "\n";
    return 0;
}

int cmd_probe(const std::string& ckpt_path, const std::string& data_path, int label_col,
              int classes, const std::vector<std::string>& metrics, std::uint64_t seed) {
    nn::LoadedCheckpoint ckpt = nn::load_checkpoint(ckpt_path);
    const data::Dataset ds = load_data(data_path, label_col, classes, ckpt.net);
    const loss::LossKind kind = loss::LossKind::CrossEntropy;

    std::set<std::string> want(metrics.begin(), metrics.end());
    const bool all = want.empty() || want.count("all");
    auto wanted = [&](const char* m) { return all || want.count(m); };

    linalg::PowerConfig pcfg;
    pcfg.seed = seed;
    json out;
    out["checkpoint"] = ckpt_path;
    out["epoch"] = ckpt.meta.epoch;
    out["num_params"] = ckpt.net.num_params();
    if (wanted("lipschitz")) {
        const probes::LipschitzResult lip = probes::empirical_lipschitz(ckpt.net, ds, pcfg);
        out["emp_lipschitz"] = lip.aggregate;
        out["emp_lipschitz_mean"] = lip.mean;
        out["emp_lipschitz_median"] = lip.median;
        out["emp_lipschitz_max"] = lip.max;
        out["skipped_samples"] = lip.skipped;
    }
    if (wanted("upper_bound")) out["lip_upper"] = probes::lipschitz_upper_bound(ckpt.net, pcfg);
    if (wanted("norms")) {
        out["loss_jac_norm_sq"] = probes::loss_jacobian_norm(ckpt.net, ds, kind).mean_sq;
        out["param_grad_norm_sq"] = probes::param_grad_norm(ckpt.net, ds, kind).mean_sq;
    }
    if (wanted("hessian")) {
        const probes::TraceEstimate tr =
            probes::hessian_trace(ckpt.net, ds, kind, probes::HutchinsonConfig{100, seed});
        out["hessian_trace"] = tr.trace;
        out["hessian_trace_stderr"] = tr.stderr_;
        const probes::HessianExtremes ext =
            probes::hessian_extremes(ckpt.net, ds, kind, 30, 1e-6, seed);
        out["lambda_max_H"] = ext.lambda_max;
        out["lambda_min_H"] = ext.lambda_min;
        if (ext.lambda_min_nonzero) out["lambda_min_nonzero_H"] = *ext.lambda_min_nonzero;
    }
    if (wanted("noise"))
        out["noise_top_eig"] = probes::noise_covariance_top(
            ckpt.net, ds, kind, std::min<int>(32, static_cast<int>(ds.size())), 16, seed, pcfg);
    if (wanted("confidence")) out["confidence"] = loss::confidence(ckpt.net, ds);
    if (wanted("distance")) out["dist_from_init"] = probes::distance_from_init(ckpt.net);
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_verify(const std::string& ckpt_path, const std::string& data_path, int label_col,
               int classes, const std::vector<std::string>& which, const std::string& loss_name) {
    const loss::LossKind kind = parse_loss(loss_name);
    nn::LoadedCheckpoint ckpt = nn::load_checkpoint(ckpt_path);
    const data::Dataset ds = load_data(data_path, label_col, classes, ckpt.net);
    const linalg::PowerConfig pcfg;

    std::vector<std::string> bounds_list = which;
    if (bounds_list.empty()) bounds_list = {"thm1", "cor1", "cor2", "duality"};
    bool all_hold = true;
    for (const std::string& b : bounds_list) {
        if (b == "thm1") {
            const bounds::BoundReport r = bounds::verify_thm1(ckpt.net, ds, pcfg);
            all_hold = all_hold && r.holds;
            std::cout << bound_json(r).dump() << "\n";
        } else if (b == "cor1") {
            const bounds::BoundReport r =
                bounds::verify_cor1(ckpt.net, ds, kind, pcfg);
            all_hold = all_hold && r.holds;
            std::cout << bound_json(r).dump() << "\n";
        } else if (b == "thm2") {
            const bounds::BoundReport r = bounds::verify_thm2(ckpt.net, ds, kind);
            all_hold = all_hold && r.holds;
            std::cout << bound_json(r).dump() << "\n";
        } else if (b == "cor2") {
            const bounds::BoundReport r =
                bounds::verify_cor2(ckpt.net, ds, 1, kind);
            all_hold = all_hold && r.holds;
            std::cout << bound_json(r).dump() << "\n";
        } else if (b == "duality") {
            for (size_t l = 0; l < ckpt.net.layers().size(); ++l) {
                if (!std::holds_alternative<nn::DenseSpec>(ckpt.net.layers()[l])) continue;
                double worst = 0.0;
                for (Eigen::Index n = 0; n < std::min<Eigen::Index>(ds.size(), 8); ++n)
                    worst = std::max(worst, bounds::verify_layer_duality(
                                                ckpt.net, ds.sample(n), static_cast<int>(l)));
                json j;
                j["bound"] = "duality";
                j["layer"] = l;
                j["max_residual"] = worst;
                j["holds"] = worst <= 1e-9;
                all_hold = all_hold && worst <= 1e-9;
                std::cout << j.dump() << "\n";
            }
        } else {
            throw ConfigError("unknown bound '" + b + "'");
        }
    }
    return all_hold ? 0 : kExitNumerical;
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& sets) {
    json cfg = load_config(config_path);
    apply_overrides(cfg, sets);
    const sweep::SweepConfig scfg = parse_sweep(cfg);
    std::cerr << "sweep: " << scfg.widths.size() << " widths x " << scfg.seeds.size()
              << " seeds -> " << scfg.out_dir << "\n";
    const sweep::SweepResult result = sweep::run_sweep(scfg);
    sweep::emit_reports(result, scfg, scfg.out_dir);
    for (const auto& [seed, omega0] : result.threshold_per_seed)
        std::cerr << "seed " << seed << ": interpolation threshold "
                  << (omega0 ? std::to_string(*omega0) : std::string("absent")) << "\n";
    for (const std::string& f : result.failures) std::cerr << "failed cell " << f << "\n";
    return 0;
}

int cmd_report(const std::string& in_csv, const std::string& out_dir,
               const std::vector<std::string>& metrics) {
    sweep::SweepResult result;
    result.rows = sweep::load_results_csv(in_csv);
    if (result.rows.empty()) throw EmptyDataset("no rows in " + in_csv);

    // reconstruct just enough config for chart axes
    sweep::SweepConfig cfg;
    std::set<int> widths;
    std::set<std::uint64_t> seeds;
    int final_epoch = 0;
    for (const auto& r : result.rows) {
        widths.insert(r.width);
        seeds.insert(r.seed);
        final_epoch = std::max(final_epoch, r.epoch);
    }
    cfg.widths.assign(widths.begin(), widths.end());
    cfg.seeds.assign(seeds.begin(), seeds.end());
    cfg.train.epochs = final_epoch;

    fs::create_directories(out_dir);
    std::vector<std::string> list = metrics;
    if (list.empty()) list = {"train_err", "test_err", "emp_lipschitz", "lip_upper"};
    for (const std::string& m : list) {
        std::ofstream svg(fs::path(out_dir) / (m + ".svg"), std::ios::trunc);
        if (!svg) throw IoError("cannot write chart for " + m);
        svg << sweep::render_chart_svg(result, cfg, m);
        std::cerr << "wrote " << (fs::path(out_dir) / (m + ".svg")).string() << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"piece-wise linear network smoothness measurement toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", ckpt_path, data_path, in_csv;
    std::vector<std::string> sets, metrics, bounds_list;
    int label_col = 0, classes = 0;
    std::uint64_t seed = 0;

    CLI::App* c_train = app.add_subcommand("train", "train one network and save a checkpoint");
    c_train->add_option("--config", config_path, "JSON config");
    c_train->add_option("--set", sets, "dotted-key overrides, key=value");
    c_train->add_option("--out", out_dir, "output directory");

    CLI::App* c_probe = app.add_subcommand("probe", "measure a checkpoint; JSON on stdout");
    c_probe->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    c_probe->add_option("--data", data_path, "CSV dataset (default: synthetic)");
    c_probe->add_option("--label-col", label_col, "label column index");
    c_probe->add_option("--classes", classes, "class count for CSV data");
    c_probe->add_option("--metrics", metrics,
                        "lipschitz,upper_bound,norms,hessian,noise,confidence,distance,all")->delimiter(',');
    c_probe->add_option("--seed", seed, "probe seed");

    CLI::App* c_sweep = app.add_subcommand("sweep", "width sweep; empty config = smoke sweep");
    c_sweep->add_option("--config", config_path, "JSON config");
    c_sweep->add_option("--set", sets, "dotted-key overrides, key=value");

    CLI::App* c_verify =
        app.add_subcommand("verify-bounds", "certify inequalities; JSON lines on stdout");
    c_verify->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    c_verify->add_option("--data", data_path, "CSV dataset (default: synthetic)");
    c_verify->add_option("--label-col", label_col, "label column index");
    c_verify->add_option("--classes", classes, "class count for CSV data");
    c_verify->add_option("--bounds", bounds_list, "thm1,cor1,thm2,cor2,duality")->delimiter(',');
    std::string verify_loss = "ce";
    c_verify->add_option("--loss", verify_loss, "loss the checkpoint was trained with (ce or mse)");

    CLI::App* c_report = app.add_subcommand("report", "render SVG charts from results.csv");
    c_report->add_option("--in", in_csv, "results.csv path")->required();
    c_report->add_option("--out", out_dir, "output directory");
    c_report->add_option("--metrics", metrics, "metric columns to chart")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (c_train->parsed()) return cmd_train(config_path, sets, out_dir);
        if (c_probe->parsed()) return cmd_probe(ckpt_path, data_path, label_col, classes, metrics, seed);
        if (c_sweep->parsed()) return cmd_sweep(config_path, sets);
        if (c_verify->parsed()) return cmd_verify(ckpt_path, data_path, label_col, classes, bounds_list, verify_loss);
        if (c_report->parsed()) return cmd_report(in_csv, out_dir, metrics);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitData;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const CorruptFile& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const EmptyDataset& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const LabelOutOfRange& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitUsage;
}
