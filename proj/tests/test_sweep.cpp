#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lipscan/sweep.hpp"

using namespace lipscan;
using namespace lipscan::sweep;
namespace fs = std::filesystem;

namespace {

SweepConfig smoke_config(const std::string& out_dir) {
    SweepConfig cfg;
    cfg.widths = {2, 4, 8};
    cfg.seeds = {0};
    cfg.dataset.n = 80;
    cfg.dataset.dim = 5;
    cfg.dataset.classes = 2;
    cfg.dataset.noise_fraction = 0.1;
    cfg.train.epochs = 50;
    cfg.train.batch_size = 32;
    cfg.out_dir = out_dir;
    cfg.hutchinson.num_probes = 20;
    cfg.noise_draws = 4;
    return cfg;
}

std::string fresh_dir(const char* name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p.string();
}

ProbeReport synthetic_row(int width, std::uint64_t seed, int epoch, double train_err,
                          double test_err = 0.0, double lip = 0.0) {
    ProbeReport r;
    r.width = width;
    r.seed = seed;
    r.epoch = epoch;
    r.train_err = train_err;
    r.test_err = test_err;
    r.emp_lipschitz = lip;
    return r;
}

} // namespace

TEST_CASE("spearman matches hand-computed values and handles ties") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    // 5-point example: x = [1,2,3,4,5], y = [2,1,4,3,5] -> d = [1,1,1,1,0],
    // rho = 1 - 6*4 / (5*24) = 0.8
    CHECK(spearman({1, 2, 3, 4, 5}, {2, 1, 4, 3, 5}) == doctest::Approx(0.8));
    // ties get average ranks: y = [1,1,2] ranks to [1.5, 1.5, 3]
    CHECK(spearman({1, 2, 3}, {1, 1, 2}) == doctest::Approx(std::sqrt(3.0) / 2).epsilon(1e-12));
    CHECK_THROWS_AS(spearman({1, 2}, {1}), InsufficientData);
    CHECK_THROWS_AS(spearman({1, 1, 1}, {1, 2, 3}), InsufficientData);
}

TEST_CASE("interpolation threshold is the smallest width with zero final train error") {
    SweepConfig cfg;
    cfg.widths = {2, 4, 8, 16};
    cfg.seeds = {0};
    cfg.train.epochs = 100;

    SweepResult result;
    const std::vector<double> errs = {0.1, 0.05, 0.0, 0.0};
    for (size_t i = 0; i < 4; ++i)
        result.rows.push_back(synthetic_row(cfg.widths[i], 0, 100, errs[i]));
    auto thresholds = find_interpolation_threshold(result, cfg);
    REQUIRE(thresholds.at(0).has_value());
    CHECK(*thresholds.at(0) == 8);

    // nothing interpolates -> absent
    SweepResult none;
    for (size_t i = 0; i < 4; ++i)
        none.rows.push_back(synthetic_row(cfg.widths[i], 0, 100, 0.01));
    CHECK_FALSE(find_interpolation_threshold(none, cfg).at(0).has_value());
}

TEST_CASE("correlate averages per-seed Spearman over final-epoch rows") {
    SweepConfig cfg;
    cfg.widths = {1, 2, 3, 4};
    cfg.seeds = {0, 1};
    cfg.train.epochs = 10;
    SweepResult result;
    for (std::uint64_t s : cfg.seeds)
        for (int w : cfg.widths)
            result.rows.push_back(synthetic_row(w, s, 10, 0.0, w * 0.1, s == 0 ? w * 1.0 : -w * 1.0));
    // seed 0: lip and test_err both increase (+1); seed 1: opposite (-1)
    CHECK(correlate(result, cfg, "emp_lipschitz", "test_err") == doctest::Approx(0.0));
    cfg.widths = {1, 2, 3};
    CHECK_THROWS_AS(correlate(result, cfg, "emp_lipschitz", "test_err"), InsufficientData);
}

TEST_CASE("csv schema is stable and rows survive a write/parse round trip") {
    CHECK(csv_header() ==
          "width,params,seed,epoch,split,train_err,test_err,train_loss,test_loss,emp_lipschitz,"
          "emp_lipschitz_max,lip_upper,loss_jac_norm_sq,param_grad_norm_sq,hessian_trace,"
          "hessian_trace_stderr,lambda_max_H,lambda_min_H,lambda_min_nonzero_H,noise_top_eig,"
          "confidence,stability_margin,dist_init_json,wall_s\n");

    ProbeReport r = synthetic_row(16, 3, 200, 0.125);
    r.params = 1234;
    r.split = "probe:sphere";
    r.emp_lipschitz = 1.0 / 3.0; // needs full mantissa round-trip
    r.lambda_min_nonzero_H = 5e-17;
    r.dist_from_init = {0.5, 0.25};
    r.wall_s = 1.5;

    const std::string path =
        (fs::path(fresh_dir("lipscan_csv_rt")) / "results.csv").string();
    fs::create_directories(fs::path(path).parent_path());
    {
        std::ofstream f(path);
        f << csv_header() << csv_row(r);
    }
    const std::vector<ProbeReport> rows = load_results_csv(path);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].width == 16);
    CHECK(rows[0].params == 1234);
    CHECK(rows[0].seed == 3);
    CHECK(rows[0].split == "probe:sphere");
    CHECK(rows[0].emp_lipschitz == r.emp_lipschitz); // bit-exact via %.17g
    REQUIRE(rows[0].lambda_min_nonzero_H.has_value());
    CHECK(*rows[0].lambda_min_nonzero_H == 5e-17);
    CHECK(rows[0].dist_from_init == std::vector<double>{0.5, 0.25});

    // a row without the optional eigenvalue keeps the field empty
    ProbeReport r2 = synthetic_row(2, 0, 1, 0.0);
    CHECK(csv_row(r2).find(",,") != std::string::npos);
}

TEST_CASE("config validation rejects malformed sweeps") {
    SweepConfig cfg = smoke_config(fresh_dir("lipscan_cfg"));
    validate(cfg);
    cfg.widths = {4, 4};
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg.widths = {8, 4};
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = smoke_config(fresh_dir("lipscan_cfg"));
    cfg.seeds = {};
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = smoke_config(fresh_dir("lipscan_cfg"));
    cfg.family = "transformer";
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = smoke_config(fresh_dir("lipscan_cfg"));
    cfg.probe_epochs = {999};
    CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("a smoke sweep fills the whole result matrix and persists it") {
    const std::string dir = fresh_dir("lipscan_smoke_sweep");
    SweepConfig cfg = smoke_config(dir);
    cfg.probe_epochs = {0, 50};
    cfg.probe_sets = {data::ProbeKind::Sphere};
    const SweepResult result = run_sweep(cfg);
    CHECK(result.failures.empty());
    // 3 widths x 1 seed x 2 epochs x (train row + probe row)
    CHECK(result.rows.size() == 12);
    for (const ProbeReport& r : result.rows) {
        CHECK(r.lip_upper >= r.emp_lipschitz_max * (1 - 1e-9));
        if (r.split == "train") CHECK(r.params > 0);
    }
    const std::vector<ProbeReport> persisted =
        load_results_csv((fs::path(dir) / "results.csv").string());
    CHECK(persisted.size() == result.rows.size());
    CHECK(fs::exists(fs::path(dir) / "bounds.jsonl"));

    // a single-width list degenerates to one train+probe cell
    const std::string dir1 = fresh_dir("lipscan_single_sweep");
    SweepConfig single = smoke_config(dir1);
    single.widths = {4};
    single.probe_sets.clear();
    const SweepResult one = run_sweep(single);
    CHECK(one.rows.size() == 1);
}

TEST_CASE("resuming a killed sweep reproduces exactly the missing rows") {
    const std::string dir_full = fresh_dir("lipscan_resume_full");
    SweepConfig cfg = smoke_config(dir_full);
    run_sweep(cfg);
    std::ifstream f((fs::path(dir_full) / "results.csv").string());
    std::vector<std::string> full_lines;
    for (std::string l; std::getline(f, l);) full_lines.push_back(l);
    REQUIRE(full_lines.size() == 4); // header + 3 rows

    // simulate a crash after the first completed cell
    const std::string dir_part = fresh_dir("lipscan_resume_part");
    fs::create_directories(dir_part);
    {
        std::ofstream out((fs::path(dir_part) / "results.csv").string());
        out << full_lines[0] << "\n" << full_lines[1] << "\n";
    }
    cfg.out_dir = dir_part;
    const SweepResult resumed = run_sweep(cfg);
    CHECK(resumed.rows.size() == 3);

    std::ifstream g((fs::path(dir_part) / "results.csv").string());
    std::vector<std::string> resumed_lines;
    for (std::string l; std::getline(g, l);) resumed_lines.push_back(l);
    REQUIRE(resumed_lines.size() == 4);
    // identical up to the wall-time column
    for (size_t i = 0; i < 4; ++i) {
        const std::string a = full_lines[i].substr(0, full_lines[i].rfind(','));
        const std::string b = resumed_lines[i].substr(0, resumed_lines[i].rfind(','));
        CHECK(a == b);
    }
}

TEST_CASE("charts are well-formed XML whose y-axis labels span the data exactly") {
    const std::string dir = fresh_dir("lipscan_chart_sweep");
    SweepConfig cfg = smoke_config(dir);
    cfg.seeds = {0, 1};
    const SweepResult result = run_sweep(cfg);
    const std::string svg = render_chart_svg(result, cfg, "emp_lipschitz");

    CHECK(svg.rfind("<?xml", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    // every open tag is closed or self-closing; cheap well-formedness proxy
    CHECK(std::count(svg.begin(), svg.end(), '<') == std::count(svg.begin(), svg.end(), '>'));

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const ProbeReport& r : result.rows) {
        if (r.epoch != cfg.train.epochs || r.split != "train") continue;
        lo = std::min(lo, r.emp_lipschitz);
        hi = std::max(hi, r.emp_lipschitz);
    }
    auto label = [&](const char* role) {
        const std::string needle = std::string("data-role=\"") + role + "\">";
        const size_t at = svg.find(needle);
        REQUIRE(at != std::string::npos);
        const size_t start = at + needle.size();
        return std::stod(svg.substr(start, svg.find('<', start) - start));
    };
    CHECK(label("y-min") == doctest::Approx(lo).epsilon(1e-12));
    CHECK(label("y-max") == doctest::Approx(hi).epsilon(1e-12));

    emit_reports(result, cfg, dir + "/report");
    CHECK(fs::exists(fs::path(dir + "/report") / "emp_lipschitz.svg"));
    CHECK(fs::exists(fs::path(dir + "/report") / "results.csv"));
}
