#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lipscan/probes.hpp"
#include "lipscan/train.hpp"

namespace lipscan::sweep {

using linalg::PowerConfig;
using probes::HutchinsonConfig;
using probes::ProbeReport;

struct DatasetSpec {
    Eigen::Index n = 500;
    int dim = 20;
    int classes = 2;
    double separation = 3.0;
    double noise_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct SweepConfig {
    std::string family = "mlp"; // "mlp" | "convnet"
    std::vector<int> widths;    // strictly increasing
    DatasetSpec dataset;
    train::TrainConfig train;
    std::vector<int> probe_epochs; // probes run at these epochs (0 = pre-training)
    PowerConfig power;
    HutchinsonConfig hutchinson;
    int lanczos_k = 30;
    double zero_tol = 1e-6;
    int noise_batch = 32;
    int noise_draws = 16;
    std::vector<std::uint64_t> seeds;
    std::string out_dir = "sweep_out";
    int workers = 0; // 0 = available parallelism (capped by LIPSCAN_WORKERS)
    // extra Lipschitz rows measured on synthetic probe inputs, tagged
    // split = probe:<kind> in the CSV
    std::vector<data::ProbeKind> probe_sets;
    Eigen::Index probe_set_size = 200;
};

struct SweepResult {
    std::vector<ProbeReport> rows; // canonical (width, seed, epoch) order
    std::map<std::uint64_t, std::optional<int>> threshold_per_seed;
    std::vector<std::string> failures; // "<width>/<seed>: message"
};

void validate(const SweepConfig& cfg);

nn::Network build_family_member(const SweepConfig& cfg, int width, std::uint64_t seed);

// trains every (width, seed) cell under a bounded worker pool and probes at
// the scheduled epochs. Rows already present in <out_dir>/results.csv are
// skipped, so a killed sweep resumes where it stopped. Throws if more than
// 10% of cells fail.
SweepResult run_sweep(const SweepConfig& cfg);

// smallest width whose final-epoch train error is zero, per seed
std::map<std::uint64_t, std::optional<int>> find_interpolation_threshold(
    const SweepResult& result, const SweepConfig& cfg);

// Spearman rank correlation of two final-epoch metrics across widths,
// computed per seed and averaged. Average ranks on ties.
double correlate(const SweepResult& result, const SweepConfig& cfg,
                 const std::string& metric_a, const std::string& metric_b);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

extern const std::vector<std::string> kCsvColumns;

std::string csv_header();
std::string csv_row(const ProbeReport& r);
std::vector<ProbeReport> load_results_csv(const std::string& path);

// results.csv plus per-metric SVG charts (log-x width axis, one polyline per
// seed plus the mean)
void emit_reports(const SweepResult& result, const SweepConfig& cfg, const std::string& dir);

std::string render_chart_svg(const SweepResult& result, const SweepConfig& cfg,
                             const std::string& metric);

double metric_value(const ProbeReport& r, const std::string& metric);

} // namespace lipscan::sweep
