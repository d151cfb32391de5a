#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rgsym/activation.hpp"
#include "rgsym/cumulants.hpp"
#include "rgsym/gnn.hpp"
#include "rgsym/metrics.hpp"
#include "rgsym/mlp.hpp"

namespace rgsym {

enum class TaskKind { gaussian, uniform, gnn_validate, gnn_generalise };

std::string to_string(TaskKind t);
TaskKind parse_task(const std::string& s);

/// One trained-network condition. `weights` is "symmetric", "free", or
/// "frozen" (random weights kept fixed, only spline control values train).
struct Condition {
    std::string weights = "free";
    ActivationKind activation;

    /// "<weights>/<activation>", e.g. "symmetric/quadratic:0.5", "frozen/spline:16".
    static Condition parse(const std::string& descriptor);
    std::string name() const;
    NetworkSpec network(const SplineConfig& spline) const;
};

struct ExperimentConfig {
    TaskKind task = TaskKind::gaussian;
    std::vector<Condition> conditions;
    std::vector<double> variances{0.5, 1.0, 2.0};
    int rg_steps = 10;
    std::size_t n_samples = 1'000'000;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    double uniform_lo = 0.0;
    double uniform_hi = 1.0;
    TrainConfig train;
    SplineConfig spline;
    GnnSpec gnn;
    GnnTrainConfig gnn_train;
    double t_max = kDefaultTmax;
    int n_freq = kDefaultFreqs;
    double kl_floor = kKlFloor;
    std::string output = "results";

    /// Conditions used when `conditions` is empty.
    static std::vector<Condition> default_conditions(TaskKind task,
                                                     const std::vector<double>& leaky_slopes = {1.0, 0.95, 0.5, 0.0});
    void validate() const;
};

void to_json(nlohmann::json& j, const Condition& c);
void from_json(const nlohmann::json& j, Condition& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

struct TrainDiagnostics {
    bool diverged = false;
    std::string message;
    double final_loss = 0.0;
    std::size_t steps = 0;
    /// Largest |residual| of the symmetric exact-solution subspace (tied nets).
    std::optional<double> symmetry_residual;
    /// Spline control-point deviation from a line, fraction of the knot range.
    std::optional<double> spline_nonlinearity;
};

/// One evaluated cell: (condition, seed, variance or RG step).
struct ResultRow {
    std::string condition;
    std::uint64_t seed = 0;
    int rg_step = 0;
    std::optional<double> variance;
    /// D_KL against an independent ground-truth sample; deviations against
    /// the exact decimation of the same inputs.
    MetricReport metrics;
    /// Normalised D_KL against the decimation of the same inputs.
    std::optional<double> d_kl_norm_paired;
    /// Deviations against the analytically scaled source cumulants.
    std::map<int, std::optional<double>> analytic_deviation_pct;
    CumulantSet input_cumulants;
    CumulantSet output_cumulants;
    CumulantSet truth_cumulants;
    TrainDiagnostics train;
};

/// Rows of one (condition, seed) chain in step order; truncated after a
/// divergence.
struct RgTrajectory {
    std::string condition;
    std::uint64_t seed = 0;
    std::vector<ResultRow> steps;
    bool truncated = false;
};

struct ResultTable {
    ExperimentConfig config;
    std::vector<ResultRow> rows;
    std::vector<RgTrajectory> trajectories;
};

/// Seed for a named purpose within a cell. Depends only on the listed
/// coordinates, so adding seeds or conditions never changes existing rows.
std::uint64_t derive_seed(std::uint64_t base, const std::string& purpose, std::uint64_t a = 0, std::uint64_t b = 0);

/// Train on N(0, sigma^2) pairs, evaluate on fresh pairs of the same law.
ResultTable run_gaussian_task(const ExperimentConfig& cfg);

/// Iterated train -> evaluate -> re-pair chains starting from Uniform[lo, hi].
/// Network test outputs and the paired exact chain share their re-pairing
/// permutations; a third, independent exact chain is the D_KL reference.
ResultTable run_uniform_task(const ExperimentConfig& cfg);

/// GNN and linear-MLP chains on the uniform task. With `propagate` the
/// cumulant-propagated predictions are evaluated too ("gnn/propagated",
/// "mlp/propagated"); sampled outputs appear as "gnn/sampled", "mlp/sampled".
ResultTable run_gnn_task(const ExperimentConfig& cfg, bool propagate);
ResultTable run_gnn_validation(const ExperimentConfig& cfg);

/// Dispatches on cfg.task.
ResultTable run_experiment(const ExperimentConfig& cfg);

struct Aggregate {
    std::string condition;
    std::optional<double> variance;
    int rg_step = 0;
    std::size_t n = 0;
    double mean_d_kl_norm = 0.0, sd_d_kl_norm = 0.0;
    std::map<int, std::pair<double, double>> deviation;  // order -> (mean, sd)
    std::size_t diverged = 0;
};

/// Mean and sample standard deviation over seeds per (condition, variance/step).
std::vector<Aggregate> aggregate(const ResultTable& table);

/// Writes results.csv, manifest.json, dkl_vs_variance.csv and
/// deviation_vs_step.csv under `dir`.
void emit_results(const ResultTable& table, const std::filesystem::path& dir);

/// Long-form CSV text (also what emit_results writes to results.csv).
std::string results_csv(const ResultTable& table);
nlohmann::json manifest(const ResultTable& table);

std::string code_version();

}  // namespace rgsym
