#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "rgsym/cumulants.hpp"
#include "rgsym/rng.hpp"

namespace rgsym {

struct RgStepConfig {
    int step_index = 0;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
};

/// Law of the i.i.d. site variables fed to the first RG step.
struct SourceDistribution {
    enum class Kind { gaussian, uniform };
    Kind kind = Kind::uniform;
    double variance = 1.0;  // gaussian, centred
    double lo = 0.0;        // uniform
    double hi = 1.0;

    static SourceDistribution gaussian(double variance);
    static SourceDistribution uniform(double lo, double hi);

    void validate() const;
    double draw(CounterRng& rng) const;
    /// Exact cumulants kappa_1..kappa_5 of one site variable.
    std::array<double, 5> exact_cumulants() const;
    std::string describe() const;
};

/// Row-wise (x1 + x2) / sqrt(2).
SampleMatrix decimate(const SampleMatrix& pairs);

/// kappa_r after one decimation step: 2^(1 - r/2) * kappa.
double scale_cumulant(int r, double kappa);

/// Applies `scale_cumulant` per order `steps` times to the 1-d marginal of a
/// diagonal (i.i.d.) input set. Carries the fifth order when present.
CumulantSet ground_truth_cumulants(const CumulantSet& input, int steps);

struct TaskDataset {
    SampleMatrix inputs;   // n x 2
    SampleMatrix targets;  // n x 1
};

/// n_samples input pairs of i.i.d. draws and their decimation targets.
/// Deterministic in (dist, cfg).
TaskDataset make_task_dataset(const SourceDistribution& dist, const RgStepConfig& cfg);

/// Re-pairs outputs for the next RG step: column 0 is outputs under one
/// random permutation, column 1 under an independent one.
SampleMatrix next_step_inputs(const SampleMatrix& outputs, std::uint64_t seed);

struct ConservationReport {
    double normalisation_delta = 0.0;
    double mean_delta = 0.0;      // |mean_after - sqrt(2) mean_before|
    double variance_delta = 0.0;  // |var_after - var_before|
    double tolerance = 0.0;
    bool pass = false;
};

ConservationReport conservation_check(const CumulantSet& before, const CumulantSet& after,
                                      double tolerance);

/// Little-endian binary dump: int32 n, int32 dim, then n*dim float64 row-major.
void write_samples(const std::filesystem::path& path, const SampleMatrix& m);
SampleMatrix read_samples(const std::filesystem::path& path);

}  // namespace rgsym
