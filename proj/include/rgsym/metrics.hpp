#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rgsym/cumulants.hpp"

namespace rgsym {

/// Density values on a uniform grid. Histograms and reconstructions share
/// the grid x_j = (j - n/2) dx with dx = pi / t_max.
struct DensityGrid {
    std::vector<double> x;
    std::vector<double> p;
    double bin_width = 0.0;
    /// Mass removed by clipping negative lobes (reconstructions only).
    double clipped_mass = 0.0;
    /// Samples that fell outside the grid and were assigned to the edge bins.
    std::size_t out_of_range = 0;

    std::size_t size() const noexcept { return p.size(); }
    double mass(std::size_t i) const noexcept { return p[i] * bin_width; }
    double total_mass() const noexcept;
    bool same_grid(const DensityGrid& o) const noexcept;
};

constexpr double kDefaultTmax = 80.0;
constexpr int kDefaultFreqs = 1 << 13;
constexpr double kKlFloor = 1e-12;
/// Fraction of clipped mass above which a reconstruction is flagged.
constexpr double kClipWarn = 0.01;

/// Empty grid of n_freq points conjugate to [-t_max, t_max].
DensityGrid make_grid(double t_max = kDefaultTmax, int n_freq = kDefaultFreqs);

/// Inverts phi(t) = exp(sum_{r<=4} kappa_r (it)^r / r!) onto `make_grid`.
/// Negative lobes are clipped and the result renormalised. Throws
/// CumulantExpansionInvalid when Re log phi leaves the double range.
DensityGrid reconstruct_density(const CumulantSet& c, double t_max = kDefaultTmax, int n_freq = kDefaultFreqs);

/// Histogram density of 1-d samples on `grid`; each sample goes to the
/// nearest grid point.
DensityGrid histogram_on_grid(std::span<const double> samples, const DensityGrid& grid);
DensityGrid histogram_on_grid(std::span<const double> samples, double t_max = kDefaultTmax,
                              int n_freq = kDefaultFreqs);

/// sum_i p_i ln(p_i / q_i) over bin masses after flooring both at `floor`
/// and renormalising.
double kl_divergence(const DensityGrid& p, const DensityGrid& q, double floor = kKlFloor);

/// -sum_i m_i ln m_i over bin masses (0 ln 0 = 0).
double shannon_entropy(const DensityGrid& p);

struct MetricReport {
    double d_kl = 0.0;
    double entropy = 0.0;
    /// Empty when the entropy is too small for the ratio to mean anything.
    std::optional<double> d_kl_normalised;
    /// order -> signed percent; empty optional where the truth is zero.
    std::map<int, std::optional<double>> cumulant_deviation_pct;
    std::vector<std::string> flags;

    /// Flags joined with ';' for CSV output.
    std::string flag_string() const;
};

/// D_KL(p_net || p_gt) / H(p_net).
MetricReport normalised_kl(const DensityGrid& p_net, const DensityGrid& p_gt, double floor = kKlFloor);

/// 100 (observed_r - truth_r) / truth_r for r = 1..4 (and 5 when both carry
/// fifth cumulants). Orders with |truth_r| below `zero_tol` are undefined.
std::map<int, std::optional<double>> cumulant_deviation(const CumulantSet& observed, const CumulantSet& truth,
                                                        double zero_tol = 1e-15);

void to_json(nlohmann::json& j, const MetricReport& r);
void to_json(nlohmann::json& j, const DensityGrid& g);

}  // namespace rgsym
