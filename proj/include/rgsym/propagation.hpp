#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rgsym/activation.hpp"
#include "rgsym/cumulants.hpp"

namespace rgsym {

/// z = W y + b with W stored row-major (out x in).
struct AffineLayer {
    int in = 0;
    int out = 0;
    std::vector<double> weight;
    std::vector<double> bias;

    AffineLayer() = default;
    AffineLayer(int in_dim, int out_dim, std::vector<double> w, std::vector<double> b = {});
    void validate() const;
    double w(int i, int j) const { return weight[static_cast<std::size_t>(i) * in + j]; }
};

/// SAGEConv-style layer: z_u = W_self h_u + W_neigh sum_{v in N(u)} h_v + b.
struct GnnLayer {
    int in = 0;
    int out = 0;
    std::vector<double> w_self;
    std::vector<double> w_neigh;
    std::vector<double> bias;

    GnnLayer() = default;
    GnnLayer(int in_dim, int out_dim, std::vector<double> ws, std::vector<double> wn, std::vector<double> b = {});
    void validate() const;
};

/// Directed in-neighbour lists, indexed by node id.
struct NeighborhoodSpec {
    std::vector<std::vector<int>> in_neighbors;
    bool allow_self_loops = false;

    void validate() const;
};

/// Exact cumulant pushforward through an affine map. Bias enters order 1 only.
CumulantSet propagate_affine(const CumulantSet& c, const AffineLayer& layer);

/// Post-activation means for phi(z) = z + alpha z^2.
std::vector<double> quad_mean(std::span<const double> mu_z, std::span<const double> sigma_z, double alpha);

/// Post-activation covariance for phi(z) = z + alpha z^2 in terms of the
/// preactivation cumulants up to order four. g3 and g4 must be symmetric.
std::vector<double> quad_covariance(std::span<const double> mu_z, std::span<const double> sigma_z,
                                    std::span<const double> g3_z, std::span<const double> g4_z, double alpha);

/// An MLP reduced to what the statistical model needs: the affine layers and
/// the activation applied after every layer but the last.
struct MlpModel {
    std::vector<AffineLayer> layers;
    ActivationKind activation;

    /// Sample-level forward pass (used by the Monte-Carlo fallback and tests).
    std::vector<double> apply(std::span<const double> x) const;
    SampleMatrix apply(const SampleMatrix& x) const;
};

struct PropagationOptions {
    /// Highest output order the caller needs (1..4).
    int required_order = 4;
    /// Input samples used to estimate post-quadratic orders 3..4 when a
    /// downstream layer needs them. Without samples those orders are dropped.
    const SampleMatrix* fallback_samples = nullptr;
};

struct TraceEntry {
    std::string label;
    CumulantSet cumulants;
    /// Orders 1..valid_order are meaningful; higher orders are zero-filled.
    int valid_order = 4;
    bool monte_carlo = false;
};

struct PropagationResult {
    CumulantSet output;
    int valid_order = 4;
    bool monte_carlo_fallback = false;
    std::vector<TraceEntry> trace;
};

/// Composes `propagate_affine` with the activation's interaction functions.
/// Identity activations pass cumulants through; quadratic activations give
/// exact orders 1..2. Any other activation throws UnsupportedActivation.
PropagationResult propagate_mlp(const CumulantSet& c, const MlpModel& net, const PropagationOptions& opts = {});

/// Layerwise GNN propagation assuming nodes are independent: no cross-node
/// cumulants are tracked.
std::map<int, CumulantSet> propagate_gnn(const std::map<int, CumulantSet>& node_cumulants,
                                         std::span<const GnnLayer> layers, const NeighborhoodSpec& nbrs);

struct ClassStats {
    double p = 0.0;
    std::vector<double> mu;
    std::vector<double> sigma;  // row-major d x d
    std::vector<double> target;
};

/// sum_t p(t) (tr Sigma_t + |mu_t - t|^2).
double expected_mse_loss(std::span<const ClassStats> classes);

void to_json(nlohmann::json& j, const TraceEntry& e);
void to_json(nlohmann::json& j, const PropagationResult& r);

}  // namespace rgsym
