#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rgsym/cumulants.hpp"
#include "rgsym/mlp.hpp"
#include "rgsym/propagation.hpp"

namespace rgsym {

/// Linear SAGEConv stack on the two-node graph v -> u with scalar features.
struct GnnSpec {
    int n_layers = 1;    // 1 or 2
    int hidden_dim = 1;  // 1 or 2; used between the layers of a 2-layer net
    bool use_bias = true;

    void validate() const;
    /// Feature width entering/leaving each layer: [1, 1] or [1, h, 1].
    std::vector<int> widths() const;
};

/// Target node u = 0 receives from source node v = 1. Sample rows of a
/// graph batch hold (x_u, x_v).
struct TwoNodeGraph {
    static constexpr int target = 0;
    static constexpr int source = 1;
    static NeighborhoodSpec neighborhood();
    static nlohmann::json topology();
};

struct GnnTrainConfig {
    TrainConfig base;
    double sym_reg_weight = 1e-3;
    double norm_penalty_weight = 1e-3;
    double norm_floor = 0.1;

    void validate() const;
};

struct GnnParams {
    std::vector<GnnLayer> layers;

    /// Flattened as [w_self | w_neigh | bias] per layer.
    std::vector<double> flatten() const;
    void assign(std::span<const double> theta);
    std::size_t size() const;
};

/// Per layer W ~ N(0, sigma_w^2 / fan_in) for both matrices, b ~ N(0, sigma_b^2).
GnnParams gnn_init_params(const GnnSpec& spec, const TrainConfig& cfg, std::uint64_t seed);

/// Target-node embedding for one sample (x_u, x_v). The source node only
/// applies its self-update, W_self h_v + b.
std::vector<double> gnn_forward(const GnnParams& params, std::span<const double> xu_xv);
/// gnn_forward row by row; batch has two columns (x_u, x_v).
SampleMatrix gnn_forward(const GnnParams& params, const SampleMatrix& graph_batch);

/// MSE on target outputs + sym_reg_weight sum_l |W_self - W_neigh|_F^2
/// + norm_penalty_weight sum_l max(0, floor - |[W_self W_neigh]|_F)^2.
double gnn_loss(const GnnParams& params, const SampleMatrix& batch, const SampleMatrix& targets,
                const GnnTrainConfig& cfg);

/// Analytic gradient of `gnn_loss` in the `flatten` order.
LossGrad gnn_grad(const GnnParams& params, const SampleMatrix& batch, const SampleMatrix& targets,
                  const GnnTrainConfig& cfg);

struct GnnTrainResult {
    GnnParams params;
    std::vector<double> loss_curve;
    std::size_t steps = 0;
};

/// Same schedule and optimiser as `train`.
GnnTrainResult gnn_train(const GnnSpec& spec, const GnnTrainConfig& cfg, const SampleMatrix& inputs,
                         const SampleMatrix& targets, std::optional<GnnParams> init = std::nullopt);

void to_json(nlohmann::json& j, const GnnSpec& s);
void from_json(const nlohmann::json& j, GnnSpec& s);
void to_json(nlohmann::json& j, const GnnTrainConfig& c);
void from_json(const nlohmann::json& j, GnnTrainConfig& c);
void to_json(nlohmann::json& j, const GnnParams& p);
void from_json(const nlohmann::json& j, GnnParams& p);

/// {spec, params, topology} as JSON.
void save_gnn_checkpoint(const std::filesystem::path& path, const GnnSpec& spec, const GnnParams& params);
std::pair<GnnSpec, GnnParams> load_gnn_checkpoint(const std::filesystem::path& path);

}  // namespace rgsym
