#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rgsym/activation.hpp"
#include "rgsym/analytic_weights.hpp"
#include "rgsym/cumulants.hpp"
#include "rgsym/error.hpp"
#include "rgsym/propagation.hpp"

namespace rgsym {

struct NetworkSpec {
    std::vector<int> layer_widths{2, 2, 1};
    ActivationKind activation;
    bool use_bias = true;
    /// Ties W1 = [[w0,w1],[w1,w0]], W2 = [w2,w2], b1 = (b1,b1); needs [2,2,1].
    bool symmetric_tying = false;
    /// When false only spline control values are optimised.
    bool train_weights = true;

    void validate() const;
    int n_layers() const { return static_cast<int>(layer_widths.size()) - 1; }
};

struct TrainConfig {
    int epochs = 2;
    int batch_size = 64;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double init_sigma_w2 = 0.75;
    double init_sigma_b2 = 0.75;
    double spline_smooth_weight = 1e-3;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Where each expanded weight/bias reads its value from in `theta`.
/// A slot of -1 is a structural zero (bias disabled).
struct LayerSlots {
    int in = 0;
    int out = 0;
    std::vector<int> weight;  // out x in
    std::vector<int> bias;    // out
};

/// Flat trainable parameter vector plus the layout that expands it into
/// layer matrices. Tied entries share a slot, so they stay bit-identical.
struct NetworkParams {
    std::vector<double> theta;
    std::vector<std::uint8_t> trainable;
    std::vector<std::string> names;
    std::vector<LayerSlots> layers;
    int spline_offset = -1;
    int spline_count = 0;
    double spline_lo = -1.0;
    double spline_hi = 1.0;

    double weight(int layer, int i, int j) const;
    double bias(int layer, int i) const;
    std::span<const double> spline_ctrl() const;
    std::span<double> spline_ctrl();

    /// Expanded affine layers plus activation (spline control values filled in).
    MlpModel model(const NetworkSpec& spec) const;
    /// (w0, w1, w2, b1, b2) view; requires symmetric tying.
    SymmetricMlpParams symmetric() const;
};

/// Intermediates of one forward pass. y[0] is the input; z[l] / y[l+1] are the
/// pre/post-activations of layer l (the last layer has y == z).
struct ForwardTape {
    std::vector<std::vector<double>> z;
    std::vector<std::vector<double>> y;
};

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

class TrainingDiverged : public Error {
  public:
    TrainingDiverged(const std::string& what, std::size_t step, std::vector<double> curve)
        : Error(what), step_(step), curve_(std::move(curve)) {}
    std::size_t step() const noexcept { return step_; }
    const std::vector<double>& loss_curve() const noexcept { return curve_; }

  private:
    std::size_t step_;
    std::vector<double> curve_;
};

/// W ~ N(0, sigma_w^2 / fan_in), b ~ N(0, sigma_b^2); spline control values on
/// the identity line.
NetworkParams init_params(const NetworkSpec& spec, const TrainConfig& cfg, std::uint64_t seed);

std::pair<std::vector<double>, ForwardTape> forward(const NetworkParams& params, const NetworkSpec& spec,
                                                    std::span<const double> x);

/// Applies the network to every row.
SampleMatrix predict(const NetworkParams& params, const NetworkSpec& spec, const SampleMatrix& x);

/// Batch MSE (1/B) sum |g(x) - t|^2 plus the spline smoothness penalty.
double loss(const NetworkParams& params, const NetworkSpec& spec, const SampleMatrix& x, const SampleMatrix& t,
            double spline_smooth_weight);

/// Reverse-mode gradient of `loss` with respect to theta. Non-trainable
/// entries are zeroed.
LossGrad grad(const NetworkParams& params, const NetworkSpec& spec, const SampleMatrix& x, const SampleMatrix& t,
              double spline_smooth_weight);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update of `params` in place. Entries with
/// mask[i] == 0 are left untouched.
void adam_step(std::span<double> params, AdamState& state, std::span<const double> grads, const TrainConfig& cfg,
               std::span<const std::uint8_t> mask = {});

/// [min, max] of first-layer preactivations over the probe batch, widened by
/// 5% of the width on each side; degenerate ranges become [c - 1, c + 1].
std::pair<double, double> spline_adaptive_range(const NetworkParams& params, const NetworkSpec& spec,
                                                const SampleMatrix& probe);

/// Moves the spline knots to [lo, hi] and resets control values to y = x.
void reset_spline(NetworkParams& params, double lo, double hi);

/// Largest deviation of the control values from their least-squares line,
/// as a fraction of the knot range.
double spline_nonlinearity(const NetworkParams& params);

struct TrainResult {
    NetworkParams params;
    std::vector<double> loss_curve;
    std::size_t steps = 0;
    std::pair<double, double> spline_range{0.0, 0.0};
};

/// epochs x ceil(n / B) Adam steps on per-epoch shuffled batches. Starts
/// from `init` when given, else from `init_params(spec, cfg, cfg.seed)`.
/// Throws TrainingDiverged when the loss or gradient becomes non-finite.
TrainResult train(const NetworkSpec& spec, const TrainConfig& cfg, const SampleMatrix& inputs,
                  const SampleMatrix& targets, std::optional<NetworkParams> init = std::nullopt);

void to_json(nlohmann::json& j, const NetworkSpec& s);
void from_json(const nlohmann::json& j, NetworkSpec& s);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const NetworkParams& p);
void from_json(const nlohmann::json& j, NetworkParams& p);

/// Checkpoint {spec, params} as JSON.
void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec, const NetworkParams& params);
std::pair<NetworkSpec, NetworkParams> load_checkpoint(const std::filesystem::path& path);

/// "step,loss" CSV.
void write_loss_curve(const std::filesystem::path& path, std::span<const double> curve);

}  // namespace rgsym
