#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace rgsym {

struct SplineConfig {
    int n_ctrl = 16;
    double lo = -1.0;
    double hi = 1.0;
    /// Initial control values; empty means "identity line over [lo, hi]".
    std::vector<double> ctrl_values;
    bool trainable = true;
    /// Re-derive [lo, hi] from first-layer preactivations before training.
    bool adaptive_range = true;
};

/// Elementwise nonlinearity of the hidden layers.
struct ActivationKind {
    enum class Kind { identity, quadratic, relu, leaky_relu, spline };
    Kind kind = Kind::identity;
    double alpha = 0.5;  // quadratic: z + alpha z^2
    double slope = 0.0;  // leaky_relu: slope for z <= 0
    SplineConfig spline;

    static ActivationKind identity();
    static ActivationKind quadratic(double alpha);
    static ActivationKind relu();
    static ActivationKind leaky_relu(double slope);
    static ActivationKind make_spline(SplineConfig cfg);

    void validate() const;
    bool smooth() const noexcept { return kind != Kind::relu && kind != Kind::leaky_relu; }
    /// Short label, e.g. "quadratic(0.5)" or "leaky(0.95)".
    std::string label() const;
    /// Parses "linear"/"identity", "relu", "quadratic[:alpha]", "leaky:<slope>", "spline[:n_ctrl]".
    static ActivationKind parse(const std::string& descriptor);
};

/// Value of a uniform-knot Catmull-Rom spline together with its slope and the
/// (at most four) control-point weights that produced the value.
struct SplineEval {
    double value = 0.0;
    double slope = 0.0;
    std::array<int, 4> index{};
    std::array<double, 4> weight{};
    /// d slope / d ctrl[index[k]] (needed for gradients through the slope).
    std::array<double, 4> slope_weight{};
    int count = 0;
};

/// Catmull-Rom interpolation through ctrl[k] at lo + k h, h = (hi-lo)/(K-1).
/// End segments use reflected ghost points 2c_0 - c_1 and 2c_{K-1} - c_{K-2},
/// and outside [lo, hi] the curve continues linearly with the boundary slope.
/// Linear control data is therefore reproduced exactly everywhere.
SplineEval eval_spline(std::span<const double> ctrl, double lo, double hi, double x);

/// Control values on the line y = x at the knots of [lo, hi].
std::vector<double> identity_ctrl(int n_ctrl, double lo, double hi);

/// phi(z) and phi'(z) for the non-spline kinds. ReLU and leaky ReLU use the
/// z <= 0 branch at the kink, so relu'(0) = 0.
double activate(const ActivationKind& a, double z);
double activate_derivative(const ActivationKind& a, double z);

void to_json(nlohmann::json& j, const ActivationKind& a);
void from_json(const nlohmann::json& j, ActivationKind& a);

}  // namespace rgsym
