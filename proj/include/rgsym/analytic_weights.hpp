#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rgsym/propagation.hpp"

namespace rgsym {

/// Symmetric [2,2,1] parameterisation:
/// W1 = [[w0, w1], [w1, w0]], W2 = [w2, w2], b1 = (b1, b1), b2.
struct SymmetricMlpParams {
    double w0 = 0.0, w1 = 0.0, w2 = 0.0, b1 = 0.0, b2 = 0.0;

    /// The affine layers this parameterisation expands to. `columns_same`
    /// gives W1 = [[w0, w0], [w1, w1]] instead.
    std::vector<AffineLayer> layers(bool columns_same = false) const;
};

struct ConstraintResidual {
    std::vector<std::pair<std::string, double>> equations;
    double tolerance = 0.0;
    bool pass = false;

    double max_abs() const;
};

struct SingleLayerSolution {
    std::vector<double> w;  // length 2
    double b = 0.0;
};

/// Minimises E[(w . xi + b - (xi_1 + xi_2)/sqrt 2)^2] for i.i.d. inputs by
/// solving the normal equations of the expected loss.
SingleLayerSolution solve_single_layer(bool with_bias);

/// w0 on the surface of exact symmetric linear [2,2,1] solutions.
double linear_surface(double w1, double w2);

/// (w0, b2) completing a biased exact solution.
std::pair<double, double> biased_subspace(double w1, double w2, double b1);

/// Residuals of the exact-solution subspace; pass iff every |residual| <= tol.
ConstraintResidual check_symmetry_subspace(const SymmetricMlpParams& p, double tol);

struct InconsistencyCertificate {
    ConstraintResidual residuals;
    bool columns_same = false;
    double alpha = 0.0;
    /// True when the first (mean-scaling) equation holds within 1e-6.
    bool first_equation_holds = false;
    /// |alpha| (w0 + w1) 2 w2 (w0 + w1): the value forced on the second
    /// residual once the first equation holds.
    double forced_lower_bound = 0.0;
    std::string proof;
};

/// Coefficient-matching residuals for the bias-free symmetric quadratic
/// network phi(z) = z + alpha z^2.
InconsistencyCertificate quadratic_inconsistency_certificate(const SymmetricMlpParams& p, double alpha,
                                                             bool columns_same = false);

struct GridSearchResult {
    double min_max_residual = 0.0;
    SymmetricMlpParams argmin;
    std::size_t points = 0;
};

/// Brute-force minimum over a cubic grid in (w0, w1, w2) of the largest
/// certificate residual.
GridSearchResult certificate_grid_search(double alpha, bool columns_same, double lo = -2.0, double hi = 2.0,
                                         double step = 0.05);

void to_json(nlohmann::json& j, const SymmetricMlpParams& p);
void to_json(nlohmann::json& j, const ConstraintResidual& r);
void to_json(nlohmann::json& j, const InconsistencyCertificate& c);
void to_json(nlohmann::json& j, const GridSearchResult& g);

}  // namespace rgsym
