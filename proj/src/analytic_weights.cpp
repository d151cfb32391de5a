#include "rgsym/analytic_weights.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <nlohmann/json.hpp>
#include <sstream>

#include "rgsym/error.hpp"

namespace rgsym {

namespace {
constexpr double kSqrt2 = std::numbers::sqrt2;
constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;
}  // namespace

std::vector<AffineLayer> SymmetricMlpParams::layers(bool columns_same) const {
    std::vector<double> w1m = columns_same ? std::vector<double>{w0, w0, w1, w1} : std::vector<double>{w0, w1, w1, w0};
    return {AffineLayer(2, 2, std::move(w1m), {b1, b1}), AffineLayer(2, 1, {w2, w2}, {b2})};
}

double ConstraintResidual::max_abs() const {
    double m = 0.0;
    for (const auto& [label, r] : equations) m = std::max(m, std::abs(r));
    return m;
}

SingleLayerSolution solve_single_layer(bool with_bias) {
    // Any non-degenerate site law gives the same minimiser; these are the
    // Uniform[0,1] moments.
    const double mu = 0.5;
    const double m2 = 1.0 / 3.0;  // E[xi^2]
    const int n = with_bias ? 3 : 2;
    // Features (xi_1, xi_2[, 1]); target (xi_1 + xi_2)/sqrt 2.
    Eigen::MatrixXd gram(n, n);
    Eigen::VectorXd rhs(n);
    gram(0, 0) = m2;
    gram(1, 1) = m2;
    gram(0, 1) = gram(1, 0) = mu * mu;
    rhs(0) = kInvSqrt2 * (m2 + mu * mu);
    rhs(1) = rhs(0);
    if (with_bias) {
        gram(0, 2) = gram(2, 0) = mu;
        gram(1, 2) = gram(2, 1) = mu;
        gram(2, 2) = 1.0;
        rhs(2) = kInvSqrt2 * 2.0 * mu;
    }
    const Eigen::VectorXd sol = gram.ldlt().solve(rhs);
    SingleLayerSolution s;
    s.w = {sol(0), sol(1)};
    s.b = with_bias ? sol(2) : 0.0;
    // Clear round-off: the exact minimiser has b = 0.
    if (std::abs(s.b) < 1e-14) s.b = 0.0;
    return s;
}

double linear_surface(double w1, double w2) {
    if (w2 == 0.0) throw DomainError("linear_surface: w2 must be non-zero");
    return 1.0 / (w2 * kSqrt2) - w1;
}

std::pair<double, double> biased_subspace(double w1, double w2, double b1) {
    if (w2 == 0.0) throw DomainError("biased_subspace: w2 must be non-zero");
    return {linear_surface(w1, w2), -2.0 * w2 * b1};
}

ConstraintResidual check_symmetry_subspace(const SymmetricMlpParams& p, double tol) {
    ConstraintResidual r;
    r.tolerance = tol;
    if (p.w2 != 0.0) {
        r.equations.emplace_back("w0 - (1/(w2 sqrt2) - w1)", p.w0 - linear_surface(p.w1, p.w2));
    } else {
        // Degenerate w2: report the same condition multiplied through by w2 sqrt2.
        r.equations.emplace_back("sqrt2 w2 (w0 + w1) - 1", -1.0);
    }
    r.equations.emplace_back("b2 + 2 w2 b1", p.b2 + 2.0 * p.w2 * p.b1);
    r.pass = r.max_abs() <= tol;
    return r;
}

InconsistencyCertificate quadratic_inconsistency_certificate(const SymmetricMlpParams& p, double alpha,
                                                             bool columns_same) {
    if (alpha == 0.0) throw DomainError("quadratic_inconsistency_certificate: alpha must be non-zero");
    InconsistencyCertificate c;
    c.alpha = alpha;
    c.columns_same = columns_same;
    const double s = p.w0 + p.w1;
    const double q = p.w0 * p.w0 + p.w1 * p.w1;
    const double r1 = 2.0 * p.w2 * s - kSqrt2;
    auto& eq = c.residuals.equations;
    eq.emplace_back("2 w2 (w0 + w1) - sqrt2", r1);
    if (columns_same) {
        eq.emplace_back("4 w2 alpha (w0^2 + w1^2)", 4.0 * p.w2 * alpha * q);
        eq.emplace_back("2 w2 alpha (w0^2 + w1^2)", 2.0 * p.w2 * alpha * q);
    } else {
        eq.emplace_back("2 w2 alpha (w0 + w1)^2", 2.0 * p.w2 * alpha * s * s);
        eq.emplace_back("2 w2 alpha (w0^2 + w1^2)", 2.0 * p.w2 * alpha * q);
    }
    c.residuals.tolerance = 0.0;
    c.residuals.pass = false;
    c.first_equation_holds = std::abs(r1) <= 1e-6;
    c.forced_lower_bound = std::abs(alpha * s * (kSqrt2 + r1));

    std::ostringstream os;
    if (c.first_equation_holds) {
        os << "First equation holds, so w2 != 0 and w0 + w1 = " << s << " != 0. Then the second residual equals "
           << "alpha (w0 + w1) * 2 w2 (w0 + w1) = " << c.forced_lower_bound << " != 0";
        if (columns_same) os << " (columns-same: 4 w2 alpha (w0^2 + w1^2) >= 2 w2 alpha (w0 + w1)^2)";
        os << ". No exact solution exists for alpha = " << alpha << ".";
    } else {
        os << "First equation fails (residual " << r1 << "), so the mean does not scale by sqrt2.";
    }
    c.proof = os.str();
    return c;
}

GridSearchResult certificate_grid_search(double alpha, bool columns_same, double lo, double hi, double step) {
    if (!(step > 0.0) || !(lo < hi)) throw DomainError("certificate_grid_search: bad grid");
    const int n = static_cast<int>(std::floor((hi - lo) / step + 1e-9)) + 1;
    GridSearchResult g;
    g.min_max_residual = std::numeric_limits<double>::infinity();
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
            for (int k = 0; k < n; ++k) {
                SymmetricMlpParams p{lo + a * step, lo + b * step, lo + k * step, 0.0, 0.0};
                const double m = quadratic_inconsistency_certificate(p, alpha, columns_same).residuals.max_abs();
                ++g.points;
                if (m < g.min_max_residual) {
                    g.min_max_residual = m;
                    g.argmin = p;
                }
            }
        }
    }
    return g;
}

void to_json(nlohmann::json& j, const SymmetricMlpParams& p) {
    j = nlohmann::json{{"w0", p.w0}, {"w1", p.w1}, {"w2", p.w2}, {"b1", p.b1}, {"b2", p.b2}};
}

void to_json(nlohmann::json& j, const ConstraintResidual& r) {
    j = nlohmann::json::object();
    auto eqs = nlohmann::json::array();
    for (const auto& [label, v] : r.equations) eqs.push_back({{"equation", label}, {"residual", v}});
    j["equations"] = eqs;
    j["tolerance"] = r.tolerance;
    j["pass"] = r.pass;
}

void to_json(nlohmann::json& j, const InconsistencyCertificate& c) {
    j = nlohmann::json{{"alpha", c.alpha},
                       {"columns_same", c.columns_same},
                       {"residuals", c.residuals.equations.size()},
                       {"first_equation_holds", c.first_equation_holds},
                       {"forced_lower_bound", c.forced_lower_bound},
                       {"proof", c.proof}};
    auto eqs = nlohmann::json::array();
    for (const auto& [label, v] : c.residuals.equations) eqs.push_back({{"equation", label}, {"residual", v}});
    j["residuals"] = eqs;
}

void to_json(nlohmann::json& j, const GridSearchResult& g) {
    j = nlohmann::json{{"min_max_residual", g.min_max_residual}, {"argmin", g.argmin}, {"points", g.points}};
}

}  // namespace rgsym
