#include "rgsym/propagation.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "rgsym/error.hpp"
#include "rgsym/tensor.hpp"

namespace rgsym {

AffineLayer::AffineLayer(int in_dim, int out_dim, std::vector<double> w, std::vector<double> b)
    : in(in_dim), out(out_dim), weight(std::move(w)), bias(std::move(b)) {
    if (bias.empty()) bias.assign(out, 0.0);
    validate();
}

void AffineLayer::validate() const {
    if (in <= 0 || out <= 0) throw ShapeError("AffineLayer: dimensions must be positive");
    if (weight.size() != static_cast<std::size_t>(in) * out) throw ShapeError("AffineLayer: weight size mismatch");
    if (bias.size() != static_cast<std::size_t>(out)) throw ShapeError("AffineLayer: bias size mismatch");
    for (double v : weight)
        if (!std::isfinite(v)) throw NonFiniteError("AffineLayer: non-finite weight");
    for (double v : bias)
        if (!std::isfinite(v)) throw NonFiniteError("AffineLayer: non-finite bias");
}

GnnLayer::GnnLayer(int in_dim, int out_dim, std::vector<double> ws, std::vector<double> wn, std::vector<double> b)
    : in(in_dim), out(out_dim), w_self(std::move(ws)), w_neigh(std::move(wn)), bias(std::move(b)) {
    if (bias.empty()) bias.assign(out, 0.0);
    validate();
}

void GnnLayer::validate() const {
    const auto n = static_cast<std::size_t>(in) * out;
    if (in <= 0 || out <= 0) throw ShapeError("GnnLayer: dimensions must be positive");
    if (w_self.size() != n || w_neigh.size() != n) throw ShapeError("GnnLayer: weight size mismatch");
    if (bias.size() != static_cast<std::size_t>(out)) throw ShapeError("GnnLayer: bias size mismatch");
}

void NeighborhoodSpec::validate() const {
    const int n = static_cast<int>(in_neighbors.size());
    for (int u = 0; u < n; ++u) {
        for (int v : in_neighbors[u]) {
            if (v < 0 || v >= n) throw ShapeError("NeighborhoodSpec: neighbour id out of range");
            if (v == u && !allow_self_loops) throw DomainError("NeighborhoodSpec: undeclared self-loop at node " + std::to_string(u));
        }
    }
}

CumulantSet propagate_affine(const CumulantSet& c, const AffineLayer& layer) {
    layer.validate();
    if (layer.in != c.dim)
        throw ShapeError("propagate_affine: layer input " + std::to_string(layer.in) + " != cumulant dim " +
                         std::to_string(c.dim));
    CumulantSet out(layer.out);
    for (int n = 1; n <= 4; ++n) out.order(n) = tensor::multilinear(c.order(n), n, layer.weight, layer.out, layer.in);
    for (int i = 0; i < layer.out; ++i) out.g1[i] += layer.bias[i];
    // Fifth diagonal cumulants cannot be carried through a mixing map without
    // the off-diagonal entries, so they are only propagated for diagonal W.
    if (c.g5_diag) {
        bool diagonal = layer.in == layer.out;
        for (int i = 0; diagonal && i < layer.out; ++i)
            for (int j = 0; j < layer.in; ++j)
                if (i != j && layer.w(i, j) != 0.0) diagonal = false;
        if (diagonal) {
            std::vector<double> g5(layer.out);
            for (int i = 0; i < layer.out; ++i) g5[i] = std::pow(layer.w(i, i), 5) * (*c.g5_diag)[i];
            out.g5_diag = std::move(g5);
        }
    }
    return out;
}

std::vector<double> quad_mean(std::span<const double> mu_z, std::span<const double> sigma_z, double alpha) {
    const std::size_t d = mu_z.size();
    if (sigma_z.size() != d * d) throw ShapeError("quad_mean: sigma must be d x d");
    std::vector<double> mu(d);
    for (std::size_t i = 0; i < d; ++i) mu[i] = mu_z[i] + alpha * mu_z[i] * mu_z[i] + alpha * sigma_z[i * d + i];
    return mu;
}

std::vector<double> quad_covariance(std::span<const double> mu_z, std::span<const double> sigma_z,
                                    std::span<const double> g3_z, std::span<const double> g4_z, double alpha) {
    const int d = static_cast<int>(mu_z.size());
    if (sigma_z.size() != tensor::size(d, 2) || g3_z.size() != tensor::size(d, 3) || g4_z.size() != tensor::size(d, 4))
        throw ShapeError("quad_covariance: tensor sizes do not match mu");
    auto scale = [](std::span<const double> t) {
        double s = 0.0;
        for (double v : t) s = std::max(s, std::abs(v));
        return s;
    };
    if (tensor::asymmetry(g3_z, d, 3) > 1e-12 * std::max(1.0, scale(g3_z)))
        throw DomainError("quad_covariance: third cumulant tensor is not symmetric");
    if (tensor::asymmetry(g4_z, d, 4) > 1e-12 * std::max(1.0, scale(g4_z)))
        throw DomainError("quad_covariance: fourth cumulant tensor is not symmetric");

    auto s2 = [&](int i, int j) { return sigma_z[static_cast<std::size_t>(i) * d + j]; };
    auto s3 = [&](int i, int j, int k) { return g3_z[(static_cast<std::size_t>(i) * d + j) * d + k]; };
    auto s4 = [&](int i, int j, int k, int l) {
        return g4_z[((static_cast<std::size_t>(i) * d + j) * d + k) * d + l];
    };
    std::vector<double> out(static_cast<std::size_t>(d) * d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            const double sij = s2(i, j), mi = mu_z[i], mj = mu_z[j];
            // Cov(z_i, alpha z_j^2) carries kappa_{ijj}; its alpha^2 partner
            // 2 mu_i kappa_{ijj} comes from Cov(z_i^2, z_j^2).
            out[static_cast<std::size_t>(i) * d + j] =
                sij + 2.0 * alpha * sij * (mi + mj) + 2.0 * alpha * alpha * sij * sij +
                4.0 * alpha * alpha * mi * sij * mj + alpha * (1.0 + 2.0 * alpha * mi) * s3(i, j, j) +
                alpha * (1.0 + 2.0 * alpha * mj) * s3(i, i, j) + alpha * alpha * s4(i, i, j, j);
        }
    }
    return out;
}

std::vector<double> MlpModel::apply(std::span<const double> x) const {
    std::vector<double> y(x.begin(), x.end());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        if (static_cast<int>(y.size()) != L.in) throw ShapeError("MlpModel::apply: input width mismatch");
        std::vector<double> z(L.out);
        for (int i = 0; i < L.out; ++i) {
            double s = L.bias[i];
            for (int j = 0; j < L.in; ++j) s += L.w(i, j) * y[j];
            z[i] = s;
        }
        if (l + 1 < layers.size()) {
            if (activation.kind == ActivationKind::Kind::spline) {
                const auto ctrl = activation.spline.ctrl_values.empty()
                                      ? identity_ctrl(activation.spline.n_ctrl, activation.spline.lo, activation.spline.hi)
                                      : activation.spline.ctrl_values;
                for (auto& v : z) v = eval_spline(ctrl, activation.spline.lo, activation.spline.hi, v).value;
            } else {
                for (auto& v : z) v = activate(activation, v);
            }
        }
        y = std::move(z);
    }
    return y;
}

SampleMatrix MlpModel::apply(const SampleMatrix& x) const {
    const int out_dim = layers.empty() ? x.dim() : layers.back().out;
    SampleMatrix out(x.rows(), out_dim);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto y = apply(x.row(r));
        for (int i = 0; i < out_dim; ++i) out(r, i) = y[i];
    }
    return out;
}

namespace {

void zero_above(CumulantSet& c, int valid) {
    for (int n = valid + 1; n <= 4; ++n) std::fill(c.order(n).begin(), c.order(n).end(), 0.0);
    if (valid < 5) c.g5_diag.reset();
}

}  // namespace

PropagationResult propagate_mlp(const CumulantSet& c, const MlpModel& net, const PropagationOptions& opts) {
    if (opts.required_order < 1 || opts.required_order > 4) throw DomainError("propagate_mlp: required_order must be 1..4");
    const auto kind = net.activation.kind;
    const bool is_identity = kind == ActivationKind::Kind::identity ||
                             (kind == ActivationKind::Kind::quadratic && net.activation.alpha == 0.0);
    if (!is_identity && kind != ActivationKind::Kind::quadratic)
        throw UnsupportedActivation("no closed-form cumulant propagation for activation " + net.activation.label());
    if (net.layers.empty()) throw ShapeError("propagate_mlp: network has no layers");

    PropagationResult res;
    CumulantSet cur = c;
    int valid = 4;
    res.trace.push_back({"input", cur, valid, false});

    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        cur = propagate_affine(cur, net.layers[l]);
        zero_above(cur, valid);
        res.trace.push_back({"z" + std::to_string(l + 1), cur, valid, false});
        if (l + 1 == net.layers.size() || is_identity) continue;

        // Quadratic interaction: orders 1..2 need input orders up to 4.
        if (valid < 4) {
            throw DomainError("propagate_mlp: quadratic layer " + std::to_string(l + 1) +
                              " needs preactivation orders 3..4; supply fallback samples");
        }
        CumulantSet post(cur.dim);
        post.g1 = quad_mean(cur.g1, cur.g2, net.activation.alpha);
        post.g2 = quad_covariance(cur.g1, cur.g2, cur.g3, cur.g4, net.activation.alpha);
        valid = 2;
        bool mc = false;
        const bool downstream_needs_more = opts.required_order > 2 || l + 2 < net.layers.size();
        if (downstream_needs_more && opts.fallback_samples != nullptr) {
            // Sample-level pass up to the post-activation of layer l.
            MlpModel hidden{{net.layers.begin(), net.layers.begin() + static_cast<std::ptrdiff_t>(l) + 1},
                            net.activation};
            std::vector<double> eye(static_cast<std::size_t>(cur.dim) * cur.dim, 0.0);
            for (int i = 0; i < cur.dim; ++i) eye[static_cast<std::size_t>(i) * cur.dim + i] = 1.0;
            hidden.layers.emplace_back(cur.dim, cur.dim, std::move(eye));
            const auto est = symmetrize(estimate_cumulants(hidden.apply(*opts.fallback_samples), 4));
            post.g3 = est.g3;
            post.g4 = est.g4;
            valid = 4;
            mc = true;
            res.monte_carlo_fallback = true;
        }
        cur = std::move(post);
        res.trace.push_back({"y" + std::to_string(l + 1), cur, valid, mc});
    }
    res.valid_order = valid;
    res.output = std::move(cur);
    return res;
}

std::map<int, CumulantSet> propagate_gnn(const std::map<int, CumulantSet>& node_cumulants,
                                         std::span<const GnnLayer> layers, const NeighborhoodSpec& nbrs) {
    nbrs.validate();
    std::map<int, CumulantSet> cur = node_cumulants;
    for (const auto& layer : layers) {
        layer.validate();
        std::map<int, CumulantSet> next;
        for (const auto& [u, cu] : cur) {
            if (cu.dim != layer.in)
                throw ShapeError("propagate_gnn: node " + std::to_string(u) + " has dim " + std::to_string(cu.dim) +
                                 ", layer expects " + std::to_string(layer.in));
            CumulantSet z(layer.out);
            for (int n = 1; n <= 4; ++n) z.order(n) = tensor::multilinear(cu.order(n), n, layer.w_self, layer.out, layer.in);
            if (u >= 0 && u < static_cast<int>(nbrs.in_neighbors.size())) {
                for (int v : nbrs.in_neighbors[u]) {
                    const auto it = cur.find(v);
                    if (it == cur.end())
                        throw ShapeError("propagate_gnn: missing cumulants for neighbour " + std::to_string(v) +
                                         " of node " + std::to_string(u));
                    if (it->second.dim != layer.in) throw ShapeError("propagate_gnn: neighbour dim mismatch");
                    for (int n = 1; n <= 4; ++n) {
                        const auto add = tensor::multilinear(it->second.order(n), n, layer.w_neigh, layer.out, layer.in);
                        auto& dst = z.order(n);
                        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += add[k];
                    }
                }
            }
            for (int i = 0; i < layer.out; ++i) z.g1[i] += layer.bias[i];
            next.emplace(u, std::move(z));
        }
        cur = std::move(next);
    }
    return cur;
}

double expected_mse_loss(std::span<const ClassStats> classes) {
    double mass = 0.0;
    for (const auto& c : classes) mass += c.p;
    if (std::abs(mass - 1.0) > 1e-12) throw DomainError("expected_mse_loss: class probabilities sum to " + std::to_string(mass));
    double loss = 0.0;
    for (const auto& c : classes) {
        const std::size_t d = c.mu.size();
        if (c.target.size() != d || c.sigma.size() != d * d) throw ShapeError("expected_mse_loss: class shape mismatch");
        double tr = 0.0, dist = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            tr += c.sigma[i * d + i];
            dist += (c.mu[i] - c.target[i]) * (c.mu[i] - c.target[i]);
        }
        loss += c.p * (tr + dist);
    }
    return loss;
}

void to_json(nlohmann::json& j, const TraceEntry& e) {
    j = nlohmann::json{{"label", e.label}, {"cumulants", e.cumulants}, {"valid_order", e.valid_order},
                       {"monte_carlo", e.monte_carlo}};
}

void to_json(nlohmann::json& j, const PropagationResult& r) {
    j = nlohmann::json{{"output", r.output},
                       {"valid_order", r.valid_order},
                       {"monte_carlo_fallback", r.monte_carlo_fallback},
                       {"trace", r.trace}};
}

}  // namespace rgsym
