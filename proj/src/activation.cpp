#include "rgsym/activation.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "rgsym/error.hpp"

namespace rgsym {

ActivationKind ActivationKind::identity() { return {}; }

ActivationKind ActivationKind::quadratic(double alpha) {
    ActivationKind a;
    a.kind = Kind::quadratic;
    a.alpha = alpha;
    return a;
}

ActivationKind ActivationKind::relu() {
    ActivationKind a;
    a.kind = Kind::relu;
    return a;
}

ActivationKind ActivationKind::leaky_relu(double slope) {
    ActivationKind a;
    a.kind = Kind::leaky_relu;
    a.slope = slope;
    a.validate();
    return a;
}

ActivationKind ActivationKind::make_spline(SplineConfig cfg) {
    ActivationKind a;
    a.kind = Kind::spline;
    a.spline = std::move(cfg);
    a.validate();
    return a;
}

void ActivationKind::validate() const {
    if (kind == Kind::leaky_relu && !(slope >= 0.0 && slope <= 1.0))
        throw DomainError("leaky_relu slope must lie in [0, 1]");
    if (kind == Kind::quadratic && !std::isfinite(alpha)) throw DomainError("quadratic alpha must be finite");
    if (kind == Kind::spline) {
        if (spline.n_ctrl < 4) throw DomainError("spline needs at least 4 control points");
        if (!(spline.lo < spline.hi)) throw DomainError("spline range needs lo < hi");
        if (!spline.ctrl_values.empty() && static_cast<int>(spline.ctrl_values.size()) != spline.n_ctrl)
            throw ShapeError("spline ctrl_values length must equal n_ctrl");
    }
}

std::string ActivationKind::label() const {
    std::ostringstream os;
    switch (kind) {
        case Kind::identity: os << "linear"; break;
        case Kind::quadratic: os << "quadratic(" << alpha << ")"; break;
        case Kind::relu: os << "relu"; break;
        case Kind::leaky_relu: os << "leaky(" << slope << ")"; break;
        case Kind::spline: os << "spline(" << spline.n_ctrl << (spline.trainable ? "" : ",frozen") << ")"; break;
    }
    return os.str();
}

ActivationKind ActivationKind::parse(const std::string& descriptor) {
    const auto colon = descriptor.find(':');
    const std::string name = descriptor.substr(0, colon);
    const bool has_arg = colon != std::string::npos;
    auto arg = [&]() {
        try {
            return std::stod(descriptor.substr(colon + 1));
        } catch (const std::exception&) {
            throw DomainError("bad activation argument in '" + descriptor + "'");
        }
    };
    if (name == "linear" || name == "identity") return identity();
    if (name == "relu") return relu();
    if (name == "quadratic") return quadratic(has_arg ? arg() : 0.5);
    if (name == "leaky" || name == "leaky_relu") {
        if (!has_arg) throw DomainError("leaky activation needs a slope, e.g. 'leaky:0.5'");
        return leaky_relu(arg());
    }
    if (name == "spline") {
        SplineConfig cfg;
        if (has_arg) cfg.n_ctrl = static_cast<int>(arg());
        return make_spline(cfg);
    }
    throw DomainError("unknown activation '" + descriptor + "'");
}

SplineEval eval_spline(std::span<const double> ctrl, double lo, double hi, double x) {
    const int k_count = static_cast<int>(ctrl.size());
    if (k_count < 4) throw DomainError("spline needs at least 4 control points");
    const double h = (hi - lo) / (k_count - 1);
    SplineEval e;

    if (x < lo || x > hi) {
        // Linear continuation with the end slope (c1-c0)/h or (c_{K-1}-c_{K-2})/h.
        const bool left = x < lo;
        const int a = left ? 0 : k_count - 2;
        const int b = a + 1;
        const double anchor = left ? lo : hi;
        const double s = (x - anchor) / h;
        const double base_a = left ? 1.0 : 0.0;  // value anchored at c_a (left) or c_b (right)
        e.count = 2;
        e.index = {a, b, 0, 0};
        e.weight = {base_a - s, (1.0 - base_a) + s, 0.0, 0.0};
        e.slope_weight = {-1.0 / h, 1.0 / h, 0.0, 0.0};
        e.value = e.weight[0] * ctrl[a] + e.weight[1] * ctrl[b];
        e.slope = (ctrl[b] - ctrl[a]) / h;
        return e;
    }

    int seg = static_cast<int>(std::floor((x - lo) / h));
    seg = std::clamp(seg, 0, k_count - 2);
    const double t = (x - lo) / h - seg;
    const double t2 = t * t, t3 = t2 * t;
    const std::array<double, 4> b{0.5 * (-t + 2.0 * t2 - t3), 0.5 * (2.0 - 5.0 * t2 + 3.0 * t3),
                                  0.5 * (t + 4.0 * t2 - 3.0 * t3), 0.5 * (-t2 + t3)};
    const std::array<double, 4> db{0.5 * (-1.0 + 4.0 * t - 3.0 * t2), 0.5 * (-10.0 * t + 9.0 * t2),
                                   0.5 * (1.0 + 8.0 * t - 9.0 * t2), 0.5 * (-2.0 * t + 3.0 * t2)};

    // Fold the four Hermite points (with ghosts) onto real control indices.
    std::array<double, 4> w{};  // keyed by index - (seg - 1)
    std::array<double, 4> dw{};
    auto add = [&](int idx, double wv, double dv) {
        w[idx - seg + 1] += wv;
        dw[idx - seg + 1] += dv;
    };
    for (int p = 0; p < 4; ++p) {
        const int idx = seg - 1 + p;
        if (idx < 0) {  // 2 c_0 - c_1
            add(0, 2.0 * b[p], 2.0 * db[p]);
            add(1, -b[p], -db[p]);
        } else if (idx >= k_count) {  // 2 c_{K-1} - c_{K-2}
            add(k_count - 1, 2.0 * b[p], 2.0 * db[p]);
            add(k_count - 2, -b[p], -db[p]);
        } else {
            add(idx, b[p], db[p]);
        }
    }
    for (int off = 0; off < 4; ++off) {
        const int idx = seg - 1 + off;
        if (idx < 0 || idx >= k_count) continue;
        e.index[e.count] = idx;
        e.weight[e.count] = w[off];
        e.slope_weight[e.count] = dw[off] / h;
        e.value += w[off] * ctrl[idx];
        e.slope += dw[off] / h * ctrl[idx];
        ++e.count;
    }
    return e;
}

std::vector<double> identity_ctrl(int n_ctrl, double lo, double hi) {
    std::vector<double> c(n_ctrl);
    const double h = (hi - lo) / (n_ctrl - 1);
    for (int k = 0; k < n_ctrl; ++k) c[k] = lo + k * h;
    return c;
}

double activate(const ActivationKind& a, double z) {
    switch (a.kind) {
        case ActivationKind::Kind::identity: return z;
        case ActivationKind::Kind::quadratic: return z + a.alpha * z * z;
        case ActivationKind::Kind::relu: return z > 0.0 ? z : 0.0;
        case ActivationKind::Kind::leaky_relu: return z > 0.0 ? z : a.slope * z;
        case ActivationKind::Kind::spline: break;
    }
    throw DomainError("activate: spline activations need control values; use eval_spline");
}

double activate_derivative(const ActivationKind& a, double z) {
    switch (a.kind) {
        case ActivationKind::Kind::identity: return 1.0;
        case ActivationKind::Kind::quadratic: return 1.0 + 2.0 * a.alpha * z;
        case ActivationKind::Kind::relu: return z > 0.0 ? 1.0 : 0.0;
        case ActivationKind::Kind::leaky_relu: return z > 0.0 ? 1.0 : a.slope;
        case ActivationKind::Kind::spline: break;
    }
    throw DomainError("activate_derivative: spline activations need control values; use eval_spline");
}

namespace {
const char* kind_name(ActivationKind::Kind k) {
    switch (k) {
        case ActivationKind::Kind::identity: return "identity";
        case ActivationKind::Kind::quadratic: return "quadratic";
        case ActivationKind::Kind::relu: return "relu";
        case ActivationKind::Kind::leaky_relu: return "leaky_relu";
        case ActivationKind::Kind::spline: return "spline";
    }
    return "identity";
}
}  // namespace

void to_json(nlohmann::json& j, const ActivationKind& a) {
    j = nlohmann::json{{"kind", kind_name(a.kind)}};
    if (a.kind == ActivationKind::Kind::quadratic) j["alpha"] = a.alpha;
    if (a.kind == ActivationKind::Kind::leaky_relu) j["slope"] = a.slope;
    if (a.kind == ActivationKind::Kind::spline) {
        j["spline"] = {{"n_ctrl", a.spline.n_ctrl},     {"lo", a.spline.lo},
                       {"hi", a.spline.hi},             {"ctrl_values", a.spline.ctrl_values},
                       {"trainable", a.spline.trainable}, {"adaptive_range", a.spline.adaptive_range}};
    }
}

void from_json(const nlohmann::json& j, ActivationKind& a) {
    const auto name = j.at("kind").get<std::string>();
    ActivationKind out;
    if (name == "identity") {
        out = ActivationKind::identity();
    } else if (name == "quadratic") {
        out = ActivationKind::quadratic(j.value("alpha", 0.5));
    } else if (name == "relu") {
        out = ActivationKind::relu();
    } else if (name == "leaky_relu") {
        out = ActivationKind::leaky_relu(j.at("slope").get<double>());
    } else if (name == "spline") {
        SplineConfig cfg;
        const auto& s = j.at("spline");
        cfg.n_ctrl = s.value("n_ctrl", 16);
        cfg.lo = s.value("lo", -1.0);
        cfg.hi = s.value("hi", 1.0);
        cfg.ctrl_values = s.value("ctrl_values", std::vector<double>{});
        cfg.trainable = s.value("trainable", true);
        cfg.adaptive_range = s.value("adaptive_range", true);
        out = ActivationKind::make_spline(cfg);
    } else {
        throw DomainError("unknown activation kind '" + name + "'");
    }
    a = std::move(out);
}

}  // namespace rgsym
