#include "rgsym/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <nlohmann/json.hpp>
#include <sstream>

#include "rgsym/rng.hpp"

namespace rgsym {

void NetworkSpec::validate() const {
    if (layer_widths.size() < 2) throw ShapeError("NetworkSpec: need at least input and output widths");
    for (int w : layer_widths)
        if (w <= 0) throw ShapeError("NetworkSpec: widths must be positive");
    activation.validate();
    if (symmetric_tying && layer_widths != std::vector<int>{2, 2, 1})
        throw ShapeError("NetworkSpec: symmetric tying requires widths [2,2,1]");
}

void TrainConfig::validate() const {
    if (epochs < 0) throw DomainError("TrainConfig: epochs must be >= 0");
    if (batch_size <= 0) throw DomainError("TrainConfig: batch_size must be positive");
    if (!(lr > 0.0) || !(eps > 0.0)) throw DomainError("TrainConfig: lr and eps must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw DomainError("TrainConfig: betas must lie in [0,1)");
    if (weight_decay < 0.0 || init_sigma_w2 < 0.0 || init_sigma_b2 < 0.0 || spline_smooth_weight < 0.0)
        throw DomainError("TrainConfig: weight_decay, init variances and smoothness weight must be >= 0");
}

double NetworkParams::weight(int layer, int i, int j) const {
    const auto& s = layers.at(static_cast<std::size_t>(layer));
    return theta[static_cast<std::size_t>(s.weight[static_cast<std::size_t>(i) * s.in + j])];
}

double NetworkParams::bias(int layer, int i) const {
    const int slot = layers.at(static_cast<std::size_t>(layer)).bias[static_cast<std::size_t>(i)];
    return slot < 0 ? 0.0 : theta[static_cast<std::size_t>(slot)];
}

std::span<const double> NetworkParams::spline_ctrl() const {
    if (spline_offset < 0) return {};
    return std::span<const double>(theta).subspan(static_cast<std::size_t>(spline_offset),
                                                  static_cast<std::size_t>(spline_count));
}

std::span<double> NetworkParams::spline_ctrl() {
    if (spline_offset < 0) return {};
    return std::span<double>(theta).subspan(static_cast<std::size_t>(spline_offset),
                                            static_cast<std::size_t>(spline_count));
}

MlpModel NetworkParams::model(const NetworkSpec& spec) const {
    MlpModel m;
    m.activation = spec.activation;
    if (spline_offset >= 0) {
        const auto c = spline_ctrl();
        m.activation.spline.ctrl_values.assign(c.begin(), c.end());
        m.activation.spline.lo = spline_lo;
        m.activation.spline.hi = spline_hi;
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& s = layers[l];
        std::vector<double> w(s.weight.size());
        std::vector<double> b(static_cast<std::size_t>(s.out));
        for (std::size_t k = 0; k < w.size(); ++k) w[k] = theta[static_cast<std::size_t>(s.weight[k])];
        for (int i = 0; i < s.out; ++i) b[static_cast<std::size_t>(i)] = bias(static_cast<int>(l), i);
        m.layers.emplace_back(s.in, s.out, std::move(w), std::move(b));
    }
    return m;
}

SymmetricMlpParams NetworkParams::symmetric() const {
    if (layers.size() != 2 || layers[0].in != 2 || layers[0].out != 2 || layers[1].out != 1)
        throw ShapeError("symmetric(): network is not [2,2,1]");
    SymmetricMlpParams p;
    p.w0 = weight(0, 0, 0);
    p.w1 = weight(0, 0, 1);
    p.w2 = weight(1, 0, 0);
    p.b1 = bias(0, 0);
    p.b2 = bias(1, 0);
    return p;
}

namespace {

bool is_spline(const NetworkSpec& spec) { return spec.activation.kind == ActivationKind::Kind::spline; }

// Dense copy of the expanded weights plus scratch space for per-sample passes.
struct Expanded {
    std::vector<std::vector<double>> w;
    std::vector<std::vector<double>> b;
    std::vector<int> in, out;
    std::span<const double> ctrl;
    double lo = -1.0, hi = 1.0;

    explicit Expanded(const NetworkParams& p) {
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            const auto& s = p.layers[l];
            std::vector<double> wl(s.weight.size());
            for (std::size_t k = 0; k < wl.size(); ++k) wl[k] = p.theta[static_cast<std::size_t>(s.weight[k])];
            std::vector<double> bl(static_cast<std::size_t>(s.out));
            for (int i = 0; i < s.out; ++i) bl[static_cast<std::size_t>(i)] = p.bias(static_cast<int>(l), i);
            w.push_back(std::move(wl));
            b.push_back(std::move(bl));
            in.push_back(s.in);
            out.push_back(s.out);
        }
        ctrl = p.spline_ctrl();
        lo = p.spline_lo;
        hi = p.spline_hi;
    }
    std::size_t n_layers() const { return w.size(); }
};

double act(const NetworkSpec& spec, const Expanded& e, double z) {
    if (is_spline(spec)) return eval_spline(e.ctrl, e.lo, e.hi, z).value;
    return activate(spec.activation, z);
}

void run_forward(const NetworkSpec& spec, const Expanded& e, std::span<const double> x, ForwardTape& tape) {
    const std::size_t L = e.n_layers();
    tape.z.resize(L);
    tape.y.resize(L + 1);
    tape.y[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < L; ++l) {
        const int in = e.in[l], out = e.out[l];
        auto& z = tape.z[l];
        z.assign(static_cast<std::size_t>(out), 0.0);
        const auto& yin = tape.y[l];
        for (int i = 0; i < out; ++i) {
            double acc = e.b[l][static_cast<std::size_t>(i)];
            for (int j = 0; j < in; ++j) acc += e.w[l][static_cast<std::size_t>(i) * in + j] * yin[static_cast<std::size_t>(j)];
            z[static_cast<std::size_t>(i)] = acc;
        }
        auto& y = tape.y[l + 1];
        y = z;
        if (l + 1 < L)
            for (auto& v : y) v = act(spec, e, v);
        for (double v : y)
            if (!std::isfinite(v)) throw NonFiniteError("forward: non-finite value in layer " + std::to_string(l));
    }
}

double smoothness_penalty(std::span<const double> c) {
    double s = 0.0;
    for (std::size_t k = 1; k + 1 < c.size(); ++k) {
        const double d = c[k + 1] - 2.0 * c[k] + c[k - 1];
        s += d * d;
    }
    return s;
}

void check_batch(const NetworkSpec& spec, const SampleMatrix& x, const SampleMatrix& t) {
    if (x.rows() == 0) throw ShapeError("batch is empty");
    if (x.rows() != t.rows()) throw ShapeError("inputs and targets differ in row count");
    if (static_cast<int>(x.dim()) != spec.layer_widths.front() || static_cast<int>(t.dim()) != spec.layer_widths.back())
        throw ShapeError("batch dimensions do not match the network widths");
}

SampleMatrix take_rows(const SampleMatrix& m, std::span<const std::size_t> idx) {
    SampleMatrix out(idx.size(), m.dim());
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < m.dim(); ++j) out(r, j) = m(idx[r], j);
    return out;
}

}  // namespace

NetworkParams init_params(const NetworkSpec& spec, const TrainConfig& cfg, std::uint64_t seed) {
    spec.validate();
    NetworkParams p;
    CounterRng rng(seed, stream_id("init-params"));
    const double sw = std::sqrt(cfg.init_sigma_w2);
    const double sb = std::sqrt(cfg.init_sigma_b2);
    auto push = [&](double v, std::string name) {
        p.theta.push_back(v);
        p.trainable.push_back(spec.train_weights ? 1 : 0);
        p.names.push_back(std::move(name));
        return static_cast<int>(p.theta.size()) - 1;
    };

    if (spec.symmetric_tying) {
        const double fan = 2.0;
        const int w0 = push(rng.normal(0.0, sw / std::sqrt(fan)), "w0");
        const int w1 = push(rng.normal(0.0, sw / std::sqrt(fan)), "w1");
        const int w2 = push(rng.normal(0.0, sw / std::sqrt(fan)), "w2");
        int b1 = -1, b2 = -1;
        if (spec.use_bias) {
            b1 = push(rng.normal(0.0, sb), "b1");
            b2 = push(rng.normal(0.0, sb), "b2");
        }
        p.layers.push_back(LayerSlots{2, 2, {w0, w1, w1, w0}, {b1, b1}});
        p.layers.push_back(LayerSlots{2, 1, {w2, w2}, {b2}});
    } else {
        for (int l = 0; l < spec.n_layers(); ++l) {
            const int in = spec.layer_widths[static_cast<std::size_t>(l)];
            const int out = spec.layer_widths[static_cast<std::size_t>(l) + 1];
            LayerSlots s{in, out, {}, {}};
            const double sd = sw / std::sqrt(static_cast<double>(in));
            for (int i = 0; i < out; ++i)
                for (int j = 0; j < in; ++j)
                    s.weight.push_back(push(rng.normal(0.0, sd),
                                            "W" + std::to_string(l + 1) + "[" + std::to_string(i) + "," +
                                                std::to_string(j) + "]"));
            for (int i = 0; i < out; ++i)
                s.bias.push_back(spec.use_bias ? push(rng.normal(0.0, sb),
                                                      "b" + std::to_string(l + 1) + "[" + std::to_string(i) + "]")
                                               : -1);
            p.layers.push_back(std::move(s));
        }
    }

    if (is_spline(spec)) {
        const auto& sc = spec.activation.spline;
        p.spline_offset = static_cast<int>(p.theta.size());
        p.spline_count = sc.n_ctrl;
        p.spline_lo = sc.lo;
        p.spline_hi = sc.hi;
        const auto init = sc.ctrl_values.empty() ? identity_ctrl(sc.n_ctrl, sc.lo, sc.hi) : sc.ctrl_values;
        if (static_cast<int>(init.size()) != sc.n_ctrl) throw ShapeError("spline ctrl_values length != n_ctrl");
        for (int k = 0; k < sc.n_ctrl; ++k) {
            p.theta.push_back(init[static_cast<std::size_t>(k)]);
            p.trainable.push_back(sc.trainable ? 1 : 0);
            p.names.push_back("c[" + std::to_string(k) + "]");
        }
    }
    return p;
}

std::pair<std::vector<double>, ForwardTape> forward(const NetworkParams& params, const NetworkSpec& spec,
                                                    std::span<const double> x) {
    if (static_cast<int>(x.size()) != spec.layer_widths.front()) throw ShapeError("forward: input width mismatch");
    const Expanded e(params);
    ForwardTape tape;
    run_forward(spec, e, x, tape);
    return {tape.y.back(), std::move(tape)};
}

SampleMatrix predict(const NetworkParams& params, const NetworkSpec& spec, const SampleMatrix& x) {
    if (static_cast<int>(x.dim()) != spec.layer_widths.front()) throw ShapeError("predict: input width mismatch");
    const Expanded e(params);
    const int out_dim = spec.layer_widths.back();
    SampleMatrix out(x.rows(), out_dim);
    ForwardTape tape;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        run_forward(spec, e, x.row(r), tape);
        for (int j = 0; j < out_dim; ++j) out(r, j) = tape.y.back()[static_cast<std::size_t>(j)];
    }
    return out;
}

double loss(const NetworkParams& params, const NetworkSpec& spec, const SampleMatrix& x, const SampleMatrix& t,
            double spline_smooth_weight) {
    check_batch(spec, x, t);
    const Expanded e(params);
    ForwardTape tape;
    double acc = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        run_forward(spec, e, x.row(r), tape);
        for (int j = 0; j < t.dim(); ++j) {
            const double d = tape.y.back()[static_cast<std::size_t>(j)] - t(r, j);
            acc += d * d;
        }
    }
    double value = acc / static_cast<double>(x.rows());
    if (params.spline_offset >= 0) value += spline_smooth_weight * smoothness_penalty(params.spline_ctrl());
    return value;
}

LossGrad grad(const NetworkParams& params, const NetworkSpec& spec, const SampleMatrix& x, const SampleMatrix& t,
              double spline_smooth_weight) {
    check_batch(spec, x, t);
    const Expanded e(params);
    const std::size_t L = e.n_layers();
    const bool spline = is_spline(spec) && params.spline_offset >= 0;
    const double inv_b = 1.0 / static_cast<double>(x.rows());

    std::vector<std::vector<double>> gw(L), gb(L);
    for (std::size_t l = 0; l < L; ++l) {
        gw[l].assign(e.w[l].size(), 0.0);
        gb[l].assign(e.b[l].size(), 0.0);
    }
    std::vector<double> gctrl(spline ? static_cast<std::size_t>(params.spline_count) : 0, 0.0);

    ForwardTape tape;
    std::vector<double> delta, prev;
    double acc = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        run_forward(spec, e, x.row(r), tape);
        const auto& y = tape.y.back();
        delta.assign(y.size(), 0.0);
        for (std::size_t j = 0; j < y.size(); ++j) {
            const double d = y[j] - t(r, static_cast<int>(j));
            acc += d * d;
            delta[j] = 2.0 * d * inv_b;  // dL/dz of the readout layer
        }
        for (std::size_t l = L; l-- > 0;) {
            const int in = e.in[l], out = e.out[l];
            const auto& yin = tape.y[l];
            for (int i = 0; i < out; ++i) {
                const double di = delta[static_cast<std::size_t>(i)];
                gb[l][static_cast<std::size_t>(i)] += di;
                for (int j = 0; j < in; ++j) gw[l][static_cast<std::size_t>(i) * in + j] += di * yin[static_cast<std::size_t>(j)];
            }
            if (l == 0) break;
            // dL/dy of the previous hidden layer, then through its activation.
            prev.assign(static_cast<std::size_t>(in), 0.0);
            for (int i = 0; i < out; ++i)
                for (int j = 0; j < in; ++j)
                    prev[static_cast<std::size_t>(j)] += e.w[l][static_cast<std::size_t>(i) * in + j] * delta[static_cast<std::size_t>(i)];
            const auto& zprev = tape.z[l - 1];
            for (int j = 0; j < in; ++j) {
                const double z = zprev[static_cast<std::size_t>(j)];
                const double gy = prev[static_cast<std::size_t>(j)];
                if (spline) {
                    const SplineEval ev = eval_spline(e.ctrl, e.lo, e.hi, z);
                    for (int k = 0; k < ev.count; ++k)
                        gctrl[static_cast<std::size_t>(ev.index[static_cast<std::size_t>(k)])] +=
                            gy * ev.weight[static_cast<std::size_t>(k)];
                    prev[static_cast<std::size_t>(j)] = gy * ev.slope;
                } else {
                    prev[static_cast<std::size_t>(j)] = gy * activate_derivative(spec.activation, z);
                }
            }
            delta.swap(prev);
        }
    }

    LossGrad out;
    out.loss = acc * inv_b;
    out.grad.assign(params.theta.size(), 0.0);
    for (std::size_t l = 0; l < L; ++l) {
        const auto& s = params.layers[l];
        for (std::size_t k = 0; k < s.weight.size(); ++k) out.grad[static_cast<std::size_t>(s.weight[k])] += gw[l][k];
        for (std::size_t i = 0; i < s.bias.size(); ++i)
            if (s.bias[i] >= 0) out.grad[static_cast<std::size_t>(s.bias[i])] += gb[l][i];
    }
    if (spline) {
        const auto c = params.spline_ctrl();
        const auto off = static_cast<std::size_t>(params.spline_offset);
        for (std::size_t k = 0; k < gctrl.size(); ++k) out.grad[off + k] += gctrl[k];
        out.loss += spline_smooth_weight * smoothness_penalty(c);
        for (std::size_t k = 1; k + 1 < c.size(); ++k) {
            const double d = 2.0 * spline_smooth_weight * (c[k + 1] - 2.0 * c[k] + c[k - 1]);
            out.grad[off + k - 1] += d;
            out.grad[off + k] -= 2.0 * d;
            out.grad[off + k + 1] += d;
        }
    }
    for (std::size_t k = 0; k < out.grad.size(); ++k) {
        if (!params.trainable[k]) out.grad[k] = 0.0;
        if (!std::isfinite(out.grad[k])) throw NonFiniteError("grad: non-finite gradient for " + params.names[k]);
    }
    return out;
}

void adam_step(std::span<double> params, AdamState& state, std::span<const double> grads, const TrainConfig& cfg,
               std::span<const std::uint8_t> mask) {
    if (state.m.size() != params.size() || state.v.size() != params.size() || grads.size() != params.size())
        throw ShapeError("adam_step: state, params and grads differ in length");
    if (!mask.empty() && mask.size() != params.size()) throw ShapeError("adam_step: mask length mismatch");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const double g = grads[i] + cfg.weight_decay * params[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

std::pair<double, double> spline_adaptive_range(const NetworkParams& params, const NetworkSpec& spec,
                                                const SampleMatrix& probe) {
    if (probe.rows() == 0) throw ShapeError("spline_adaptive_range: probe batch is empty");
    if (static_cast<int>(probe.dim()) != spec.layer_widths.front())
        throw ShapeError("spline_adaptive_range: probe width mismatch");
    const auto& s = params.layers.front();
    double mn = std::numeric_limits<double>::infinity();
    double mx = -mn;
    for (std::size_t r = 0; r < probe.rows(); ++r) {
        const auto x = probe.row(r);
        for (int i = 0; i < s.out; ++i) {
            double z = params.bias(0, i);
            for (int j = 0; j < s.in; ++j) z += params.weight(0, i, j) * x[static_cast<std::size_t>(j)];
            mn = std::min(mn, z);
            mx = std::max(mx, z);
        }
    }
    if (!std::isfinite(mn) || !std::isfinite(mx)) throw NonFiniteError("spline_adaptive_range: non-finite preactivation");
    if (mx - mn < 1e-9) {
        const double c = 0.5 * (mn + mx);
        return {c - 1.0, c + 1.0};
    }
    const double pad = 0.05 * (mx - mn);
    return {mn - pad, mx + pad};
}

void reset_spline(NetworkParams& params, double lo, double hi) {
    if (params.spline_offset < 0) throw DomainError("reset_spline: network has no spline");
    if (!(lo < hi)) throw DomainError("reset_spline: need lo < hi");
    params.spline_lo = lo;
    params.spline_hi = hi;
    const auto id = identity_ctrl(params.spline_count, lo, hi);
    std::copy(id.begin(), id.end(), params.spline_ctrl().begin());
}

double spline_nonlinearity(const NetworkParams& params) {
    const auto c = params.spline_ctrl();
    if (c.size() < 2) return 0.0;
    const auto n = static_cast<double>(c.size());
    const double h = (params.spline_hi - params.spline_lo) / (n - 1.0);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < c.size(); ++k) {
        const double x = params.spline_lo + h * static_cast<double>(k);
        sx += x;
        sy += c[k];
        sxx += x * x;
        sxy += x * c[k];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double icpt = (sy - slope * sx) / n;
    double worst = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
        const double x = params.spline_lo + h * static_cast<double>(k);
        worst = std::max(worst, std::abs(c[k] - (icpt + slope * x)));
    }
    return worst / (params.spline_hi - params.spline_lo);
}

TrainResult train(const NetworkSpec& spec, const TrainConfig& cfg, const SampleMatrix& inputs,
                  const SampleMatrix& targets, std::optional<NetworkParams> init) {
    spec.validate();
    cfg.validate();
    check_batch(spec, inputs, targets);
    inputs.require_finite();
    targets.require_finite();

    TrainResult res;
    const bool fresh = !init;
    res.params = fresh ? init_params(spec, cfg, cfg.seed) : std::move(*init);
    // A caller-supplied start keeps its knots.
    if (fresh && is_spline(spec) && spec.activation.spline.adaptive_range && spec.activation.spline.ctrl_values.empty()) {
        const auto [lo, hi] = spline_adaptive_range(res.params, spec, inputs);
        reset_spline(res.params, lo, hi);
    }
    res.spline_range = {res.params.spline_lo, res.params.spline_hi};

    AdamState state(res.params.theta.size());
    const std::size_t n = inputs.rows();
    const auto B = static_cast<std::size_t>(cfg.batch_size);
    std::vector<std::size_t> order(n);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        CounterRng rng(cfg.seed, stream_id("batch-shuffle", static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (std::size_t start = 0; start < n; start += B) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(B, n - start));
            const SampleMatrix xb = take_rows(inputs, idx);
            const SampleMatrix tb = take_rows(targets, idx);
            LossGrad lg;
            try {
                lg = grad(res.params, spec, xb, tb, cfg.spline_smooth_weight);
            } catch (const NonFiniteError& err) {
                throw TrainingDiverged(std::string("training diverged at step ") + std::to_string(res.steps) + ": " +
                                           err.what(),
                                       res.steps, res.loss_curve);
            }
            if (!std::isfinite(lg.loss))
                throw TrainingDiverged("training diverged at step " + std::to_string(res.steps) + ": loss is non-finite",
                                       res.steps, res.loss_curve);
            res.loss_curve.push_back(lg.loss);
            adam_step(res.params.theta, state, lg.grad, cfg, res.params.trainable);
            ++res.steps;
        }
    }
    for (std::size_t k = 0; k < res.params.theta.size(); ++k)
        if (!std::isfinite(res.params.theta[k]))
            throw TrainingDiverged("training diverged: parameter " + res.params.names[k] + " is non-finite", res.steps,
                                   res.loss_curve);
    return res;
}

void to_json(nlohmann::json& j, const NetworkSpec& s) {
    j = nlohmann::json{{"layer_widths", s.layer_widths},
                       {"activation", s.activation},
                       {"use_bias", s.use_bias},
                       {"symmetric_tying", s.symmetric_tying},
                       {"train_weights", s.train_weights}};
}

void from_json(const nlohmann::json& j, NetworkSpec& s) {
    s = NetworkSpec{};
    s.layer_widths = j.value("layer_widths", s.layer_widths);
    if (j.contains("activation")) s.activation = j.at("activation").get<ActivationKind>();
    s.use_bias = j.value("use_bias", s.use_bias);
    s.symmetric_tying = j.value("symmetric_tying", s.symmetric_tying);
    s.train_weights = j.value("train_weights", s.train_weights);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"eps", c.eps},
                       {"weight_decay", c.weight_decay},
                       {"init_sigma_w2", c.init_sigma_w2},
                       {"init_sigma_b2", c.init_sigma_b2},
                       {"spline_smooth_weight", c.spline_smooth_weight},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.init_sigma_w2 = j.value("init_sigma_w2", c.init_sigma_w2);
    c.init_sigma_b2 = j.value("init_sigma_b2", c.init_sigma_b2);
    c.spline_smooth_weight = j.value("spline_smooth_weight", c.spline_smooth_weight);
    c.seed = j.value("seed", c.seed);
}

void to_json(nlohmann::json& j, const NetworkParams& p) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& s : p.layers)
        layers.push_back({{"in", s.in}, {"out", s.out}, {"weight_slots", s.weight}, {"bias_slots", s.bias}});
    std::vector<bool> mask(p.trainable.begin(), p.trainable.end());
    j = nlohmann::json{{"theta", p.theta},     {"trainable", mask},
                       {"names", p.names},     {"layout", layers},
                       {"spline_offset", p.spline_offset}, {"spline_count", p.spline_count},
                       {"spline_lo", p.spline_lo}, {"spline_hi", p.spline_hi}};
}

void from_json(const nlohmann::json& j, NetworkParams& p) {
    p = NetworkParams{};
    p.theta = j.at("theta").get<std::vector<double>>();
    const auto mask = j.at("trainable").get<std::vector<bool>>();
    p.trainable.assign(mask.begin(), mask.end());
    p.names = j.at("names").get<std::vector<std::string>>();
    for (const auto& l : j.at("layout"))
        p.layers.push_back(LayerSlots{l.at("in").get<int>(), l.at("out").get<int>(),
                                      l.at("weight_slots").get<std::vector<int>>(),
                                      l.at("bias_slots").get<std::vector<int>>()});
    p.spline_offset = j.value("spline_offset", -1);
    p.spline_count = j.value("spline_count", 0);
    p.spline_lo = j.value("spline_lo", -1.0);
    p.spline_hi = j.value("spline_hi", 1.0);
    if (p.trainable.size() != p.theta.size() || p.names.size() != p.theta.size())
        throw ShapeError("checkpoint: theta, trainable and names differ in length");
    for (const auto& s : p.layers) {
        if (s.weight.size() != static_cast<std::size_t>(s.in) * s.out || s.bias.size() != static_cast<std::size_t>(s.out))
            throw ShapeError("checkpoint: layout slot counts do not match layer shape");
        for (int k : s.weight)
            if (k < 0 || k >= static_cast<int>(p.theta.size())) throw ShapeError("checkpoint: weight slot out of range");
        for (int k : s.bias)
            if (k >= static_cast<int>(p.theta.size())) throw ShapeError("checkpoint: bias slot out of range");
    }
}

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec, const NetworkParams& params) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << nlohmann::json{{"spec", spec}, {"params", params}}.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

std::pair<NetworkSpec, NetworkParams> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
    }
    return {j.at("spec").get<NetworkSpec>(), j.at("params").get<NetworkParams>()};
}

void write_loss_curve(const std::filesystem::path& path, std::span<const double> curve) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "step,loss\n" << std::setprecision(17);
    for (std::size_t i = 0; i < curve.size(); ++i) out << i << ',' << curve[i] << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace rgsym
