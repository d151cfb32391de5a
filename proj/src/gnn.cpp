#include "rgsym/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <nlohmann/json.hpp>

#include "rgsym/rng.hpp"

namespace rgsym {

void GnnSpec::validate() const {
    if (n_layers != 1 && n_layers != 2) throw DomainError("GnnSpec: n_layers must be 1 or 2");
    if (hidden_dim != 1 && hidden_dim != 2) throw DomainError("GnnSpec: hidden_dim must be 1 or 2");
}

std::vector<int> GnnSpec::widths() const {
    validate();
    return n_layers == 1 ? std::vector<int>{1, 1} : std::vector<int>{1, hidden_dim, 1};
}

NeighborhoodSpec TwoNodeGraph::neighborhood() {
    NeighborhoodSpec n;
    n.in_neighbors = {{source}, {}};
    return n;
}

nlohmann::json TwoNodeGraph::topology() {
    return {{"nodes", {{{"id", target}, {"role", "target"}}, {{"id", source}, {"role", "source"}}}},
            {"edges", {{source, target}}},
            {"aggregation", "sum"}};
}

void GnnTrainConfig::validate() const {
    base.validate();
    if (sym_reg_weight < 0.0 || norm_penalty_weight < 0.0 || norm_floor < 0.0)
        throw DomainError("GnnTrainConfig: regulariser weights and floor must be >= 0");
}

std::size_t GnnParams::size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w_self.size() + l.w_neigh.size() + l.bias.size();
    return n;
}

std::vector<double> GnnParams::flatten() const {
    std::vector<double> t;
    t.reserve(size());
    for (const auto& l : layers) {
        t.insert(t.end(), l.w_self.begin(), l.w_self.end());
        t.insert(t.end(), l.w_neigh.begin(), l.w_neigh.end());
        t.insert(t.end(), l.bias.begin(), l.bias.end());
    }
    return t;
}

void GnnParams::assign(std::span<const double> theta) {
    if (theta.size() != size()) throw ShapeError("GnnParams::assign: length mismatch");
    std::size_t k = 0;
    for (auto& l : layers) {
        for (auto& v : l.w_self) v = theta[k++];
        for (auto& v : l.w_neigh) v = theta[k++];
        for (auto& v : l.bias) v = theta[k++];
    }
}

GnnParams gnn_init_params(const GnnSpec& spec, const TrainConfig& cfg, std::uint64_t seed) {
    const auto w = spec.widths();
    CounterRng rng(seed, stream_id("gnn-init-params"));
    GnnParams p;
    const double sb = spec.use_bias ? std::sqrt(cfg.init_sigma_b2) : 0.0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        const int in = w[l], out = w[l + 1];
        const double sd = std::sqrt(cfg.init_sigma_w2 / in);
        std::vector<double> ws(static_cast<std::size_t>(in * out)), wn(ws.size()), b(static_cast<std::size_t>(out));
        for (auto& v : ws) v = rng.normal(0.0, sd);
        for (auto& v : wn) v = rng.normal(0.0, sd);
        for (auto& v : b) v = spec.use_bias ? rng.normal(0.0, sb) : 0.0;
        p.layers.emplace_back(in, out, std::move(ws), std::move(wn), std::move(b));
    }
    return p;
}

namespace {

void matvec_add(const std::vector<double>& m, int out, int in, const std::vector<double>& x, std::vector<double>& y) {
    for (int i = 0; i < out; ++i)
        for (int j = 0; j < in; ++j) y[static_cast<std::size_t>(i)] += m[static_cast<std::size_t>(i * in + j)] * x[static_cast<std::size_t>(j)];
}

struct NodeTape {
    std::vector<std::vector<double>> hu, hv;  // states entering each layer, then the output
};

void run(const GnnParams& p, double xu, double xv, NodeTape& tape) {
    const std::size_t L = p.layers.size();
    tape.hu.resize(L + 1);
    tape.hv.resize(L + 1);
    tape.hu[0] = {xu};
    tape.hv[0] = {xv};
    for (std::size_t l = 0; l < L; ++l) {
        const auto& ly = p.layers[l];
        auto& u = tape.hu[l + 1];
        auto& v = tape.hv[l + 1];
        u = ly.bias;
        v = ly.bias;
        matvec_add(ly.w_self, ly.out, ly.in, tape.hu[l], u);
        matvec_add(ly.w_neigh, ly.out, ly.in, tape.hv[l], u);
        matvec_add(ly.w_self, ly.out, ly.in, tape.hv[l], v);
        for (double x : u)
            if (!std::isfinite(x)) throw NonFiniteError("gnn_forward: non-finite value in layer " + std::to_string(l));
    }
}

void check(const GnnParams& p, const SampleMatrix& x, const SampleMatrix& t) {
    if (p.layers.empty()) throw ShapeError("GNN has no layers");
    if (x.dim() != 2) throw ShapeError("graph batch must have two columns (x_u, x_v)");
    if (x.rows() == 0) throw ShapeError("graph batch is empty");
    if (t.rows() != x.rows() || t.dim() != p.layers.back().out) throw ShapeError("targets do not match GNN output");
    if (p.layers.front().in != 1) throw ShapeError("GNN input width must be 1");
}

double frob2(const std::vector<double>& a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return s;
}

double penalty(const GnnParams& p, const GnnTrainConfig& cfg) {
    double value = 0.0;
    for (const auto& l : p.layers) {
        double diff = 0.0;
        for (std::size_t k = 0; k < l.w_self.size(); ++k) diff += (l.w_self[k] - l.w_neigh[k]) * (l.w_self[k] - l.w_neigh[k]);
        value += cfg.sym_reg_weight * diff;
        const double gap = cfg.norm_floor - std::sqrt(frob2(l.w_self) + frob2(l.w_neigh));
        if (gap > 0.0) value += cfg.norm_penalty_weight * gap * gap;
    }
    return value;
}

}  // namespace

std::vector<double> gnn_forward(const GnnParams& params, std::span<const double> xu_xv) {
    if (xu_xv.size() != 2) throw ShapeError("gnn_forward: expected (x_u, x_v)");
    NodeTape tape;
    run(params, xu_xv[0], xu_xv[1], tape);
    return tape.hu.back();
}

SampleMatrix gnn_forward(const GnnParams& params, const SampleMatrix& graph_batch) {
    if (graph_batch.dim() != 2) throw ShapeError("gnn_forward: graph batch must have two columns");
    const int out_dim = params.layers.back().out;
    SampleMatrix out(graph_batch.rows(), out_dim);
    NodeTape tape;
    for (std::size_t r = 0; r < graph_batch.rows(); ++r) {
        run(params, graph_batch(r, 0), graph_batch(r, 1), tape);
        for (int j = 0; j < out_dim; ++j) out(r, j) = tape.hu.back()[static_cast<std::size_t>(j)];
    }
    return out;
}

double gnn_loss(const GnnParams& params, const SampleMatrix& batch, const SampleMatrix& targets,
                const GnnTrainConfig& cfg) {
    check(params, batch, targets);
    NodeTape tape;
    double acc = 0.0;
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        run(params, batch(r, 0), batch(r, 1), tape);
        for (int j = 0; j < targets.dim(); ++j) {
            const double d = tape.hu.back()[static_cast<std::size_t>(j)] - targets(r, j);
            acc += d * d;
        }
    }
    return acc / static_cast<double>(batch.rows()) + penalty(params, cfg);
}

LossGrad gnn_grad(const GnnParams& params, const SampleMatrix& batch, const SampleMatrix& targets,
                  const GnnTrainConfig& cfg) {
    check(params, batch, targets);
    const std::size_t L = params.layers.size();
    const double inv_b = 1.0 / static_cast<double>(batch.rows());
    GnnParams g = params;
    for (auto& l : g.layers) {
        std::fill(l.w_self.begin(), l.w_self.end(), 0.0);
        std::fill(l.w_neigh.begin(), l.w_neigh.end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }

    NodeTape tape;
    std::vector<double> du, dv, pu, pv;
    double acc = 0.0;
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        run(params, batch(r, 0), batch(r, 1), tape);
        const auto& y = tape.hu.back();
        du.assign(y.size(), 0.0);
        dv.assign(y.size(), 0.0);  // the loss never reads the source node
        for (std::size_t j = 0; j < y.size(); ++j) {
            const double d = y[j] - targets(r, static_cast<int>(j));
            acc += d * d;
            du[j] = 2.0 * d * inv_b;
        }
        for (std::size_t l = L; l-- > 0;) {
            const auto& ly = params.layers[l];
            auto& gl = g.layers[l];
            const auto& hu = tape.hu[l];
            const auto& hv = tape.hv[l];
            const int in = ly.in, out = ly.out;
            pu.assign(static_cast<std::size_t>(in), 0.0);
            pv.assign(static_cast<std::size_t>(in), 0.0);
            for (int i = 0; i < out; ++i) {
                const double a = du[static_cast<std::size_t>(i)];
                const double b = dv[static_cast<std::size_t>(i)];
                gl.bias[static_cast<std::size_t>(i)] += a + b;
                for (int j = 0; j < in; ++j) {
                    const auto k = static_cast<std::size_t>(i * in + j);
                    const auto jj = static_cast<std::size_t>(j);
                    gl.w_self[k] += a * hu[jj] + b * hv[jj];
                    gl.w_neigh[k] += a * hv[jj];
                    pu[jj] += ly.w_self[k] * a;
                    pv[jj] += ly.w_neigh[k] * a + ly.w_self[k] * b;
                }
            }
            du.swap(pu);
            dv.swap(pv);
        }
    }

    for (std::size_t l = 0; l < L; ++l) {
        const auto& ly = params.layers[l];
        auto& gl = g.layers[l];
        for (std::size_t k = 0; k < ly.w_self.size(); ++k) {
            const double d = 2.0 * cfg.sym_reg_weight * (ly.w_self[k] - ly.w_neigh[k]);
            gl.w_self[k] += d;
            gl.w_neigh[k] -= d;
        }
        const double norm = std::sqrt(frob2(ly.w_self) + frob2(ly.w_neigh));
        const double gap = cfg.norm_floor - norm;
        if (gap > 0.0 && norm > 0.0) {
            // d/dW (floor - |W|)^2 = -2 (floor - |W|) W / |W|
            const double s = -2.0 * cfg.norm_penalty_weight * gap / norm;
            for (std::size_t k = 0; k < ly.w_self.size(); ++k) {
                gl.w_self[k] += s * ly.w_self[k];
                gl.w_neigh[k] += s * ly.w_neigh[k];
            }
        }
    }

    LossGrad out;
    out.grad = g.flatten();
    out.loss = acc * inv_b + penalty(params, cfg);
    for (double v : out.grad)
        if (!std::isfinite(v)) throw NonFiniteError("gnn_grad: non-finite gradient");
    return out;
}

GnnTrainResult gnn_train(const GnnSpec& spec, const GnnTrainConfig& cfg, const SampleMatrix& inputs,
                         const SampleMatrix& targets, std::optional<GnnParams> init) {
    spec.validate();
    cfg.validate();
    inputs.require_finite();
    targets.require_finite();
    GnnTrainResult res;
    res.params = init ? std::move(*init) : gnn_init_params(spec, cfg.base, cfg.base.seed);
    check(res.params, inputs, targets);
    if (!spec.use_bias)
        for (const auto& l : res.params.layers)
            for (double b : l.bias)
                if (b != 0.0) throw DomainError("gnn_train: use_bias is false but the initial bias is non-zero");

    std::vector<double> theta = res.params.flatten();
    std::vector<std::uint8_t> mask(theta.size(), 1);
    if (!spec.use_bias) {
        std::size_t k = 0;
        for (const auto& l : res.params.layers) {
            k += l.w_self.size() + l.w_neigh.size();
            for (std::size_t i = 0; i < l.bias.size(); ++i) mask[k++] = 0;
        }
    }
    AdamState state(theta.size());
    const std::size_t n = inputs.rows();
    const auto B = static_cast<std::size_t>(cfg.base.batch_size);
    std::vector<std::size_t> order(n);
    SampleMatrix xb, tb;
    for (int epoch = 0; epoch < cfg.base.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        CounterRng rng(cfg.base.seed, stream_id("batch-shuffle", static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (std::size_t start = 0; start < n; start += B) {
            const std::size_t m = std::min(B, n - start);
            xb = SampleMatrix(m, 2);
            tb = SampleMatrix(m, targets.dim());
            for (std::size_t r = 0; r < m; ++r) {
                const std::size_t src = order[start + r];
                xb(r, 0) = inputs(src, 0);
                xb(r, 1) = inputs(src, 1);
                for (int j = 0; j < targets.dim(); ++j) tb(r, j) = targets(src, j);
            }
            LossGrad lg;
            try {
                lg = gnn_grad(res.params, xb, tb, cfg);
            } catch (const NonFiniteError& err) {
                throw TrainingDiverged("GNN training diverged at step " + std::to_string(res.steps) + ": " + err.what(),
                                       res.steps, res.loss_curve);
            }
            if (!std::isfinite(lg.loss))
                throw TrainingDiverged("GNN training diverged at step " + std::to_string(res.steps), res.steps,
                                       res.loss_curve);
            res.loss_curve.push_back(lg.loss);
            adam_step(theta, state, lg.grad, cfg.base, mask);
            res.params.assign(theta);
            ++res.steps;
        }
    }
    return res;
}

void to_json(nlohmann::json& j, const GnnSpec& s) {
    j = nlohmann::json{{"n_layers", s.n_layers}, {"hidden_dim", s.hidden_dim}, {"use_bias", s.use_bias}};
}

void from_json(const nlohmann::json& j, GnnSpec& s) {
    s = GnnSpec{};
    s.n_layers = j.value("n_layers", s.n_layers);
    s.hidden_dim = j.value("hidden_dim", s.hidden_dim);
    s.use_bias = j.value("use_bias", s.use_bias);
}

void to_json(nlohmann::json& j, const GnnTrainConfig& c) {
    j = nlohmann::json{{"train", c.base},
                       {"sym_reg_weight", c.sym_reg_weight},
                       {"norm_penalty_weight", c.norm_penalty_weight},
                       {"norm_floor", c.norm_floor}};
}

void from_json(const nlohmann::json& j, GnnTrainConfig& c) {
    c = GnnTrainConfig{};
    if (j.contains("train")) c.base = j.at("train").get<TrainConfig>();
    c.sym_reg_weight = j.value("sym_reg_weight", c.sym_reg_weight);
    c.norm_penalty_weight = j.value("norm_penalty_weight", c.norm_penalty_weight);
    c.norm_floor = j.value("norm_floor", c.norm_floor);
}

void to_json(nlohmann::json& j, const GnnParams& p) {
    j = nlohmann::json::array();
    for (const auto& l : p.layers)
        j.push_back({{"in", l.in}, {"out", l.out}, {"w_self", l.w_self}, {"w_neigh", l.w_neigh}, {"bias", l.bias}});
}

void from_json(const nlohmann::json& j, GnnParams& p) {
    p.layers.clear();
    for (const auto& l : j)
        p.layers.emplace_back(l.at("in").get<int>(), l.at("out").get<int>(), l.at("w_self").get<std::vector<double>>(),
                              l.at("w_neigh").get<std::vector<double>>(), l.at("bias").get<std::vector<double>>());
    for (const auto& l : p.layers) l.validate();
}

void save_gnn_checkpoint(const std::filesystem::path& path, const GnnSpec& spec, const GnnParams& params) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << nlohmann::json{{"spec", spec}, {"params", params}, {"topology", TwoNodeGraph::topology()}}.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

std::pair<GnnSpec, GnnParams> load_gnn_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
    }
    return {j.at("spec").get<GnnSpec>(), j.at("params").get<GnnParams>()};
}

}  // namespace rgsym
