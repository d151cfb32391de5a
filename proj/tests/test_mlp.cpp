#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "rgsym/analytic_weights.hpp"
#include "rgsym/clt_rg.hpp"
#include "rgsym/mlp.hpp"

using namespace rgsym;

namespace {

const double kSqrt2 = std::sqrt(2.0);

NetworkSpec net(ActivationKind a, bool sym = false, bool bias = true) {
    NetworkSpec s;
    s.activation = std::move(a);
    s.symmetric_tying = sym;
    s.use_bias = bias;
    return s;
}

void set_w(NetworkParams& p, int l, int i, int j, double v) {
    const auto& s = p.layers[static_cast<std::size_t>(l)];
    p.theta[static_cast<std::size_t>(s.weight[static_cast<std::size_t>(i) * s.in + j])] = v;
}

void set_b(NetworkParams& p, int l, int i, double v) {
    const int slot = p.layers[static_cast<std::size_t>(l)].bias[static_cast<std::size_t>(i)];
    if (slot >= 0) p.theta[static_cast<std::size_t>(slot)] = v;
}

SampleMatrix pairs(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    return SampleMatrix(n, 2, oracle::uniforms(2 * n, seed, lo, hi));
}

SampleMatrix noisy_targets(const SampleMatrix& x, std::uint64_t seed) {
    auto t = decimate(x);
    const auto e = oracle::normals(t.rows(), seed, 0.0, 0.3);
    for (std::size_t r = 0; r < t.rows(); ++r) t(r, 0) += e[r];
    return t;
}

/// Largest coordinate-wise relative error between grad() and central differences.
double fd_mismatch(NetworkParams p, const NetworkSpec& spec, const SampleMatrix& x, const SampleMatrix& t,
                   double smooth) {
    const auto g = grad(p, spec, x, t, smooth).grad;
    const auto fd = oracle::fd_grad(
        [&](const std::vector<double>& th) {
            NetworkParams q = p;
            q.theta = th;
            return loss(q, spec, x, t, smooth);
        },
        p.theta);
    double worst = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) worst = std::max(worst, oracle::rel_err(g[k], fd[k], 1e-4));
    return worst;
}

}  // namespace

TEST_CASE("init_params is deterministic and ties symmetric entries") {
    TrainConfig cfg;
    const auto spec = net(ActivationKind::quadratic(0.5));
    CHECK(init_params(spec, cfg, 17).theta == init_params(spec, cfg, 17).theta);
    CHECK(init_params(spec, cfg, 17).theta != init_params(spec, cfg, 18).theta);

    const auto sspec = net(ActivationKind::identity(), true);
    const auto p = init_params(sspec, cfg, 3);
    CHECK(p.theta.size() == 5);
    CHECK(p.weight(0, 0, 1) == p.weight(0, 1, 0));
    CHECK(p.weight(0, 0, 0) == p.weight(0, 1, 1));
    CHECK(p.weight(1, 0, 0) == p.weight(1, 0, 1));
    CHECK(p.bias(0, 0) == p.bias(0, 1));
}

TEST_CASE("init entry variance is sigma_w^2 / fan_in") {
    NetworkSpec spec = net(ActivationKind::identity());
    spec.layer_widths = {2, 50000, 1};
    const auto p = init_params(spec, TrainConfig{}, 11);
    std::vector<double> w, b;
    for (int i = 0; i < 50000; ++i) {
        w.push_back(p.weight(0, i, 0));
        w.push_back(p.weight(0, i, 1));
        b.push_back(p.bias(0, i));
    }
    const auto cw = oracle::scalar_cumulants(w);
    const auto cb = oracle::scalar_cumulants(b);
    CHECK(cw[1] == doctest::Approx(0.375).epsilon(0.05));
    CHECK(cb[1] == doctest::Approx(0.75).epsilon(0.05));
    CHECK(std::abs(cw[0]) < 0.01);
}

TEST_CASE("forward examples") {
    SUBCASE("single affine layer with the exact weights") {
        NetworkSpec spec = net(ActivationKind::identity(), false, false);
        spec.layer_widths = {2, 1};
        auto p = init_params(spec, TrainConfig{}, 0);
        set_w(p, 0, 0, 0, 1.0 / kSqrt2);
        set_w(p, 0, 0, 1, 1.0 / kSqrt2);
        const std::vector<double> x{1.0, 1.0};
        CHECK(forward(p, spec, x).first[0] == doctest::Approx(kSqrt2).epsilon(1e-15));
    }
    SUBCASE("relu with all-negative preactivations") {
        const auto spec = net(ActivationKind::relu());
        auto p = init_params(spec, TrainConfig{}, 0);
        for (int i = 0; i < 2; ++i) {
            set_w(p, 0, i, 0, 0.4);
            set_w(p, 0, i, 1, 0.3);
            set_b(p, 0, i, -5.0);
        }
        set_b(p, 1, 0, 0.0);
        const std::vector<double> x{1.0, 2.0};
        const auto [y, tape] = forward(p, spec, x);
        CHECK(y[0] == 0.0);
        CHECK(tape.z[0][0] < 0.0);
        CHECK(tape.y.size() == 3);
    }
    SUBCASE("quadratic with alpha = 0 is the identity net") {
        const auto q = net(ActivationKind::quadratic(0.0));
        const auto id = net(ActivationKind::identity());
        const auto p = init_params(q, TrainConfig{}, 5);
        const auto x = pairs(50, 1);
        for (std::size_t r = 0; r < x.rows(); ++r)
            CHECK(forward(p, q, x.row(r)).first[0] == forward(p, id, x.row(r)).first[0]);
    }
    SUBCASE("input width mismatch and non-finite values") {
        const auto spec = net(ActivationKind::identity());
        const auto p = init_params(spec, TrainConfig{}, 0);
        const std::vector<double> bad{1.0, 2.0, 3.0};
        CHECK_THROWS_AS(forward(p, spec, bad), ShapeError);
        const std::vector<double> nan{std::nan(""), 0.0};
        CHECK_THROWS_AS(forward(p, spec, nan), NonFiniteError);
    }
}

TEST_CASE("zero residual gives zero gradient") {
    const auto spec = net(ActivationKind::quadratic(0.5));
    const auto p = init_params(spec, TrainConfig{}, 2);
    const auto x = pairs(40, 3);
    const auto t = predict(p, spec, x);
    const auto lg = grad(p, spec, x, t, 0.0);
    CHECK(lg.loss == 0.0);
    for (double g : lg.grad) CHECK(g == 0.0);
}

TEST_CASE("gradients match central finite differences") {
    const auto x = pairs(32, 7);
    const auto t = noisy_targets(x, 8);
    TrainConfig cfg;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (bool sym : {false, true}) {
            CAPTURE(sym);
            CAPTURE(seed);
            const auto id = net(ActivationKind::identity(), sym);
            CHECK(fd_mismatch(init_params(id, cfg, seed), id, x, t, 0.0) < 1e-5);
            const auto q = net(ActivationKind::quadratic(0.5), sym);
            CHECK(fd_mismatch(init_params(q, cfg, seed), q, x, t, 0.0) < 1e-5);
        }
        SplineConfig sc;
        sc.n_ctrl = 8;
        sc.lo = -2.0;
        sc.hi = 2.0;
        const auto sp = net(ActivationKind::make_spline(sc));
        auto p = init_params(sp, cfg, seed);
        // Bend the control values so the penalty and slope terms are non-trivial.
        auto c = p.spline_ctrl();
        const auto bump = oracle::normals(c.size(), seed + 100, 0.0, 0.3);
        for (std::size_t k = 0; k < c.size(); ++k) c[k] += bump[k];
        CHECK(fd_mismatch(p, sp, x, t, 1e-3) < 1e-5);
        CHECK(fd_mismatch(p, sp, x, t, 0.5) < 1e-5);
    }
}

TEST_CASE("relu gradient at offset points and at the kink") {
    const auto spec = net(ActivationKind::relu());
    const auto x = pairs(32, 9);
    const auto t = noisy_targets(x, 10);
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto p = init_params(spec, TrainConfig{}, seed);
        bool near_kink = false;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const auto tape = forward(p, spec, x.row(r)).second;
            for (double z : tape.z[0]) near_kink |= std::abs(z) < 1e-4;
        }
        if (near_kink) continue;
        CHECK(fd_mismatch(p, spec, x, t, 0.0) < 1e-5);
        ++checked;
    }
    CHECK(checked > 0);
    // A preactivation exactly at 0 takes the z <= 0 branch: no gradient flows to W1.
    auto p = init_params(spec, TrainConfig{}, 0);
    for (int i = 0; i < 2; ++i) {
        set_w(p, 0, i, 0, 1.0);
        set_w(p, 0, i, 1, -1.0);
        set_b(p, 0, i, 0.0);
    }
    const SampleMatrix xk(1, 2, {0.5, 0.5});
    const SampleMatrix tk(1, 1, {3.0});
    const auto g = grad(p, spec, xk, tk, 0.0).grad;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            CHECK(g[static_cast<std::size_t>(p.layers[0].weight[static_cast<std::size_t>(i * 2 + j)])] == 0.0);
}

TEST_CASE("tied entries accumulate the gradient of every position") {
    const auto f = net(ActivationKind::quadratic(0.5));
    const auto s = net(ActivationKind::quadratic(0.5), true);
    const auto ps = init_params(s, TrainConfig{}, 4);
    auto pf = init_params(f, TrainConfig{}, 0);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) set_w(pf, 0, i, j, ps.weight(0, i, j));
        set_w(pf, 1, 0, i, ps.weight(1, 0, i));
        set_b(pf, 0, i, ps.bias(0, i));
    }
    set_b(pf, 1, 0, ps.bias(1, 0));
    const auto x = pairs(20, 12);
    const auto t = noisy_targets(x, 13);
    const auto gf = grad(pf, f, x, t, 0.0).grad;
    const auto gs = grad(ps, s, x, t, 0.0).grad;
    auto at = [&](int l, int i, int j) {
        return gf[static_cast<std::size_t>(pf.layers[static_cast<std::size_t>(l)].weight[static_cast<std::size_t>(
            i * pf.layers[static_cast<std::size_t>(l)].in + j)])];
    };
    CHECK(gs[0] == doctest::Approx(at(0, 0, 0) + at(0, 1, 1)).epsilon(1e-12));
    CHECK(gs[1] == doctest::Approx(at(0, 0, 1) + at(0, 1, 0)).epsilon(1e-12));
    CHECK(gs[2] == doctest::Approx(at(1, 0, 0) + at(1, 0, 1)).epsilon(1e-12));
}

TEST_CASE("adam step examples") {
    TrainConfig cfg;
    SUBCASE("first step moves each coordinate by lr in the direction of -g") {
        std::vector<double> th{1.0, -2.0, 0.5};
        const std::vector<double> g{3.0, -0.01, 1e-3};
        AdamState st(3);
        adam_step(th, st, g, cfg);
        const std::vector<double> start{1.0, -2.0, 0.5};
        for (std::size_t k = 0; k < 3; ++k) {
            const double expect = -cfg.lr * g[k] / (std::abs(g[k]) + cfg.eps);
            CHECK(th[k] - start[k] == doctest::Approx(expect).epsilon(1e-9));
            CHECK(std::abs(th[k] - start[k]) == doctest::Approx(cfg.lr).epsilon(1e-4));
        }
        CHECK(st.step == 1);
        CHECK(st.m[0] == doctest::Approx(0.3));
        CHECK(st.v[0] == doctest::Approx(0.009));
    }
    SUBCASE("zero gradient leaves parameters unchanged") {
        std::vector<double> th{1.0, 2.0};
        AdamState st(2);
        const std::vector<double> g1{1.0, 1.0};
        adam_step(th, st, g1, cfg);
        const auto m_before = st.m;
        const auto fresh = std::vector<double>{1.0, 2.0};
        std::vector<double> th2 = fresh;
        AdamState st2(2);
        const std::vector<double> zero{0.0, 0.0};
        adam_step(th2, st2, zero, cfg);
        CHECK(th2 == fresh);
        adam_step(th, st, zero, cfg);
        CHECK(st.m[0] == doctest::Approx(0.9 * m_before[0]));
    }
    SUBCASE("masked coordinates are frozen") {
        std::vector<double> th{1.0, 2.0};
        AdamState st(2);
        const std::vector<double> g{1.0, 1.0};
        const std::vector<std::uint8_t> mask{0, 1};
        adam_step(th, st, g, cfg, mask);
        CHECK(th[0] == 1.0);
        CHECK(th[1] != 2.0);
    }
    SUBCASE("length mismatch") {
        std::vector<double> th{1.0, 2.0};
        AdamState st(2);
        const std::vector<double> g{1.0};
        CHECK_THROWS_AS(adam_step(th, st, g, cfg), ShapeError);
    }
}

TEST_CASE("train: linear net on the Gaussian task") {
    const auto data = make_task_dataset(SourceDistribution::gaussian(1.0), {0, 100000, 21});
    TrainConfig cfg;
    cfg.seed = 1;
    const auto spec = net(ActivationKind::identity());
    const auto r = train(spec, cfg, data.inputs, data.targets);
    CHECK(r.steps == 2 * ((100000 + 63) / 64));
    CHECK(r.loss_curve.size() == r.steps);
    CHECK(r.loss_curve.back() < 1e-3 * r.loss_curve.front());

    const auto again = train(spec, cfg, data.inputs, data.targets);
    CHECK(again.params.theta == r.params.theta);
    CHECK(again.loss_curve == r.loss_curve);

    const auto sspec = net(ActivationKind::identity(), true);
    const auto rs = train(sspec, cfg, data.inputs, data.targets);
    CHECK(check_symmetry_subspace(rs.params.symmetric(), 1e-4).pass);

    TrainConfig zero = cfg;
    zero.epochs = 0;
    const auto r0 = train(spec, zero, data.inputs, data.targets);
    CHECK(r0.params.theta == init_params(spec, cfg, cfg.seed).theta);
    CHECK(r0.steps == 0);
    CHECK(r0.loss_curve.empty());
}

TEST_CASE("symmetric tying survives training bit-for-bit") {
    const auto data = make_task_dataset(SourceDistribution::uniform(0.0, 1.0), {0, 5000, 4});
    for (const auto& a : {ActivationKind::quadratic(0.5), ActivationKind::relu(), ActivationKind::leaky_relu(0.5)}) {
        TrainConfig cfg;
        cfg.seed = 6;
        const auto spec = net(a, true);
        NetworkParams p;
        try {
            p = train(spec, cfg, data.inputs, data.targets).params;
        } catch (const TrainingDiverged&) {
            continue;
        }
        const auto m = p.model(spec);
        const auto& W1 = m.layers[0];
        const auto& W2 = m.layers[1];
        CHECK(W1.w(0, 0) == W1.w(1, 1));
        CHECK(W1.w(0, 1) == W1.w(1, 0));
        CHECK(W2.w(0, 0) == W2.w(0, 1));
        CHECK(W1.bias[0] == W1.bias[1]);
    }
}

TEST_CASE("frozen weights: only spline control values move") {
    const auto data = make_task_dataset(SourceDistribution::uniform(0.0, 1.0), {0, 3000, 5});
    auto spec = net(ActivationKind::make_spline(SplineConfig{}));
    spec.train_weights = false;
    TrainConfig cfg;
    cfg.seed = 2;
    const auto r = train(spec, cfg, data.inputs, data.targets);
    auto start = init_params(spec, cfg, cfg.seed);
    for (std::size_t k = 0; k < static_cast<std::size_t>(r.params.spline_offset); ++k)
        CHECK(r.params.theta[k] == start.theta[k]);
    bool moved = false;
    const auto c = r.params.spline_ctrl();
    const auto lin = identity_ctrl(r.params.spline_count, r.params.spline_lo, r.params.spline_hi);
    for (std::size_t k = 0; k < c.size(); ++k) moved |= c[k] != lin[k];
    CHECK(moved);
}

TEST_CASE("training divergence is reported, not retried") {
    const SampleMatrix x(64, 2, std::vector<double>(128, 1e160));
    const SampleMatrix t(64, 1, std::vector<double>(64, 1.0));
    const auto spec = net(ActivationKind::quadratic(0.5));
    try {
        (void)train(spec, TrainConfig{}, x, t);
        FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
        CHECK(e.step() == 0);
        CHECK(std::string(e.what()).find("diverged") != std::string::npos);
    }
}

TEST_CASE("spline adaptive range") {
    auto spec = net(ActivationKind::make_spline(SplineConfig{}));
    auto p = init_params(spec, TrainConfig{}, 0);
    set_w(p, 0, 0, 0, 1.0);
    set_w(p, 0, 0, 1, 0.0);
    set_w(p, 0, 1, 0, 0.0);
    set_w(p, 0, 1, 1, 1.0);
    set_b(p, 0, 0, 0.0);
    set_b(p, 0, 1, 0.0);
    const SampleMatrix probe(3, 2, {-1.0, 1.0, 1.0, -1.0, 0.5, 0.2});
    const auto [lo, hi] = spline_adaptive_range(p, spec, probe);
    CHECK(lo == doctest::Approx(-1.1).epsilon(1e-14));
    CHECK(hi == doctest::Approx(1.1).epsilon(1e-14));

    set_w(p, 0, 0, 0, 0.0);
    set_w(p, 0, 1, 1, 0.0);
    set_b(p, 0, 0, 0.7);
    set_b(p, 0, 1, 0.7);
    const auto [clo, chi] = spline_adaptive_range(p, spec, probe);
    CHECK(clo == doctest::Approx(-0.3));
    CHECK(chi == doctest::Approx(1.7));

    CHECK_THROWS(spline_adaptive_range(p, spec, SampleMatrix(0, 2)));
}

TEST_CASE("identity-initialised spline equals the identity net") {
    const auto id = net(ActivationKind::identity());
    for (auto range : {std::pair{-1.0, 1.0}, std::pair{-3.7, 0.4}, std::pair{2.0, 9.0}}) {
        SplineConfig sc;
        sc.lo = range.first;
        sc.hi = range.second;
        const auto sp = net(ActivationKind::make_spline(sc));
        const auto p = init_params(sp, TrainConfig{}, 8);
        const auto x = pairs(200, 14, -2.0, 2.0);
        for (std::size_t r = 0; r < x.rows(); ++r)
            CHECK(std::abs(forward(p, sp, x.row(r)).first[0] - forward(p, id, x.row(r)).first[0]) < 1e-10);
        CHECK(spline_nonlinearity(p) < 1e-14);
    }
}

TEST_CASE("collinear control values reproduce their line") {
    const double lo = -1.5, hi = 2.5, a = 0.3, b = -1.7;
    const int n = 11;
    std::vector<double> ctrl(n);
    for (int k = 0; k < n; ++k) ctrl[static_cast<std::size_t>(k)] = a + b * (lo + (hi - lo) * k / (n - 1.0));
    for (int i = 0; i <= 400; ++i) {
        const double x = -3.0 + 7.0 * i / 400.0;
        const auto e = eval_spline(ctrl, lo, hi, x);
        CHECK(e.value == doctest::Approx(a + b * x).epsilon(1e-12));
        CHECK(e.slope == doctest::Approx(b).epsilon(1e-12));
    }
}

TEST_CASE("embedded exact solution has zero loss") {
    const auto spec = net(ActivationKind::identity(), true);
    const auto data = make_task_dataset(SourceDistribution::uniform(0.0, 1.0), {0, 2000, 9});
    for (auto [w1, w2] : {std::pair{0.2, 0.9}, std::pair{-0.4, 0.5}, std::pair{0.0, 1.0 / kSqrt2}}) {
        auto p = init_params(spec, TrainConfig{}, 0);
        p.theta = {linear_surface(w1, w2), w1, w2, 0.3, -2.0 * w2 * 0.3};
        CHECK(check_symmetry_subspace(p.symmetric(), 1e-12).pass);
        CHECK(loss(p, spec, data.inputs, data.targets, 0.0) < 1e-28);
    }
    // Single-layer exact solution.
    NetworkSpec one = net(ActivationKind::identity());
    one.layer_widths = {2, 1};
    auto p = init_params(one, TrainConfig{}, 0);
    const auto s = solve_single_layer(true);
    set_w(p, 0, 0, 0, s.w[0]);
    set_w(p, 0, 0, 1, s.w[1]);
    set_b(p, 0, 0, s.b);
    CHECK(loss(p, one, data.inputs, data.targets, 0.0) < 1e-28);
}

TEST_CASE("checkpoint and loss-curve round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "rgsym_test_mlp";
    std::filesystem::create_directories(dir);
    SplineConfig sc;
    sc.n_ctrl = 6;
    const auto spec = net(ActivationKind::make_spline(sc), true);
    const auto p = init_params(spec, TrainConfig{}, 31);
    save_checkpoint(dir / "ck.json", spec, p);
    const auto [s2, p2] = load_checkpoint(dir / "ck.json");
    CHECK(nlohmann::json(s2) == nlohmann::json(spec));
    CHECK(p2.theta == p.theta);
    CHECK(p2.names == p.names);
    CHECK(p2.spline_lo == p.spline_lo);
    const auto x = pairs(10, 2);
    for (std::size_t r = 0; r < x.rows(); ++r)
        CHECK(forward(p2, s2, x.row(r)).first[0] == forward(p, spec, x.row(r)).first[0]);

    const std::vector<double> curve{0.5, 0.25, 0.125};
    write_loss_curve(dir / "loss.csv", curve);
    std::ifstream in(dir / "loss.csv");
    std::string header, line;
    std::getline(in, header);
    CHECK(header == "step,loss");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);

    CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), IoError);
    std::filesystem::remove_all(dir);
}
