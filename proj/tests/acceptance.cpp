// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rgsym/analytic_weights.hpp"
#include "rgsym/clt_rg.hpp"
#include "rgsym/experiments.hpp"
#include "rgsym/metrics.hpp"
#include "rgsym/mlp.hpp"
#include "rgsym/propagation.hpp"

using namespace rgsym;

namespace {

// Pinned tolerances.
constexpr double kSeSigmas = 5.0;
constexpr double kC1Seconds = 5.0;
constexpr double kC2Seconds = 30.0;
constexpr double kC2LowOrder = 1e-10;
constexpr double kC2HighOrder = 1e-9;
constexpr double kC3Rel = 0.01;
constexpr double kC4Rel = 1e-12;
constexpr double kC4Feasible = 1e-3;
constexpr double kC5Residual = 1e-4;
constexpr double kC6LinearDkl = 1e-3;
constexpr double kC6ReluDevPct = 60.0;
constexpr double kC6QuadRatio = 5.0;
constexpr double kC7SymRatio = 1e2;
constexpr int kC7FromStep = 6;
constexpr double kC7FreeRatio = 10.0;
constexpr double kC8K2Pct = 2.0;
constexpr int kC8Steps = 8;
constexpr double kC8HighPct = 100.0;
constexpr double kC9Rel = 1e-5;
constexpr double kC10MaxAbs = 1e-4;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
    std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::nan("");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

std::vector<double> column0(const SampleMatrix& m) {
    std::vector<double> v(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) v[r] = m(r, 0);
    return v;
}

// (condition, variance or step) -> per-seed values.
using Cells = std::map<std::pair<std::string, double>, std::vector<double>>;

void criterion1() {
    const auto t0 = Clock::now();
    const auto ds = make_task_dataset(SourceDistribution::uniform(0, 1), {0, 1'000'000, 1});
    const auto c = estimate_cumulants(ds.targets, 4);
    const double secs = seconds_since(t0);
    const auto v = column0(ds.targets);
    const double truth[3] = {std::numbers::sqrt2 * 0.5, 1.0 / 12, -1.0 / 240};
    const int orders[3] = {1, 2, 4};
    bool ok = secs < kC1Seconds;
    std::string detail;
    for (int k = 0; k < 3; ++k) {
        const int r = orders[k];
        const double se = oracle::batch_se(v, [r](const std::vector<double>& b) { return oracle::scalar_cumulants(b)[r - 1]; });
        const double z = std::abs(c.kappa(r) - truth[k]) / se;
        ok &= z < kSeSigmas;
        detail += fmt("k%d %.3f SE, ", r, z);
    }
    report(1, ok, detail + fmt("%.2f s (< %.0f s)", secs, kC1Seconds));
}

void criterion2() {
    const auto t0 = Clock::now();
    CounterRng rng(2002, 0);
    SampleMatrix x(1'000'000, 2);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        x(r, 0) = rng.uniform();
        x(r, 1) = -std::log(1.0 - rng.uniform());
    }
    const auto cin = estimate_cumulants(x, 4);
    double low = 0.0, high = 0.0;
    for (int net = 0; net < 20; ++net) {
        std::vector<double> w1(4), b1(2), w2(2), b2(1);
        for (auto* v : {&w1, &b1, &w2, &b2})
            for (auto& e : *v) e = rng.uniform(-1.5, 1.5);
        const MlpModel m{{AffineLayer(2, 2, w1, b1), AffineLayer(2, 1, w2, b2)}, ActivationKind::identity()};
        const auto prop = propagate_mlp(cin, m).output;
        const auto emp = estimate_cumulants(m.apply(x), 4);
        for (int r = 1; r <= 4; ++r) {
            const double d = std::abs(prop.kappa(r) - emp.kappa(r));
            (r <= 2 ? low : high) = std::max(r <= 2 ? low : high, d);
        }
    }
    const double secs = seconds_since(t0);
    report(2, low < kC2LowOrder && high < kC2HighOrder && secs < kC2Seconds,
           fmt("orders 1-2 max abs %.2e (< %.0e), orders 3-4 %.2e (< %.0e), %.1f s (< %.0f s)", low, kC2LowOrder, high,
               kC2HighOrder, secs, kC2Seconds));
}

void criterion3() {
    // Relative error of each mean against max(|mean|, sd), of each covariance
    // entry against sqrt(var_i var_j), so entries near zero are judged on
    // their natural scale.
    CounterRng rng(3003, 0);
    const double alpha = 0.5;
    const std::size_t n = 1'000'000;
    double worst = 0.0;
    for (int cfg = 0; cfg < 10; ++cfg) {
        const double mu[2] = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const double s0 = std::sqrt(rng.uniform(0.2, 1.0)), s1 = std::sqrt(rng.uniform(0.2, 1.0));
        const double rho = rng.uniform(-0.8, 0.8);
        const std::vector<double> sig{s0 * s0, rho * s0 * s1, rho * s0 * s1, s1 * s1};
        const std::vector<double> muv{mu[0], mu[1]}, g3(8, 0.0), g4(16, 0.0);
        const auto pm = quad_mean(muv, sig, alpha);
        const auto pc = quad_covariance(muv, sig, g3, g4, alpha);

        CounterRng draw(3003 + static_cast<std::uint64_t>(cfg), 1);
        long double m[2] = {0, 0}, q[4] = {0, 0, 0, 0};
        std::vector<double> y0(n), y1(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double e0 = draw.normal(), e1 = draw.normal();
            const double z0 = mu[0] + s0 * e0;
            const double z1 = mu[1] + s1 * (rho * e0 + std::sqrt(1 - rho * rho) * e1);
            y0[i] = z0 + alpha * z0 * z0;
            y1[i] = z1 + alpha * z1 * z1;
            m[0] += y0[i];
            m[1] += y1[i];
        }
        m[0] /= n;
        m[1] /= n;
        for (std::size_t i = 0; i < n; ++i) {
            const long double a = y0[i] - m[0], b = y1[i] - m[1];
            q[0] += a * a;
            q[1] += a * b;
            q[3] += b * b;
        }
        q[2] = q[1];
        for (auto& e : q) e /= n;
        for (int i = 0; i < 2; ++i) {
            const double scale = std::max(std::abs(pm[static_cast<std::size_t>(i)]), std::sqrt(pc[static_cast<std::size_t>(3 * i)]));
            worst = std::max(worst, std::abs(static_cast<double>(m[i]) - pm[static_cast<std::size_t>(i)]) / scale);
        }
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                const auto k = static_cast<std::size_t>(2 * i + j);
                const double scale = std::sqrt(pc[static_cast<std::size_t>(3 * i)] * pc[static_cast<std::size_t>(3 * j)]);
                worst = std::max(worst, std::abs(static_cast<double>(q[k]) - pc[k]) / scale);
            }
    }
    report(3, worst < kC3Rel, fmt("max relative error %.2e over 10 configs (< %.0e)", worst, kC3Rel));
}

void criterion4() {
    // Exp(1) marginals: every order 1..3 is non-zero.
    const std::vector<double> kin{1.0, 1.0, 2.0, 6.0};
    const auto cin = CumulantSet::iid(2, kin);
    double worst = 0.0;
    std::size_t points = 0;
    for (int a = 0; a <= 80; ++a)
        for (int b = 0; b <= 80; ++b) {
            const double w1 = -2.0 + 0.05 * a, w2 = -2.0 + 0.05 * b;
            if (std::abs(w2) < 1e-9) continue;
            const SymmetricMlpParams p{linear_surface(w1, w2), w1, w2, 0.0, 0.0};
            const auto out = propagate_mlp(cin, MlpModel{p.layers(), ActivationKind::identity()}).output;
            for (int r = 1; r <= 3; ++r) {
                const double expect = scale_cumulant(r, kin[static_cast<std::size_t>(r - 1)]);
                worst = std::max(worst, std::abs(out.kappa(r) - expect) / std::abs(expect));
            }
            ++points;
        }
    const auto g0 = certificate_grid_search(0.5, false);
    const auto g1 = certificate_grid_search(0.5, true);
    const bool ok = worst < kC4Rel && g0.min_max_residual >= kC4Feasible && g1.min_max_residual >= kC4Feasible;
    report(4, ok,
           fmt("surface %zu points max rel %.2e (< %.0e); grid min max-residual %.3g / %.3g (columns same), %zu points, "
               "feasible needs < %.0e",
               points, worst, kC4Rel, g0.min_max_residual, g1.min_max_residual, g0.points, kC4Feasible));
}

void criterion5() {
    bool ok = true;
    std::string detail;
    for (std::size_t n : {std::size_t{100'000}, std::size_t{1'000'000}}) {
        ExperimentConfig c;
        c.task = TaskKind::gaussian;
        c.conditions = {Condition::parse("symmetric/linear")};
        c.n_samples = n;
        const auto t = run_experiment(c);
        double worst = 0.0;
        std::size_t cells = 0, bad = 0;
        for (const auto& r : t.rows) {
            ++cells;
            if (r.train.diverged || !r.train.symmetry_residual) {
                ++bad;
                continue;
            }
            worst = std::max(worst, *r.train.symmetry_residual);
            if (*r.train.symmetry_residual > kC5Residual) ++bad;
        }
        ok &= bad == 0 && cells == 15;
        detail += fmt("N=%zu: %zu/%zu cells above %.0e, max residual %.2e; ", n, bad, cells, kC5Residual, worst);
    }
    report(5, ok, detail);
}

void criterion6() {
    ExperimentConfig c;
    c.task = TaskKind::gaussian;
    c.conditions = {Condition::parse("free/linear"), Condition::parse("symmetric/relu"),
                    Condition::parse("symmetric/quadratic:0.5")};
    c.n_samples = 100'000;
    const auto t = run_experiment(c);
    Cells dkl, k2;
    for (const auto& r : t.rows) {
        if (r.train.diverged) continue;
        if (r.metrics.d_kl_normalised) dkl[{r.condition, *r.variance}].push_back(*r.metrics.d_kl_normalised);
        if (const auto& d = r.metrics.cumulant_deviation_pct.at(2)) k2[{r.condition, *r.variance}].push_back(*d);
    }
    bool ok = true;
    std::string detail;
    for (double v : c.variances) {
        const double lin = mean_of(dkl[{"free/linear", v}]);
        const double relu = mean_of(k2[{"symmetric/relu", v}]);
        const double quad = mean_of(dkl[{"symmetric/quadratic:0.5", v}]);
        const bool a = lin < kC6LinearDkl, b = std::abs(relu) > kC6ReluDevPct, q = quad >= kC6QuadRatio * lin;
        ok &= a && b && q;
        detail += fmt("var %.1f: linear D %.2e%s, sym-relu k2 %+.1f%%%s, sym-quad/linear %.1fx%s; ", v, lin,
                      a ? "" : " [X]", relu, b ? "" : " [X]", quad / lin, q ? "" : " [X]");
    }
    report(6, ok, detail);
}

void criterion7() {
    ExperimentConfig c;
    c.task = TaskKind::uniform;
    c.conditions = {Condition::parse("free/linear"), Condition::parse("symmetric/quadratic:0.5"),
                    Condition::parse("free/quadratic:0.5")};
    c.n_samples = 1'000'000;
    const auto t = run_experiment(c);
    Cells dkl;
    for (const auto& r : t.rows)
        if (!r.train.diverged && r.metrics.d_kl_normalised)
            dkl[{r.condition, r.rg_step}].push_back(*r.metrics.d_kl_normalised);
    bool ok = true;
    std::string sym = "sym-quad/linear", freeq = "free-quad/linear";
    for (int s = 0; s < c.rg_steps; ++s) {
        const double lin = mean_of(dkl[{"free/linear", s}]);
        const double sq = mean_of(dkl[{"symmetric/quadratic:0.5", s}]) / lin;
        const double fq = mean_of(dkl[{"free/quadratic:0.5", s}]) / lin;
        const bool need = s >= kC7FromStep;
        const bool a = !need || sq >= kC7SymRatio;  // NaN (no defined seed) fails
        const bool b = fq <= kC7FreeRatio;
        ok &= a && b;
        sym += fmt(" s%d %.3g%s", s, sq, a ? "" : "[X]");
        freeq += fmt(" s%d %.3g%s", s, fq, b ? "" : "[X]");
    }
    report(7, ok,
           sym + fmt(" (>= %.0f from step %d); ", kC7SymRatio, kC7FromStep) + freeq + fmt(" (<= %.0f)", kC7FreeRatio));
}

void criterion8() {
    ExperimentConfig c;
    c.task = TaskKind::gnn_validate;
    c.n_samples = 1'000'000;
    const auto t = run_experiment(c);
    std::map<int, std::vector<double>> k2, k3, k4;
    for (const auto& r : t.rows) {
        if (r.condition != "gnn/propagated" || r.train.diverged) continue;
        const auto& d = r.metrics.cumulant_deviation_pct;
        if (d.at(2)) k2[r.rg_step].push_back(*d.at(2));
        if (d.at(3)) k3[r.rg_step].push_back(std::abs(*d.at(3)));
        if (d.at(4)) k4[r.rg_step].push_back(std::abs(*d.at(4)));
    }
    bool early = true, breakdown = false;
    double worst = 0.0, top = 0.0;
    // Step index s is the (s+1)-th RG step.
    for (int s = 0; s < kC8Steps; ++s) {
        const double m = std::abs(mean_of(k2[s]));
        early &= k2[s].size() == c.seeds.size() && m <= kC8K2Pct;
        worst = std::max(worst, m);
    }
    for (int s = 0; s < c.rg_steps; ++s)
        for (const auto* v : {&k3, &k4}) {
            const auto it = v->find(s);
            if (it == v->end()) continue;
            top = std::max(top, mean_of(it->second));
        }
    breakdown = top > kC8HighPct;
    report(8, early && breakdown,
           fmt("max |k2| dev over steps 1-%d %.3f%% (<= %.0f%%); max mean |k3|/|k4| dev %.1f%% (> %.0f%%)", kC8Steps,
               worst, kC8K2Pct, top, kC8HighPct));
}

void criterion9() {
    CounterRng rng(9009, 0);
    double worst = 0.0;
    for (int cfg = 0; cfg < 50; ++cfg) {
        NetworkSpec spec;
        const int kind = cfg % 3;
        if (kind == 0) spec.activation = ActivationKind::identity();
        if (kind == 1) spec.activation = ActivationKind::quadratic(rng.uniform(-1, 1));
        if (kind == 2) {
            SplineConfig sc;
            sc.n_ctrl = 4 + static_cast<int>(rng.below(13));
            sc.lo = rng.uniform(-3, -0.5);
            sc.hi = rng.uniform(0.5, 3);
            spec.activation = ActivationKind::make_spline(sc);
        }
        spec.symmetric_tying = rng.uniform() < 0.5;
        spec.use_bias = rng.uniform() < 0.8;
        auto p = init_params(spec, TrainConfig{}, 9000 + static_cast<std::uint64_t>(cfg));
        for (auto& c : p.spline_ctrl()) c += rng.normal(0.0, 0.3);
        const double smooth = kind == 2 ? rng.uniform(0, 0.1) : 0.0;
        const std::size_t b = 8 + rng.below(57);
        SampleMatrix x(b, 2), t(b, 1);
        for (std::size_t r = 0; r < b; ++r) {
            x(r, 0) = rng.uniform(-1.5, 1.5);
            x(r, 1) = rng.uniform(-1.5, 1.5);
            t(r, 0) = (x(r, 0) + x(r, 1)) / std::numbers::sqrt2 + rng.normal(0.0, 0.3);
        }
        const auto g = grad(p, spec, x, t, smooth).grad;
        const auto fd = oracle::fd_grad(
            [&](const std::vector<double>& th) {
                NetworkParams q = p;
                q.theta = th;
                return loss(q, spec, x, t, smooth);
            },
            p.theta);
        for (std::size_t k = 0; k < g.size(); ++k) worst = std::max(worst, oracle::rel_err(g[k], fd[k]));
    }
    report(9, worst < kC9Rel, fmt("max relative error %.2e over 50 configs (< %.0e, h = 1e-6)", worst, kC9Rel));
}

void criterion10() {
    const auto g = reconstruct_density(CumulantSet::scalar(0, 1, 0, 0), 80.0, 1 << 13);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(g.p[i] - oracle::gaussian_pdf(g.x[i], 0, 1)));
    report(10, worst < kC10MaxAbs, fmt("max abs error %.2e (< %.0e)", worst, kC10MaxAbs));
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();
    criterion6();
    criterion7();
    criterion8();
    criterion9();
    criterion10();
    std::printf("%d of 10 criteria failed (%.0f s)\n", failures, seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
