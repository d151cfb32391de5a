#include "rgsym/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fftw3.h>
#include <mutex>
#include <numbers>
#include <nlohmann/json.hpp>

#include "rgsym/error.hpp"

namespace rgsym {

double DensityGrid::total_mass() const noexcept {
    double s = 0.0;
    for (double v : p) s += v;
    return s * bin_width;
}

bool DensityGrid::same_grid(const DensityGrid& o) const noexcept {
    return p.size() == o.p.size() && bin_width == o.bin_width && (x.empty() || o.x.empty() || x.front() == o.x.front());
}

DensityGrid make_grid(double t_max, int n_freq) {
    if (!(t_max > 0.0)) throw DomainError("make_grid: t_max must be positive");
    if (n_freq < 8 || n_freq % 4 != 0) throw DomainError("make_grid: n_freq must be a positive multiple of 4 (>= 8)");
    DensityGrid g;
    g.bin_width = std::numbers::pi / t_max;
    g.x.resize(static_cast<std::size_t>(n_freq));
    g.p.assign(static_cast<std::size_t>(n_freq), 0.0);
    for (int j = 0; j < n_freq; ++j) g.x[static_cast<std::size_t>(j)] = (j - n_freq / 2) * g.bin_width;
    return g;
}

namespace {
// FFTW planning is not re-entrant.
std::mutex fftw_mutex;
}  // namespace

DensityGrid reconstruct_density(const CumulantSet& c, double t_max, int n_freq) {
    if (c.dim != 1) throw ShapeError("reconstruct_density: expected 1-d cumulants");
    const double k1 = c.g1[0], k2 = c.g2[0], k3 = c.g3[0], k4 = c.g4[0];
    if (!(k2 > 0.0)) throw DomainError("reconstruct_density: kappa2 must be positive");
    for (double v : {k1, k3, k4})
        if (!std::isfinite(v)) throw NonFiniteError("reconstruct_density: non-finite cumulant");

    DensityGrid g = make_grid(t_max, n_freq);
    const auto n = static_cast<std::size_t>(n_freq);
    const double dt = 2.0 * t_max / n_freq;

    // t_k = (k - n/2) dt and x_j = (j - n/2) dx with dt dx = 2 pi / n, so the
    // centred transform is a plain DFT of (-1)^k phi_k, times (-1)^j.
    fftw_complex* buf = fftw_alloc_complex(n);
    if (buf == nullptr) throw std::bad_alloc();
    for (std::size_t k = 0; k < n; ++k) {
        const double t = (static_cast<double>(k) - n_freq / 2) * dt;
        const double t2 = t * t;
        const double re = -k2 * t2 / 2.0 + k4 * t2 * t2 / 24.0;
        const double im = k1 * t - k3 * t2 * t / 6.0;
        if (re > 700.0) {
            fftw_free(buf);
            throw CumulantExpansionInvalid("reconstruct_density: |phi(t)| overflows at t = " + std::to_string(t) +
                                           " (kappa4 = " + std::to_string(k4) + ")");
        }
        const std::complex<double> phi = std::exp(std::complex<double>(re, im)) * ((k % 2 == 0) ? 1.0 : -1.0);
        buf[k][0] = phi.real();
        buf[k][1] = phi.imag();
    }
    {
        std::lock_guard<std::mutex> lock(fftw_mutex);
        fftw_plan plan = fftw_plan_dft_1d(n_freq, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
        fftw_execute(plan);
        fftw_destroy_plan(plan);
    }
    double positive = 0.0, negative = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double v = buf[j][0] * ((j % 2 == 0) ? 1.0 : -1.0) * dt / (2.0 * std::numbers::pi);
        if (v < 0.0) {
            negative -= v;
            g.p[j] = 0.0;
        } else {
            positive += v;
            g.p[j] = v;
        }
    }
    fftw_free(buf);
    if (!(positive > 0.0)) throw CumulantExpansionInvalid("reconstruct_density: no positive density mass");
    const double scale = 1.0 / (positive * g.bin_width);
    for (auto& v : g.p) v *= scale;
    g.clipped_mass = negative / positive;
    return g;
}

DensityGrid histogram_on_grid(std::span<const double> samples, const DensityGrid& grid) {
    if (samples.empty()) throw ShapeError("histogram_on_grid: no samples");
    if (grid.p.empty() || !(grid.bin_width > 0.0)) throw ShapeError("histogram_on_grid: invalid grid");
    DensityGrid h = grid;
    std::fill(h.p.begin(), h.p.end(), 0.0);
    h.clipped_mass = 0.0;
    h.out_of_range = 0;
    const double x0 = grid.x.front();
    const auto last = static_cast<long long>(grid.p.size()) - 1;
    std::vector<std::size_t> counts(grid.p.size(), 0);
    for (double s : samples) {
        if (!std::isfinite(s)) throw NonFiniteError("histogram_on_grid: non-finite sample");
        long long j = std::llround((s - x0) / grid.bin_width);
        if (j < 0 || j > last) {
            ++h.out_of_range;
            j = std::clamp(j, 0LL, last);
        }
        ++counts[static_cast<std::size_t>(j)];
    }
    const double norm = 1.0 / (static_cast<double>(samples.size()) * grid.bin_width);
    for (std::size_t j = 0; j < counts.size(); ++j) h.p[j] = static_cast<double>(counts[j]) * norm;
    return h;
}

DensityGrid histogram_on_grid(std::span<const double> samples, double t_max, int n_freq) {
    return histogram_on_grid(samples, make_grid(t_max, n_freq));
}

double kl_divergence(const DensityGrid& p, const DensityGrid& q, double floor) {
    if (!p.same_grid(q)) throw ShapeError("kl_divergence: grids differ");
    if (!(floor > 0.0)) throw DomainError("kl_divergence: floor must be positive");
    const std::size_t n = p.size();
    std::vector<double> a(n), b(n);
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = std::max(p.mass(i), floor);
        b[i] = std::max(q.mass(i), floor);
        sa += a[i];
        sb += b[i];
    }
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double pi = a[i] / sa;
        d += pi * std::log(pi / (b[i] / sb));
    }
    return d;
}

double shannon_entropy(const DensityGrid& p) {
    double h = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = p.mass(i);
        if (m > 0.0) h -= m * std::log(m);
    }
    return h;
}

std::string MetricReport::flag_string() const {
    std::string s;
    for (const auto& f : flags) {
        if (!s.empty()) s += ';';
        s += f;
    }
    return s;
}

MetricReport normalised_kl(const DensityGrid& p_net, const DensityGrid& p_gt, double floor) {
    MetricReport r;
    r.d_kl = kl_divergence(p_net, p_gt, floor);
    r.entropy = shannon_entropy(p_net);
    if (r.entropy < 1e-9)
        r.flags.push_back("entropy_too_small");
    else
        r.d_kl_normalised = r.d_kl / r.entropy;
    if (p_net.clipped_mass > kClipWarn || p_gt.clipped_mass > kClipWarn) r.flags.push_back("clipped_mass_gt_1pct");
    if (p_net.out_of_range > 0 || p_gt.out_of_range > 0) r.flags.push_back("samples_outside_grid");
    return r;
}

std::map<int, std::optional<double>> cumulant_deviation(const CumulantSet& observed, const CumulantSet& truth,
                                                        double zero_tol) {
    if (observed.dim != 1 || truth.dim != 1) throw ShapeError("cumulant_deviation: expected 1-d cumulants");
    std::map<int, std::optional<double>> out;
    auto put = [&](int r, double o, double t) {
        if (std::abs(t) <= zero_tol)
            out[r] = std::nullopt;
        else
            out[r] = 100.0 * (o - t) / t;
    };
    for (int r = 1; r <= 4; ++r) put(r, observed.order(r)[0], truth.order(r)[0]);
    if (observed.g5_diag && truth.g5_diag) put(5, (*observed.g5_diag)[0], (*truth.g5_diag)[0]);
    return out;
}

void to_json(nlohmann::json& j, const MetricReport& r) {
    nlohmann::json dev = nlohmann::json::object();
    for (const auto& [order, v] : r.cumulant_deviation_pct) dev[std::to_string(order)] = v ? nlohmann::json(*v) : nlohmann::json();
    j = nlohmann::json{{"d_kl", r.d_kl},
                       {"entropy", r.entropy},
                       {"d_kl_normalised", r.d_kl_normalised ? nlohmann::json(*r.d_kl_normalised) : nlohmann::json()},
                       {"cumulant_deviation_pct", dev},
                       {"flags", r.flags}};
}

void to_json(nlohmann::json& j, const DensityGrid& g) {
    j = nlohmann::json{{"x", g.x}, {"p", g.p}, {"bin_width", g.bin_width}, {"clipped_mass", g.clipped_mass},
                       {"out_of_range", g.out_of_range}};
}

}  // namespace rgsym
