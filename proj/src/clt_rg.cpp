#include "rgsym/clt_rg.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "rgsym/error.hpp"
#include "rgsym/rng.hpp"

namespace rgsym {

SourceDistribution SourceDistribution::gaussian(double variance) {
    SourceDistribution d;
    d.kind = Kind::gaussian;
    d.variance = variance;
    d.validate();
    return d;
}

SourceDistribution SourceDistribution::uniform(double lo, double hi) {
    SourceDistribution d;
    d.kind = Kind::uniform;
    d.lo = lo;
    d.hi = hi;
    d.validate();
    return d;
}

void SourceDistribution::validate() const {
    if (kind == Kind::gaussian && !(variance > 0.0 && std::isfinite(variance)))
        throw DomainError("gaussian source needs a positive finite variance");
    if (kind == Kind::uniform && !(lo < hi && std::isfinite(lo) && std::isfinite(hi)))
        throw DomainError("uniform source needs finite lo < hi");
}

double SourceDistribution::draw(CounterRng& rng) const {
    return kind == Kind::gaussian ? rng.normal(0.0, std::sqrt(variance)) : rng.uniform(lo, hi);
}

std::array<double, 5> SourceDistribution::exact_cumulants() const {
    if (kind == Kind::gaussian) return {0.0, variance, 0.0, 0.0, 0.0};
    const double w = hi - lo;
    return {0.5 * (lo + hi), w * w / 12.0, 0.0, -std::pow(w, 4) / 120.0, 0.0};
}

std::string SourceDistribution::describe() const {
    std::ostringstream os;
    if (kind == Kind::gaussian)
        os << "gaussian(var=" << variance << ")";
    else
        os << "uniform(" << lo << "," << hi << ")";
    return os.str();
}

SampleMatrix decimate(const SampleMatrix& pairs) {
    if (pairs.dim() != 2) throw ShapeError("decimate expects pairs (dim 2), got dim " + std::to_string(pairs.dim()));
    SampleMatrix out(pairs.rows(), 1);
    const double s = 1.0 / std::numbers::sqrt2;
    for (std::size_t r = 0; r < pairs.rows(); ++r) {
        const double a = pairs(r, 0), b = pairs(r, 1);
        if (!std::isfinite(a) || !std::isfinite(b))
            throw NonFiniteError("decimate: non-finite value at row " + std::to_string(r));
        out(r, 0) = (a + b) * s;
    }
    return out;
}

double scale_cumulant(int r, double kappa) {
    if (r < 1) throw DomainError("scale_cumulant: order must be >= 1 (normalisation is conserved, not scaled)");
    return std::pow(2.0, 1.0 - 0.5 * r) * kappa;
}

CumulantSet ground_truth_cumulants(const CumulantSet& input, int steps) {
    if (steps < 1) throw DomainError("ground_truth_cumulants: steps must be >= 1");
    CumulantSet m = input.marginal(0);
    for (int s = 0; s < steps; ++s) {
        for (int r = 1; r <= 4; ++r) m.order(r)[0] = scale_cumulant(r, m.order(r)[0]);
        if (m.g5_diag) (*m.g5_diag)[0] = scale_cumulant(5, (*m.g5_diag)[0]);
    }
    return m;
}

TaskDataset make_task_dataset(const SourceDistribution& dist, const RgStepConfig& cfg) {
    dist.validate();
    if (cfg.n_samples < 2) throw DomainError("make_task_dataset: n_samples must be >= 2");
    CounterRng rng(cfg.seed, stream_id("task-dataset", static_cast<std::uint64_t>(cfg.step_index)));
    SampleMatrix inputs(cfg.n_samples, 2);
    for (auto& v : inputs.data()) v = dist.draw(rng);
    SampleMatrix targets = decimate(inputs);
    return {std::move(inputs), std::move(targets)};
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, CounterRng& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(p[i], p[rng.below(i + 1)]);
    return p;
}

}  // namespace

SampleMatrix next_step_inputs(const SampleMatrix& outputs, std::uint64_t seed) {
    if (outputs.dim() != 1) throw ShapeError("next_step_inputs expects 1-d outputs");
    if (outputs.rows() < 2) throw DomainError("next_step_inputs: need at least 2 outputs");
    CounterRng rng1(seed, stream_id("shuffle-column", 0));
    CounterRng rng2(seed, stream_id("shuffle-column", 1));
    const auto p1 = permutation(outputs.rows(), rng1);
    const auto p2 = permutation(outputs.rows(), rng2);
    SampleMatrix out(outputs.rows(), 2);
    for (std::size_t r = 0; r < outputs.rows(); ++r) {
        out(r, 0) = outputs(p1[r], 0);
        out(r, 1) = outputs(p2[r], 0);
    }
    return out;
}

ConservationReport conservation_check(const CumulantSet& before, const CumulantSet& after, double tolerance) {
    if (before.dim != 1 || after.dim != 1) throw ShapeError("conservation_check expects 1-d cumulant sets");
    ConservationReport rep;
    rep.tolerance = tolerance;
    rep.normalisation_delta = 0.0;
    rep.mean_delta = std::abs(after.kappa(1) - std::numbers::sqrt2 * before.kappa(1));
    rep.variance_delta = std::abs(after.kappa(2) - before.kappa(2));
    rep.pass = rep.mean_delta <= tolerance && rep.variance_delta <= tolerance;
    return rep;
}

namespace {

template <class T>
void put_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw IoError("sample file truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace

void write_samples(const std::filesystem::path& path, const SampleMatrix& m) {
    if (m.rows() > static_cast<std::size_t>(INT32_MAX)) throw DomainError("write_samples: too many rows for int32 header");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    put_le<std::int32_t>(os, static_cast<std::int32_t>(m.rows()));
    put_le<std::int32_t>(os, m.dim());
    for (double v : m.data()) put_le<double>(os, v);
    if (!os) throw IoError("write failed for " + path.string());
}

SampleMatrix read_samples(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    const auto n = get_le<std::int32_t>(is);
    const auto dim = get_le<std::int32_t>(is);
    if (n < 0 || dim <= 0) throw IoError("bad sample file header in " + path.string());
    std::vector<double> data(static_cast<std::size_t>(n) * static_cast<std::size_t>(dim));
    for (auto& v : data) v = get_le<double>(is);
    return SampleMatrix(static_cast<std::size_t>(n), dim, std::move(data));
}

}  // namespace rgsym
