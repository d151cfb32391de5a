#include "rgsym/cumulants.hpp"

#include <array>
#include <cmath>
#include <nlohmann/json.hpp>

#include "rgsym/error.hpp"
#include "rgsym/tensor.hpp"

namespace rgsym {

SampleMatrix::SampleMatrix(std::size_t n, int dim)
    : n_(n), dim_(dim), data_(n * static_cast<std::size_t>(dim), 0.0) {
    if (dim <= 0) throw ShapeError("SampleMatrix: dim must be positive");
}

SampleMatrix::SampleMatrix(std::size_t n, int dim, std::vector<double> data)
    : n_(n), dim_(dim), data_(std::move(data)) {
    if (dim <= 0) throw ShapeError("SampleMatrix: dim must be positive");
    if (data_.size() != n * static_cast<std::size_t>(dim)) {
        throw ShapeError("SampleMatrix: " + std::to_string(data_.size()) +
                         " values do not fill " + std::to_string(n) + "x" + std::to_string(dim));
    }
}

std::vector<double> SampleMatrix::column(int c) const {
    if (c < 0 || c >= dim_) throw ShapeError("SampleMatrix::column out of range");
    std::vector<double> out(n_);
    for (std::size_t r = 0; r < n_; ++r) out[r] = (*this)(r, c);
    return out;
}

void SampleMatrix::require_finite() const {
    for (std::size_t k = 0; k < data_.size(); ++k) {
        if (!std::isfinite(data_[k])) {
            throw NonFiniteError("non-finite sample at row " + std::to_string(k / dim_) +
                                 ", column " + std::to_string(k % dim_));
        }
    }
}

CumulantSet::CumulantSet(int d)
    : dim(d),
      g1(tensor::size(d, 1), 0.0),
      g2(tensor::size(d, 2), 0.0),
      g3(tensor::size(d, 3), 0.0),
      g4(tensor::size(d, 4), 0.0) {
    if (d <= 0) throw ShapeError("CumulantSet: dim must be positive");
}

CumulantSet CumulantSet::iid(int dim, std::span<const double> kappa) {
    if (kappa.size() < 4) throw ShapeError("CumulantSet::iid needs kappa_1..kappa_4");
    CumulantSet c(dim);
    std::array<int, 4> idx{};
    for (int n = 1; n <= 4; ++n) {
        for (int i = 0; i < dim; ++i) {
            idx.fill(i);
            c.order(n)[tensor::flat_index(dim, std::span<const int>(idx.data(), n))] = kappa[n - 1];
        }
    }
    if (kappa.size() >= 5) c.g5_diag = std::vector<double>(dim, kappa[4]);
    return c;
}

CumulantSet CumulantSet::scalar(double k1, double k2, double k3, double k4) {
    const std::array<double, 4> k{k1, k2, k3, k4};
    return iid(1, k);
}

std::vector<double>& CumulantSet::order(int n) {
    switch (n) {
        case 1: return g1;
        case 2: return g2;
        case 3: return g3;
        case 4: return g4;
        default: throw DomainError("CumulantSet::order: dense orders are 1..4, got " + std::to_string(n));
    }
}

const std::vector<double>& CumulantSet::order(int n) const {
    return const_cast<CumulantSet*>(this)->order(n);
}

double CumulantSet::diag(int n, int i) const {
    if (i < 0 || i >= dim) throw ShapeError("CumulantSet::diag index out of range");
    if (n == 5) {
        if (!g5_diag) throw DomainError("fifth cumulants not present");
        return (*g5_diag)[i];
    }
    std::array<int, 4> idx{};
    idx.fill(i);
    return order(n)[tensor::flat_index(dim, std::span<const int>(idx.data(), n))];
}

double CumulantSet::kappa(int n) const {
    if (dim != 1) throw ShapeError("CumulantSet::kappa requires a 1-d set");
    return diag(n, 0);
}

CumulantSet CumulantSet::marginal(int i) const {
    std::array<double, 5> k{diag(1, i), diag(2, i), diag(3, i), diag(4, i), 0.0};
    CumulantSet m = iid(1, std::span<const double>(k.data(), 4));
    if (g5_diag) m.g5_diag = std::vector<double>{(*g5_diag)[i]};
    return m;
}

namespace {

// Sorted multi-indices (combinations with repetition) of a given order.
std::vector<std::array<int, 4>> sorted_indices(int dim, int order) {
    std::vector<std::array<int, 4>> out;
    std::array<int, 4> idx{};
    const std::size_t total = tensor::size(dim, order);
    for (std::size_t f = 0; f < total; ++f) {
        tensor::unflatten(dim, order, f, std::span<int>(idx.data(), order));
        if (std::is_sorted(idx.begin(), idx.begin() + order)) out.push_back(idx);
    }
    return out;
}

}  // namespace

CumulantSet estimate_cumulants(const SampleMatrix& samples, int max_order) {
    if (max_order < 1 || max_order > 5) throw DomainError("estimate_cumulants: max_order must be 1..5");
    if (samples.rows() < 2) throw DomainError("estimate_cumulants: need at least 2 samples");
    samples.require_finite();

    const int d = samples.dim();
    const std::size_t n = samples.rows();
    const int dense_max = std::min(max_order, 4);

    std::vector<long double> mean(d, 0.0L);
    for (std::size_t r = 0; r < n; ++r)
        for (int i = 0; i < d; ++i) mean[i] += samples(r, i);
    for (auto& m : mean) m /= static_cast<long double>(n);

    // Central moments over sorted multi-indices only.
    std::array<std::vector<std::array<int, 4>>, 5> keys;
    std::array<std::vector<long double>, 5> acc;
    for (int k = 2; k <= dense_max; ++k) {
        keys[k] = sorted_indices(d, k);
        acc[k].assign(keys[k].size(), 0.0L);
    }
    std::vector<long double> acc5(d, 0.0L);

    std::vector<double> c(d);
    for (std::size_t r = 0; r < n; ++r) {
        for (int i = 0; i < d; ++i) c[i] = samples(r, i) - static_cast<double>(mean[i]);
        for (int k = 2; k <= dense_max; ++k) {
            for (std::size_t e = 0; e < keys[k].size(); ++e) {
                double p = 1.0;
                for (int q = 0; q < k; ++q) p *= c[keys[k][e][q]];
                acc[k][e] += p;
            }
        }
        if (max_order == 5)
            for (int i = 0; i < d; ++i) acc5[i] += static_cast<long double>(c[i]) * c[i] * c[i] * c[i] * c[i];
    }

    CumulantSet out(d);
    for (int i = 0; i < d; ++i) out.g1[i] = static_cast<double>(mean[i]);

    // Central moments scattered to all permutations.
    std::array<std::vector<double>, 5> mom;
    for (int k = 2; k <= dense_max; ++k) {
        mom[k].assign(tensor::size(d, k), 0.0);
        std::array<int, 4> perm{};
        for (std::size_t e = 0; e < keys[k].size(); ++e) {
            const double v = static_cast<double>(acc[k][e] / static_cast<long double>(n));
            auto idx = keys[k][e];
            std::sort(idx.begin(), idx.begin() + k);
            do {
                for (int q = 0; q < k; ++q) perm[q] = idx[q];
                mom[k][tensor::flat_index(d, std::span<const int>(perm.data(), k))] = v;
            } while (std::next_permutation(idx.begin(), idx.begin() + k));
        }
    }

    if (dense_max >= 2) out.g2 = mom[2];
    if (dense_max >= 3) out.g3 = mom[3];
    if (dense_max >= 4) {
        const auto& m2 = mom[2];
        auto at2 = [&](int a, int b) { return m2[static_cast<std::size_t>(a) * d + b]; };
        std::array<int, 4> idx{};
        for (std::size_t f = 0; f < out.g4.size(); ++f) {
            tensor::unflatten(d, 4, f, idx);
            const auto [i, j, k, l] = idx;
            out.g4[f] = mom[4][f] - at2(i, j) * at2(k, l) - at2(i, k) * at2(j, l) - at2(i, l) * at2(j, k);
        }
    }
    if (max_order == 5) {
        std::vector<double> g5(d);
        for (int i = 0; i < d; ++i) {
            const double m5 = static_cast<double>(acc5[i] / static_cast<long double>(n));
            const double m3 = out.diag(3, i);
            const double m2 = out.diag(2, i);
            g5[i] = m5 - 10.0 * m3 * m2;
        }
        out.g5_diag = std::move(g5);
    }
    return out;
}

CumulantSet symmetrize(const CumulantSet& c) {
    CumulantSet out = c;
    for (int n = 2; n <= 4; ++n) out.order(n) = tensor::symmetrize(c.order(n), c.dim, n);
    return out;
}

OffDiagNorms offdiag_norms(const CumulantSet& c) {
    if (c.dim < 2) throw DomainError("offdiag_norms: dim must be at least 2");
    OffDiagNorms out;
    double sum_abs = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    std::array<int, 4> idx{};
    for (int n = 2; n <= 4; ++n) {
        const auto& t = c.order(n);
        double oa = 0.0, os = 0.0;
        std::size_t oc = 0;
        for (std::size_t f = 0; f < t.size(); ++f) {
            tensor::unflatten(c.dim, n, f, std::span<int>(idx.data(), n));
            if (tensor::is_diagonal(std::span<const int>(idx.data(), n))) continue;
            oa += std::abs(t[f]);
            os += t[f] * t[f];
            ++oc;
        }
        out.l1_by_order[n] = oa / static_cast<double>(oc);
        out.l2_by_order[n] = std::sqrt(os / static_cast<double>(oc));
        sum_abs += oa;
        sum_sq += os;
        count += oc;
    }
    out.l1 = sum_abs / static_cast<double>(count);
    out.l2 = std::sqrt(sum_sq / static_cast<double>(count));
    return out;
}

void to_json(nlohmann::json& j, const CumulantSet& c) {
    j = nlohmann::json{{"dim", c.dim}, {"g1", c.g1}, {"g2", c.g2}, {"g3", c.g3}, {"g4", c.g4}};
    if (c.g5_diag)
        j["g5_diag"] = *c.g5_diag;
    else
        j["g5_diag"] = nullptr;
}

void from_json(const nlohmann::json& j, CumulantSet& c) {
    CumulantSet out(j.at("dim").get<int>());
    for (int n = 1; n <= 4; ++n) {
        const std::string key = "g" + std::to_string(n);
        auto v = j.at(key).get<std::vector<double>>();
        if (v.size() != out.order(n).size())
            throw ShapeError("CumulantSet JSON: " + key + " has wrong length " + std::to_string(v.size()));
        out.order(n) = std::move(v);
    }
    if (j.contains("g5_diag") && !j.at("g5_diag").is_null()) {
        auto v = j.at("g5_diag").get<std::vector<double>>();
        if (static_cast<int>(v.size()) != out.dim) throw ShapeError("CumulantSet JSON: g5_diag has wrong length");
        out.g5_diag = std::move(v);
    }
    c = std::move(out);
}

}  // namespace rgsym
