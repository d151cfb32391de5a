#include "rgsym/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "rgsym/error.hpp"

namespace rgsym::tensor {

std::size_t size(int dim, int order) {
    std::size_t s = 1;
    for (int k = 0; k < order; ++k) s *= static_cast<std::size_t>(dim);
    return s;
}

std::size_t flat_index(int dim, std::span<const int> idx) {
    std::size_t f = 0;
    for (int i : idx) f = f * static_cast<std::size_t>(dim) + static_cast<std::size_t>(i);
    return f;
}

void unflatten(int dim, int order, std::size_t flat, std::span<int> idx) {
    for (int k = order - 1; k >= 0; --k) {
        idx[k] = static_cast<int>(flat % static_cast<std::size_t>(dim));
        flat /= static_cast<std::size_t>(dim);
    }
}

bool is_diagonal(std::span<const int> idx) {
    return std::adjacent_find(idx.begin(), idx.end(), std::not_equal_to<>{}) == idx.end();
}

namespace {

void check_size(std::span<const double> t, int dim, int order) {
    if (t.size() != size(dim, order)) {
        throw ShapeError("tensor of order " + std::to_string(order) + " over dim " +
                         std::to_string(dim) + " must have " + std::to_string(size(dim, order)) +
                         " entries, got " + std::to_string(t.size()));
    }
}

// Calls f(flat index of permuted multi-index) for each of the order! position
// permutations of idx.
template <class F>
void for_each_permutation(int dim, std::span<const int> idx, F&& f) {
    std::array<int, 8> perm{};
    const int order = static_cast<int>(idx.size());
    for (int k = 0; k < order; ++k) perm[k] = k;
    std::array<int, 8> permuted{};
    do {
        for (int k = 0; k < order; ++k) permuted[k] = idx[perm[k]];
        f(flat_index(dim, std::span<const int>(permuted.data(), order)));
    } while (std::next_permutation(perm.begin(), perm.begin() + order));
}

}  // namespace

std::vector<double> symmetrize(std::span<const double> t, int dim, int order) {
    check_size(t, dim, order);
    std::vector<double> out(t.size());
    if (order <= 1) {
        std::copy(t.begin(), t.end(), out.begin());
        return out;
    }
    std::array<int, 8> idx{};
    for (std::size_t f = 0; f < t.size(); ++f) {
        unflatten(dim, order, f, std::span<int>(idx.data(), order));
        const std::span<const int> view(idx.data(), order);
        if (is_diagonal(view)) {
            out[f] = t[f];
            continue;
        }
        double sum = 0.0;
        int count = 0;
        for_each_permutation(dim, view, [&](std::size_t g) {
            sum += t[g];
            ++count;
        });
        out[f] = sum / count;
    }
    return out;
}

double asymmetry(std::span<const double> t, int dim, int order) {
    check_size(t, dim, order);
    double worst = 0.0;
    std::array<int, 8> idx{};
    for (std::size_t f = 0; f < t.size(); ++f) {
        unflatten(dim, order, f, std::span<int>(idx.data(), order));
        for_each_permutation(dim, std::span<const int>(idx.data(), order),
                             [&](std::size_t g) { worst = std::max(worst, std::abs(t[g] - t[f])); });
    }
    return worst;
}

std::vector<double> multilinear(std::span<const double> t, int order, std::span<const double> m,
                                int rows, int cols) {
    check_size(t, cols, order);
    if (m.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
        throw ShapeError("multilinear: matrix has " + std::to_string(m.size()) +
                         " entries, expected " + std::to_string(rows * cols));
    }
    // Contract one mode at a time. After k passes the first k indices range
    // over `rows` and the remaining ones over `cols`.
    std::vector<double> cur(t.begin(), t.end());
    for (int mode = 0; mode < order; ++mode) {
        const std::size_t lead = size(rows, mode);
        const std::size_t trail = size(cols, order - mode - 1);
        std::vector<double> next(lead * static_cast<std::size_t>(rows) * trail, 0.0);
        for (std::size_t a = 0; a < lead; ++a) {
            for (int i = 0; i < rows; ++i) {
                for (int s = 0; s < cols; ++s) {
                    const double w = m[static_cast<std::size_t>(i) * cols + s];
                    if (w == 0.0) continue;
                    const double* src = cur.data() + (a * cols + s) * trail;
                    double* dst = next.data() + (a * rows + i) * trail;
                    for (std::size_t b = 0; b < trail; ++b) dst[b] += w * src[b];
                }
            }
        }
        cur = std::move(next);
    }
    return cur;
}

}  // namespace rgsym::tensor
