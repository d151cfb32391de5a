#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace rgsym::tensor {

/// Number of entries in a dense order-`order` tensor over `dim` indices.
std::size_t size(int dim, int order);

/// Row-major flat offset of a multi-index.
std::size_t flat_index(int dim, std::span<const int> idx);

/// Inverse of `flat_index`; writes `order` indices into `idx`.
void unflatten(int dim, int order, std::size_t flat, std::span<int> idx);

/// True when every index in the multi-index is the same.
bool is_diagonal(std::span<const int> idx);

/// Replaces each entry by the average over all permutations of its indices.
std::vector<double> symmetrize(std::span<const double> t, int dim, int order);

/// Largest absolute difference between an entry and any index permutation of it.
double asymmetry(std::span<const double> t, int dim, int order);

/// Multilinear transform: out_{i1..in} = sum_s M_{i1 s1} ... M_{in sn} t_{s1..sn}
/// with M given row-major as rows x cols and t over `cols` indices.
std::vector<double> multilinear(std::span<const double> t, int order,
                                std::span<const double> m, int rows, int cols);

}  // namespace rgsym::tensor
