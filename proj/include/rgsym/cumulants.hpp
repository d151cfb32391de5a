#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace rgsym {

/// n x dim row-major block of real samples.
class SampleMatrix {
  public:
    SampleMatrix() = default;
    SampleMatrix(std::size_t n, int dim);
    SampleMatrix(std::size_t n, int dim, std::vector<double> data);

    std::size_t rows() const noexcept { return n_; }
    int dim() const noexcept { return dim_; }

    double operator()(std::size_t row, int col) const noexcept { return data_[row * dim_ + col]; }
    double& operator()(std::size_t row, int col) noexcept { return data_[row * dim_ + col]; }

    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * dim_, static_cast<std::size_t>(dim_)};
    }
    std::vector<double> column(int c) const;

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    /// Throws NonFiniteError on the first NaN/inf entry.
    void require_finite() const;

    bool operator==(const SampleMatrix&) const = default;

  private:
    std::size_t n_ = 0;
    int dim_ = 0;
    std::vector<double> data_;
};

/// Symmetric tensor cumulants of orders 1..4 of a `dim`-dimensional random
/// vector, plus optional diagonal fifth cumulants. Tensors are dense and
/// row-major flattened.
struct CumulantSet {
    int dim = 0;
    std::vector<double> g1;
    std::vector<double> g2;
    std::vector<double> g3;
    std::vector<double> g4;
    std::optional<std::vector<double>> g5_diag;

    CumulantSet() = default;
    explicit CumulantSet(int d);

    /// Cumulants of `dim` i.i.d. copies of a scalar with cumulants kappa[0..3]
    /// (orders 1..4); off-diagonal entries are zero.
    static CumulantSet iid(int dim, std::span<const double> kappa);
    static CumulantSet scalar(double k1, double k2, double k3, double k4);

    std::vector<double>& order(int n);
    const std::vector<double>& order(int n) const;

    /// Diagonal entry kappa_{i...i} of order n (1..5).
    double diag(int n, int i) const;

    /// Scalar cumulant of order n for dim==1 sets.
    double kappa(int n) const;

    /// The 1-d marginal cumulants of coordinate i.
    CumulantSet marginal(int i) const;

    bool operator==(const CumulantSet&) const = default;
};

/// Central-moment cumulant estimates up to `max_order` (1..5). Order 5 is
/// produced for diagonal entries only. Output is symmetrized.
CumulantSet estimate_cumulants(const SampleMatrix& samples, int max_order = 4);

CumulantSet symmetrize(const CumulantSet& c);

struct OffDiagNorms {
    double l1 = 0.0;
    double l2 = 0.0;
    /// The same statistics restricted to one order (keys 2..4).
    std::map<int, double> l1_by_order;
    std::map<int, double> l2_by_order;
};

/// Mean absolute value and RMS of every entry with non-identical indices
/// across orders 2..4.
OffDiagNorms offdiag_norms(const CumulantSet& c);

void to_json(nlohmann::json& j, const CumulantSet& c);
void from_json(const nlohmann::json& j, CumulantSet& c);

}  // namespace rgsym
