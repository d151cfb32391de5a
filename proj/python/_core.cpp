#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "rgsym/analytic_weights.hpp"
#include "rgsym/clt_rg.hpp"
#include "rgsym/error.hpp"
#include "rgsym/experiments.hpp"
#include "rgsym/metrics.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

rgsym::SampleMatrix to_matrix(const Array& a) {
    if (a.ndim() == 1) return rgsym::SampleMatrix(static_cast<std::size_t>(a.shape(0)), 1,
                                                  std::vector<double>(a.data(), a.data() + a.size()));
    if (a.ndim() != 2) throw rgsym::ShapeError("expected a 1-d or 2-d array");
    return rgsym::SampleMatrix(static_cast<std::size_t>(a.shape(0)), static_cast<int>(a.shape(1)),
                               std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const rgsym::SampleMatrix& m) {
    Array out({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.dim())});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

Array to_array(const std::vector<double>& v) {
    Array out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Cumulant propagation, decimation RG and symmetry experiments (C++ core).";

    auto base = py::register_exception<rgsym::Error>(m, "RgsymError", PyExc_RuntimeError);
    py::register_exception<rgsym::ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<rgsym::DomainError>(m, "DomainError", base.ptr());
    py::register_exception<rgsym::NonFiniteError>(m, "NonFiniteError", base.ptr());
    py::register_exception<rgsym::CumulantExpansionInvalid>(m, "CumulantExpansionInvalid", base.ptr());
    py::register_exception<rgsym::IoError>(m, "IoError", base.ptr());

    m.def("code_version", &rgsym::code_version);

    m.def(
        "decimate", [](const Array& pairs) { return to_array(rgsym::decimate(to_matrix(pairs))); }, py::arg("pairs"),
        "(xi1 + xi2) / sqrt(2) for each row of an (n, 2) array.");

    m.def(
        "cumulants_json",
        [](const Array& samples, int max_order) {
            return nlohmann::json(rgsym::estimate_cumulants(to_matrix(samples), max_order)).dump();
        },
        py::arg("samples"), py::arg("max_order") = 4);

    m.def("scale_cumulant", &rgsym::scale_cumulant, py::arg("r"), py::arg("kappa"));

    m.def(
        "dataset",
        [](const std::string& source, double a, double b, std::size_t n, std::uint64_t seed) {
            const auto dist = source == "gaussian" ? rgsym::SourceDistribution::gaussian(a)
                                                   : rgsym::SourceDistribution::uniform(a, b);
            const auto ds = rgsym::make_task_dataset(dist, {0, n, seed});
            return py::make_tuple(to_array(ds.inputs), to_array(ds.targets));
        },
        py::arg("source"), py::arg("a"), py::arg("b") = 0.0, py::arg("n"), py::arg("seed") = 0,
        "(inputs, targets) for 'gaussian' (a = variance) or 'uniform' on [a, b].");

    m.def("linear_surface", &rgsym::linear_surface, py::arg("w1"), py::arg("w2"));

    m.def(
        "symmetry_residuals",
        [](double w0, double w1, double w2, double b1, double b2, double tol) {
            return nlohmann::json(rgsym::check_symmetry_subspace({w0, w1, w2, b1, b2}, tol)).dump();
        },
        py::arg("w0"), py::arg("w1"), py::arg("w2"), py::arg("b1") = 0.0, py::arg("b2") = 0.0, py::arg("tol") = 1e-4);

    m.def(
        "certificate_grid_search_json",
        [](double alpha, bool columns_same, double step) {
            return nlohmann::json(rgsym::certificate_grid_search(alpha, columns_same, -2.0, 2.0, step)).dump();
        },
        py::arg("alpha") = 0.5, py::arg("columns_same") = false, py::arg("step") = 0.05);

    m.def(
        "reconstruct_density",
        [](double k1, double k2, double k3, double k4, double t_max, int n_freq) {
            const auto g = rgsym::reconstruct_density(rgsym::CumulantSet::scalar(k1, k2, k3, k4), t_max, n_freq);
            return py::make_tuple(to_array(g.x), to_array(g.p));
        },
        py::arg("k1"), py::arg("k2"), py::arg("k3") = 0.0, py::arg("k4") = 0.0, py::arg("t_max") = rgsym::kDefaultTmax,
        py::arg("n_freq") = rgsym::kDefaultFreqs, "(x, density) on the conjugate grid.");

    m.def(
        "normalised_kl_json",
        [](const Array& net, const Array& truth) {
            const auto a = to_matrix(net), b = to_matrix(truth);
            const auto pn = rgsym::histogram_on_grid(a.data());
            const auto pg = rgsym::histogram_on_grid(b.data(), pn);
            return nlohmann::json(rgsym::normalised_kl(pn, pg)).dump();
        },
        py::arg("net_samples"), py::arg("truth_samples"), "Histogram D_KL(net || truth) / H(net) on the default grid.");

    m.def(
        "run_experiment_json",
        [](const std::string& config) {
            rgsym::ExperimentConfig c;
            rgsym::from_json(nlohmann::json::parse(config), c);
            rgsym::ResultTable t;
            {
                py::gil_scoped_release release;
                t = rgsym::run_experiment(c);
            }
            return py::make_tuple(rgsym::results_csv(t), rgsym::manifest(t).dump());
        },
        py::arg("config"), "(results CSV text, manifest JSON text) for a JSON experiment config.");
}
