#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "kmtlab/harness.hpp"

namespace py = pybind11;
using namespace kmt;

namespace {

AtomConvention convention(const std::string& s) {
    if (s == "left") return AtomConvention::Left;
    if (s == "mid") return AtomConvention::Mid;
    if (s == "right") return AtomConvention::Right;
    throw py::value_error("convention must be left, mid or right");
}

// (csv, sidecar json) for a JSON config document
std::pair<std::string, std::string> run_json(const std::string& doc, unsigned threads) {
    ExperimentConfig cfg = parse_config(nlohmann::json::parse(doc));
    ExperimentResult res;
    {
        py::gil_scoped_release release;
        res = run_experiment(cfg, threads);
    }
    std::ostringstream os;
    write_csv(res, os);
    return {os.str(), sidecar_json(res, threads).dump()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Coupling and strong approximation experiments";
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.attr("CSV_HEADER") = kCsvHeader;
    m.attr("CONFIG_SCHEMA_VERSION") = kConfigSchemaVersion;

    m.def("run_json", &run_json, py::arg("config"), py::arg("threads") = 1,
          "Run an experiment from a JSON config string; returns (csv, sidecar_json).");

    m.def("default_depth", &default_depth, py::arg("n"), py::arg("d"));
    m.def("full_depth", &full_depth, py::arg("n"));
    m.def("seq_m_l", &seq_m_l, py::arg("n"), py::arg("d"));

    m.def(
        "tusnady_check",
        [](std::int64_t mm, const std::string& conv) {
            auto r = tusnady_check(mm, convention(conv));
            py::dict d;
            d["m"] = r.m;
            d["max_margin_quadratic"] = r.max_margin_quadratic;
            d["max_margin_linear"] = r.max_margin_linear;
            d["holds"] = r.holds();
            return d;
        },
        py::arg("m"), py::arg("convention") = "mid");

    m.def(
        "solve_coupling_constants",
        [](double pl, double ph) {
            auto c = solve_coupling_constants(pl, ph);
            py::dict d;
            d["c0"] = c.c0;
            d["c1"] = c.c1;
            d["c2"] = c.c2;
            d["c3"] = c.c3;
            d["residual"] = c.residual;
            return d;
        },
        py::arg("p_low"), py::arg("p_high"));

    m.def(
        "uniform_leaf_counts",
        [](std::size_t d, int K, std::int64_t n, std::uint64_t seed, std::uint64_t stream, double rho) {
            auto u = ProductDensity::uniform(d);
            CellTree t = build_axis_aligned(*u, K, rho);
            RngStream rng(seed, stream);
            auto r = couple_counts(t, n, rng);
            auto msg = check_count_invariants(r);
            if (!msg.empty()) throw std::runtime_error(msg);
            return r.leaf_counts();
        },
        py::arg("d"), py::arg("depth"), py::arg("n"), py::arg("seed") = 1, py::arg("stream") = 0,
        py::arg("rho") = 1.0, "Coupled leaf counts of a uniform law on a depth-K median tree.");

    m.def(
        "rosenblatt_triangular",
        [](std::vector<double> modes, const std::vector<double>& x) {
            std::vector<std::shared_ptr<const Marginal1D>> ms;
            for (double md : modes) ms.push_back(std::make_shared<TriangularMarginal>(0.0, md, 1.0));
            ProductDensity p(std::move(ms));
            if (x.size() != p.dim()) throw py::value_error("x must have one entry per mode");
            return rosenblatt(p, x.data());
        },
        py::arg("modes"), py::arg("x"));
}
