// Native half of the Python package. JSON-shaped values cross the boundary
// as strings; python/xbarnet/__init__.py turns them into dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "xbarnet/harness.hpp"
#include "xbarnet/io.hpp"
#include "xbarnet/rsa.hpp"
#include "xbarnet/smallworld.hpp"

namespace py = pybind11;
using namespace xbarnet;
using nlohmann::json;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
    py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

DeviceConfig device_from(const std::string& text) {
    json j = json::object();
    j["schema_version"] = ExperimentConfig::kSchemaVersion;
    j["device"] = json::parse(text);
    return config_from_json(j).device;
}

}  // namespace

PYBIND11_MODULE(_xbarnet, m) {
    m.doc() = "Crossbar network simulator (native core)";

    auto config_error = py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
    (void)config_error;

    m.def("normalize_config", [](const std::string& text) {
        return config_to_json(config_from_json(json::parse(text))).dump();
    });

    m.def(
        "run_experiment",
        [](const std::string& text) {
            const ExperimentConfig cfg = config_from_json(json::parse(text));
            RunRecord rec;
            {
                py::gil_scoped_release release;
                rec = run_experiment(cfg);
            }
            return rec.to_json().dump();
        },
        py::arg("config_json"));

    m.def(
        "export_plot_data",
        [](const std::vector<std::string>& records, const std::string& figure) {
            std::vector<RunRecord> recs;
            for (const auto& r : records) recs.push_back(RunRecord::from_json(json::parse(r)));
            std::ostringstream out;
            export_plot_data(recs, figure, out);
            return out.str();
        },
        py::arg("records_json"), py::arg("figure"));

    py::class_<Network>(m, "Network")
        .def_property_readonly("input_shape", &Network::input_shape)
        .def_property_readonly("num_classes", &Network::num_classes)
        .def("weight_count", &Network::weight_count)
        .def("dense_weight_count", &Network::dense_weight_count)
        .def("infer", [](const Network& net, const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
            return to_numpy(infer(net, from_numpy(x)));
        })
        .def("weights",
             [](const Network& net) {
                 py::list out;
                 for (auto li : net.weight_layers()) out.append(to_numpy(net.params(li).weight));
                 return out;
             })
        .def("path_metrics",
             [](const Network& net) {
                 const auto g = contribution_reachability(net);
                 std::vector<std::pair<double, double>> out;
                 for (std::size_t k = 0; k < g.size(); ++k) out.emplace_back(metric_L(g, k), metric_C(g, k));
                 return out;
             })
        .def("save", [](const Network& net, const std::string& path) { return hex64(save_checkpoint(path, net)); });

    m.def("load_checkpoint", [](const std::string& path) { return load_checkpoint(path); });

    m.def(
        "make_mlp",
        [](const std::vector<std::size_t>& widths, std::uint64_t seed) {
            RngStream rng(seed, "init");
            return make_mlp(widths, rng);
        },
        py::arg("widths"), py::arg("seed") = 1);

    m.def(
        "select_cells",
        [](std::size_t rows, std::size_t cols, double fraction, std::uint64_t seed) {
            RngStream rng(seed, "rsa-select");
            const auto s = select_cells(rows, cols, fraction, rng);
            py::array_t<std::uint32_t> out({static_cast<py::ssize_t>(rows), static_cast<py::ssize_t>(s.per_row())});
            std::copy(s.columns().begin(), s.columns().end(), out.mutable_data());
            return out;
        },
        py::arg("rows"), py::arg("cols"), py::arg("fraction"), py::arg("seed") = 1);

    m.def(
        "inject_faults",
        [](std::size_t rows, std::size_t cols, const std::string& device, std::uint64_t seed) {
            RngStream rng(seed, "faults");
            const auto fm = inject_faults(rows, cols, device_from(device), rng);
            py::array_t<std::uint8_t> out({static_cast<py::ssize_t>(rows), static_cast<py::ssize_t>(cols)});
            for (std::size_t i = 0; i < fm.size(); ++i) out.mutable_data()[i] = static_cast<std::uint8_t>(fm[i]);
            return out;
        },
        py::arg("rows"), py::arg("cols"), py::arg("device_json") = "{}", py::arg("seed") = 1);
}
