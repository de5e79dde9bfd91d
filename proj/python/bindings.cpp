// Python bindings: dtfixup._core

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dtfixup/checks.hpp"
#include "dtfixup/config.hpp"
#include "dtfixup/diagnostics.hpp"
#include "dtfixup/errors.hpp"
#include "dtfixup/harness.hpp"
#include "dtfixup/init.hpp"
#include "dtfixup/oracle.hpp"
#include "dtfixup/transformer.hpp"

namespace py = pybind11;
using namespace dtfixup;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    std::vector<double> data(a.data(), a.data() + a.size());
    return {std::move(shape), std::move(data)};
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

std::optional<RelationLabels> to_labels(const std::optional<py::array_t<std::int64_t>>& labels) {
    if (!labels) return std::nullopt;
    const auto& l = *labels;
    if (l.ndim() != 2 || l.shape(0) != l.shape(1)) throw DimensionError("relation labels must be an n x n array");
    std::vector<std::size_t> flat;
    const auto r = l.unchecked<2>();
    for (py::ssize_t i = 0; i < l.shape(0); ++i)
        for (py::ssize_t j = 0; j < l.shape(1); ++j) {
            if (r(i, j) < 0) throw DimensionError("relation labels must be non-negative");
            flat.push_back(static_cast<std::size_t>(r(i, j)));
        }
    return RelationLabels(static_cast<std::size_t>(l.shape(0)), std::move(flat));
}

py::dict report_dict(const DiagnosticsReport& r) {
    py::dict d;
    d["scheme"] = std::string(scheme_name(r.scheme));
    d["relational"] = r.relational;
    d["N"] = r.n_blocks;
    d["mu_target"] = r.mu_target;
    d["seed"] = r.seed;
    d["xi"] = r.xi;
    d["mu_estimate"] = r.mu_estimate;
    d["jacobian_norm_sq"] = r.jacobian_norm_sq;
    d["layer_conditions"] = r.layer_conditions;
    d["cond_times_N_median"] = r.cond_times_n_median();
    d["hidden_norm_trace"] = r.hidden_norm_trace;
    d["hidden_drift"] = r.hidden_drift;
    d["update_ratio"] = r.update_ratio;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "DT-Fixup initialization and stability diagnostics";

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<UsageError>(m, "UsageError", PyExc_RuntimeError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::enum_<SchemeKind>(m, "SchemeKind")
        .value("StandardLN", SchemeKind::StandardLN)
        .value("Xavier", SchemeKind::Xavier)
        .value("TFixup", SchemeKind::TFixup)
        .value("DTFixup", SchemeKind::DTFixup);

    py::class_<InitScheme>(m, "InitScheme")
        .def_readonly("kind", &InitScheme::kind)
        .def_readonly("mu", &InitScheme::mu)
        .def_readonly("xi", &InitScheme::xi)
        .def_readonly("relational", &InitScheme::relational);

    py::class_<EncoderConfig>(m, "EncoderConfig")
        .def(py::init([](std::size_t n_blocks, std::size_t d_x, std::size_t d_z, std::size_t n_heads,
                         std::size_t mlp_hidden, bool relational, bool use_layer_norm, std::size_t n_relations,
                         bool share_relations) {
                 EncoderConfig c{n_blocks, d_x, d_z, n_heads, mlp_hidden, relational, use_layer_norm, n_relations,
                                 share_relations};
                 c.validate();
                 return c;
             }),
             py::arg("n_blocks"), py::arg("d_x"), py::arg("d_z"), py::arg("n_heads") = 1, py::arg("mlp_hidden") = 16,
             py::arg("relational") = false, py::arg("use_layer_norm") = false, py::arg("n_relations") = 0,
             py::arg("share_relations") = true)
        .def_readonly("n_blocks", &EncoderConfig::n_blocks)
        .def_readonly("d_x", &EncoderConfig::d_x)
        .def_readonly("relational", &EncoderConfig::relational)
        .def_property_readonly("n_layers", &EncoderConfig::n_layers);

    py::class_<Encoder>(m, "Encoder")
        .def_property_readonly("config", &Encoder::config)
        .def_property_readonly("scheme", [](const Encoder& e) { return e.scheme(); })
        .def_property_readonly("parameter_count", &Encoder::parameter_count)
        .def(
            "forward",
            [](const Encoder& e, const Array& x, std::optional<py::array_t<std::int64_t>> labels) {
                const auto l = to_labels(labels);
                return to_array(encoder_forward(to_tensor(x), e, l ? &*l : nullptr).y);
            },
            py::arg("x"), py::arg("labels") = py::none())
        .def(
            "probe",
            [](const Encoder& e, const Array& x, const Array& readout, double target,
               std::optional<py::array_t<std::int64_t>> labels, double eta) {
                ProbeInput in{to_tensor(x), to_labels(labels), to_tensor(readout), target};
                return report_dict(run_probes(e, in, eta));
            },
            py::arg("x"), py::arg("readout"), py::arg("target") = 0.0, py::arg("labels") = py::none(),
            py::arg("eta") = 1e-4);

    m.def("dtfixup_scale", &dtfixup_scale, py::arg("n_blocks"), py::arg("mu"), py::arg("relational"));
    m.def("tfixup_scale", &tfixup_scale, py::arg("n_blocks"));
    m.def("make_scheme", &make_scheme, py::arg("kind"), py::arg("n_blocks"), py::arg("relational"),
          py::arg("mu") = 0.0);
    m.def(
        "estimate_mu",
        [](const std::vector<Array>& xs) {
            std::vector<Tensor> ts;
            for (const auto& x : xs) ts.push_back(to_tensor(x));
            return estimate_mu(ts);
        },
        py::arg("inputs"));
    m.def(
        "initialize",
        [](const EncoderConfig& c, const InitScheme& s, std::uint64_t seed) {
            Rng rng(seed);
            return initialize(c, s, rng);
        },
        py::arg("config"), py::arg("scheme"), py::arg("seed"));

    m.def(
        "oracle_gradients",
        [](std::vector<double> x, std::size_t query, double q, double k, double v, double w, std::vector<double> r_k,
           std::vector<double> r_v) {
            ScalarAttnCase c{std::move(x), query, q, k, v, w, std::move(r_k), std::move(r_v)};
            const auto g = oracle_gradients(c);
            py::dict d;
            d["value"] = oracle_forward(c);
            d["q"] = g.dq;
            d["k"] = g.dk;
            d["v"] = g.dv;
            d["w"] = g.dw;
            d["r_k"] = g.dr_k;
            d["r_v"] = g.dr_v;
            d["x"] = g.dx;
            return d;
        },
        py::arg("x"), py::arg("query"), py::arg("q"), py::arg("k"), py::arg("v"), py::arg("w"), py::arg("r_k"),
        py::arg("r_v"));

    py::class_<ExperimentConfig>(m, "ExperimentConfig")
        .def_property_readonly("depths", [](const ExperimentConfig& c) { return c.depths; })
        .def_property_readonly("seeds", [](const ExperimentConfig& c) { return c.seeds; })
        .def_property_readonly("relational", [](const ExperimentConfig& c) { return c.relational; })
        .def("__eq__", [](const ExperimentConfig& a, const ExperimentConfig& b) { return a == b; });

    m.def("parse_config", &parse_config, py::arg("text"));
    m.def("serialize_config", &serialize_config, py::arg("config"));
    m.def("config_hash", &config_hash_hex, py::arg("config"));
    m.def(
        "run_depth_sweep",
        [](const ExperimentConfig& c) {
            std::vector<DiagnosticsReport> reports;
            {
                py::gil_scoped_release release;
                reports = run_depth_sweep(c);
            }
            py::list out;
            for (const auto& r : reports) out.append(report_dict(r));
            return out;
        },
        py::arg("config"));
    m.def(
        "diagnostics_csv",
        [](const ExperimentConfig& c) {
            py::gil_scoped_release release;
            return diagnostics_csv(run_depth_sweep(c));
        },
        py::arg("config"));
    m.def(
        "run_training",
        [](const ExperimentConfig& c) {
            std::vector<Curve> curves;
            {
                py::gil_scoped_release release;
                curves = run_training(c);
            }
            py::list out;
            for (const auto& cv : curves) {
                py::dict d;
                d["scheme"] = std::string(scheme_name(cv.scheme));
                d["N"] = cv.n_blocks;
                d["seed"] = cv.seed;
                d["diverged"] = cv.diverged;
                std::vector<std::size_t> steps;
                std::vector<double> train, eval;
                for (const auto& p : cv.points) {
                    steps.push_back(p.step);
                    train.push_back(p.train_loss);
                    eval.push_back(p.eval_loss);
                }
                d["step"] = steps;
                d["train_loss"] = train;
                d["eval_loss"] = eval;
                out.append(d);
            }
            return out;
        },
        py::arg("config"));

    m.def("verify", [](std::uint64_t seed) {
        py::list out;
        for (const auto& r : checks::run_property_suite(seed)) out.append(py::make_tuple(r.name, r.passed, r.detail));
        return out;
    }, py::arg("seed") = 0);

    m.attr("__version__") = tool_version();
}
