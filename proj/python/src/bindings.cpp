#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "graphreason/encoding.hpp"
#include "graphreason/errors.hpp"
#include "graphreason/experiment.hpp"
#include "graphreason/geometry.hpp"
#include "graphreason/gradcheck_suite.hpp"
#include "graphreason/metrics.hpp"

namespace py = pybind11;
using namespace graphreason;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  auto* dst = out.mutable_data();
  for (std::size_t i = 0; i < t.size(); ++i) dst[i] = static_cast<double>(t[i]);
  return out;
}

py::dict report_dict(const MetricReport& r) {
  py::dict d;
  d["per_instance_ap"] = r.per_instance_ap;
  d["per_instance_ac"] = r.per_instance_ac;
  d["per_class_ap"] = r.per_class_ap;
  d["per_class_ac"] = r.per_class_ac;
  d["regions"] = r.regions;
  d["recall"] = r.recall ? py::object(py::float_(*r.recall)) : py::object(py::none());
  py::list classes;
  for (const auto& c : r.classes) {
    py::dict cd;
    cd["instances"] = c.instances;
    cd["ap"] = c.ap ? py::object(py::float_(*c.ap)) : py::object(py::none());
    cd["accuracy"] = c.accuracy ? py::object(py::float_(*c.accuracy)) : py::object(py::none());
    classes.append(cd);
  }
  d["classes"] = classes;
  return d;
}

py::dict scene_dict(const Scene& s) {
  py::dict d;
  d["id"] = s.id;
  d["features"] = to_numpy(s.features);
  py::list boxes;
  for (const Box& b : s.boxes) boxes.append(py::make_tuple(b.x1, b.y1, b.x2, b.y2));
  d["boxes"] = boxes;
  d["labels"] = s.labels;
  d["height"] = s.height;
  d["width"] = s.width;
  return d;
}

Box box_from(const std::tuple<double, double, double, double>& t) {
  return {std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t)};
}

ExperimentConfig config_from(const py::dict& settings, ExperimentConfig cfg = {}) {
  for (const auto& [key, value] : settings) {
    std::string text;
    if (py::isinstance<py::bool_>(value)) {
      text = value.cast<bool>() ? "true" : "false";
    } else {
      text = py::str(value).cast<std::string>();
    }
    apply_setting(cfg, key.cast<std::string>(), text);
  }
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Iterative region reasoning with spatial memory and graph reasoning";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);
  py::register_exception<EvaluationError>(m, "EvaluationError", PyExc_RuntimeError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);

  m.attr("scalar_bits") = sizeof(Scalar) * 8;

  m.def("iou", [](std::tuple<double, double, double, double> a, std::tuple<double, double, double, double> b) {
    return iou(box_from(a), box_from(b));
  }, py::arg("a"), py::arg("b"), "Intersection over union of two (x1, y1, x2, y2) boxes.");
  m.def("distance_kernel", [](double x, double bandwidth) { return distance_kernel(x, KernelConfig{bandwidth}); },
        py::arg("x"), py::arg("bandwidth"));

  m.def("average_precision", [](const std::vector<double>& scores, const std::vector<bool>& positives) {
    if (scores.size() != positives.size()) throw ContractError("scores and positives differ in length");
    std::unique_ptr<bool[]> flags(new bool[positives.size()]);
    for (std::size_t i = 0; i < positives.size(); ++i) flags[i] = positives[i];
    return average_precision(scores, std::span<const bool>(flags.get(), positives.size()));
  }, py::arg("scores"), py::arg("positives"));

  m.def("aggregate", [](py::array_t<double, py::array::c_style | py::array::forcecast> scores,
                        const std::vector<std::size_t>& labels) {
    if (scores.ndim() != 2) throw ContractError("scores must be a 2-D array");
    const std::span<const double> flat(scores.data(), static_cast<std::size_t>(scores.size()));
    return report_dict(aggregate(flat, static_cast<std::size_t>(scores.shape(1)), labels));
  }, py::arg("scores"), py::arg("labels"), "Metric report for [N x C] scores and N labels.");

  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init([](const py::kwargs& kwargs) { return config_from(kwargs); }))
      .def_static("load", &load_config, py::arg("path"))
      .def_static("parse", [](const std::string& text) {
        std::istringstream in(text);
        return parse_config(in);
      }, py::arg("text"))
      .def("set", [](ExperimentConfig& c, const std::string& key, const py::object& value) {
        py::dict d;
        d[py::str(key)] = value;
        c = config_from(d, c);
      }, py::arg("key"), py::arg("value"))
      .def("canonical", &canonical_config)
      .def("digest", &config_digest)
      .def_property_readonly("seed", [](const ExperimentConfig& c) { return c.seed; })
      .def_property_readonly("steps", [](const ExperimentConfig& c) { return c.steps; })
      .def_property_readonly("variant", [](const ExperimentConfig& c) { return std::string(variant_name(c.model.variant)); })
      .def("__repr__", [](const ExperimentConfig& c) { return "<Config digest=" + hex64(config_digest(c)) + ">"; });

  py::class_<Dataset>(m, "Dataset")
      .def_static("generate", [](const ExperimentConfig& c) {
        return generate_dataset(c.spec, c.n_scenes, c.data_seed, c.split);
      }, py::arg("config"))
      .def_static("load", &load_dataset, py::arg("path"))
      .def("save", [](const Dataset& d, const std::filesystem::path& p) { save_dataset(p, d); }, py::arg("path"))
      .def_property_readonly("classes", [](const Dataset& d) { return d.vocab.names(); })
      .def("split", [](const Dataset& d, const std::string& name) {
        const std::vector<Scene>* s = name == "train" ? &d.train : name == "val" ? &d.val : name == "test" ? &d.test : nullptr;
        if (!s) throw ConfigError("unknown split '" + name + "'");
        py::list out;
        for (const auto& scene : *s) out.append(scene_dict(scene));
        return out;
      }, py::arg("name"))
      .def("__len__", [](const Dataset& d) { return d.train.size() + d.val.size() + d.test.size(); });

  py::class_<TrainResult>(m, "TrainedModel")
      .def_readonly("steps", &TrainResult::steps)
      .def_readonly("last_loss", &TrainResult::last_loss)
      .def_property_readonly("parameter_count", [](const TrainResult& r) { return r.model.params.scalar_count(); })
      .def("save", [](const TrainResult& r, const std::filesystem::path& path, const ExperimentConfig& c) {
        save_checkpoint(path, r.model, r.optimizer, r.steps, config_digest(c));
      }, py::arg("path"), py::arg("config"));

  m.def("train", [](const ExperimentConfig& c, const Dataset& d) {
    py::gil_scoped_release release;
    return train(c, d);
  }, py::arg("config"), py::arg("dataset"));

  m.def("evaluate", [](const TrainResult& r, const ExperimentConfig& c, const Dataset& d, std::optional<double> delta,
                       const std::string& mode) {
    std::optional<DropProtocol> drop;
    if (delta) {
      DropProtocol p = c.drop;
      p.delta = *delta;
      p.mode = parse_drop_mode(mode);
      drop = p;
    }
    MetricReport rep;
    {
      py::gil_scoped_release release;
      rep = evaluate(r.model, c, d, d.test, drop);
    }
    return report_dict(rep);
  }, py::arg("model"), py::arg("config"), py::arg("dataset"), py::arg("delta") = py::none(), py::arg("mode") = "post",
        "Metric report on the test split, optionally under the region-drop protocol.");

  m.def("sweep_csv", [](const TrainResult& r, const ExperimentConfig& c, const Dataset& d, const std::vector<double>& deltas) {
    py::gil_scoped_release release;
    return sweep_csv(sweep(r.model, c, d, d.test, deltas));
  }, py::arg("model"), py::arg("config"), py::arg("dataset"), py::arg("deltas"));

  m.def("gradcheck", [](std::size_t seeds, const std::vector<std::string>& only) {
    SuiteOptions opts;
    opts.seeds = seeds;
    opts.only = only;
    std::vector<SuiteEntry> entries;
    {
      py::gil_scoped_release release;
      entries = run_gradcheck_suite(opts);
    }
    py::list out;
    for (const auto& e : entries) {
      py::dict d;
      d["name"] = e.name;
      d["passed"] = e.passed();
      d["seeds_passed"] = e.seeds_passed;
      d["max_error"] = static_cast<double>(e.max_error);
      d["checked"] = e.checked;
      out.append(d);
    }
    return out;
  }, py::arg("seeds") = 10, py::arg("only") = std::vector<std::string>{});
  m.def("gradcheck_cases", &gradcheck_case_names);
}
