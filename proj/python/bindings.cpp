// Python bindings: configs, training, evaluation and the metric primitives.

#include <sstream>

#include <pybind11/functional.h>
#include <pybind11/stl/filesystem.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "protoosr/harness.hpp"

namespace py = pybind11;
using namespace protoosr;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<float>(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

std::span<const double> view(const DoubleArray& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }
std::span<const int> view(const IntArray& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["closed_accuracy"] = r.closed_accuracy;
  d["auroc"] = r.auroc;
  d["macro_f1"] = r.macro_f1;
  d["threshold"] = r.threshold;
  d["percentile"] = r.percentile;
  d["openness"] = r.openness;
  d["per_class_f1"] = r.per_class_f1;
  d["median_known_center_distance"] = r.median_known_center_distance;
  d["median_unknown_center_distance"] = r.median_unknown_center_distance;
  d["known_samples"] = r.known_samples;
  d["unknown_samples"] = r.unknown_samples;
  d["histogram_edges"] = r.histograms.known.edges;
  d["histogram_known"] = r.histograms.known.counts;
  d["histogram_unknown"] = r.histograms.unknown.counts;
  return d;
}

py::dict epoch_dict(const EpochLog& e) {
  py::dict d;
  d["epoch"] = e.epoch;
  d["lr"] = e.learning_rate;
  d["loss"] = e.total;
  d["ce"] = e.ce;
  d["pl"] = e.pl;
  d["slc"] = e.slc;
  d["grad_norm"] = e.grad_norm;
  d["val_accuracy"] = e.val_accuracy;
  return d;
}

RunConfig with_overrides(RunConfig config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) apply_override(config, o);
  return config;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Prototype-based open-set recognition (PL, GCPL, SLCPL)";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<FormatError>(m, "DataFormatError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ProtocolError>(m, "ProtocolError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());

  py::class_<RunConfig>(m, "Config")
      .def(py::init<>())
      .def_static("from_file", &load_config, py::arg("path"))
      .def_static("from_text", &parse_config, py::arg("text"))
      .def("get", &get_value, py::arg("key"))
      .def("set", &set_value, py::arg("key"), py::arg("value"))
      .def("apply", &apply_override, py::arg("assignment"))
      .def("validate", &RunConfig::validate)
      .def("to_text", &to_text)
      .def_static("keys", &config_keys)
      .def("copy", [](const RunConfig& c) { return c; })
      .def("__repr__", [](const RunConfig& c) {
        return "Config(loss.variant=" + get_value(c, "loss.variant") + ", run.seed=" + get_value(c, "run.seed") + ")";
      });

  py::class_<RunData>(m, "RunData")
      .def_property_readonly("known_classes", [](const RunData& d) { return d.split.known; })
      .def_property_readonly("unknown_classes", [](const RunData& d) { return d.split.unknown; })
      .def_property_readonly("openness", [](const RunData& d) { return d.split.openness; })
      .def_property_readonly("train_size", [](const RunData& d) { return d.train_known.size(); })
      .def_property_readonly("test_known_size", [](const RunData& d) { return d.test_known.size(); })
      .def_property_readonly("test_unknown_size", &RunData::unknown_count);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const Checkpoint& c, const std::filesystem::path& path) { save_checkpoint(c, path); }, py::arg("path"))
      .def("to_bytes", [](const Checkpoint& c) { return py::bytes(serialize(c)); })
      .def_static("from_bytes", [](const py::bytes& b) { return deserialize(std::string(b)); })
      .def_property_readonly("config", [](const Checkpoint& c) { return c.config; })
      .def_property_readonly("epochs_done", [](const Checkpoint& c) { return c.epochs_done; })
      .def_property_readonly("prototypes", [](const Checkpoint& c) { return to_array(c.prototypes.points); })
      .def_property_readonly("log", [](const Checkpoint& c) {
        py::list out;
        for (const auto& e : c.log) out.append(epoch_dict(e));
        return out;
      })
      .def("embed", [](const Checkpoint& c, const FloatArray& images) {
        return to_array(embed(c.config.encoder, c.encoder, to_tensor(images)));
      }, py::arg("images"), "Embeddings (B x D) of images shaped B x C x H x W with values in [0, 1].");

  m.def("prepare_data", &prepare_data, py::arg("config"), py::call_guard<py::gil_scoped_release>());

  m.def("train", [](const RunConfig& config, const RunData* data, const std::function<void(py::dict)>& on_epoch) {
    const RunData owned = data == nullptr ? prepare_data(config) : RunData{};
    const RunData& d = data == nullptr ? owned : *data;
    EpochCallback cb;
    if (on_epoch) cb = [&](const EpochLog& e) { on_epoch(epoch_dict(e)); };
    return train(config, d, cb);
  }, py::arg("config"), py::arg("data") = nullptr, py::arg("on_epoch") = nullptr,
     "Trains from scratch; data is prepared from the config when not given.");

  m.def("evaluate", [](const Checkpoint& c, const RunData& data) { return report_dict(evaluate(c, data)); },
        py::arg("checkpoint"), py::arg("data"));

  m.def("sweep_openness", [](const Checkpoint& c, const RunData& data, const std::vector<std::size_t>& counts) {
    py::list out;
    for (const auto& p : sweep_openness(c, data, counts)) {
      out.append(py::make_tuple(p.unknown_classes, p.openness, p.macro_f1));
    }
    return out;
  }, py::arg("checkpoint"), py::arg("data"), py::arg("unknown_counts"));

  m.def("export_features", [](const Checkpoint& c, const RunData& data) {
    std::ostringstream out;
    export_features(c, data, out);
    return out.str();
  }, py::arg("checkpoint"), py::arg("data"), "Feature table as CSV text.");

  m.def("config_with", &with_overrides, py::arg("config"), py::arg("overrides"));

  // metric primitives
  m.def("auroc", [](const DoubleArray& known, const DoubleArray& unknown) { return auroc(view(known), view(unknown)); },
        py::arg("known_scores"), py::arg("unknown_scores"));
  m.def("macro_f1", [](const IntArray& pred, const IntArray& truth, std::size_t n_known) {
    return macro_f1(view(pred), view(truth), n_known);
  }, py::arg("predictions"), py::arg("truths"), py::arg("n_known"), "Labels are 0..n_known-1, or -1 for unknown.");
  m.def("openness", &openness, py::arg("n_train"), py::arg("n_test"), py::arg("n_target"));
  m.def("calibrate_threshold", [](const DoubleArray& d, double p) { return calibrate_threshold(view(d), p); },
        py::arg("train_known_distances"), py::arg("percentile") = 95.0);
  m.def("score", [](const FloatArray& features, const FloatArray& prototypes) {
    const auto s = score(to_tensor(features), to_tensor(prototypes));
    const auto n = static_cast<py::ssize_t>(s.size());
    const std::vector<py::ssize_t> shape{n};
    py::array_t<double> dist(shape), known(shape);
    py::array_t<int> nearest(shape);
    double* d = dist.mutable_data();
    double* k = known.mutable_data();
    int* c = nearest.mutable_data();
    for (std::size_t i = 0; i < s.size(); ++i) {
      d[i] = s[i].min_distance;
      c[i] = s[i].nearest_class;
      k[i] = s[i].known_score;
    }
    return py::make_tuple(dist, nearest, known);
  }, py::arg("features"), py::arg("prototypes"), "Returns (min_distance, nearest_class, known_score).");
  m.def("slc", [](const DoubleArray& prototypes) {
    if (prototypes.ndim() != 2) throw DimensionError("prototypes must be N x D");
    Tensor<double> p(Shape{static_cast<std::size_t>(prototypes.shape(0)), static_cast<std::size_t>(prototypes.shape(1))},
                     std::vector<double>(prototypes.data(), prototypes.data() + prototypes.size()));
    ad::Tape<double> tape(false);
    return slc_term(tape, tape.constant(p)).tensor().item();
  }, py::arg("prototypes"), "Sample variance of prototype distances to their centroid.");

  m.attr("UNKNOWN") = kUnknown;
}
