#include "glam/assignment.hpp"
#include "glam/attention.hpp"
#include "glam/cli.hpp"
#include "glam/gradcheck.hpp"
#include "glam/synthdata.hpp"
#include "glam/training.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace glam;

namespace {

PointFeatureSet point_set(const Matrix& features, const Matrix& positions) {
  PointFeatureSet s{features, positions, {}};
  s.validate();
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Graph learning and matching with self- and cross-attention";
  m.attr("__version__") = kToolVersion;

  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  py::class_<NetworkConfig>(m, "NetworkConfig")
      .def(py::init<>())
      .def_static("desk_scale", &NetworkConfig::desk_scale)
      .def_static("paper_scale", &NetworkConfig::paper_scale)
      .def_readwrite("n_layers", &NetworkConfig::n_layers)
      .def_readwrite("n_self_heads", &NetworkConfig::n_self_heads)
      .def_readwrite("n_cross_heads", &NetworkConfig::n_cross_heads)
      .def_readwrite("feat_dim", &NetworkConfig::feat_dim)
      .def_readwrite("self_dim", &NetworkConfig::self_dim)
      .def_readwrite("cross_dim", &NetworkConfig::cross_dim)
      .def_readwrite("encoder_hidden", &NetworkConfig::encoder_hidden)
      .def_readwrite("sinkhorn_iters", &NetworkConfig::sinkhorn_iters)
      .def_readwrite("use_sal", &NetworkConfig::use_sal)
      .def_readwrite("use_cal", &NetworkConfig::use_cal)
      .def("validate", &NetworkConfig::validate)
      .def("to_json", [](const NetworkConfig& c) { return network_config_to_json(c); })
      .def_static("from_json", &network_config_from_json)
      .def("__eq__", [](const NetworkConfig& a, const NetworkConfig& b) { return a == b; });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("pos_weight", &TrainConfig::pos_weight)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<GlamParameters>(m, "Parameters")
      .def_static("init", &GlamParameters::init, py::arg("config"), py::arg("seed") = 0)
      .def_static("load",
                  [](const std::string& path) {
                    Checkpoint ck = load_checkpoint(path);
                    return py::make_tuple(std::move(ck.params), ck.config);
                  })
      .def("save", [](const GlamParameters& p, const std::string& path,
                      const NetworkConfig& c) { save_checkpoint(path, p, c); })
      .def("parameter_count", &GlamParameters::parameter_count)
      .def("names",
           [](const GlamParameters& p) {
             std::vector<std::string> out;
             for (const auto& [name, t] : p.tensors()) out.push_back(name);
             return out;
           })
      .def("__eq__", [](const GlamParameters& a, const GlamParameters& b) { return a == b; });

  py::class_<Dataset>(m, "Dataset")
      .def_static("load", &load_dataset)
      .def("save", [](const Dataset& d, const std::string& path) { save_dataset(path, d); })
      .def_readonly("feat_dim", &Dataset::feat_dim)
      .def_property_readonly("n_samples", [](const Dataset& d) { return d.samples.size(); })
      .def_property_readonly("category_names",
                             [](const Dataset& d) {
                               std::vector<std::string> out;
                               for (const auto& c : d.categories) out.push_back(c.name);
                               return out;
                             })
      .def("sample",
           [](const Dataset& d, std::size_t i) {
             const auto& s = d.samples.at(i);
             py::dict out;
             out["category"] = s.category;
             out["features_a"] = s.a.features;
             out["positions_a"] = s.a.positions;
             out["features_b"] = s.b.features;
             out["positions_b"] = s.b.positions;
             out["gt"] = s.gt;
             return out;
           })
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });

  m.def(
      "generate_dataset",
      [](std::size_t categories, std::size_t n_keypoints, std::size_t feat_dim, std::size_t pairs,
         double noise, double rotation, double corruption, double dropout, std::uint64_t seed) {
        GenConfig g;
        g.pairs_per_category = pairs;
        g.feature_noise_sigma = noise;
        g.max_rotation = rotation;
        g.corruption_prob = corruption;
        g.dropout_prob = dropout;
        g.seed = seed;
        g.validate();
        return generate_dataset(categories, n_keypoints, feat_dim, g);
      },
      py::arg("categories") = 2, py::arg("n_keypoints") = 10, py::arg("feat_dim") = 64, py::arg("pairs") = 10,
      py::arg("noise") = 0.5, py::arg("rotation") = 0.5, py::arg("corruption") = 0.0, py::arg("dropout") = 0.0,
      py::arg("seed") = 0);

  m.def(
      "make_template",
      [](std::size_t n, std::size_t d, std::uint64_t seed) {
        const CategoryTemplate t = make_template(n, d, seed);
        py::dict out;
        out["features"] = t.prototype_features;
        out["positions"] = t.prototype_positions;
        out["adjacency"] = t.planted_adjacency;
        out["labels"] = t.labels;
        return out;
      },
      py::arg("n"), py::arg("d"), py::arg("seed") = 0);

  m.def("sinkhorn", &sinkhorn_normalize, py::arg("matrix"), py::arg("iters"));
  m.def(
      "hungarian", [](const Matrix& scores) { return hungarian(scores).assign; }, py::arg("scores"));

  m.def(
      "forward",
      [](const GlamParameters& params, const NetworkConfig& config, const Matrix& features_a,
         const Matrix& positions_a, const Matrix& features_b, const Matrix& positions_b) {
        const ForwardTrace t =
            forward(params, config, point_set(features_a, positions_a), point_set(features_b, positions_b));
        return t.assignment;
      },
      py::arg("params"), py::arg("config"), py::arg("features_a"), py::arg("positions_a"),
      py::arg("features_b"), py::arg("positions_b"));

  m.def(
      "train",
      [](GlamParameters& params, const NetworkConfig& config, const Dataset& train_set, const Dataset& val_set,
         const TrainConfig& tc) {
        const TrainReport r = [&] {
          py::gil_scoped_release release;
          return train(params, config, train_set.samples, val_set.samples, tc);
        }();
        py::dict out;
        out["loss"] = r.loss;
        out["accuracy"] = r.accuracy;
        return out;
      },
      py::arg("params"), py::arg("config"), py::arg("train_set"), py::arg("val_set"), py::arg("train_config"));

  m.def(
      "evaluate",
      [](const GlamParameters& params, const NetworkConfig& config, const Dataset& data) {
        return evaluate(params, config, data.samples);
      },
      py::arg("params"), py::arg("config"), py::arg("data"));

  m.def(
      "gradient_check",
      [](std::uint64_t seed) { return gradient_check(GradcheckOptions{.seed = seed}).worst_by_group(); },
      py::arg("seed") = 0);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
