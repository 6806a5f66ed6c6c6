#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "saveri/pipeline.hpp"

namespace py = pybind11;
using namespace saveri;

namespace {

py::object to_python(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

Json from_python(const py::object& o) {
  return Json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Bba to_bba(const std::tuple<double, double, double>& t) {
  return {std::get<0>(t), std::get<1>(t), std::get<2>(t)};
}

std::tuple<double, double, double> from_bba(const Bba& b) { return {b.safe, b.unsafe, b.mu}; }

std::vector<Bba> to_bbas(const std::vector<std::tuple<double, double, double>>& v) {
  std::vector<Bba> out;
  out.reserve(v.size());
  for (const auto& t : v) out.push_back(to_bba(t));
  return out;
}

Sequence rows_of(const Mat& m) {
  Sequence s;
  for (Eigen::Index i = 0; i < m.rows(); ++i) s.push_back(m.row(i).transpose());
  return s;
}

SystemConfig system_config(const std::string& name, const std::string& variant,
                           const py::object& overrides) {
  Json j = overrides.is_none() ? Json::object() : from_python(overrides);
  j["name"] = name;
  j["variant"] = variant;
  return system_config_from_json(j);
}

ClosedLoopSystem bundle_system(const ModelBundle& b, const std::string& variant) {
  SystemConfig c = b.config.system;
  c.variant = variant_from_string(variant);
  return make_system(c);
}

}  // namespace

PYBIND11_MODULE(_saveri, m) {
  m.doc() = "Learned safety assessment with online sim-to-real adaptation";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<InsufficientDataError>(m, "InsufficientDataError", PyExc_ValueError);
  py::register_exception<IncompatibleError>(m, "IncompatibleError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("available_systems", &available_systems);

  m.def("fuse_beliefs",
        [](const std::vector<std::tuple<double, double, double>>& members) {
          return from_bba(fuse_beliefs(to_bbas(members)));
        },
        py::arg("members"));
  m.def("fuse_feedback",
        [](const std::vector<std::tuple<double, double, double>>& members, long count, double alpha,
           double beta) { return from_bba(fuse_feedback(to_bbas(members), count, alpha, beta)); },
        py::arg("members"), py::arg("count"), py::arg("alpha") = 0.4, py::arg("beta") = 0.3);
  m.def("combine_estimates",
        [](const std::tuple<double, double, double>& prior,
           const std::tuple<double, double, double>& feedback) {
          return from_bba(combine_estimates(to_bba(prior), to_bba(feedback)));
        });
  m.def("bba_from_training",
        [](double lambda, double mu) { return from_bba(bba_from_training(lambda, mu)); },
        py::arg("score"), py::arg("mu") = 0.3);
  m.def("bba_from_feedback", [](double lambda) { return from_bba(bba_from_feedback(lambda)); });

  m.def("dtw", [](const Mat& a, const Mat& b) { return dtw(rows_of(a), rows_of(b)); },
        "DTW between two sequences given as (length, dim) arrays.");

  m.def("generate_episodes",
        [](const std::string& system, int episodes, int horizon, std::uint64_t seed,
           const std::string& variant, bool disturbances, const py::object& params) {
          const ClosedLoopSystem sys = make_system(system_config(system, variant, params));
          EpisodeBatch b;
          {
            py::gil_scoped_release release;
            b = generate_episodes(sys, episodes, horizon, seed, disturbances);
          }
          return to_python(to_json(b));
        },
        py::arg("system"), py::arg("episodes"), py::arg("horizon") = 60, py::arg("seed") = 1,
        py::arg("variant") = "nominal", py::arg("disturbances") = true,
        py::arg("params") = py::none(),
        "Rolls out episodes and returns the episode batch as a dict.");

  py::class_<ModelBundle>(m, "Model")
      .def_static(
          "initialize",
          [](const py::object& batch, const py::object& config) {
            const EpisodeBatch b = episode_batch_from_json(from_python(batch));
            const Config c = config.is_none() ? Config{} : config_from_json(from_python(config));
            py::gil_scoped_release release;
            return initialize_model(b, c);
          },
          py::arg("batch"), py::arg("config") = py::none(),
          "Builds a model from an episode batch dict and an optional config dict.")
      .def_static("load", &load_bundle, py::arg("path"))
      .def("save", [](const ModelBundle& b, const std::filesystem::path& p) { save_bundle(p, b); })
      .def_property_readonly("input_dim", &ModelBundle::input_dim)
      .def_property_readonly("config", [](const ModelBundle& b) { return to_python(to_json(b.config)); })
      .def_property_readonly("meta", [](const ModelBundle& b) { return to_python(b.meta); })
      .def_property_readonly("feedback_count", [](const ModelBundle& b) { return b.grid.feedback_count(); })
      .def(
          "adapt",
          [](ModelBundle& b, int episodes, std::uint64_t seed) {
            const ClosedLoopSystem real = bundle_system(b, "real");
            AdaptSummary s;
            {
              py::gil_scoped_release release;
              s = adapt_model(b, real, episodes, seed);
            }
            return py::make_tuple(s.feedback, s.steps);
          },
          py::arg("episodes"), py::arg("seed") = 1,
          "Adapts with real-system episodes; returns (feedback data, steps).")
      .def(
          "assess",
          [](const ModelBundle& b, const Vec& state, const Mat& desired) {
            Json in{{"state", to_json(state)}, {"desired", to_json(rows_of(desired))}};
            return to_python(to_json(assess_input(b, assessment_input_from_json(in, b))));
          },
          py::arg("state"), py::arg("desired"))
      .def(
          "evaluate",
          [](const ModelBundle& b, int episodes, std::optional<double> threshold,
             std::uint64_t seed, const std::string& variant) {
            const ClosedLoopSystem sys = bundle_system(b, variant);
            EvalReport r;
            {
              py::gil_scoped_release release;
              r = evaluate(b, sys, episodes, threshold.value_or(b.config.threshold), seed);
            }
            return to_python(to_json(r));
          },
          py::arg("episodes"), py::arg("threshold") = py::none(), py::arg("seed") = 1,
          py::arg("variant") = "real")
      .def(
          "run",
          [](const ModelBundle& b, int episodes, std::uint64_t seed, std::optional<double> threshold,
             bool recovery, const std::string& variant) {
            const ClosedLoopSystem sys = bundle_system(b, variant);
            RunOptions o;
            o.threshold = threshold.value_or(b.config.threshold);
            o.recovery = recovery;
            std::vector<RunTrace> traces;
            {
              py::gil_scoped_release release;
              traces = run_episodes(b, sys, episodes, seed, o);
            }
            py::list out;
            for (const auto& t : traces) out.append(to_python(to_json(t)));
            return out;
          },
          py::arg("episodes"), py::arg("seed") = 1, py::arg("threshold") = py::none(),
          py::arg("recovery") = true, py::arg("variant") = "real")
      .def("grid_csv", [](const ModelBundle& b) { return b.grid.to_csv(); })
      .def("embedding_csv", &embedding_csv);
}
