#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "envedit/cli.hpp"

namespace py = pybind11;
using namespace envedit;
using io::Json;

namespace {

cli::ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error("malformed_config", e.what());
  }
  return cli::config_from_json(j);
}

std::string dtw_in(const std::string& env_json, const std::vector<NodeId>& predicted,
                   const std::vector<NodeId>& reference, double threshold) {
  Environment env = io::environment_from_json(Json::parse(env_json));
  GraphDistances d(env);
  const double value = dtw(d, predicted, reference);
  return Json{{"dtw", value}, {"ndtw", ndtw(value, reference.size(), threshold)}}.dump();
}

}  // namespace

PYBIND11_MODULE(_envedit, m) {
  m.doc() = "Environment editing, speaker and follower training, and evaluation";

  static py::handle error_type = py::exception<Error>(m, "EnvEditError").release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = error_type(py::str(e.code() + ": " + e.what()));
      exc.attr("code") = py::str(e.code());
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.def("conditional_instance_norm",
        [](const Vec& x, const Vec& gamma, const Vec& beta) { return conditional_instance_norm(x, gamma, beta); },
        py::arg("x"), py::arg("gamma"), py::arg("beta"));
  m.def("ensemble_decide", &ensemble_decide, py::arg("logits"));
  m.def("spl", &spl, py::arg("success"), py::arg("shortest_length"), py::arg("taken_length"));
  m.def("_dtw", &dtw_in, py::arg("env_json"), py::arg("predicted"), py::arg("reference"),
        py::arg("threshold") = kDefaultSuccessRadius);

  m.def("_default_config", [] { return cli::to_json(cli::ExperimentConfig{}).dump(); });
  m.def("_normalize_config", [](const std::string& text) { return cli::to_json(parse_config(text)).dump(); });
  m.def(
      "_worldgen",
      [](const std::string& config, const std::string& out, std::optional<std::uint64_t> seed) {
        return cli::cmd_worldgen(parse_config(config), out, seed).dump();
      },
      py::arg("config"), py::arg("out"), py::arg("seed") = py::none());
  m.def(
      "_edit", [](const std::string& config, const std::string& out) { return cli::cmd_edit(parse_config(config), out).dump(); },
      py::arg("config"), py::arg("out"));
  m.def(
      "_train_speaker",
      [](const std::string& config, const std::string& out) { return cli::cmd_train_speaker(parse_config(config), out).dump(); },
      py::arg("config"), py::arg("out"));
  m.def(
      "_train",
      [](const std::string& config, const std::string& out, const std::string& name) {
        return cli::cmd_train(parse_config(config), out, name).dump();
      },
      py::arg("config"), py::arg("out"), py::arg("name") = "");
  m.def(
      "_evaluate",
      [](const std::string& config, const std::string& out, const std::vector<std::string>& checkpoints,
         const std::string& split, const std::string& source, bool ensemble, bool plot, const std::string& name) {
        cli::EvalRequest req{checkpoints, split, source, ensemble, plot, name};
        return cli::cmd_eval(parse_config(config), out, req).dump();
      },
      py::arg("config"), py::arg("out"), py::arg("checkpoints"), py::arg("split") = "val_unseen",
      py::arg("source") = kOriginalSource, py::arg("ensemble") = false, py::arg("plot") = false, py::arg("name") = "");
  m.def(
      "_read_artifact",
      [](const std::string& out, const std::string& rel) { return py::bytes(cli::Workspace(out).read(rel)); },
      py::arg("out"), py::arg("rel"));
  m.def(
      "run",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "envedit");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        return cli::run(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"));
}
