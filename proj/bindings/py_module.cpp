#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "deepca/admm.hpp"
#include "deepca/config.hpp"
#include "deepca/errors.hpp"
#include "deepca/experiments.hpp"
#include "deepca/learning.hpp"
#include "deepca/oracle.hpp"
#include "deepca/synth.hpp"
#include "deepca/tensor_io.hpp"

namespace py = pybind11;
using namespace deepca;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  std::vector<std::size_t> dims(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) dims[i] = static_cast<std::size_t>(a.shape(i));
  std::vector<double> values(a.data(), a.data() + a.size());
  return Tensor(std::move(dims), std::move(values));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
  py::array_t<double> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

PenaltySpec penalty_from_kwargs(const std::string& kind, py::object bias, bool learnable,
                                py::object indices, py::object values) {
  if (kind == "none") return PenaltySpec::none();
  if (kind == "nonneg") return PenaltySpec::nonneg();
  if (kind == "simplex") return PenaltySpec::simplex();
  if (kind == "nonneg_l1") {
    return PenaltySpec::nonneg_l1(tensor_from_array(bias.cast<py::array_t<double>>()), learnable);
  }
  if (kind == "equality") {
    if (indices.is_none()) return PenaltySpec::equality({}, Tensor());
    auto idx = indices.cast<std::vector<std::size_t>>();
    return PenaltySpec::equality(std::move(idx),
                                 tensor_from_array(values.cast<py::array_t<double>>()));
  }
  throw UsageError("unknown penalty kind: " + kind);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Deep component analysis: constrained multilayer reconstruction models with "
            "unrolled alternating-direction inference";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<CapacityError>(m, "CapacityError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);

  py::class_<PenaltySpec>(m, "PenaltySpec")
      .def(py::init([](const std::string& kind, py::object bias, bool learnable,
                       py::object indices, py::object values) {
             return penalty_from_kwargs(kind, bias, learnable, indices, values);
           }),
           py::arg("kind"), py::arg("bias") = py::none(), py::arg("learnable") = false,
           py::arg("indices") = py::none(), py::arg("values") = py::none())
      .def_property_readonly("kind",
                             [](const PenaltySpec& s) { return penalty_kind_name(s.kind()); })
      .def_property_readonly("bias", [](const PenaltySpec& s) { return array_from_tensor(s.bias()); });

  py::class_<LinearOperator>(m, "LinearOperator")
      .def_static("dense",
                  [](py::array_t<double> matrix) {
                    return LinearOperator::dense(tensor_from_array(matrix));
                  },
                  py::arg("matrix"))
      .def_static("conv2d",
                  [](py::array_t<double> kernel, std::size_t stride, std::size_t pad,
                     std::size_t data_h, std::size_t data_w) {
                    return LinearOperator::conv2d(tensor_from_array(kernel), stride, pad, data_h,
                                                  data_w);
                  },
                  py::arg("kernel"), py::arg("stride"), py::arg("pad"), py::arg("data_h"),
                  py::arg("data_w"))
      .def_property_readonly("input_shape", &LinearOperator::input_shape)
      .def_property_readonly("output_shape", &LinearOperator::output_shape)
      .def("forward",
           [](const LinearOperator& op, py::array_t<double> code) {
             return array_from_tensor(op.forward(tensor_from_array(code).reshaped(op.output_shape())));
           })
      .def("adjoint",
           [](const LinearOperator& op, py::array_t<double> data) {
             return array_from_tensor(op.adjoint(tensor_from_array(data).reshaped(op.input_shape())));
           })
      .def_property_readonly("weights",
                             [](const LinearOperator& op) { return array_from_tensor(op.weights()); });

  py::class_<Model>(m, "Model")
      .def(py::init<>())
      .def("add_layer",
           [](Model& model, const LinearOperator& op, const PenaltySpec& penalty) {
             model.layers.push_back({op, penalty});
           },
           py::arg("op"), py::arg("penalty"))
      .def_readwrite("iterations", &Model::iterations)
      .def_readwrite("rho", &Model::rho)
      .def_property_readonly("layer_count", &Model::layer_count)
      .def("validate", &Model::validate);

  m.def("prox",
        [](const PenaltySpec& spec, py::array_t<double> v) {
          return array_from_tensor(prox(spec, tensor_from_array(v)));
        },
        py::arg("spec"), py::arg("v"),
        "argmin_u 1/2 ||v - u||^2 + Phi(u) for the penalty's Phi");

  m.def("penalty_value",
        [](const PenaltySpec& spec, py::array_t<double> w) {
          return penalty_value(spec, tensor_from_array(w));
        },
        py::arg("spec"), py::arg("w"));

  m.def("objective",
        [](const Model& model, py::array_t<double> x, const std::vector<py::array_t<double>>& ws) {
          std::vector<Tensor> coeffs;
          for (std::size_t j = 0; j < ws.size(); ++j) {
            coeffs.push_back(
                tensor_from_array(ws[j]).reshaped(model.layers[j].op.output_shape()));
          }
          return objective(model, tensor_from_array(x).reshaped(model.input_shape()), coeffs);
        },
        py::arg("model"), py::arg("x"), py::arg("coefficients"));

  m.def("feed_forward",
        [](const Model& model, py::array_t<double> x) {
          const InferenceState state =
              feed_forward_init(model, tensor_from_array(x).reshaped(model.input_shape()));
          std::vector<py::array_t<double>> acts;
          for (const auto& act : state.act) acts.push_back(array_from_tensor(act));
          return acts;
        },
        py::arg("model"), py::arg("x"),
        "Single feed-forward pass (pre-activation + proximal activation per layer)");

  m.def("infer",
        [](const Model& model, py::array_t<double> x, std::size_t iterations,
           py::object equality_indices, py::object equality_values) {
          InferOptions opts;
          opts.iterations = iterations;
          PenaltySpec eq;
          if (!equality_indices.is_none()) {
            eq = PenaltySpec::equality(
                equality_indices.cast<std::vector<std::size_t>>(),
                tensor_from_array(equality_values.cast<py::array_t<double>>()));
            opts.output_penalty = &eq;
          }
          const InferenceState state =
              infer(model, tensor_from_array(x).reshaped(model.input_shape()), opts);
          py::dict out;
          std::vector<py::array_t<double>> pre, act, dual;
          for (std::size_t j = 0; j < model.layer_count(); ++j) {
            pre.push_back(array_from_tensor(state.pre[j]));
            act.push_back(array_from_tensor(state.act[j]));
            dual.push_back(array_from_tensor(state.dual[j]));
          }
          out["pre"] = pre;
          out["act"] = act;
          out["dual"] = dual;
          out["output"] = array_from_tensor(state.output());
          return out;
        },
        py::arg("model"), py::arg("x"), py::arg("iterations") = 0,
        py::arg("equality_indices") = py::none(), py::arg("equality_values") = py::none(),
        "Unrolled inference: feed-forward initialization plus T-1 sweeps");

  m.def("residuals",
        [](const Model& model, py::array_t<double> x, std::size_t iterations) {
          const InferenceState state =
              infer(model, tensor_from_array(x).reshaped(model.input_shape()),
                    {.iterations = iterations});
          const auto res = residuals(model, state);
          std::vector<std::pair<double, double>> out;
          for (const auto& r : res) out.emplace_back(r.primal, r.reconstruction);
          return out;
        },
        py::arg("model"), py::arg("x"), py::arg("iterations") = 0);

  m.def("write_dcat",
        [](const std::filesystem::path& path, py::array_t<double> data) {
          write_dcat_file(path, tensor_from_array(data));
        },
        py::arg("path"), py::arg("data"));

  m.def("read_dcat",
        [](const std::filesystem::path& path) { return array_from_tensor(read_dcat_file(path)); },
        py::arg("path"));

  m.def("train_from_config",
        [](const std::string& config_text, const std::filesystem::path& out_dir) {
          const auto cfg = nlohmann::json::parse(config_text);
          experiments::run_train(cfg, out_dir);
        },
        py::arg("config_json"), py::arg("out_dir"),
        "Run the training pipeline from a JSON config string");

  m.def("infer_file",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& input,
           std::size_t iterations, const std::filesystem::path& output) {
          experiments::run_infer(checkpoint, input, iterations, output);
        },
        py::arg("checkpoint"), py::arg("input"), py::arg("iterations"), py::arg("output"));

  m.def("dictionary_gen",
        [](std::size_t d, std::size_t k, double coherence, std::uint64_t seed) {
          return array_from_tensor(synth::dictionary_gen(d, k, coherence, seed));
        },
        py::arg("d"), py::arg("k"), py::arg("coherence"), py::arg("seed"));
  m.def("sparse_code_gen",
        [](std::size_t k, double density, std::uint64_t seed) {
          return array_from_tensor(synth::sparse_code_gen(k, density, seed));
        },
        py::arg("k"), py::arg("density"), py::arg("seed"));
}
