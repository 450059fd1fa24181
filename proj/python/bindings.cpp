// Python bindings. Arrays cross the boundary as float32/float64 numpy copies;
// nothing here shares memory with torch tensors.

#include <cstring>

#include <nlohmann/json.hpp>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "exsr/checkpoint.hpp"
#include "exsr/config.hpp"
#include "exsr/errors.hpp"
#include "exsr/fusion.hpp"
#include "exsr/generator.hpp"
#include "exsr/metrics.hpp"
#include "exsr/resample.hpp"
#include "exsr/service.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

template <typename T>
using CArray = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
torch::Tensor to_tensor(const CArray<T>& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  constexpr auto dtype = std::is_same_v<T, double> ? torch::kFloat64 : torch::kFloat32;
  return torch::from_blob(const_cast<T*>(a.data()), shape, dtype).clone();
}

py::array to_numpy(const torch::Tensor& t) {
  auto c = t.detach().contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  if (c.scalar_type() == torch::kFloat64) {
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), c.data_ptr<double>(), c.numel() * sizeof(double));
    return out;
  }
  c = c.to(torch::kFloat32);
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<float>(), c.numel() * sizeof(float));
  return out;
}

exsr::ModelConfig config_from_string(const std::string& text) {
  exsr::ModelConfig cfg = json::parse(text).get<exsr::ModelConfig>();
  cfg.validate();
  return cfg;
}

/// Generator handle exposed as exsr.Model.
class Model {
 public:
  explicit Model(exsr::Generator gen) : gen_(std::move(gen)) { gen_->eval(); }

  static Model build(const std::string& config_json, uint64_t seed) {
    return Model(exsr::build_generator(config_from_string(config_json), seed));
  }

  static Model load(const std::filesystem::path& path, const std::optional<std::string>& config_json) {
    if (!config_json) return Model(exsr::load_generator(path));
    auto expected = config_from_string(*config_json);
    return Model(exsr::load_generator(path, &expected));
  }

  py::dict super_resolve(const CArray<float>& lr, const CArray<float>& exemplars) {
    auto lr_t = to_tensor(lr);
    auto ex_t = to_tensor(exemplars);
    exsr::SuperResolveOutput out;
    {
      py::gil_scoped_release release;
      torch::NoGradGuard no_grad;
      out = exsr::super_resolve(gen_, lr_t, ex_t);
    }
    py::dict d;
    d["sr"] = to_numpy(out.sr);
    d["lr_2x"] = to_numpy(out.lr_2x);
    d["weights_lr"] = out.weights_lr.defined() ? py::object(to_numpy(out.weights_lr.data)) : py::none();
    d["weights_2x"] = out.weights_2x.defined() ? py::object(to_numpy(out.weights_2x.data)) : py::none();
    return d;
  }

  void save(const std::filesystem::path& path) const { exsr::save_generator(path, gen_); }
  std::string config_json() const { return json(gen_->config()).dump(); }
  std::string digest() const { return exsr::parameter_digest(*gen_); }
  size_t parameter_count() const {
    size_t n = 0;
    for (const auto& p : gen_->parameters()) n += static_cast<size_t>(p.numel());
    return n;
  }

 private:
  exsr::Generator gen_;
};

}  // namespace

PYBIND11_MODULE(_exsr, m) {
  m.doc() = "Exemplar-guided face super-resolution core";

  auto base = py::register_exception<exsr::Error>(m, "Error");
  py::register_exception<exsr::ConfigError>(m, "ConfigError", base);
  py::register_exception<exsr::ShapeError>(m, "ShapeError", base);
  py::register_exception<exsr::IoError>(m, "IoError", base);
  py::register_exception<exsr::DataError>(m, "DataError", base);
  py::register_exception<exsr::ValidationError>(m, "ValidationError", base);
  py::register_exception<exsr::NotFoundError>(m, "NotFoundError", base);
  py::register_exception<exsr::DependencyError>(m, "DependencyError", base);

  m.def("version", &exsr::version_string);

  m.def(
      "preset_config",
      [](const std::string& dataset, int scale) {
        if (dataset == "celeba") return json(exsr::ModelConfig::celeba(scale)).dump();
        if (dataset == "webface") return json(exsr::ModelConfig::webface(scale)).dump();
        throw exsr::ConfigError("unknown preset '" + dataset + "'");
      },
      py::arg("dataset"), py::arg("scale"), "Preset model config as a JSON string.");

  m.def(
      "downsample", [](const CArray<float>& x, int factor) { return to_numpy(exsr::downsample(to_tensor(x), factor)); },
      py::arg("images"), py::arg("factor"));
  m.def(
      "upsample_bicubic",
      [](const CArray<float>& x, int factor) { return to_numpy(exsr::upsample_bicubic(to_tensor(x), factor)); },
      py::arg("images"), py::arg("factor"));
  m.def(
      "resize_bicubic",
      [](const CArray<double>& x, int64_t h, int64_t w) { return to_numpy(exsr::resize_bicubic(to_tensor(x), h, w)); },
      py::arg("images"), py::arg("height"), py::arg("width"));

  m.def(
      "psnr", [](const CArray<double>& a, const CArray<double>& b) { return exsr::psnr(to_tensor(a), to_tensor(b)); },
      py::arg("a"), py::arg("b"), "Per-image PSNR in dB of [0, 1] images.");
  m.def(
      "ssim", [](const CArray<double>& a, const CArray<double>& b) { return exsr::ssim(to_tensor(a), to_tensor(b)); },
      py::arg("a"), py::arg("b"), "Per-image SSIM of [0, 1] images.");

  m.def(
      "normalize_weights", [](const CArray<double>& s) { return to_numpy(exsr::normalize_weights(to_tensor(s))); },
      py::arg("scores"));
  m.def(
      "fuse",
      [](const CArray<double>& features, const CArray<double>& weights) {
        return to_numpy(exsr::fuse({to_tensor(features)}, {to_tensor(weights)}).data);
      },
      py::arg("features"), py::arg("weights"));

  py::class_<Model>(m, "Model")
      .def_static("build", &Model::build, py::arg("config_json"), py::arg("seed") = 0)
      .def_static("load", &Model::load, py::arg("path"), py::arg("config_json") = std::nullopt)
      .def("super_resolve", &Model::super_resolve, py::arg("lr"), py::arg("exemplars"))
      .def("save", &Model::save, py::arg("path"))
      .def_property_readonly("config_json", &Model::config_json)
      .def_property_readonly("digest", &Model::digest)
      .def_property_readonly("parameter_count", &Model::parameter_count);
}
