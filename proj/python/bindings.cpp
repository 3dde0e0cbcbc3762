#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "djscc/channel.hpp"
#include "djscc/error.hpp"
#include "djscc/experiment.hpp"
#include "djscc/metrics.hpp"

namespace py = pybind11;
using namespace djscc;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict record_dict(const EvalRecord& r) {
  py::dict d;
  d["schedule"] = r.schedule;
  d["decoder"] = r.decoder;
  d["channel"] = r.channel;
  d["snr_db"] = r.snr_db;
  d["psnr_db"] = r.psnr_db;
  d["ms_ssim"] = r.ms_ssim;
  d["seed"] = r.seed;
  d["snapshot"] = r.snapshot;
  return d;
}

ExperimentConfig make_config(const std::string& text, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = text.empty() ? ExperimentConfig{} : parse_config(text, "<python>");
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_djscc, m) {
  m.doc() = "Multi-user D-JSCC simulator core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("synth_dataset", [](std::size_t n, std::size_t size, std::uint64_t seed) {
    return to_array(synth_dataset(n, size, seed).images);
  }, py::arg("n"), py::arg("size"), py::arg("seed"));
  m.def("psnr", [](const Array& a, const Array& b, double max_val) { return psnr(to_tensor(a), to_tensor(b), max_val); },
        py::arg("reference"), py::arg("reconstruction"), py::arg("max_val") = 1.0);
  m.def("ms_ssim", [](const Array& a, const Array& b) { return ms_ssim(to_tensor(a), to_tensor(b)); },
        py::arg("reference"), py::arg("reconstruction"));
  m.def("snr_to_sigma", &snr_to_sigma, py::arg("snr_db"));
  m.def("power_normalize", [](const Array& x) { return to_array(power_normalize(to_tensor(x))); }, py::arg("x"));
  m.def("awgn", [](const Array& x, double snr_db, std::uint64_t seed) {
    Rng rng(seed);
    ChannelConfig cfg;
    cfg.snr_db = snr_db;
    return to_array(awgn_transmit(to_tensor(x), cfg, rng));
  }, py::arg("x"), py::arg("snr_db"), py::arg("seed"));

  py::class_<Model>(m, "Model")
      .def_property_readonly("label", &Model::label)
      .def_property_readonly("checksum", &Model::checksum)
      .def_property_readonly("frozen", &Model::frozen)
      .def_property_readonly("latent_size", &Model::latent_size)
      .def_property_readonly("param_count", [](const Model& mdl) { return mdl.params.param_count(); })
      .def("encode", [](const Model& mdl, const Array& x, double snr) { return to_array(encode(mdl, to_tensor(x), snr)); })
      .def("decode", [](const Model& mdl, const Array& z, double snr) { return to_array(decode(mdl, to_tensor(z), snr)); });
  m.def("load_checkpoint", [](const fs::path& p) { return load_checkpoint(p); }, py::arg("path"));
  m.def("build_encoder", [](std::size_t size, std::size_t h1, std::size_t h2, std::uint64_t seed, const std::string& rate) {
    return build_encoder({3, size, size}, parse_rate(rate), {h1, h2}, seed);
  }, py::arg("size") = 32, py::arg("hidden1") = 64, py::arg("hidden2") = 128, py::arg("seed") = 0,
     py::arg("rate") = "1/16");
  m.def("build_user_decoder", [](const Model& enc, const std::string& variant, std::uint64_t seed, std::size_t depth) {
    return build_user_decoder(parse_decoder_variant(variant), depth, enc.arch.latent, enc.arch.image, enc.arch.widths,
                              seed);
  }, py::arg("encoder"), py::arg("variant"), py::arg("seed") = 0, py::arg("depth_scale") = 1);

  m.def("default_config", [] { return format_config(ExperimentConfig{}); });
  m.def("normalize_config", [](const std::string& text, const std::vector<std::string>& overrides) {
    return format_config(make_config(text, overrides));
  }, py::arg("text") = "", py::arg("overrides") = std::vector<std::string>{});
  m.def("train", [](const std::string& text, const std::vector<std::string>& overrides) {
    const ExperimentConfig cfg = make_config(text, overrides);
    py::gil_scoped_release release;
    return cmd_train(cfg);
  }, py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{});
  m.def("evaluate", [](const fs::path& run, const std::vector<std::string>& overrides) {
    std::vector<EvalRecord> rows;
    {
      py::gil_scoped_release release;
      rows = cmd_eval(run, overrides);
    }
    py::list out;
    for (const auto& r : rows) out.append(record_dict(r));
    return out;
  }, py::arg("run"), py::arg("overrides") = std::vector<std::string>{});
  m.def("forgetting", [](const fs::path& run) {
    const ForgettingReport rep = cmd_forgetting(run);
    py::dict out;
    for (const auto& e : rep.entries) out[py::make_tuple(e.decoder, e.label)] = e.mean_psnr();
    return out;
  }, py::arg("run"));
  m.def("compare", [](const std::vector<fs::path>& runs, const fs::path& out) {
    return cmd_compare(runs, out).schedules;
  }, py::arg("runs"), py::arg("out"));
}
