#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "specalign/cli/commands.hpp"
#include "specalign/core/errors.hpp"
#include "specalign/eval/alignment.hpp"
#include "specalign/losses/losses.hpp"
#include "specalign/model/model.hpp"
#include "specalign/queue/memory_queue.hpp"
#include "specalign/train/schedule.hpp"
#include "specalign/train/stage_config.hpp"

namespace py = pybind11;
using namespace specalign;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image to_image(const FloatArray& a) {
  if (a.ndim() != 3) throw ShapeError("image must be a (channels, height, width) array");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
  return {reinterpret_cast<const char*>(v.data()), v.size()};
}

std::vector<std::uint8_t> from_bytes(const py::bytes& b) {
  const std::string s = b;
  return {s.begin(), s.end()};
}

std::string preset_json(const std::string& name) {
  const VariantPreset p = variant_preset(name);
  nlohmann::json j;
  j["model"] = {{"embed_dim", p.model.embed_dim},
                {"depth", p.model.depth},
                {"num_heads", p.model.num_heads},
                {"patch_size", p.model.patch_size},
                {"image_size", p.model.image_size},
                {"adapter_bottleneck", p.model.adapter_bottleneck}};
  for (const StageConfig& s : p.stages) j["stages"][std::string(to_string(s.stage))] = to_json(s);
  return j.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the specalign package";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<RoutingError>(m, "RoutingError", base.ptr());
  py::register_exception<LookupError>(m, "LookupError", base.ptr());
  py::register_exception<DegenerateEmbeddingError>(m, "DegenerateEmbeddingError", base.ptr());
  py::register_exception<QueueEmptyError>(m, "QueueEmptyError", base.ptr());
  py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());

  m.def(
      "distill_loss",
      [](const Mat& z_ms, const Mat& z_teacher) {
        Mat g;
        const double loss = distill_loss(z_ms, z_teacher, &g);
        return py::make_tuple(loss, g);
      },
      py::arg("z_ms"), py::arg("z_teacher"), "Returns (loss, d loss / d z_ms).");

  m.def(
      "contrastive_loss",
      [](const Mat& z_rgb, const Mat& z_ms, double tau) {
        Mat gr;
        Mat gm;
        const double loss = contrastive_loss(z_rgb, z_ms, tau, &gr, &gm);
        return py::make_tuple(loss, gr, gm);
      },
      py::arg("z_rgb"), py::arg("z_ms"), py::arg("tau") = kDefaultTemperature,
      "Returns (loss, grad_rgb, grad_ms).");

  m.def(
      "patch_loss",
      [](const std::vector<Mat>& p_rgb, const std::vector<Mat>& p_ms, const std::vector<int>& indices) {
        std::vector<Mat> gr;
        std::vector<Mat> gm;
        const double loss = patch_loss_at(p_rgb, p_ms, indices, &gr, &gm);
        return py::make_tuple(loss, gr, gm);
      },
      py::arg("p_rgb"), py::arg("p_ms"), py::arg("indices"),
      "Patch cosine loss over the given token indices; returns (loss, grads_rgb, grads_ms).");

  py::class_<MemoryQueue>(m, "MemoryQueue")
      .def(py::init<std::size_t, std::size_t>(), py::arg("capacity"), py::arg("dim"))
      .def_property_readonly("capacity", &MemoryQueue::capacity)
      .def_property_readonly("dim", &MemoryQueue::dim)
      .def_property_readonly("fill", &MemoryQueue::fill)
      .def_property_readonly("cursor", &MemoryQueue::cursor)
      .def("push", &MemoryQueue::push_batch, py::arg("z"))
      .def("ordered", &MemoryQueue::ordered)
      .def(
          "top_k",
          [](const MemoryQueue& q, const Mat& z, int k) {
            const TopK t = q.top_k(z, k);
            py::array_t<std::size_t> idx({static_cast<py::ssize_t>(z.rows()), static_cast<py::ssize_t>(t.k_eff)});
            std::copy(t.indices.begin(), t.indices.end(), idx.mutable_data());
            return py::make_tuple(idx, t.sims);
          },
          py::arg("z"), py::arg("k"), "Returns (physical indices, similarities), each rows x min(k, fill).")
      .def("checkpoint", [](const MemoryQueue& q) { return to_bytes(q.checkpoint()); })
      .def_static(
          "restore", [](const py::bytes& b) { return MemoryQueue::restore(from_bytes(b)); }, py::arg("data"))
      .def("__eq__", &MemoryQueue::operator==);

  m.def(
      "neighborhood_kl",
      [](const Mat& z_teacher, const Mat& z_ms, const MemoryQueue& queue, int k, double tau) {
        Mat g;
        const double loss = neighborhood_kl(z_teacher, z_ms, queue, k, tau, &g);
        return py::make_tuple(loss, g);
      },
      py::arg("z_teacher"), py::arg("z_ms"), py::arg("queue"), py::arg("k") = kDefaultTopK,
      py::arg("tau") = kDefaultTemperature, "Returns (loss, d loss / d z_ms).");

  m.def(
      "retrieval",
      [](const Mat& queries, const Mat& gallery) {
        const RetrievalResult r = retrieval(queries, gallery);
        py::dict d;
        d["top1"] = r.top1;
        d["top5"] = r.top5;
        d["ranks"] = r.ranks;
        return d;
      },
      py::arg("queries"), py::arg("gallery"));

  m.def("lr_at", &lr_at, py::arg("step"), py::arg("total_steps"), py::arg("base_lr"), py::arg("warmup_fraction"));
  m.def("_preset_json", &preset_json, py::arg("name"));
  m.def("adapter_weight_count", &adapter_weight_count, py::arg("embed_dim"));

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& variant, std::uint64_t seed) {
             return build_model(model_preset(variant), seed);
           }),
           py::arg("variant") = "toy", py::arg("seed") = 0)
      .def_property_readonly("embed_dim", [](const Model& md) { return md.config().embed_dim; })
      .def_property_readonly("adapter_count", &Model::adapter_count)
      .def("parameter_count", &Model::parameter_count)
      .def("checksum", &Model::checksum)
      .def("group_checksums", &Model::group_checksums)
      .def(
          "embed",
          [](const Model& md, const FloatArray& image, const std::string& modality) {
            const EmbeddingBundle b = student_forward(md, to_image(image), parse_modality(modality));
            return py::make_tuple(Mat(b.cls), b.patches);
          },
          py::arg("image"), py::arg("modality"), "Returns (1 x D CLS embedding, N x D patch tokens).");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out;
        std::ostringstream err;
        int status = 0;
        {
          py::gil_scoped_release release;
          status = run_cli(args, out, err);
        }
        return py::make_tuple(status, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit status, stdout, stderr).");
}
