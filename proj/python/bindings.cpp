#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "medvt/attention.hpp"
#include "medvt/config.hpp"
#include "medvt/io.hpp"
#include "medvt/metrics.hpp"
#include "medvt/pipeline.hpp"
#include "medvt/synthclip.hpp"
#include "medvt/threads.hpp"

namespace py = pybind11;
using namespace medvt;

namespace {

Tensor from_array(const py::array& arr) {
  py::array_t<double, py::array::c_style | py::array::forcecast> a(arr);
  Shape shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int64_t>(a.shape(i)));
  Tensor t(shape, Dtype::f64);
  const double* src = a.data();
  std::copy(src, src + t.numel(), t.data<double>());
  return t;
}

py::array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  double* dst = a.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) dst[i] = t.get(i);
  return a;
}

model::ModelConfig config_from_dict(const py::dict& d) {
  std::map<std::string, std::string> kv;
  for (const auto& item : d) kv[py::str(item.first)] = py::str(item.second);
  return cfg::from_kv(kv);
}

}  // namespace

PYBIND11_MODULE(_medvt, m) {
  m.doc() = "multiscale encoder-decoder video transformer core";

  m.def("set_threads", &set_threads, py::arg("n"));

  // Tensor file IO.
  m.def(
      "read_mvt1", [](const std::string& path) { return to_array(io::read_mvt1(path)); }, py::arg("path"));
  m.def(
      "write_mvt1",
      [](const std::string& path, const py::array& a, const std::string& dtype) {
        Tensor t = from_array(a);
        io::write_mvt1(path, dtype == "f32" ? t.astype(Dtype::f32) : t);
      },
      py::arg("path"), py::arg("array"), py::arg("dtype") = "f64");

  // Core numerical ops.
  m.def("matmul", [](const py::array& a, const py::array& b) { return to_array(ops::matmul(from_array(a), from_array(b))); });
  m.def(
      "softmax", [](const py::array& x, int axis) { return to_array(ops::softmax(from_array(x), axis)); },
      py::arg("x"), py::arg("axis") = -1);
  m.def(
      "conv2d",
      [](const py::array& x, const py::array& k, int stride, const std::string& pad) {
        return to_array(ops::conv2d(from_array(x), from_array(k), stride,
                                    pad == "valid" ? ops::Pad::valid : ops::Pad::same));
      },
      py::arg("x"), py::arg("k"), py::arg("stride") = 1, py::arg("pad") = "same");
  m.def("bilinear_resize", [](const py::array& x, int64_t h, int64_t w) {
    return to_array(ops::bilinear_resize(from_array(x), h, w));
  });
  m.def("sinusoidal_pe", [](int64_t t, int64_t h, int64_t w, int64_t d) {
    return to_array(attn::sinusoidal_pe(t, h, w, d));
  });

  // Synthetic clips.
  py::class_<synth::SceneSpec>(m, "SceneSpec")
      .def(py::init<>())
      .def_readwrite("seed", &synth::SceneSpec::seed)
      .def_readwrite("t", &synth::SceneSpec::t)
      .def_readwrite("h", &synth::SceneSpec::h)
      .def_readwrite("w", &synth::SceneSpec::w)
      .def_readwrite("velocity", &synth::SceneSpec::velocity)
      .def_readwrite("distractors", &synth::SceneSpec::distractors)
      .def("__repr__", [](const synth::SceneSpec& s) {
        return "SceneSpec(seed=" + std::to_string(s.seed) + ", t=" + std::to_string(s.t) + ")";
      });
  m.def(
      "generate_clip",
      [](const synth::SceneSpec& spec, const std::string& shape, const std::string& texture,
         const std::string& trajectory) {
        synth::SceneSpec s = spec;
        if (shape == "disk") s.shape = synth::ShapeKind::disk;
        else if (shape == "rectangle") s.shape = synth::ShapeKind::rectangle;
        else if (shape == "blob") s.shape = synth::ShapeKind::blob;
        else throw std::invalid_argument("shape must be disk|rectangle|blob");
        s.texture = texture == "contrast" ? synth::TextureMode::contrast : synth::TextureMode::camouflage;
        s.trajectory = trajectory == "sinusoidal" ? synth::Trajectory::sinusoidal : synth::Trajectory::linear;
        synth::GeneratedClip gc = synth::generate(s);
        std::vector<std::array<int64_t, 4>> boxes;
        for (const auto& b : gc.boxes) boxes.push_back({b.y0, b.x0, b.y1, b.x1});
        return py::make_tuple(to_array(gc.clip), to_array(gc.masks), boxes);
      },
      py::arg("spec"), py::arg("shape") = "disk", py::arg("texture") = "camouflage",
      py::arg("trajectory") = "linear");
  m.def(
      "make_dataset",
      [](const std::string& dir, int n_train, int n_val, uint64_t seed, const std::string& texture, int64_t t,
         int64_t size) {
        synth::make_dataset(dir, n_train, n_val, seed,
                            texture == "contrast" ? synth::TextureMode::contrast : synth::TextureMode::camouflage, t,
                            size, size);
      },
      py::arg("dir"), py::arg("n_train"), py::arg("n_val"), py::arg("seed") = 7, py::arg("texture") = "camouflage",
      py::arg("t") = 6, py::arg("size") = 64);

  // Metrics.
  m.def("iou", [](const py::array& p, const py::array& g) { return metrics::iou(from_array(p), from_array(g)); });
  m.def(
      "j_statistics",
      [](const std::vector<double>& ious) {
        const metrics::JStats s = metrics::j_statistics(ious);
        return py::make_tuple(s.mean, s.recall, s.decay);
      },
      py::arg("per_frame_ious"));
  m.def(
      "boundary_f",
      [](const py::array& p, const py::array& g, double tol) { return metrics::boundary_f(from_array(p), from_array(g), tol); },
      py::arg("pred"), py::arg("gt"), py::arg("tolerance_px") = 1.0);

  // The model: construct fresh or from a checkpoint, run forward/inference.
  struct PyModel {
    model::ModelConfig cfg;
    ad::ParamStore params;
  };
  py::class_<PyModel>(m, "Model")
      .def(py::init([](const py::dict& config) {
             PyModel mm;
             mm.cfg = config_from_dict(config);
             mm.params = model::init_params(mm.cfg, mm.cfg.seed);
             return mm;
           }),
           py::arg("config") = py::dict())
      .def_static("load",
                  [](const std::string& ckpt_dir, const std::string& config_path) {
                    PyModel mm;
                    mm.cfg = cfg::load_file(config_path);
                    mm.params = ad::ParamStore::load(ckpt_dir);
                    return mm;
                  })
      .def("num_params",
           [](const PyModel& mm) { return mm.params.total_elements(); })
      .def(
          "forward",
          [](const PyModel& mm, const py::array& clip, bool labelprop) {
            ad::Graph g;
            model::Forward f = model::forward(g, mm.params, mm.cfg, from_array(clip).astype(mm.cfg.dtype),
                                              labelprop && mm.cfg.labelprop);
            return py::make_tuple(to_array(f.y_prime.val()), to_array(f.final_logits().val()),
                                  to_array(f.attention_map.val()));
          },
          py::arg("clip"), py::arg("labelprop") = true)
      .def(
          "infer_video",
          [](const PyModel& mm, const py::array& frames, const std::vector<double>& scales) {
            const Tensor fr = from_array(frames);
            if (scales.size() == 1 && scales[0] == 1.0) return to_array(pipe::infer_video(mm.params, mm.cfg, fr));
            return to_array(pipe::multiscale_infer(mm.params, mm.cfg, fr, scales));
          },
          py::arg("frames"), py::arg("scales") = std::vector<double>{1.0})
      .def(
          "train",
          [](PyModel& mm, const std::vector<std::pair<py::array, py::array>>& data, int64_t stage1, int64_t stage2) {
            std::vector<model::ClipSample> samples;
            for (const auto& [c, msk] : data)
              samples.push_back({from_array(c).astype(mm.cfg.dtype), from_array(msk)});
            model::ModelConfig run = mm.cfg;
            if (stage1 >= 0) run.stage1_iters = stage1;
            if (stage2 >= 0) run.stage2_iters = stage2;
            model::TrainResult r = model::train(mm.params, run, samples);
            std::vector<std::tuple<int64_t, int, double>> curve;
            for (const auto& p : r.curve) curve.emplace_back(p.iter, p.stage, p.loss);
            return curve;
          },
          py::arg("data"), py::arg("stage1_iters") = -1, py::arg("stage2_iters") = -1)
      .def("save", [](const PyModel& mm, const std::string& dir) { mm.params.save(dir); });
}
