#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "demux/assignment.hpp"
#include "demux/checkpoint.hpp"
#include "demux/gradcheck_suite.hpp"
#include "demux/metrics.hpp"
#include "demux/rttm.hpp"
#include "demux/training.hpp"

namespace py = pybind11;
using namespace demux;

namespace {

using Array = py::array_t<Real, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  ad::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<Real>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(t.shape());
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

ActivityMatrix to_activity(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("activity must be a frames x speakers array");
  ActivityMatrix m(a.shape(0), a.shape(1));
  for (py::ssize_t i = 0; i < a.size(); ++i) m.active[i] = a.data()[i] > 0.5;
  return m;
}

Array activity_array(const ActivityMatrix& m) {
  Array out({m.frames, m.speakers});
  std::copy(m.active.begin(), m.active.end(), out.mutable_data());
  return out;
}

py::dict der_dict(const DerReport& r) {
  py::dict d;
  d["der"] = r.der;
  d["false_alarm"] = r.fa;
  d["missed"] = r.mi;
  d["confusion"] = r.cf;
  d["reference_speech_frames"] = r.reference_speech;
  d["mapping"] = r.mapping;
  return d;
}

template <typename T>
T from_json_string(const std::string& s) {
  return nlohmann::json::parse(s).get<T>();
}

template <typename T>
std::string to_json_string(const T& v) {
  return nlohmann::json(v).dump(2);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "End-to-end neural diarization with embedding demultiplexing";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DerError>(m, "DerError", PyExc_ValueError);
  py::register_exception<AssignmentError>(m, "AssignmentError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<RttmError>(m, "RttmError", PyExc_RuntimeError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("from_json", &from_json_string<ModelConfig>)
      .def("to_json", &to_json_string<ModelConfig>)
      .def_readwrite("feature_dim", &ModelConfig::feature_dim)
      .def_readwrite("embed_dim", &ModelConfig::embed_dim)
      .def_readwrite("max_speakers", &ModelConfig::max_speakers)
      .def_readwrite("encoder_blocks", &ModelConfig::encoder_blocks)
      .def_readwrite("decoder_blocks", &ModelConfig::decoder_blocks)
      .def_readwrite("attention_heads", &ModelConfig::attention_heads)
      .def_readwrite("ffn_dim", &ModelConfig::ffn_dim)
      .def_readwrite("demux_cnn_stacks", &ModelConfig::demux_cnn_stacks)
      .def_readwrite("demux_kernel_size", &ModelConfig::demux_kernel_size);
  m.def("model_preset", &model_preset, py::arg("name"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_static("from_json", &from_json_string<TrainConfig>)
      .def("to_json", &to_json_string<TrainConfig>);
  m.def("train_preset", &train_preset, py::arg("name"));

  py::class_<MixtureSample>(m, "MixtureSample")
      .def_readonly("id", &MixtureSample::id)
      .def_property_readonly("features", [](const MixtureSample& s) { return to_array(s.features); })
      .def_property_readonly("labels", [](const MixtureSample& s) { return to_array(s.labels); })
      .def_readonly("speaker_ids", &MixtureSample::speaker_ids)
      .def_property_readonly("num_speakers", &MixtureSample::num_speakers);

  py::class_<Corpus>(m, "Corpus")
      .def_readonly("feature_dim", &Corpus::feature_dim)
      .def_readonly("max_speakers", &Corpus::max_speakers)
      .def_readonly("frame_duration", &Corpus::frame_duration)
      .def_readonly("samples", &Corpus::samples)
      .def("overlap_ratio", &Corpus::overlap_ratio)
      .def("__len__", [](const Corpus& c) { return c.samples.size(); });

  m.def(
      "generate_corpus",
      [](std::size_t num_sequences, std::size_t frames, std::size_t feature_dim, std::size_t max_speakers,
         std::vector<std::size_t> speakers_per_mix, std::size_t pool_size, std::uint64_t seed) {
        SynthConfig c;
        c.num_sequences = num_sequences;
        c.frames = frames;
        c.feature_dim = feature_dim;
        c.max_speakers = max_speakers;
        c.speakers_per_mix = std::move(speakers_per_mix);
        c.pool.num_speakers = pool_size;
        c.seed = seed;
        return generate_corpus(c);
      },
      py::arg("num_sequences") = 64, py::arg("frames") = 200, py::arg("feature_dim") = 16,
      py::arg("max_speakers") = 2, py::arg("speakers_per_mix") = std::vector<std::size_t>{2},
      py::arg("pool_size") = 20, py::arg("seed") = 1);

  py::class_<EendDemux>(m, "Model")
      .def(py::init<const ModelConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 1)
      .def_static("load", [](const std::filesystem::path& p) { return model_from_checkpoint(load_checkpoint(p)); })
      .def("save", [](const EendDemux& model, const std::filesystem::path& p) { save_checkpoint(make_checkpoint(model), p); })
      .def_property_readonly("config", &EendDemux::config)
      .def(
          "forward",
          [](const EendDemux& model, const Array& features) {
            const ForwardResult r = model.forward(to_tensor(features));
            py::dict d;
            d["posteriors"] = to_array(r.output.posteriors);
            d["existence"] = to_array(r.output.existence);
            d["valid_set"] = r.output.valid_set;
            d["attractors"] = to_array(r.embeddings.attractors);
            return d;
          },
          py::arg("features"))
      .def(
          "diarize",
          [](const EendDemux& model, const Array& features, Real frame_duration, const std::string& recording,
             Real threshold, std::size_t median_window) {
            const InferResult r = infer(model, to_tensor(features), frame_duration, recording, threshold, median_window);
            std::ostringstream os;
            rttm_format(os, {r.segments});
            return py::make_tuple(activity_array(r.activity), os.str());
          },
          py::arg("features"), py::arg("frame_duration") = 0.01, py::arg("recording") = "rec",
          py::arg("threshold") = 0.5, py::arg("median_window") = 1)
      .def(
          "evaluate",
          [](const EendDemux& model, const Corpus& corpus) { return der_dict(evaluate(model, corpus)); },
          py::arg("corpus"));

  m.def(
      "train",
      [](const TrainConfig& config, const Corpus& train_corpus, const Corpus* dev_corpus) {
        py::gil_scoped_release release;
        return train(config, {.train = &train_corpus, .dev = dev_corpus}).best;
      },
      py::arg("config"), py::arg("train_corpus"), py::arg("dev_corpus") = nullptr,
      "Trains without a speaker encoder, so the distillation term is zero. Returns the best model.");

  m.def(
      "der",
      [](const Array& reference, const Array& hypothesis) {
        return der_dict(der(to_activity(reference), to_activity(hypothesis)));
      },
      py::arg("reference"), py::arg("hypothesis"));

  m.def(
      "assign",
      [](const Array& cost) {
        if (cost.ndim() != 2 || cost.shape(0) != cost.shape(1)) throw std::invalid_argument("cost must be square");
        const auto a = assign_min(CostMatrix(cost.shape(0), std::vector<Real>(cost.data(), cost.data() + cost.size())));
        return py::make_tuple(a.permutation, a.total);
      },
      py::arg("cost"));

  m.def("gradcheck_components", &gradcheck_components);
  m.def(
      "gradcheck",
      [](const std::string& component, std::uint64_t seed) {
        std::vector<py::tuple> out;
        for (const auto& c : run_gradcheck(component, seed))
          out.push_back(py::make_tuple(c.name, c.report.passed, c.report.max_rel_error));
        return out;
      },
      py::arg("component") = "all", py::arg("seed") = 1);
}
