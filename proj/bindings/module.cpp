#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "nawr/corpus.hpp"
#include "nawr/train.hpp"

namespace py = pybind11;

namespace {

py::array_t<double> to_array(const std::vector<double>& samples) {
  py::array_t<double> out(static_cast<py::ssize_t>(samples.size()));
  std::copy(samples.begin(), samples.end(), out.mutable_data());
  return out;
}

std::vector<double> from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw nawr::Error("expected a 1-d waveform array");
  return {a.data(), a.data() + a.size()};
}

nawr::Tensor table_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw nawr::Error("expected a 2-d [frames, vocab] array");
  std::vector<double> data(a.data(), a.data() + a.size());
  return nawr::Tensor({a.shape(0), a.shape(1)}, std::move(data));
}

py::dict report_to_dict(const nawr::MetricsReport& r) {
  py::dict d;
  d["config"] = r.config;
  d["noise_accuracy"] = r.noise_accuracy;
  d["noise_accuracy_transcript"] = r.noise_accuracy_transcript;
  d["wer"] = r.wer;
  d["cer"] = r.cer;
  d["n_speech_eval"] = r.n_speech_eval;
  d["n_noise_eval"] = r.n_noise_eval;
  if (r.alpha_final) d["alpha_final"] = *r.alpha_final;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "noise-aware CTC speech recognition testbed";

  py::register_exception<nawr::Error>(m, "NawrError");

  m.def("normalize_transcript", &nawr::normalize_transcript, py::arg("raw"),
        py::arg("strict") = true, py::arg("alphabet") = std::string(nawr::kFullAlphabet));

  py::class_<nawr::Vocab>(m, "Vocab")
      .def_static("for_alphabet", &nawr::Vocab::for_alphabet)
      .def_static("load", &nawr::Vocab::load)
      .def("save", &nawr::Vocab::save)
      .def("__len__", &nawr::Vocab::size)
      .def("encode", &nawr::Vocab::encode)
      .def("decode", &nawr::Vocab::decode)
      .def("letters", &nawr::Vocab::letters);

  m.def(
      "synth_utterance",
      [](const std::string& text, uint64_t seed, const std::string& alphabet) {
        nawr::SynthSpec spec;
        if (!alphabet.empty()) spec.alphabet = alphabet;
        return to_array(nawr::synth_utterance(text, spec, seed).samples);
      },
      py::arg("text"), py::arg("seed") = 0, py::arg("alphabet") = "");

  m.def(
      "synth_noise",
      [](const std::string& kind, double duration_s, uint64_t seed) {
        return to_array(
            nawr::synth_noise(nawr::noise_kind_from_string(kind), duration_s, seed).samples);
      },
      py::arg("kind"), py::arg("duration_s"), py::arg("seed") = 0);

  m.def(
      "mix_at_snr",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& speech,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& noise,
         double snr_db) {
        nawr::AudioClip s{from_array(speech), 16000};
        nawr::AudioClip n{from_array(noise), 16000};
        return to_array(nawr::mix_at_snr(s, n, snr_db).samples);
      },
      py::arg("speech"), py::arg("noise"), py::arg("snr_db"));

  m.def(
      "write_wav",
      [](const std::filesystem::path& path,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& samples,
         int sample_rate) {
        nawr::write_wav(path, nawr::AudioClip{from_array(samples), sample_rate});
      },
      py::arg("path"), py::arg("samples"), py::arg("sample_rate") = 16000);

  m.def("read_wav", [](const std::filesystem::path& path) {
    const nawr::AudioClip clip = nawr::read_wav(path);
    return py::make_tuple(to_array(clip.samples), clip.sample_rate);
  });

  m.def(
      "ctc_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& log_probs,
         const std::vector<int>& target) {
        nawr::Tape tape(false);
        return nawr::ctc_loss(tape, table_from_array(log_probs), target).item();
      },
      py::arg("log_probs"), py::arg("target"),
      "negative log probability of the target under the CTC alignment model");

  m.def(
      "ctc_loss_grad",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& log_probs,
         const std::vector<int>& target) {
        nawr::Parameter table;
        table.name = "log_probs";
        table.value = table_from_array(log_probs);
        nawr::Tape tape(true);
        nawr::Tensor leaf = tape.leaf(table);
        nawr::Tensor loss = nawr::ctc_loss(tape, leaf, target);
        tape.backward(loss);
        const nawr::Tensor grad = tape.grad_or_zero(leaf);
        py::array_t<double> g({log_probs.shape(0), log_probs.shape(1)});
        std::copy(grad.data.begin(), grad.data.end(), g.mutable_data());
        return py::make_tuple(loss.item(), g);
      },
      py::arg("log_probs"), py::arg("target"));

  m.def(
      "greedy_decode",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& log_probs,
         const nawr::Vocab& vocab) {
        return nawr::greedy_decode(table_from_array(log_probs), vocab);
      },
      py::arg("log_probs"), py::arg("vocab"));

  m.def("edit_distance", &nawr::edit_distance, py::arg("ref"), py::arg("hyp"));
  m.def("edit_distance_chars", &nawr::edit_distance_chars, py::arg("ref"), py::arg("hyp"));
  m.def("wer", &nawr::wer, py::arg("ref"), py::arg("hyp"));
  m.def("cer", &nawr::cer, py::arg("ref"), py::arg("hyp"));
  m.def("infer_noise_from_transcript", [](const std::string& decoded) {
    return nawr::to_string(nawr::infer_noise_from_transcript(decoded));
  });

  m.def("model_gradcheck", &nawr::run_model_gradcheck, py::arg("seed") = 0,
        py::arg("corrupt") = false);

  m.def(
      "synth_corpus",
      [](const std::filesystem::path& out_dir, int64_t train_utts, int64_t eval_utts,
         int64_t val_utts, double noise_fraction, uint64_t seed) {
        nawr::CorpusOptions opts;
        opts.train_utts = train_utts;
        opts.eval_utts = eval_utts;
        opts.val_utts = val_utts;
        opts.noise_fraction = noise_fraction;
        opts.seed = seed;
        const nawr::CorpusCounts c = nawr::synth_corpus(out_dir, opts);
        py::dict d;
        d["train_speech"] = c.train_speech;
        d["train_noise"] = c.train_noise;
        d["val_speech"] = c.val_speech;
        d["val_noise"] = c.val_noise;
        d["test_speech"] = c.test_speech;
        d["test_noise"] = c.test_noise;
        return d;
      },
      py::arg("out_dir"), py::arg("train_utts") = 200, py::arg("eval_utts") = 40,
      py::arg("val_utts") = -1, py::arg("noise_fraction") = 0.05, py::arg("seed") = 0);

  m.def("presets", [] { return nawr::ExperimentConfig::preset_names(); });

  m.def(
      "run_experiment",
      [](const std::string& preset, const std::filesystem::path& data_dir,
         const std::filesystem::path& out_dir, uint64_t seed, std::optional<int64_t> epochs,
         std::optional<double> lr) {
        nawr::ExperimentConfig cfg = nawr::ExperimentConfig::preset(preset);
        cfg.hyper.seed = seed;
        if (epochs) cfg.hyper.epochs = *epochs;
        if (lr) cfg.hyper.learning_rate = *lr;
        return report_to_dict(nawr::run_experiment(cfg, data_dir, out_dir).report);
      },
      py::arg("preset"), py::arg("data_dir"), py::arg("out_dir"), py::arg("seed") = 0,
      py::arg("epochs") = std::nullopt, py::arg("lr") = std::nullopt);

  m.def(
      "compare",
      [](const std::filesystem::path& data_dir, const std::vector<std::string>& presets,
         const std::filesystem::path& out_dir, uint64_t seed, std::optional<int64_t> epochs,
         std::optional<double> lr) {
        const auto rows = nawr::run_compare(data_dir, presets, out_dir, seed, epochs, lr);
        py::list out;
        for (const auto& r : rows) out.append(report_to_dict(r));
        return out;
      },
      py::arg("data_dir"), py::arg("presets"), py::arg("out_dir"), py::arg("seed") = 0,
      py::arg("epochs") = std::nullopt, py::arg("lr") = std::nullopt);
}
