// Python bindings for the main operations: synthetic data, tokenization,
// token-decoder training, emotion decoding, agents and the streaming runtime.

#include <pybind11/complex.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ithroat/agents.hpp"
#include "ithroat/bench.hpp"
#include "ithroat/emotion.hpp"
#include "ithroat/runtime.hpp"
#include "ithroat/sigcore.hpp"
#include "ithroat/synthdata.hpp"
#include "ithroat/tinynet.hpp"
#include "ithroat/tokendec.hpp"

namespace py = pybind11;
using namespace ithroat;

namespace {

sigcore::ChannelId channel_from_name(const std::string& name) {
    if (name == "speech") return sigcore::ChannelId::speech;
    if (name == "pulse") return sigcore::ChannelId::pulse;
    fail(Errc::invalid_argument, "unknown channel '" + name + "'");
}

synthdata::Script script_from_list(const py::list& items) {
    synthdata::Script script;
    for (const auto& item : items) {
        auto t = item.cast<py::tuple>();
        const auto kind = t[0].cast<std::string>();
        if (kind == "word") {
            script.push_back(synthdata::SayWord{t[1].cast<int>()});
        } else if (kind == "pause") {
            script.push_back(synthdata::Pause{t[1].cast<double>()});
        } else if (kind == "nod") {
            script.push_back(synthdata::NodPair{});
        } else if (kind == "emotion") {
            script.push_back(
                synthdata::SetEmotion{sigcore::emotion_from_name(t[1].cast<std::string>())});
        } else {
            fail(Errc::invalid_argument, "unknown script item '" + kind + "'");
        }
    }
    return script;
}

tinynet::TrainConfig train_config_from_dict(const py::dict& d) {
    tinynet::TrainConfig cfg;
    if (d.contains("lr")) cfg.lr = d["lr"].cast<double>();
    if (d.contains("batch_size")) cfg.batch_size = d["batch_size"].cast<std::size_t>();
    if (d.contains("epochs")) cfg.epochs = d["epochs"].cast<std::size_t>();
    if (d.contains("seed")) cfg.seed = d["seed"].cast<std::uint64_t>();
    if (d.contains("temperature") || d.contains("alpha")) {
        tinynet::DistillParams dp;
        if (d.contains("temperature")) dp.temperature = d["temperature"].cast<double>();
        if (d.contains("alpha")) dp.alpha = d["alpha"].cast<double>();
        cfg.distill = dp;
    }
    return cfg;
}

py::list events_to_list(const std::vector<runtime::TranscriptEvent>& events) {
    py::list out;
    for (const auto& e : events) {
        py::dict d;
        d["kind"] = runtime::event_kind_name(e.kind);
        d["payload"] = e.payload;
        d["stream_time_s"] = e.stream_time_s;
        d["wall_latency_s"] = e.wall_latency_s;
        out.append(d);
    }
    return out;
}

std::vector<sigcore::PulseWindow> windows_from_list(const py::list& items) {
    std::vector<sigcore::PulseWindow> windows;
    for (const auto& item : items) {
        auto t = item.cast<py::tuple>();
        sigcore::PulseWindow w;
        w.values = t[0].cast<std::vector<double>>();
        if (t.size() > 1 && !t[1].is_none())
            w.emotion_label = sigcore::emotion_from_name(t[1].cast<std::string>());
        windows.push_back(std::move(w));
    }
    return windows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Silent-speech decoding engine: tokenization, training, emotion "
              "decoding, agents and the streaming runtime.";

    py::register_exception<Error>(m, "Error");

    m.attr("TOKEN_SECONDS") = sigcore::kTokenSeconds;
    m.def("token_len_samples", &sigcore::token_len_samples, py::arg("sample_rate_hz"));

    // --- signals -------------------------------------------------------------
    py::class_<sigcore::SignalStream>(m, "SignalStream")
        .def_readonly("sample_rate_hz", &sigcore::SignalStream::sample_rate_hz)
        .def_property_readonly("duration_s", &sigcore::SignalStream::duration_s)
        .def("channel",
             [](const sigcore::SignalStream& s, const std::string& name) {
                 return s.channel(channel_from_name(name));
             })
        .def_property_readonly("annotations", [](const sigcore::SignalStream& s) {
            py::list out;
            for (const auto& a : s.annotations) {
                py::dict d;
                d["start_s"] = a.start_s;
                d["end_s"] = a.end_s;
                switch (a.kind) {
                    case sigcore::IntervalAnnotation::Kind::word:
                        d["kind"] = "word";
                        d["word_id"] = a.word_id;
                        break;
                    case sigcore::IntervalAnnotation::Kind::nod:
                        d["kind"] = "nod";
                        break;
                    case sigcore::IntervalAnnotation::Kind::emotion:
                        d["kind"] = "emotion";
                        d["emotion"] = sigcore::emotion_name(a.emotion);
                        break;
                }
                out.append(d);
            }
            return out;
        });
    m.def("read_stream", &sigcore::read_stream, py::arg("path"));
    m.def("write_stream", &sigcore::write_stream, py::arg("path"), py::arg("stream"));
    m.def(
        "tokenize_labels",
        [](const sigcore::SignalStream& stream) {
            auto tokens = sigcore::tokenize(stream, sigcore::ChannelId::speech);
            return sigcore::label_tokens(tokens, stream.annotations, stream.sample_rate_hz);
        },
        py::arg("stream"), "Tokenize the speech channel and label from the annotations.");
    m.def("decimate", &sigcore::decimate, py::arg("values"), py::arg("factor"));

    // --- synthetic data -------------------------------------------------------
    py::class_<synthdata::Vocabulary>(m, "Vocabulary")
        .def_property_readonly("size", &synthdata::Vocabulary::size)
        .def("text", [](const synthdata::Vocabulary& v, int id) { return v.word(id).text; })
        .def("nominal_duration_s",
             [](const synthdata::Vocabulary& v, int id) { return v.word(id).nominal_duration_s; });
    m.def("make_vocab", &synthdata::make_vocab, py::arg("seed"), py::arg("v"));
    m.def("write_vocab", &synthdata::write_vocab, py::arg("path"), py::arg("vocab"));
    m.def("read_vocab", &synthdata::read_vocab, py::arg("path"));

    py::class_<synthdata::SpeakerProfile>(m, "SpeakerProfile")
        .def_readwrite("amplitude_scale", &synthdata::SpeakerProfile::amplitude_scale)
        .def_readwrite("jitter_scale", &synthdata::SpeakerProfile::jitter_scale)
        .def_readwrite("tremor_amp", &synthdata::SpeakerProfile::tremor_amp);
    m.def("healthy_profile", &synthdata::healthy_profile, py::arg("seed"));
    m.def("patient_profile", &synthdata::patient_profile, py::arg("seed"));

    m.def(
        "synth_session",
        [](const py::list& script, const synthdata::Vocabulary& vocab,
           const synthdata::SpeakerProfile& profile, std::uint32_t sample_rate_hz,
           py::object snr_db, double kappa, bool pulse_channel, std::uint64_t seed) {
            synthdata::SessionConfig cfg;
            cfg.sample_rate_hz = sample_rate_hz;
            cfg.noise_snr_db =
                snr_db.is_none() ? std::nullopt : std::optional<double>(snr_db.cast<double>());
            cfg.kappa = kappa;
            cfg.pulse_channel = pulse_channel;
            return synthdata::synth_session(script_from_list(script), vocab, profile, cfg, seed);
        },
        py::arg("script"), py::arg("vocab"), py::arg("profile"), py::arg("sample_rate_hz") = 500,
        py::arg("snr_db") = py::none(), py::arg("kappa") = 0.01, py::arg("pulse_channel") = true,
        py::arg("seed") = 0,
        "Script items: ('word', id) | ('pause', seconds) | ('nod',) | ('emotion', name).");
    m.def(
        "synth_pulse",
        [](const std::string& emotion, double duration_s, std::uint32_t rate,
           std::uint64_t seed) {
            return synthdata::synth_pulse(
                synthdata::emotion_profile(sigcore::emotion_from_name(emotion)), duration_s,
                rate, seed);
        },
        py::arg("emotion"), py::arg("duration_s"), py::arg("sample_rate_hz") = 50,
        py::arg("seed") = 0);
    m.def("inject_crosstalk", &synthdata::inject_crosstalk, py::arg("pulse"), py::arg("speech"),
          py::arg("kappa"));

    py::class_<synthdata::TokenDataset>(m, "TokenDataset")
        .def_readonly("n", &synthdata::TokenDataset::n)
        .def_readonly("token_len", &synthdata::TokenDataset::token_len)
        .def_readonly("class_count", &synthdata::TokenDataset::class_count)
        .def_property_readonly("labels",
                               [](const synthdata::TokenDataset& ds) {
                                   return std::vector<int>(ds.labels.begin(), ds.labels.end());
                               })
        .def_property_readonly("sample_count", &synthdata::TokenDataset::sample_count)
        .def("sample", [](const synthdata::TokenDataset& ds, std::size_t i) {
            require(i < ds.sample_count(), Errc::invalid_argument, "sample index out of range");
            return std::vector<float>(ds.sample(i), ds.sample(i) + ds.sample_len());
        });
    m.def(
        "build_token_dataset",
        [](const std::vector<sigcore::SignalStream>& sessions, std::size_t n,
           std::size_t class_count) {
            return synthdata::build_token_dataset(sessions, n, class_count);
        },
        py::arg("sessions"), py::arg("n") = 15, py::arg("class_count") = 0);
    m.def("write_dataset", &synthdata::write_dataset, py::arg("path"), py::arg("dataset"));
    m.def("read_dataset", &synthdata::read_dataset, py::arg("path"));

    // --- token decoder ---------------------------------------------------------
    py::class_<tinynet::ArchConfig>(m, "ArchConfig")
        .def_readwrite("input_len", &tinynet::ArchConfig::input_len)
        .def_readwrite("stem_width", &tinynet::ArchConfig::stem_width)
        .def_readwrite("classes", &tinynet::ArchConfig::classes)
        .def_readwrite("role", &tinynet::ArchConfig::role);
    m.def("teacher_arch", &tinynet::teacher_arch, py::arg("input_len"), py::arg("classes"));
    m.def("student_arch", &tinynet::student_arch, py::arg("input_len"), py::arg("classes"));
    m.def("count_flops", &tinynet::count_flops, py::arg("arch"));
    m.def("count_params", &tinynet::count_params, py::arg("arch"));

    py::class_<tinynet::Model>(m, "Model")
        .def_property_readonly("arch", [](const tinynet::Model& m_) { return m_.config; });
    m.def("save_checkpoint", &tinynet::save_checkpoint, py::arg("path"), py::arg("model"));
    m.def("load_checkpoint", &tinynet::load_checkpoint, py::arg("path"));

    m.def(
        "pretrain",
        [](const synthdata::TokenDataset& ds, const tinynet::ArchConfig& arch,
           const py::dict& train) {
            auto result = tokendec::pretrain(ds, arch, train_config_from_dict(train));
            py::list log;
            for (const auto& e : result.log) {
                py::dict d;
                d["epoch"] = e.epoch;
                d["train_loss"] = e.train_loss;
                d["val_accuracy"] = e.val_accuracy;
                log.append(d);
            }
            return py::make_tuple(result.model, result.best_val_accuracy, log);
        },
        py::arg("dataset"), py::arg("arch"), py::arg("train") = py::dict());
    m.def(
        "finetune",
        [](const tinynet::Model& base, const synthdata::TokenDataset& ds,
           std::size_t reps_per_word, const py::dict& train) {
            return tokendec::finetune(base, ds, reps_per_word, train_config_from_dict(train));
        },
        py::arg("base"), py::arg("dataset"), py::arg("reps_per_word"),
        py::arg("train") = py::dict());
    m.def(
        "distill",
        [](const tinynet::Model& teacher, const tinynet::ArchConfig& student,
           const synthdata::TokenDataset& ds, const py::dict& train) {
            auto result = tokendec::distill(teacher, student, ds, train_config_from_dict(train));
            py::dict d;
            d["teacher_accuracy"] = result.teacher_accuracy;
            d["student_accuracy"] = result.student_accuracy;
            d["flops_ratio"] = result.flops_ratio;
            return py::make_tuple(result.student, d);
        },
        py::arg("teacher"), py::arg("student_arch"), py::arg("dataset"),
        py::arg("train") = py::dict());
    m.def(
        "evaluate",
        [](const tinynet::Model& model, const synthdata::TokenDataset& ds) {
            auto report = tokendec::evaluate(model, ds);
            py::dict d;
            d["token_accuracy"] = report.token_accuracy;
            d["blank_boundary_error_fraction"] = report.blank_boundary_error_fraction;
            d["errors"] = report.errors;
            d["total"] = report.total;
            d["confusion"] = report.confusion;
            d["per_class_recall"] = report.per_class_recall;
            return d;
        },
        py::arg("model"), py::arg("dataset"));
    m.def(
        "classify_stream",
        [](const tinynet::Model& model, const sigcore::SignalStream& stream, std::size_t n) {
            auto tokens = sigcore::tokenize(stream, sigcore::ChannelId::speech);
            return tokendec::classify_stream(model, tokens, n);
        },
        py::arg("model"), py::arg("stream"), py::arg("n") = 15);

    // --- emotion ----------------------------------------------------------------
    m.def(
        "fft",
        [](const std::vector<double>& x, std::size_t nfft) { return emotion::fft(x, nfft); },
        py::arg("values"), py::arg("padded_len"));
    m.def(
        "preprocess_window",
        [](const std::vector<double>& values) {
            sigcore::PulseWindow w;
            w.values = values;
            auto s = emotion::preprocess(w);
            py::dict d;
            d["magnitudes"] = s.magnitudes;
            d["bin_hz"] = s.bin_hz;
            d["degenerate"] = s.degenerate;
            return d;
        },
        py::arg("values"));

    py::class_<emotion::EmotionModel>(m, "EmotionModel")
        .def_property_readonly("kind",
                               [](const emotion::EmotionModel& m_) {
                                   return emotion::model_kind_name(m_.kind);
                               })
        .def_readonly("uses_dft", &emotion::EmotionModel::uses_dft);
    m.def(
        "train_emotion",
        [](const py::list& windows, const std::string& kind, bool uses_dft,
           std::uint64_t seed) {
            emotion::TrainReport report;
            auto model = emotion::train_emotion(windows_from_list(windows),
                                                emotion::model_kind_from_name(kind), uses_dft,
                                                seed, &report);
            py::dict d;
            d["train_accuracy"] = report.train_accuracy;
            d["val_accuracy"] = report.val_accuracy;
            return py::make_tuple(model, d);
        },
        py::arg("windows"), py::arg("kind") = "cnn1d", py::arg("uses_dft") = true,
        py::arg("seed") = 0,
        "Windows are (values, emotion_name) pairs; values hold 5 s at 50 Hz.");
    m.def(
        "classify_emotion",
        [](const emotion::EmotionModel& model, const std::vector<double>& values) {
            sigcore::PulseWindow w;
            w.values = values;
            auto c = emotion::classify_emotion(model, w);
            return py::make_tuple(sigcore::emotion_name(c.label), c.scores);
        },
        py::arg("model"), py::arg("values"));
    m.def(
        "eval_emotion",
        [](const emotion::EmotionModel& model, const py::list& windows) {
            auto result = emotion::eval_emotion(model, windows_from_list(windows));
            py::dict d;
            d["accuracy"] = result.accuracy;
            d["confusion"] = result.confusion;
            return d;
        },
        py::arg("model"), py::arg("windows"));
    m.def("save_emotion_model", &emotion::save_emotion_model, py::arg("path"), py::arg("model"));
    m.def("load_emotion_model", &emotion::load_emotion_model, py::arg("path"));
    m.def(
        "freq_saliency",
        [](const emotion::EmotionModel& model, const std::vector<double>& values) {
            sigcore::PulseWindow w;
            w.values = values;
            return emotion::freq_saliency(model, w);
        },
        py::arg("model"), py::arg("values"));

    // --- agents -------------------------------------------------------------------
    m.def("smooth_labels", &agents::smooth_labels, py::arg("labels"));
    m.def(
        "merge_tokens",
        [](const std::vector<int>& labels, const synthdata::Vocabulary& vocab) {
            auto runs = agents::merge_tokens(labels, agents::build_constraint_table(vocab));
            py::list out;
            for (const auto& r : runs) out.append(py::make_tuple(r.word_id, r.begin, r.end));
            return out;
        },
        py::arg("labels"), py::arg("vocab"));
    m.def(
        "synthesize_text",
        [](const std::vector<int>& labels, const synthdata::Vocabulary& vocab) {
            auto runs = agents::merge_tokens(labels, agents::build_constraint_table(vocab));
            return agents::synthesize_sentence(runs, vocab).text();
        },
        py::arg("labels"), py::arg("vocab"),
        "Token Synthesis Agent: label stream in, sentence text out.");
    m.def(
        "wer",
        [](const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
            return agents::wer(ref, hyp);
        },
        py::arg("reference"), py::arg("hypothesis"));
    m.def(
        "ser",
        [](const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
            return agents::ser(refs, hyps);
        },
        py::arg("references"), py::arg("hypotheses"));
    m.def(
        "expand_sentence",
        [](const std::vector<std::string>& words, const std::string& emotion,
           const std::string& time_of_day, const std::string& weather,
           const std::string& location) {
            agents::DecodedSentence basic;
            basic.words = words;
            agents::ContextRecord ctx;
            ctx.emotion = sigcore::emotion_from_name(emotion);
            ctx.time_of_day = agents::time_of_day_from_name(time_of_day);
            ctx.weather = agents::weather_from_name(weather);
            ctx.location = location;
            return agents::expand_sentence(basic, ctx, agents::ExpandMode::template_mode);
        },
        py::arg("words"), py::arg("emotion") = "neutral", py::arg("time_of_day") = "morning",
        py::arg("weather") = "sunny", py::arg("location") = "home");
    m.def(
        "check_expansion",
        [](const std::vector<std::string>& words, const std::string& expanded,
           const std::string& emotion) {
            agents::DecodedSentence basic;
            basic.words = words;
            agents::ContextRecord ctx;
            ctx.emotion = sigcore::emotion_from_name(emotion);
            auto result = agents::check_expansion(basic, expanded, ctx);
            return py::make_tuple(result.pass, result.violations);
        },
        py::arg("words"), py::arg("expanded"), py::arg("emotion") = "neutral");

    // --- runtime ---------------------------------------------------------------------
    m.def(
        "detect_double_nod",
        [](const std::vector<double>& speech, std::uint32_t rate) {
            return runtime::detect_double_nod(speech, rate, runtime::NodParams{});
        },
        py::arg("speech"), py::arg("sample_rate_hz"));
    m.def(
        "run_pipeline",
        [](const std::filesystem::path& stream_path,
           const std::filesystem::path& token_checkpoint,
           const std::filesystem::path& vocab_path, const std::string& emotion_checkpoint,
           std::size_t n, std::size_t blank_boundary_tokens, const std::string& mode) {
            runtime::PipelineConfig cfg;
            cfg.token_checkpoint = token_checkpoint;
            cfg.vocab_path = vocab_path;
            if (!emotion_checkpoint.empty()) cfg.emotion_checkpoint = emotion_checkpoint;
            cfg.n = n;
            cfg.blank_boundary_tokens = blank_boundary_tokens;
            cfg.mode = mode == "expanded" ? runtime::Mode::expanded : runtime::Mode::direct;
            auto pipeline = runtime::load_pipeline(cfg);
            return events_to_list(runtime::run_pipeline_file(pipeline, stream_path));
        },
        py::arg("stream"), py::arg("token_checkpoint"), py::arg("vocab"),
        py::arg("emotion_checkpoint") = "", py::arg("n") = 15,
        py::arg("blank_boundary_tokens") = 7, py::arg("mode") = "direct");
}
