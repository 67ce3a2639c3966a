// itcli: command-line front end for the silent-speech decoding engine.
//
// Every subcommand reads one JSON config (--config file.json) plus
// --set key=value overrides. Exit codes: 0 success, 2 config/usage error,
// 3 data error, 4 benchmark threshold failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ithroat/bench.hpp"

using namespace ithroat;
using nlohmann::json;

namespace {

json load_config(const std::string& path, const std::vector<std::string>& overrides) {
    json cfg = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        require(in.good(), Errc::io_error, "cannot open config " + path);
        try {
            in >> cfg;
        } catch (const json::exception& e) {
            fail(Errc::format_error, std::string("config json: ") + e.what());
        }
    }
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        require(eq != std::string::npos, Errc::invalid_argument,
                "--set expects key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string value = kv.substr(eq + 1);
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::exception&) {
            parsed = value;  // plain strings need no quoting
        }
        // dotted keys address nested objects
        json* node = &cfg;
        std::size_t pos = 0;
        while (true) {
            const auto dot = key.find('.', pos);
            const std::string part = key.substr(pos, dot - pos);
            if (dot == std::string::npos) {
                (*node)[part] = parsed;
                break;
            }
            node = &(*node)[part];
            pos = dot + 1;
        }
    }
    return cfg;
}

int exit_code_for(const Error& e) {
    switch (e.code()) {
        case Errc::invalid_argument:
        case Errc::config_error:
        case Errc::format_error:
        case Errc::invalid_label:
        case Errc::budget_error:
            return 2;
        default:
            return 3;
    }
}

tinynet::TrainConfig train_from_json(const json& cfg, std::uint64_t default_seed = 0) {
    tinynet::TrainConfig tc;
    tc.lr = cfg.value("lr", 1e-3);
    tc.batch_size = cfg.value("batch_size", std::size_t{64});
    tc.epochs = cfg.value("epochs", std::size_t{3});
    tc.seed = cfg.value("seed", default_seed);
    if (cfg.contains("temperature") || cfg.contains("alpha")) {
        tinynet::DistillParams dp;
        dp.temperature = cfg.value("temperature", 4.0);
        dp.alpha = cfg.value("alpha", 0.3);
        tc.distill = dp;
    }
    return tc;
}

bench::RefConfig ref_from_json(const json& cfg) {
    bench::RefConfig rc;
    rc.master_seed = cfg.value("seed", rc.master_seed);
    rc.sample_rate_hz = cfg.value("sample_rate_hz", rc.sample_rate_hz);
    rc.vocab_size = cfg.value("vocab_size", rc.vocab_size);
    rc.n = cfg.value("n", rc.n);
    rc.snr_db = cfg.value("snr_db", rc.snr_db);
    rc.kappa = cfg.value("kappa", rc.kappa);
    rc.healthy_speakers = cfg.value("speakers", rc.healthy_speakers);
    rc.healthy_sentences_per_speaker =
        cfg.value("sentences_per_speaker", rc.healthy_sentences_per_speaker);
    rc.patient_train_reps = cfg.value("reps_per_word", rc.patient_train_reps);
    rc.patient_test_sentences = cfg.value("test_sentences", rc.patient_test_sentences);
    return rc;
}

tinynet::ArchConfig arch_from_config(const json& cfg, const std::string& key,
                                     std::size_t input_len, std::size_t classes,
                                     const std::string& fallback_role) {
    if (cfg.contains(key)) return tinynet::arch_from_json(cfg.at(key).dump());
    return fallback_role == "teacher" ? tinynet::teacher_arch(input_len, classes)
                                      : tinynet::student_arch(input_len, classes);
}

agents::ContextRecord context_from_json(const json& cfg) {
    agents::ContextRecord ctx;
    if (!cfg.contains("context")) return ctx;
    const auto& c = cfg.at("context");
    if (c.contains("emotion")) ctx.emotion = sigcore::emotion_from_name(c.at("emotion"));
    if (c.contains("time_of_day"))
        ctx.time_of_day = agents::time_of_day_from_name(c.at("time_of_day"));
    if (c.contains("weather")) ctx.weather = agents::weather_from_name(c.at("weather"));
    if (c.contains("location")) ctx.location = c.at("location").get<std::string>();
    return ctx;
}

// --- subcommand bodies -------------------------------------------------------

int cmd_gen_data(const json& cfg) {
    const auto rc = ref_from_json(cfg);
    const std::string kind = cfg.value("kind", "healthy-tokens");
    const std::string out = cfg.value("out", std::string{});
    require(!out.empty(), Errc::invalid_argument, "gen-data needs an 'out' path");

    if (cfg.contains("vocab_out"))
        synthdata::write_vocab(cfg.at("vocab_out").get<std::string>(), bench::ref_vocab(rc));

    if (kind == "healthy-tokens") {
        synthdata::write_dataset(out, bench::healthy_dataset(rc));
    } else if (kind == "patient-tokens") {
        synthdata::write_dataset(out, bench::patient_pool(rc));
    } else if (kind == "patient-test-tokens") {
        synthdata::write_dataset(out, bench::patient_test_set(rc));
    } else if (kind == "distill-tokens") {
        synthdata::write_dataset(out, bench::distill_set(rc));
    } else if (kind == "emotion-windows") {
        const auto per_class = cfg.value("windows_per_class", std::size_t{120});
        auto windows = bench::emotion_windows(rc, per_class, cfg.value("salt", 0xE87A00ULL));
        synthdata::TokenDataset ds;
        ds.n = 1;
        ds.token_len = emotion::kWindowSamples;
        ds.class_count = 3;
        for (const auto& w : windows) {
            ds.labels.push_back(static_cast<std::uint16_t>(*w.emotion_label));
            for (double v : w.values) ds.values.push_back(static_cast<float>(v));
        }
        synthdata::write_dataset(out, ds);
    } else {
        fail(Errc::invalid_argument, "unknown gen-data kind '" + kind + "'");
    }
    std::printf("wrote %s (%s)\n", out.c_str(), kind.c_str());
    return 0;
}

int cmd_train_teacher(const json& cfg) {
    auto ds = synthdata::read_dataset(cfg.at("data").get<std::string>());
    auto arch = arch_from_config(cfg, "arch", ds.sample_len(), ds.class_count, "teacher");
    auto result = tokendec::pretrain(ds, arch, train_from_json(cfg));
    tinynet::save_checkpoint(cfg.at("out").get<std::string>(), result.model);
    for (const auto& e : result.log)
        std::printf("epoch %zu  train_loss %.4f  val_accuracy %.4f\n", e.epoch, e.train_loss,
                    e.val_accuracy);
    std::printf("best validation accuracy %.4f -> %s\n", result.best_val_accuracy,
                cfg.at("out").get<std::string>().c_str());
    return 0;
}

int cmd_finetune(const json& cfg) {
    auto base = tinynet::load_checkpoint(cfg.at("base").get<std::string>());
    auto ds = synthdata::read_dataset(cfg.at("data").get<std::string>());
    const auto reps = cfg.value("reps_per_word", std::size_t{25});
    auto tuned = tokendec::finetune(base, ds, reps, train_from_json(cfg));
    tinynet::save_checkpoint(cfg.at("out").get<std::string>(), tuned);
    std::printf("fine-tuned on %zu repetitions per word -> %s\n", reps,
                cfg.at("out").get<std::string>().c_str());
    return 0;
}

int cmd_distill(const json& cfg) {
    auto teacher = tinynet::load_checkpoint(cfg.at("teacher").get<std::string>());
    auto ds = synthdata::read_dataset(cfg.at("data").get<std::string>());
    auto student = arch_from_config(cfg, "student_arch", ds.sample_len(), ds.class_count,
                                    "student");
    auto tc = train_from_json(cfg);
    if (!tc.distill) tc.distill = tinynet::DistillParams{};
    auto result = tokendec::distill(teacher, student, ds, tc);
    tinynet::save_checkpoint(cfg.at("out").get<std::string>(), result.student);
    std::printf("teacher %.4f  student %.4f  flops_ratio %.4f -> %s\n",
                result.teacher_accuracy, result.student_accuracy, result.flops_ratio,
                cfg.at("out").get<std::string>().c_str());
    return 0;
}

int cmd_eval(const json& cfg) {
    auto model = tinynet::load_checkpoint(cfg.at("ckpt").get<std::string>());
    auto ds = synthdata::read_dataset(cfg.at("data").get<std::string>());
    auto report = tokendec::evaluate(model, ds);
    std::printf("token_accuracy %.4f  errors %llu/%llu  blank_error_fraction %.4f\n",
                report.token_accuracy, static_cast<unsigned long long>(report.errors),
                static_cast<unsigned long long>(report.total),
                report.blank_boundary_error_fraction);
    if (cfg.contains("out_csv")) {
        tokendec::write_eval_csv(cfg.at("out_csv").get<std::string>(), report);
        std::printf("report -> %s\n", cfg.at("out_csv").get<std::string>().c_str());
    }
    if (cfg.contains("pca_csv")) {
        tokendec::write_pca_csv(cfg.at("pca_csv").get<std::string>(),
                                tokendec::pca_features(model, ds));
        std::printf("pca -> %s\n", cfg.at("pca_csv").get<std::string>().c_str());
    }
    return 0;
}

std::vector<sigcore::PulseWindow> windows_from_dataset(const synthdata::TokenDataset& ds) {
    require(ds.token_len == emotion::kWindowSamples && ds.n == 1 && ds.class_count == 3,
            Errc::format_error,
            "emotion datasets use token_len=250, n=1, class_count=3");
    std::vector<sigcore::PulseWindow> windows;
    for (std::size_t i = 0; i < ds.sample_count(); ++i) {
        sigcore::PulseWindow w;
        w.values.assign(ds.sample(i), ds.sample(i) + ds.sample_len());
        w.emotion_label = static_cast<sigcore::Emotion>(ds.labels[i]);
        windows.push_back(std::move(w));
    }
    return windows;
}

int cmd_emotion_train(const json& cfg) {
    auto ds = synthdata::read_dataset(cfg.at("data").get<std::string>());
    auto windows = windows_from_dataset(ds);
    emotion::TrainReport report;
    auto model = emotion::train_emotion(
        windows, emotion::model_kind_from_name(cfg.value("kind", "cnn1d")),
        cfg.value("uses_dft", true), cfg.value("seed", std::uint64_t{0}), &report);
    emotion::save_emotion_model(cfg.at("out").get<std::string>(), model);
    std::printf("train_accuracy %.4f  val_accuracy %.4f -> %s\n", report.train_accuracy,
                report.val_accuracy, cfg.at("out").get<std::string>().c_str());
    return 0;
}

int cmd_emotion_eval(const json& cfg) {
    auto model = emotion::load_emotion_model(cfg.at("ckpt").get<std::string>());
    auto windows = windows_from_dataset(
        synthdata::read_dataset(cfg.at("data").get<std::string>()));
    auto result = emotion::eval_emotion(model, windows);
    std::printf("accuracy %.4f over %zu windows\n", result.accuracy, result.total);
    if (cfg.contains("out_csv")) {
        emotion::write_confusion_csv(cfg.at("out_csv").get<std::string>(), result);
        std::printf("confusion -> %s\n", cfg.at("out_csv").get<std::string>().c_str());
    }
    return 0;
}

int cmd_run_stream(const json& cfg) {
    runtime::PipelineConfig pc;
    pc.token_checkpoint = cfg.at("token_ckpt").get<std::string>();
    if (cfg.contains("emotion_ckpt"))
        pc.emotion_checkpoint = cfg.at("emotion_ckpt").get<std::string>();
    pc.vocab_path = cfg.at("vocab").get<std::string>();
    pc.n = cfg.value("n", std::size_t{15});
    pc.blank_boundary_tokens = cfg.value("blank_boundary_tokens", std::size_t{7});
    pc.mode = cfg.value("mode", "direct") == std::string("expanded") ? runtime::Mode::expanded
                                                                     : runtime::Mode::direct;
    pc.context = context_from_json(cfg);
    pc.use_llm = cfg.value("use_llm", false);
    auto pipeline = runtime::load_pipeline(pc);
    auto events =
        runtime::run_pipeline_file(pipeline, cfg.at("stream").get<std::string>());
    const bool latency = cfg.value("latency", false);
    const auto jsonl = runtime::transcript_to_jsonl(events, latency);
    if (cfg.contains("out")) {
        runtime::write_transcript(cfg.at("out").get<std::string>(), events, latency);
    } else {
        std::fputs(jsonl.c_str(), stdout);
    }
    auto stats = runtime::measure_latency(events, pc);
    std::fprintf(stderr,
                 "sentences %zu  compute latency mean %.4f s  p95 %.4f s  decision delay %.3f s\n",
                 stats.per_sentence.size(), stats.mean, stats.p95, stats.decision_delay_s);
    return 0;
}

int cmd_bench(const json& cfg) {
    bench::BenchOptions options;
    options.workdir = cfg.value("workdir", std::string{"bench_work"});
    options.reuse_checkpoints = cfg.value("reuse", false);
    if (cfg.contains("only"))
        for (const auto& v : cfg.at("only")) options.only.push_back(v.get<int>());
    auto results = bench::run_criteria(ref_from_json(cfg), options);
    return bench::all_passed(results) ? 0 : 4;
}

int cmd_ablate_prompts(const json& cfg) {
    const auto rc = ref_from_json(cfg);
    auto vocab = bench::ref_vocab(rc);
    auto table = agents::build_constraint_table(vocab);
    agents::ConstraintTable unconstrained = table;
    for (auto& [id, c] : unconstrained.words) c.min_run = 1;

    std::vector<std::size_t> budgets{100, 200, 400, 800};
    if (cfg.contains("budgets")) {
        budgets.clear();
        for (const auto& b : cfg.at("budgets")) budgets.push_back(b.get<std::size_t>());
    }
    const std::size_t sentences = cfg.value("sentences", std::size_t{100});
    Rng rng(cfg.value("seed", std::uint64_t{0x9AB}));

    // scripted label streams with boundary corruption, decoded with and
    // without the token-count constraints
    struct Case {
        std::vector<int> labels;
        std::vector<std::string> ref;
    };
    std::vector<Case> cases;
    for (std::size_t s = 0; s < sentences; ++s) {
        Case c;
        std::vector<int> seq;
        const std::size_t words = 3 + rng.below(4);
        seq.insert(seq.end(), 3, 0);
        for (std::size_t w = 0; w < words; ++w) {
            const int id = static_cast<int>(1 + rng.below(vocab.size()));
            c.ref.push_back(vocab.word(id).text);
            const std::size_t run = table.at(id).expected_tokens;
            seq.insert(seq.end(), run, id);
            seq.insert(seq.end(), 3, 0);
        }
        for (std::size_t i = 0; i < seq.size(); ++i) {
            const int cur = seq[i];
            const int prev = i ? seq[i - 1] : 0;
            const int next = i + 1 < seq.size() ? seq[i + 1] : 0;
            const bool edge = cur != 0 && (prev != cur || next != cur);
            const bool neighbor = cur == 0 && (prev != 0 || next != 0);
            if ((edge || neighbor) && rng.uniform01() < 0.08)
                seq[i] = edge ? 0 : (prev != 0 ? prev : next);
        }
        c.labels = std::move(seq);
        cases.push_back(std::move(c));
    }

    std::ofstream csv;
    const std::string out = cfg.value("out_csv", std::string{"prompt_ablation.csv"});
    csv.open(out, std::ios::trunc);
    require(csv.good(), Errc::io_error, "cannot write " + out);
    csv << "budget_words,examples,constraints,prompt_word_count,wer,ser\n";
    for (std::size_t budget : budgets) {
        for (bool examples : {false, true}) {
            for (bool constraints : {false, true}) {
                agents::PromptSpec spec = agents::default_prompt_spec(vocab);
                spec.budget_words = budget;
                spec.include_examples = examples;
                spec.include_constraints = constraints;
                auto prompt =
                    agents::build_tsa_prompt(cases.front().labels, spec, table, vocab);

                std::size_t edits = 0, ref_words = 0, wrong = 0;
                const auto& active = constraints ? table : unconstrained;
                for (const auto& c : cases) {
                    auto runs = agents::merge_tokens(c.labels, active);
                    auto decoded = agents::synthesize_sentence(runs, vocab);
                    edits += static_cast<std::size_t>(
                        std::llround(agents::wer(c.ref, decoded.words) * c.ref.size()));
                    ref_words += c.ref.size();
                    if (decoded.words != c.ref) ++wrong;
                }
                csv << budget << "," << (examples ? 1 : 0) << "," << (constraints ? 1 : 0)
                    << "," << prompt.word_count << ","
                    << static_cast<double>(edits) / static_cast<double>(ref_words) << ","
                    << static_cast<double>(wrong) / static_cast<double>(cases.size()) << "\n";
            }
        }
    }
    std::printf("prompt ablation -> %s\n", out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"intelligent-throat silent speech decoding toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "JSON configuration file")->expected(1);
    app.add_option("--set", overrides, "key=value overrides (dotted keys allowed)");

    struct Sub {
        const char* name;
        const char* help;
        int (*fn)(const json&);
    };
    const Sub subs[] = {
        {"gen-data", "generate synthetic datasets / vocabularies", cmd_gen_data},
        {"train-teacher", "pretrain the teacher on healthy data", cmd_train_teacher},
        {"finetune", "few-shot fine-tune a checkpoint on patient data", cmd_finetune},
        {"distill", "distill a teacher into the student architecture", cmd_distill},
        {"eval", "evaluate a token checkpoint on a dataset", cmd_eval},
        {"emotion-train", "train an emotion classifier on pulse windows", cmd_emotion_train},
        {"emotion-eval", "evaluate an emotion checkpoint", cmd_emotion_eval},
        {"run-stream", "decode an .itss stream into a transcript", cmd_run_stream},
        {"bench", "run the reference acceptance benchmark", cmd_bench},
        {"ablate-prompts", "prompt length/example/constraint ablation", cmd_ablate_prompts},
    };
    for (const auto& sub : subs) app.add_subcommand(sub.name, sub.help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const json cfg = load_config(config_path, overrides);
        for (const auto& sub : subs)
            if (app.got_subcommand(sub.name)) return sub.fn(cfg);
        std::cerr << app.help() << "\n";
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e);
    } catch (const json::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    }
}
