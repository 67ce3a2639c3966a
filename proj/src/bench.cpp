#include "ithroat/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ithroat::bench {

using sigcore::ChannelId;
using sigcore::Emotion;
using sigcore::PulseWindow;
using sigcore::SignalStream;
using synthdata::Script;
using synthdata::SessionConfig;
using synthdata::SpeakerProfile;

namespace {

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * v);
    return buf;
}

}  // namespace

Vocabulary ref_vocab(const RefConfig& cfg) {
    return synthdata::make_vocab(mix_seed(cfg.master_seed, 0x564F43), cfg.vocab_size);
}

tinynet::ArchConfig ref_teacher_arch(const RefConfig& cfg) {
    return tinynet::teacher_arch(cfg.input_len(), cfg.classes());
}

tinynet::ArchConfig ref_student_arch(const RefConfig& cfg) {
    return tinynet::student_arch(cfg.input_len(), cfg.classes());
}

// ---------------------------------------------------------------------------
// Data builders

namespace {

Script sentence_script(const std::vector<int>& word_ids, Rng& rng, double lead_pause,
                       double min_gap, double max_gap) {
    Script script;
    script.push_back(synthdata::Pause{lead_pause});
    for (std::size_t i = 0; i < word_ids.size(); ++i) {
        script.push_back(synthdata::SayWord{word_ids[i]});
        script.push_back(synthdata::Pause{rng.uniform(min_gap, max_gap)});
    }
    return script;
}

std::vector<SignalStream> healthy_sessions(const RefConfig& cfg, const Vocabulary& vocab) {
    std::vector<SignalStream> sessions;
    SessionConfig scfg;
    scfg.sample_rate_hz = cfg.sample_rate_hz;
    scfg.noise_snr_db = cfg.snr_db;
    scfg.pulse_channel = false;
    const std::size_t sentences = cfg.healthy_sentences_per_speaker;
    const std::size_t words_total = sentences * cfg.words_per_sentence;
    for (std::size_t sp = 0; sp < cfg.healthy_speakers; ++sp) {
        auto profile = synthdata::healthy_profile(mix_seed(cfg.master_seed, 100 + sp));
        // balanced word coverage per speaker
        std::vector<int> order;
        while (order.size() < words_total)
            for (std::size_t w = 1; w <= cfg.vocab_size && order.size() < words_total; ++w)
                order.push_back(static_cast<int>(w));
        Rng rng(mix_seed(cfg.master_seed, 0x48000 + sp));
        rng.shuffle(order);
        for (std::size_t s = 0; s < sentences; ++s) {
            std::vector<int> ids(order.begin() + static_cast<std::ptrdiff_t>(s * cfg.words_per_sentence),
                                 order.begin() + static_cast<std::ptrdiff_t>((s + 1) * cfg.words_per_sentence));
            Rng srng(mix_seed(cfg.master_seed, 0x48A00 + sp * 1000 + s));
            auto script = sentence_script(ids, srng, srng.uniform(0.3, 0.5), 0.3, 0.6);
            sessions.push_back(synthdata::synth_session(
                script, vocab, profile, scfg, mix_seed(cfg.master_seed, 0x48F00 + sp * 1000 + s)));
        }
    }
    return sessions;
}

std::vector<SignalStream> patient_drills(const RefConfig& cfg, const Vocabulary& vocab) {
    std::vector<SignalStream> sessions;
    SessionConfig scfg;
    scfg.sample_rate_hz = cfg.sample_rate_hz;
    scfg.noise_snr_db = cfg.snr_db;
    scfg.pulse_channel = false;
    for (std::size_t w = 1; w <= cfg.vocab_size; ++w) {
        for (std::size_t rep = 0; rep < cfg.patient_train_reps; ++rep) {
            const std::size_t p = rep % cfg.patients;
            auto profile = synthdata::patient_profile(mix_seed(cfg.master_seed, 200 + p));
            Rng rng(mix_seed(cfg.master_seed, 0x50000 + w * 1000 + rep));
            Script script;
            script.push_back(synthdata::Pause{rng.uniform(0.3, 0.45)});
            script.push_back(synthdata::SayWord{static_cast<int>(w)});
            script.push_back(synthdata::Pause{rng.uniform(0.3, 0.45)});
            sessions.push_back(synthdata::synth_session(
                script, vocab, profile, scfg,
                mix_seed(cfg.master_seed, 0x50F00 + w * 1000 + rep)));
        }
    }
    return sessions;
}

std::vector<SignalStream> patient_sentences(const RefConfig& cfg, const Vocabulary& vocab,
                                            std::size_t count, std::uint64_t salt) {
    std::vector<SignalStream> sessions;
    SessionConfig scfg;
    scfg.sample_rate_hz = cfg.sample_rate_hz;
    scfg.noise_snr_db = cfg.snr_db;
    scfg.pulse_channel = false;
    for (std::size_t s = 0; s < count; ++s) {
        const std::size_t p = s % cfg.patients;
        auto profile = synthdata::patient_profile(mix_seed(cfg.master_seed, 200 + p));
        Rng rng(mix_seed(cfg.master_seed, salt + s));
        std::vector<int> ids;
        for (std::size_t w = 0; w < cfg.words_per_sentence; ++w)
            ids.push_back(static_cast<int>(1 + rng.below(cfg.vocab_size)));
        auto script = sentence_script(ids, rng, rng.uniform(0.3, 0.5), 0.3, 0.6);
        sessions.push_back(
            synthdata::synth_session(script, vocab, profile, scfg, mix_seed(cfg.master_seed, salt + 0x700000 + s)));
    }
    return sessions;
}

}  // namespace

TokenDataset healthy_dataset(const RefConfig& cfg) {
    auto vocab = ref_vocab(cfg);
    return synthdata::build_token_dataset(healthy_sessions(cfg, vocab), cfg.n, cfg.classes());
}

TokenDataset patient_pool(const RefConfig& cfg) {
    auto vocab = ref_vocab(cfg);
    return synthdata::build_token_dataset(patient_drills(cfg, vocab), cfg.n, cfg.classes());
}

TokenDataset patient_test_set(const RefConfig& cfg) {
    auto vocab = ref_vocab(cfg);
    return synthdata::build_token_dataset(
        patient_sentences(cfg, vocab, cfg.patient_test_sentences, 0x7E0000), cfg.n,
        cfg.classes());
}

TokenDataset distill_set(const RefConfig& cfg) {
    auto vocab = ref_vocab(cfg);
    auto sessions = patient_drills(cfg, vocab);
    auto extra = patient_sentences(cfg, vocab, cfg.patient_extra_sentences, 0x8E0000);
    for (auto& s : extra) sessions.push_back(std::move(s));
    return synthdata::build_token_dataset(sessions, cfg.n, cfg.classes());
}

std::vector<PulseWindow> emotion_windows(const RefConfig& cfg, std::size_t per_class,
                                         std::uint64_t salt) {
    std::vector<PulseWindow> windows;
    const std::size_t win = emotion::kWindowSamples;
    for (std::size_t c = 0; c < 3; ++c) {
        const auto label = static_cast<Emotion>(c);
        const auto profile = synthdata::emotion_profile(label);
        const double duration = 5.0 * static_cast<double>(per_class + 1);
        auto pulse = synthdata::synth_pulse(profile, duration, emotion::kWorkingRateHz,
                                            mix_seed(cfg.master_seed, salt + c));
        for (std::size_t i = 0; i < per_class; ++i) {
            PulseWindow w;
            w.start_s = static_cast<double>(i) * 5.0;
            w.values.assign(pulse.begin() + static_cast<std::ptrdiff_t>(i * win),
                            pulse.begin() + static_cast<std::ptrdiff_t>((i + 1) * win));
            w.emotion_label = label;
            windows.push_back(std::move(w));
        }
    }
    return windows;
}

std::vector<PulseWindow> crosstalk_windows(const RefConfig& cfg, double kappa,
                                           std::size_t sessions, std::uint64_t salt) {
    auto vocab = ref_vocab(cfg);
    std::vector<PulseWindow> windows;
    SessionConfig scfg;
    scfg.sample_rate_hz = cfg.sample_rate_hz;
    scfg.noise_snr_db = cfg.snr_db;
    scfg.kappa = kappa;
    const Emotion order[3] = {Emotion::neutral, Emotion::relieved, Emotion::frustrated};
    for (std::size_t s = 0; s < sessions; ++s) {
        auto profile = synthdata::healthy_profile(mix_seed(cfg.master_seed, 100 + (s % 4)));
        Rng rng(mix_seed(cfg.master_seed, salt + 31 * s));
        Script script;
        for (std::size_t seg = 0; seg < 9; ++seg) {
            script.push_back(synthdata::SetEmotion{order[(s + seg) % 3]});
            double t = 0.0;
            while (t < 20.0) {
                const int w = static_cast<int>(1 + rng.below(cfg.vocab_size));
                script.push_back(synthdata::SayWord{w});
                const double gap = rng.uniform(0.2, 0.5);
                script.push_back(synthdata::Pause{gap});
                t += vocab.word(w).nominal_duration_s + gap;
            }
        }
        auto stream = synthdata::synth_session(script, vocab, profile, scfg,
                                               mix_seed(cfg.master_seed, salt + 977 * s));
        auto pulse50 = sigcore::decimate_channel(stream, ChannelId::pulse,
                                                 cfg.sample_rate_hz / emotion::kWorkingRateHz);
        auto cut = sigcore::window_pulse(pulse50, sigcore::kPulseWindowSeconds);
        for (auto& w : cut)
            if (w.emotion_label) windows.push_back(std::move(w));
    }
    return windows;
}

std::vector<std::complex<double>> reference_dft(const std::vector<double>& x, std::size_t nfft) {
    std::vector<std::complex<double>> out(nfft, {0.0, 0.0});
    for (std::size_t k = 0; k < nfft; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (std::size_t t = 0; t < x.size(); ++t) {
            const double angle = -2.0 * M_PI * static_cast<double>(k) *
                                 static_cast<double>(t) / static_cast<double>(nfft);
            acc += x[t] * std::complex<double>(std::cos(angle), std::sin(angle));
        }
        out[k] = acc;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Criterion machinery

namespace {

struct Context {
    RefConfig cfg;
    BenchOptions opt;

    std::optional<Vocabulary> vocab_;
    std::optional<TokenDataset> healthy_, pool_, test_, distill_;
    std::map<std::size_t, tinynet::Model> teachers_;
    std::map<std::size_t, double> teacher_val_;
    std::optional<tinynet::Model> ft25_, student_;
    std::optional<emotion::EmotionModel> emo_model_;
    std::vector<PulseWindow> emo_test_;

    std::uint64_t train_seed(std::size_t s) const {
        return mix_seed(cfg.master_seed, 0xA11CE00 + s);
    }

    const Vocabulary& vocab() {
        if (!vocab_) vocab_ = ref_vocab(cfg);
        return *vocab_;
    }
    const TokenDataset& healthy() {
        if (!healthy_) healthy_ = healthy_dataset(cfg);
        return *healthy_;
    }
    const TokenDataset& pool() {
        if (!pool_) pool_ = patient_pool(cfg);
        return *pool_;
    }
    const TokenDataset& test() {
        if (!test_) test_ = patient_test_set(cfg);
        return *test_;
    }
    const TokenDataset& distill_ds() {
        if (!distill_) distill_ = distill_set(cfg);
        return *distill_;
    }

    std::filesystem::path path(const std::string& name) const { return opt.workdir / name; }

    const tinynet::Model& teacher(std::size_t s) {
        auto it = teachers_.find(s);
        if (it != teachers_.end()) return it->second;
        const auto ckpt = path("teacher_seed" + std::to_string(s) + ".itnn");
        const auto meta = path("teacher_seed" + std::to_string(s) + ".json");
        if (opt.reuse_checkpoints && std::filesystem::exists(ckpt) &&
            std::filesystem::exists(meta)) {
            teachers_[s] = tinynet::load_checkpoint(ckpt);
            std::ifstream in(meta);
            nlohmann::json j;
            in >> j;
            teacher_val_[s] = j.at("best_val_accuracy").get<double>();
            return teachers_[s];
        }
        tinynet::TrainConfig tc;
        tc.lr = cfg.lr;
        tc.batch_size = cfg.batch_size;
        tc.epochs = cfg.pretrain_epochs;
        tc.seed = train_seed(s);
        auto result = tokendec::pretrain(healthy(), ref_teacher_arch(cfg), tc);
        teacher_val_[s] = result.best_val_accuracy;
        teachers_[s] = std::move(result.model);
        tinynet::save_checkpoint(ckpt, teachers_[s]);
        std::ofstream out(meta);
        nlohmann::json j;
        j["best_val_accuracy"] = teacher_val_[s];
        for (const auto& e : result.log)
            j["epochs"].push_back({{"epoch", e.epoch},
                                   {"train_loss", e.train_loss},
                                   {"val_accuracy", e.val_accuracy}});
        out << j.dump(2) << "\n";
        return teachers_[s];
    }

    double teacher_val(std::size_t s) {
        teacher(s);
        return teacher_val_[s];
    }

    const tinynet::Model& ft25() {
        if (ft25_) return *ft25_;
        const auto ckpt = path("teacher_ft25.itnn");
        if (opt.reuse_checkpoints && std::filesystem::exists(ckpt)) {
            ft25_ = tinynet::load_checkpoint(ckpt);
            return *ft25_;
        }
        tinynet::TrainConfig tc;
        tc.lr = cfg.lr;
        tc.batch_size = cfg.batch_size;
        tc.epochs = cfg.finetune_epochs;
        tc.seed = mix_seed(train_seed(0), 25);
        ft25_ = tokendec::finetune(teacher(0), pool(), cfg.patient_train_reps, tc);
        tinynet::save_checkpoint(ckpt, *ft25_);
        return *ft25_;
    }

    const tinynet::Model& student() {
        if (student_) return *student_;
        const auto ckpt = path("student.itnn");
        if (opt.reuse_checkpoints && std::filesystem::exists(ckpt)) {
            student_ = tinynet::load_checkpoint(ckpt);
            return *student_;
        }
        tinynet::TrainConfig tc;
        tc.lr = cfg.lr;
        tc.batch_size = cfg.batch_size;
        tc.epochs = cfg.distill_epochs;
        tc.seed = mix_seed(train_seed(0), 99);
        tc.distill = tinynet::DistillParams{4.0, 0.3};
        auto result = tokendec::distill(ft25(), ref_student_arch(cfg), distill_ds(), tc);
        student_ = std::move(result.student);
        tinynet::save_checkpoint(ckpt, *student_);
        return *student_;
    }

    const emotion::EmotionModel& emotion_model() {
        if (emo_model_) return *emo_model_;
        const auto ckpt = path("emotion_cnn_dft.itnn");
        emo_test_ = emotion_windows(cfg, cfg.emotion_test_windows, 0xE87E57);
        if (opt.reuse_checkpoints && std::filesystem::exists(ckpt)) {
            emo_model_ = emotion::load_emotion_model(ckpt);
            return *emo_model_;
        }
        auto train = emotion_windows(cfg, cfg.emotion_train_windows, 0xE87A00);
        emo_model_ = emotion::train_emotion(train, emotion::ModelKind::cnn1d, true,
                                            mix_seed(cfg.master_seed, 0xE8E8));
        emotion::save_emotion_model(ckpt, *emo_model_);
        return *emo_model_;
    }
};

// --- criterion 1: gradient integrity ---

CriterionResult crit_gradcheck(Context& ctx) {
    CriterionResult r{1, "gradient integrity"};
    const auto& cfg = ctx.cfg;
    Rng rng(mix_seed(cfg.master_seed, 0x6C1));
    double worst = 0.0;
    std::string detail;
    for (const auto& arch : {ref_teacher_arch(cfg), ref_student_arch(cfg)}) {
        auto model = tinynet::build_model(arch, mix_seed(cfg.master_seed, 0x6C2));
        tinynet::Batch batch;
        batch.rows = 4;
        batch.cols = arch.input_len;
        batch.x.resize(batch.rows * batch.cols);
        for (auto& v : batch.x) v = rng.normal(0.0, 1.0);
        std::vector<int> labels(batch.rows);
        for (auto& l : labels) l = static_cast<int>(rng.below(arch.classes));
        const double err = tinynet::grad_check(model, batch, labels, 1e-4, 200,
                                               mix_seed(cfg.master_seed, 0x6C3));
        worst = std::max(worst, err);
        detail += arch.role + " max rel err " + std::to_string(err) + "  ";
    }
    r.pass = worst < 1e-4;
    r.detail = detail + "(threshold 1e-4)";
    return r;
}

// --- criterion 2: FFT oracle equivalence ---

CriterionResult crit_fft(Context& ctx) {
    CriterionResult r{2, "FFT oracle equivalence"};
    Rng rng(mix_seed(ctx.cfg.master_seed, 0xFF7));
    double max_err = 0.0, max_parseval = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t nfft = 8ULL << (trial % 8);  // 8..1024
        const std::size_t len = 1 + rng.below(nfft);
        std::vector<double> x(len);
        for (auto& v : x) v = rng.normal(0.0, 1.0);
        auto fast = emotion::fft(x, nfft);
        auto slow = reference_dft(x, nfft);
        for (std::size_t k = 0; k < nfft; ++k)
            max_err = std::max(max_err, std::abs(fast[k] - slow[k]));
        double time_energy = 0.0, freq_energy = 0.0;
        for (double v : x) time_energy += v * v;
        for (const auto& c : fast) freq_energy += std::norm(c);
        max_parseval =
            std::max(max_parseval, std::abs(time_energy - freq_energy / static_cast<double>(nfft)));
    }
    r.pass = max_err < 1e-9 && max_parseval < 1e-9;
    r.detail = "max abs err " + std::to_string(max_err) + ", parseval err " +
               std::to_string(max_parseval) + " (thresholds 1e-9)";
    return r;
}

// --- criterion 3: pretraining ---

CriterionResult crit_pretrain(Context& ctx) {
    CriterionResult r{3, "healthy pretraining"};
    std::vector<double> vals;
    for (std::size_t s = 0; s < 3; ++s) vals.push_back(ctx.teacher_val(s));
    const double med = median3(vals);
    r.pass = med >= 0.90;
    r.detail = "validation accuracy per seed " + pct(vals[0]) + " " + pct(vals[1]) + " " +
               pct(vals[2]) + ", median " + pct(med) + " (threshold 90%)";
    return r;
}

// --- criterion 4: transfer gap ---

CriterionResult crit_transfer(Context& ctx) {
    CriterionResult r{4, "transfer vs scratch"};
    const auto& cfg = ctx.cfg;
    const std::vector<std::size_t> grid{0, 5, 10, 25};
    std::map<std::size_t, std::vector<double>> curve;
    std::vector<double> scratch_accs;
    for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t reps : grid) {
            tinynet::TrainConfig tc;
            tc.lr = cfg.lr;
            tc.batch_size = cfg.batch_size;
            tc.epochs = cfg.finetune_epochs;
            tc.seed = mix_seed(ctx.train_seed(s), reps);
            tinynet::Model tuned = tokendec::finetune(ctx.teacher(s), ctx.pool(), reps, tc);
            std::vector<std::size_t> all(ctx.test().sample_count());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            curve[reps].push_back(tokendec::accuracy_on(tuned, ctx.test(), all));
        }
        tinynet::TrainConfig sc;
        sc.lr = cfg.lr;
        sc.batch_size = cfg.batch_size;
        sc.epochs = cfg.scratch_epochs;
        sc.seed = mix_seed(ctx.train_seed(s), 0x5C);
        auto scratch = tokendec::train_from_scratch(ref_teacher_arch(cfg), ctx.pool(), sc);
        std::vector<std::size_t> all(ctx.test().sample_count());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        scratch_accs.push_back(tokendec::accuracy_on(scratch, ctx.test(), all));
    }
    std::map<std::size_t, double> med;
    for (std::size_t reps : grid) med[reps] = median3(curve[reps]);
    const double scratch_med = median3(scratch_accs);

    bool monotone = true;
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (med[grid[i]] < med[grid[i - 1]] - 0.02) monotone = false;
    const bool gap_ok = med[25] >= scratch_med + 0.05;
    const bool zero_below = med[0] < med[25];
    r.pass = monotone && gap_ok && zero_below;
    std::string d = "median accuracy:";
    for (std::size_t reps : grid)
        d += " r" + std::to_string(reps) + "=" + pct(med[reps]);
    d += ", scratch@25=" + pct(scratch_med);
    d += gap_ok ? " (gap ok)" : " (gap < 5 points)";
    if (!monotone) d += " (curve not monotone within 2 points)";
    r.detail = d;
    return r;
}

// --- criterion 5: distillation ---

CriterionResult crit_distill(Context& ctx) {
    CriterionResult r{5, "knowledge distillation"};
    std::vector<std::size_t> all(ctx.test().sample_count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const double teacher_acc = tokendec::accuracy_on(ctx.ft25(), ctx.test(), all);
    const double student_acc = tokendec::accuracy_on(ctx.student(), ctx.test(), all);
    const double ratio =
        static_cast<double>(tinynet::count_flops(ref_student_arch(ctx.cfg))) /
        static_cast<double>(tinynet::count_flops(ref_teacher_arch(ctx.cfg)));
    r.pass = student_acc >= teacher_acc - 0.03 && ratio <= 0.30;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "teacher %.1f%%, student %.1f%% (drop %.1f points, allowed 3), FLOPs ratio "
                  "%.3f (allowed 0.30)",
                  100 * teacher_acc, 100 * student_acc, 100 * (teacher_acc - student_acc),
                  ratio);
    r.detail = buf;
    return r;
}

// --- criterion 6: error structure ---

CriterionResult crit_error_structure(Context& ctx) {
    CriterionResult r{6, "blank-boundary error structure"};
    auto report = tokendec::evaluate(ctx.student(), ctx.test());
    r.pass = report.blank_boundary_error_fraction >= 0.50;
    r.detail = "errors involving class 0: " + pct(report.blank_boundary_error_fraction) +
               " of " + std::to_string(report.errors) + " errors (threshold 50%)";
    return r;
}

// --- criterion 7: TSA round trips ---

struct TsaBenchResult {
    double wer_clean = 0.0, ser_clean = 0.0;
    double wer_noisy = 0.0, ser_noisy = 0.0;
};

TsaBenchResult run_tsa_bench(const RefConfig& cfg, const Vocabulary& vocab) {
    const auto table = agents::build_constraint_table(vocab);
    Rng rng(mix_seed(cfg.master_seed, 0x75A));
    std::size_t clean_edits = 0, noisy_edits = 0, ref_words = 0;
    std::size_t clean_wrong = 0, noisy_wrong = 0;

    for (std::size_t s = 0; s < cfg.tsa_sentences; ++s) {
        const std::size_t words = 3 + rng.below(4);
        std::vector<int> ids;
        std::vector<sigcore::IntervalAnnotation> annotations;
        double t = rng.uniform(0.3, 0.6);
        for (std::size_t w = 0; w < words; ++w) {
            const int id = static_cast<int>(1 + rng.below(cfg.vocab_size));
            ids.push_back(id);
            const double dur = vocab.word(id).nominal_duration_s * rng.uniform(0.9, 1.1);
            sigcore::IntervalAnnotation a;
            a.kind = sigcore::IntervalAnnotation::Kind::word;
            a.start_s = t;
            a.end_s = t + dur;
            a.word_id = id;
            annotations.push_back(a);
            t += dur + rng.uniform(0.35, 0.6);
        }
        const std::size_t total_tokens =
            static_cast<std::size_t>(std::ceil(t / sigcore::kTokenSeconds)) + 2;
        std::vector<sigcore::Token> fake(total_tokens);
        for (std::size_t i = 0; i < total_tokens; ++i) fake[i].index = i;
        auto labels = sigcore::label_tokens(fake, annotations, cfg.sample_rate_hz);

        std::vector<std::string> ref_texts;
        for (int id : ids) ref_texts.push_back(vocab.word(id).text);
        ref_words += ref_texts.size();

        auto decode = [&](const std::vector<int>& seq) {
            auto runs = agents::merge_tokens(seq, table);
            return agents::synthesize_sentence(runs, vocab);
        };
        auto clean = decode(labels);
        clean_edits += static_cast<std::size_t>(
            std::llround(agents::wer(ref_texts, clean.words) * ref_texts.size()));
        if (clean.words != ref_texts) ++clean_wrong;

        // flip word-boundary tokens <-> blank at the corruption rate
        std::vector<int> corrupted = labels;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const int cur = labels[i];
            const int prev = i > 0 ? labels[i - 1] : 0;
            const int next = i + 1 < labels.size() ? labels[i + 1] : 0;
            const bool word_edge = cur != 0 && (prev != cur || next != cur);
            const bool blank_neighbor = cur == 0 && (prev != 0 || next != 0);
            if (!word_edge && !blank_neighbor) continue;
            if (rng.uniform01() >= cfg.tsa_corruption) continue;
            corrupted[i] = word_edge ? 0 : (prev != 0 ? prev : next);
        }
        auto noisy = decode(corrupted);
        noisy_edits += static_cast<std::size_t>(
            std::llround(agents::wer(ref_texts, noisy.words) * ref_texts.size()));
        if (noisy.words != ref_texts) ++noisy_wrong;
    }

    TsaBenchResult out;
    out.wer_clean = static_cast<double>(clean_edits) / static_cast<double>(ref_words);
    out.ser_clean = static_cast<double>(clean_wrong) / static_cast<double>(cfg.tsa_sentences);
    out.wer_noisy = static_cast<double>(noisy_edits) / static_cast<double>(ref_words);
    out.ser_noisy = static_cast<double>(noisy_wrong) / static_cast<double>(cfg.tsa_sentences);
    return out;
}

CriterionResult crit_tsa(Context& ctx) {
    CriterionResult r{7, "TSA correction"};
    auto result = run_tsa_bench(ctx.cfg, ctx.vocab());
    r.pass = result.wer_clean == 0.0 && result.ser_clean == 0.0 && result.wer_noisy <= 0.05 &&
             result.ser_noisy <= 0.04;
    r.detail = "noiseless WER " + pct(result.wer_clean) + " SER " + pct(result.ser_clean) +
               "; corrupted WER " + pct(result.wer_noisy) + " SER " + pct(result.ser_noisy) +
               " (thresholds 0/0, 5%/4%)";
    return r;
}

// --- criterion 8: emotion decoding ---

CriterionResult crit_emotion(Context& ctx) {
    CriterionResult r{8, "emotion decoding"};
    const auto& cfg = ctx.cfg;
    std::vector<double> cnn_dft, cnn_raw, mlp_dft, mlp_raw;
    for (std::size_t s = 0; s < 3; ++s) {
        auto train = emotion_windows(cfg, cfg.emotion_train_windows,
                                     mix_seed(0xE87A00, s));
        auto test = emotion_windows(cfg, cfg.emotion_test_windows,
                                    mix_seed(0xE87E57, s));
        const std::uint64_t seed = mix_seed(cfg.master_seed, 0xE8E8 + s);
        auto acc = [&](emotion::ModelKind kind, bool dft) {
            auto model = emotion::train_emotion(train, kind, dft, seed);
            return emotion::eval_emotion(model, test).accuracy;
        };
        cnn_dft.push_back(acc(emotion::ModelKind::cnn1d, true));
        cnn_raw.push_back(acc(emotion::ModelKind::cnn1d, false));
        mlp_dft.push_back(acc(emotion::ModelKind::mlp, true));
        mlp_raw.push_back(acc(emotion::ModelKind::mlp, false));
    }
    const double cd = median3(cnn_dft), cr = median3(cnn_raw);
    const double md = median3(mlp_dft), mr = median3(mlp_raw);
    r.pass = cd >= 0.80 && cd >= cr && md >= mr;
    r.detail = "cnn+dft " + pct(cd) + " (threshold 80%), cnn raw " + pct(cr) + ", mlp+dft " +
               pct(md) + ", mlp raw " + pct(mr) + " (with-DFT ordering required)";
    return r;
}

// --- criterion 9: crosstalk ---

CriterionResult crit_crosstalk(Context& ctx) {
    CriterionResult r{9, "crosstalk isolation"};
    const auto& cfg = ctx.cfg;
    auto train = crosstalk_windows(cfg, 0.01, 8, 0xC7A11);
    auto model = emotion::train_emotion(train, emotion::ModelKind::cnn1d, true,
                                        mix_seed(cfg.master_seed, 0xC7E8));
    std::map<std::string, double> acc;
    for (double kappa : {0.0, 0.01, 0.25}) {
        auto test = crosstalk_windows(cfg, kappa, 4, 0xC7E57);
        acc[std::to_string(kappa)] = emotion::eval_emotion(model, test).accuracy;
    }
    const double a0 = acc[std::to_string(0.0)];
    const double a01 = acc[std::to_string(0.01)];
    const double a25 = acc[std::to_string(0.25)];
    r.pass = std::abs(a01 - a0) <= 0.02 && a01 > a25;
    r.detail = "accuracy kappa=0: " + pct(a0) + ", kappa=0.01: " + pct(a01) +
               ", kappa=0.25: " + pct(a25) + " (0.01 within 2 points of 0, above 0.25)";
    return r;
}

// --- criterion 10: saliency ---

CriterionResult crit_saliency(Context& ctx) {
    CriterionResult r{10, "saliency structure"};
    const auto& cfg = ctx.cfg;
    const auto& model = ctx.student();
    const auto& test = ctx.test();
    const std::size_t tl = cfg.token_len();
    const std::size_t count = std::min<std::size_t>(200, test.sample_count());
    double context_mass = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        sigcore::TokenSample sample;
        sample.tokens.resize(cfg.n);
        const float* row = test.sample(i);
        for (std::size_t p = 0; p < cfg.n; ++p) {
            sample.tokens[p].values.assign(row + p * tl, row + (p + 1) * tl);
            sample.tokens[p].index = p;
        }
        sample.label = static_cast<int>(test.labels[i]);
        auto weights = tokendec::saliency(model, sample);
        for (std::size_t p = 0; p + 1 < cfg.n; ++p) context_mass += weights[p];
    }
    context_mass /= static_cast<double>(count);

    const auto& emo = ctx.emotion_model();
    double low_mass = 0.0;
    for (const auto& w : ctx.emo_test_) {
        auto weights = emotion::freq_saliency(emo, w);
        const double bin_hz =
            static_cast<double>(emotion::kWorkingRateHz) / emotion::kFftLen;
        for (std::size_t k = 0; k < weights.size(); ++k)
            if (static_cast<double>(k) * bin_hz <= 2.0) low_mass += weights[k];
    }
    low_mass /= static_cast<double>(ctx.emo_test_.size());

    r.pass = context_mass > 0.05 && low_mass >= 0.40;
    r.detail = "token context mass " + pct(context_mass) + " (threshold 5%), emotion 0-2 Hz mass " +
               pct(low_mass) + " (threshold 40%)";
    return r;
}

// --- criterion 11: runtime determinism and latency ---

CriterionResult crit_runtime(Context& ctx) {
    CriterionResult r{11, "replay determinism and latency"};
    const auto& cfg = ctx.cfg;
    const auto& vocab = ctx.vocab();
    ctx.student();
    ctx.emotion_model();

    const auto vocab_path = ctx.path("vocab.json");
    synthdata::write_vocab(vocab_path, vocab);

    // three 4-word sentences, a double nod toggling expanded mode, emotion spans
    Rng rng(mix_seed(cfg.master_seed, 0xB11));
    std::vector<std::vector<int>> sentences;
    std::vector<int> word_order;
    for (std::size_t w = 1; w <= 12; ++w) word_order.push_back(static_cast<int>(w));
    rng.shuffle(word_order);
    for (std::size_t s = 0; s < 3; ++s)
        sentences.push_back({word_order[s * 4], word_order[s * 4 + 1], word_order[s * 4 + 2],
                             word_order[s * 4 + 3]});

    Script script;
    script.push_back(synthdata::SetEmotion{Emotion::neutral});
    script.push_back(synthdata::Pause{1.5});
    auto add_sentence = [&](const std::vector<int>& ids) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            script.push_back(synthdata::SayWord{ids[i]});
            script.push_back(synthdata::Pause{i + 1 < ids.size() ? 0.45 : 2.2});
        }
    };
    add_sentence(sentences[0]);
    script.push_back(synthdata::NodPair{});
    script.push_back(synthdata::Pause{1.5});
    script.push_back(synthdata::SetEmotion{Emotion::frustrated});
    add_sentence(sentences[1]);
    script.push_back(synthdata::SetEmotion{Emotion::relieved});
    add_sentence(sentences[2]);

    SessionConfig scfg;
    scfg.sample_rate_hz = cfg.sample_rate_hz;
    scfg.noise_snr_db = std::nullopt;  // noiseless replay fixture
    scfg.kappa = cfg.kappa;
    auto profile = synthdata::patient_profile(mix_seed(cfg.master_seed, 200));
    auto stream = synthdata::synth_session(script, vocab, profile, scfg,
                                           mix_seed(cfg.master_seed, 0xB22));
    const auto stream_path = ctx.path("replay_session.itss");
    sigcore::write_stream(stream_path, stream);

    runtime::PipelineConfig pcfg;
    pcfg.token_checkpoint = ctx.path("student.itnn");
    pcfg.emotion_checkpoint = ctx.path("emotion_cnn_dft.itnn");
    pcfg.vocab_path = vocab_path;
    pcfg.n = cfg.n;
    pcfg.context.location = "the clinic";
    auto pipeline = runtime::load_pipeline(pcfg);

    std::vector<std::string> transcripts;
    std::vector<runtime::LatencyStats> stats;
    for (int run = 0; run < 3; ++run) {
#ifdef _OPENMP
        omp_set_num_threads(run == 1 ? 1 : 2);
#endif
        auto events = runtime::run_pipeline_file(pipeline, stream_path);
        transcripts.push_back(runtime::transcript_to_jsonl(events));
        stats.push_back(runtime::measure_latency(events, pcfg));
    }
#ifdef _OPENMP
    omp_set_num_threads(2);
#endif
    const bool identical =
        transcripts[0] == transcripts[1] && transcripts[1] == transcripts[2];

    double p95 = 0.0;
    for (const auto& s : stats) p95 = std::max(p95, s.p95);

    // decoded sentences should match the script on this noiseless fixture
    std::vector<std::string> refs, hyps;
    for (const auto& ids : sentences) {
        std::string text;
        for (std::size_t i = 0; i < ids.size(); ++i)
            text += (i ? " " : "") + vocab.word(ids[i]).text;
        refs.push_back(text);
    }
    std::istringstream lines(transcripts[0]);
    std::string line;
    std::size_t expanded_count = 0;
    while (std::getline(lines, line)) {
        auto j = nlohmann::json::parse(line);
        if (j["kind"] == "sentence") hyps.push_back(j["payload"].get<std::string>());
        if (j["kind"] == "expanded_sentence") ++expanded_count;
    }
    const bool decoded_ok = hyps == refs;
    const bool expanded_ok = expanded_count == 2;  // sentences after the nod

    r.pass = identical && p95 < 0.25 && decoded_ok && expanded_ok;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "replays %s, compute latency p95 %.3f s (threshold 0.25), sentences %zu/3 "
                  "decoded %s, expanded events %zu/2",
                  identical ? "byte-identical" : "DIFFER", p95, hyps.size(),
                  decoded_ok ? "exactly" : "with errors", expanded_count);
    r.detail = buf;
    return r;
}

// --- criterion 12: metric oracles and round trips ---

// independent full-matrix edit distance (the product code uses rolling rows)
std::size_t oracle_edit_distance(const std::vector<std::string>& a,
                                 const std::vector<std::string>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1, 0));
    for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            d[i][j] = std::min({sub, d[i - 1][j] + 1, d[i][j - 1] + 1});
        }
    return d[n][m];
}

CriterionResult crit_oracles(Context& ctx) {
    CriterionResult r{12, "metric oracles and round trips"};
    Rng rng(mix_seed(ctx.cfg.master_seed, 0x0C1E));
    bool wer_ok = true;
    for (int trial = 0; trial < 1000 && wer_ok; ++trial) {
        std::vector<std::string> ref, hyp;
        const std::size_t n = 1 + rng.below(12);
        const std::size_t m = rng.below(13);
        for (std::size_t i = 0; i < n; ++i) ref.push_back("w" + std::to_string(rng.below(30)));
        for (std::size_t j = 0; j < m; ++j) hyp.push_back("w" + std::to_string(rng.below(30)));
        const double expect =
            static_cast<double>(oracle_edit_distance(ref, hyp)) / static_cast<double>(n);
        if (std::abs(agents::wer(ref, hyp) - expect) > 1e-12) wer_ok = false;
    }

    // round trips with CRC validation
    bool roundtrip_ok = true;
    const auto tmp = ctx.path("roundtrip.itds");
    RefConfig small = ctx.cfg;
    small.vocab_size = 4;
    small.healthy_speakers = 1;
    small.healthy_sentences_per_speaker = 2;
    auto ds = healthy_dataset(small);
    synthdata::write_dataset(tmp, ds);
    auto loaded = synthdata::read_dataset(tmp);
    roundtrip_ok &= loaded.labels == ds.labels && loaded.values == ds.values &&
                    loaded.n == ds.n && loaded.token_len == ds.token_len;
    const auto tmp2 = ctx.path("roundtrip2.itds");
    synthdata::write_dataset(tmp2, loaded);
    roundtrip_ok &= read_file(tmp) == read_file(tmp2);
    {
        auto bytes = read_file(tmp);
        bytes[bytes.size() / 2] ^= 0xFF;
        write_file(tmp2, bytes);
        bool threw = false;
        try {
            synthdata::read_dataset(tmp2);
        } catch (const Error& e) {
            threw = e.code() == Errc::corrupt_file;
        }
        roundtrip_ok &= threw;
        std::filesystem::remove(ctx.path("roundtrip2.itds.groups"));
    }

    auto arch = ref_student_arch(small);
    arch.input_len = ds.sample_len();
    arch.classes = small.classes();
    auto model = tinynet::build_model(arch, 7);
    const auto ck = ctx.path("roundtrip.itnn");
    tinynet::save_checkpoint(ck, model);
    auto m1 = tinynet::load_checkpoint(ck);
    const auto ck2 = ctx.path("roundtrip2.itnn");
    tinynet::save_checkpoint(ck2, m1);
    roundtrip_ok &= read_file(ck) == read_file(ck2);
    {
        auto bytes = read_file(ck);
        bytes[bytes.size() / 2] ^= 0x01;
        write_file(ck2, bytes);
        bool threw = false;
        try {
            tinynet::load_checkpoint(ck2);
        } catch (const Error& e) {
            threw = e.code() == Errc::corrupt_file;
        }
        roundtrip_ok &= threw;
    }

    r.pass = wer_ok && roundtrip_ok;
    r.detail = std::string("wer vs DP oracle: ") + (wer_ok ? "exact on 1000 pairs" : "MISMATCH") +
               "; round trips " + (roundtrip_ok ? "bit-exact with CRC checks" : "FAILED");
    return r;
}

}  // namespace

std::vector<CriterionResult> run_criteria(const RefConfig& cfg, const BenchOptions& options) {
    std::filesystem::create_directories(options.workdir);
    Context ctx{cfg, options};

    struct Entry {
        int id;
        CriterionResult (*fn)(Context&);
        double budget_s;  // spec runtime budget; 0 = none
    };
    const Entry entries[] = {
        {1, crit_gradcheck, 120.0}, {2, crit_fft, 10.0},      {3, crit_pretrain, 1800.0},
        {4, crit_transfer, 0.0},    {5, crit_distill, 0.0},   {6, crit_error_structure, 0.0},
        {7, crit_tsa, 0.0},         {8, crit_emotion, 0.0},   {9, crit_crosstalk, 0.0},
        {10, crit_saliency, 0.0},   {11, crit_runtime, 0.0},  {12, crit_oracles, 0.0},
    };

    std::vector<CriterionResult> results;
    for (const auto& entry : entries) {
        if (!options.only.empty() &&
            std::find(options.only.begin(), options.only.end(), entry.id) == options.only.end())
            continue;
        const auto t0 = std::chrono::steady_clock::now();
        CriterionResult result = entry.fn(ctx);
        result.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (entry.budget_s > 0.0 && result.seconds > entry.budget_s) {
            result.pass = false;
            result.detail += " [runtime " + std::to_string(result.seconds) + " s over budget " +
                             std::to_string(entry.budget_s) + " s]";
        }
        std::printf("[%s] criterion %2d (%s): %s  [%.1f s]\n", result.pass ? "PASS" : "FAIL",
                    result.id, result.name.c_str(), result.detail.c_str(), result.seconds);
        std::fflush(stdout);
        results.push_back(std::move(result));
    }
    return results;
}

bool all_passed(const std::vector<CriterionResult>& results) {
    for (const auto& r : results)
        if (!r.pass) return false;
    return !results.empty();
}

}  // namespace ithroat::bench
