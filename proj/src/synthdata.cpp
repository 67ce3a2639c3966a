#include "ithroat/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

namespace ithroat::synthdata {

using sigcore::ChannelId;
using sigcore::IntervalAnnotation;

const Word& Vocabulary::word(int word_id) const {
    require(contains(word_id), Errc::not_in_vocabulary,
            "word id " + std::to_string(word_id) + " not in vocabulary");
    return words[static_cast<std::size_t>(word_id - 1)];
}

std::optional<int> Vocabulary::id_of(const std::string& text) const {
    for (const auto& w : words)
        if (w.text == text) return w.id;
    return std::nullopt;
}

SpeakerProfile healthy_profile(std::uint64_t seed) {
    return SpeakerProfile{Domain::healthy, 1.0, 1.0, 0.0, seed};
}

SpeakerProfile patient_profile(std::uint64_t seed) {
    return SpeakerProfile{Domain::patient, 0.6, 2.0, 0.08, seed};
}

EmotionProfile emotion_profile(Emotion label) {
    EmotionProfile p;
    p.label = label;
    switch (label) {
        case Emotion::neutral:
            p.f0_mean_hz = 1.15;
            p.f0_std_hz = 0.03;
            p.harmonic_ratios[0] = 1.0;
            p.harmonic_ratios[1] = 0.45;
            p.harmonic_ratios[2] = 0.20;
            break;
        case Emotion::relieved:
            p.f0_mean_hz = 0.95;
            p.f0_std_hz = 0.02;
            p.harmonic_ratios[0] = 1.0;
            p.harmonic_ratios[1] = 0.35;
            p.harmonic_ratios[2] = 0.15;
            break;
        case Emotion::frustrated:
            p.f0_mean_hz = 1.45;
            p.f0_std_hz = 0.08;
            p.harmonic_ratios[0] = 1.0;
            p.harmonic_ratios[1] = 0.60;
            p.harmonic_ratios[2] = 0.30;
            break;
    }
    return p;
}

// ---------------------------------------------------------------------------

static std::string make_word_text(Rng& rng, std::size_t syllables) {
    static const char* consonants = "bdfghklmnprstvz";
    static const char* vowels = "aeiou";
    std::string text;
    for (std::size_t i = 0; i < syllables; ++i) {
        text += consonants[rng.below(15)];
        text += vowels[rng.below(5)];
    }
    return text;
}

Vocabulary make_vocab(std::uint64_t seed, std::size_t v) {
    require(v >= 2, Errc::invalid_argument, "vocabulary needs at least 2 words");
    Vocabulary vocab;
    std::set<std::string> used;
    Rng rng(mix_seed(seed, 0x564F4341));
    for (std::size_t i = 0; i < v; ++i) {
        Word w;
        w.id = static_cast<int>(i + 1);
        w.text = make_word_text(rng, 2 + rng.below(2));
        while (used.count(w.text)) w.text += make_word_text(rng, 1);
        used.insert(w.text);

        // 3-5 units with per-unit durations chosen so the word lands in [0.4, 1.0] s
        const std::size_t units = 3 + rng.below(3);
        const double lo = std::max(0.08, 0.4 / static_cast<double>(units));
        double total = 0.0;
        for (std::size_t u = 0; u < units; ++u) {
            ArticulationUnit unit;
            unit.center_freq_hz = rng.uniform(4.0, 40.0);
            unit.amplitude = rng.uniform(0.35, 1.0);
            unit.duration_s = rng.uniform(lo, 0.20);
            unit.phase_rad = rng.uniform(0.0, 2.0 * M_PI);
            total += unit.duration_s;
            w.units.push_back(unit);
        }
        w.nominal_duration_s = total;
        vocab.words.push_back(std::move(w));
    }
    return vocab;
}

void write_vocab(const std::filesystem::path& path, const Vocabulary& vocab) {
    nlohmann::json j;
    j["words"] = nlohmann::json::array();
    for (const auto& w : vocab.words) {
        nlohmann::json jw;
        jw["id"] = w.id;
        jw["text"] = w.text;
        jw["nominal_duration_s"] = w.nominal_duration_s;
        jw["units"] = nlohmann::json::array();
        for (const auto& u : w.units)
            jw["units"].push_back({{"freq_hz", u.center_freq_hz},
                                   {"amplitude", u.amplitude},
                                   {"duration_s", u.duration_s},
                                   {"phase_rad", u.phase_rad}});
        j["words"].push_back(std::move(jw));
    }
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::io_error, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

Vocabulary read_vocab(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), Errc::io_error, "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::format_error, std::string("vocab json: ") + e.what());
    }
    Vocabulary vocab;
    for (const auto& jw : j.at("words")) {
        Word w;
        w.id = jw.at("id").get<int>();
        w.text = jw.at("text").get<std::string>();
        w.nominal_duration_s = jw.at("nominal_duration_s").get<double>();
        for (const auto& ju : jw.at("units")) {
            ArticulationUnit u;
            u.center_freq_hz = ju.at("freq_hz").get<double>();
            u.amplitude = ju.at("amplitude").get<double>();
            u.duration_s = ju.at("duration_s").get<double>();
            u.phase_rad = ju.at("phase_rad").get<double>();
            w.units.push_back(u);
        }
        vocab.words.push_back(std::move(w));
    }
    require(!vocab.words.empty(), Errc::format_error, "vocab has no words");
    for (std::size_t i = 0; i < vocab.words.size(); ++i)
        require(vocab.words[i].id == static_cast<int>(i + 1), Errc::format_error,
                "word ids must be contiguous from 1");
    return vocab;
}

// ---------------------------------------------------------------------------

Utterance synth_utterance(int word_id, const Vocabulary& vocab, const SpeakerProfile& profile,
                          std::uint32_t sample_rate_hz, std::uint64_t seed) {
    const Word& word = vocab.word(word_id);
    Rng rng(mix_seed(seed, profile.seed));

    const double amp_z = rng.normal(0.0, 1.0);
    const double amp_mult = std::clamp(1.0 + 0.1 * profile.jitter_scale * amp_z, 0.4, 1.6);
    const double warp = rng.uniform(0.9, 1.1);
    // drawn for every domain so healthy/patient share the jitter stream
    const double tremor_freq = rng.uniform(4.0, 6.0);
    const double tremor_phase = rng.uniform(0.0, 2.0 * M_PI);

    Utterance u;
    u.duration_s = word.nominal_duration_s * warp;
    const std::size_t n = static_cast<std::size_t>(std::llround(u.duration_s * sample_rate_hz));
    u.samples.assign(n, 0.0);

    double offset = 0.0;
    for (const auto& unit : word.units) {
        const double dur = unit.duration_s * warp;
        const double center = offset + dur / 2.0;
        const double sigma = dur / 4.0;
        const double amp = unit.amplitude * amp_mult;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / sample_rate_hz;
            const double dt = t - center;
            u.samples[i] += amp * std::exp(-dt * dt / (2.0 * sigma * sigma)) *
                            std::sin(2.0 * M_PI * unit.center_freq_hz * t + unit.phase_rad);
        }
        offset += dur;
    }
    for (auto& s : u.samples) s *= profile.amplitude_scale;
    if (profile.domain == Domain::patient && profile.tremor_amp > 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / sample_rate_hz;
            u.samples[i] +=
                profile.tremor_amp * std::sin(2.0 * M_PI * tremor_freq * t + tremor_phase);
        }
    }
    return u;
}

// Quasi-periodic pulse: per-beat fundamental, three harmonics, optional 0.25 Hz
// respiratory AM and white noise.
static std::vector<double> pulse_core(const EmotionProfile& profile, std::size_t n,
                                      std::uint32_t sample_rate_hz, Rng& rng,
                                      const PulseOptions& options) {
    std::vector<double> out(n, 0.0);
    if (n == 0) return out;
    double phase = rng.uniform01();  // beat phase in cycles
    double next_beat = std::floor(phase) + 1.0;
    const double am_phase = rng.uniform(0.0, 2.0 * M_PI);
    double f0 = std::clamp(rng.normal(profile.f0_mean_hz, profile.f0_std_hz), 0.5, 2.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate_hz;
        double v = 0.0;
        for (int h = 0; h < 3; ++h)
            v += profile.harmonic_ratios[h] * std::sin(2.0 * M_PI * (h + 1) * phase);
        if (options.respiratory_am)
            v *= 1.0 + 0.1 * std::sin(2.0 * M_PI * 0.25 * t + am_phase);
        out[i] = v;
        phase += f0 / sample_rate_hz;
        if (phase >= next_beat) {
            next_beat += 1.0;
            f0 = std::clamp(rng.normal(profile.f0_mean_hz, profile.f0_std_hz), 0.5, 2.0);
        }
    }
    if (options.snr_db) {
        require(std::isfinite(*options.snr_db), Errc::invalid_argument, "SNR must be finite");
        double power = 0.0;
        for (double v : out) power += v * v;
        power /= static_cast<double>(n);
        const double noise_std = std::sqrt(power / std::pow(10.0, *options.snr_db / 10.0));
        for (auto& v : out) v += rng.normal(0.0, noise_std);
    }
    return out;
}

std::vector<double> synth_pulse(const EmotionProfile& profile, double duration_s,
                                std::uint32_t sample_rate_hz, std::uint64_t seed,
                                const PulseOptions& options) {
    require(duration_s >= sigcore::kPulseWindowSeconds, Errc::too_short,
            "pulse synthesis needs >= 5 s");
    Rng rng(mix_seed(seed, 0x50554C53));
    const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
    return pulse_core(profile, n, sample_rate_hz, rng, options);
}

std::vector<double> inject_crosstalk(const std::vector<double>& pulse,
                                     const std::vector<double>& speech, double kappa) {
    require(pulse.size() == speech.size(), Errc::shape_error,
            "pulse/speech length mismatch: " + std::to_string(pulse.size()) + " vs " +
                std::to_string(speech.size()));
    std::vector<double> out(pulse.size());
    for (std::size_t i = 0; i < pulse.size(); ++i) out[i] = pulse[i] + kappa * speech[i];
    return out;
}

// ---------------------------------------------------------------------------

SignalStream synth_session(const Script& script, const Vocabulary& vocab,
                           const SpeakerProfile& profile, const SessionConfig& config,
                           std::uint64_t seed) {
    require(!script.empty(), Errc::invalid_argument, "script must be non-empty");
    if (config.noise_snr_db)
        require(std::isfinite(*config.noise_snr_db), Errc::invalid_argument,
                "SNR must be finite; use the noiseless option instead of infinity");
    const std::uint32_t rate = config.sample_rate_hz;
    require(rate > 0, Errc::invalid_argument, "sample rate must be positive");

    SignalStream stream;
    stream.sample_rate_hz = rate;
    std::vector<double> speech;
    struct EmotionEdge {
        std::size_t sample;
        Emotion label;
    };
    std::vector<EmotionEdge> edges{{0, Emotion::neutral}};

    const double nod_amp = 3.0 * profile.amplitude_scale;
    std::uint64_t item_index = 0;
    for (const auto& item : script) {
        const std::uint64_t item_seed = mix_seed(seed, item_index++);
        if (const auto* say = std::get_if<SayWord>(&item)) {
            Utterance u = synth_utterance(say->word_id, vocab, profile, rate, item_seed);
            IntervalAnnotation a;
            a.kind = IntervalAnnotation::Kind::word;
            a.start_s = static_cast<double>(speech.size()) / rate;
            a.end_s = a.start_s + u.duration_s;
            a.word_id = say->word_id;
            stream.annotations.push_back(a);
            speech.insert(speech.end(), u.samples.begin(), u.samples.end());
        } else if (const auto* pause = std::get_if<Pause>(&item)) {
            require(pause->seconds >= 0.0, Errc::invalid_argument, "negative pause");
            speech.insert(speech.end(),
                          static_cast<std::size_t>(std::llround(pause->seconds * rate)), 0.0);
        } else if (std::get_if<NodPair>(&item)) {
            IntervalAnnotation a;
            a.kind = IntervalAnnotation::Kind::nod;
            a.start_s = static_cast<double>(speech.size()) / rate;
            a.end_s = a.start_s + 1.0;
            stream.annotations.push_back(a);
            const std::size_t bump = static_cast<std::size_t>(std::llround(0.3 * rate));
            const std::size_t gap = static_cast<std::size_t>(std::llround(0.4 * rate));
            for (int b = 0; b < 2; ++b) {
                for (std::size_t i = 0; i < bump; ++i)
                    speech.push_back(nod_amp *
                                     std::sin(M_PI * static_cast<double>(i) / bump));
                if (b == 0) speech.insert(speech.end(), gap, 0.0);
            }
        } else if (const auto* emo = std::get_if<SetEmotion>(&item)) {
            edges.push_back({speech.size(), emo->label});
        }
    }
    require(!speech.empty(), Errc::invalid_argument, "script produced no samples");

    Rng session_rng(mix_seed(seed, 0x53455353));
    if (config.noise_snr_db) {
        double power = 0.0;
        for (double v : speech) power += v * v;
        power /= static_cast<double>(speech.size());
        if (power > 0.0) {
            const double noise_std =
                std::sqrt(power / std::pow(10.0, *config.noise_snr_db / 10.0));
            for (auto& v : speech) v += session_rng.normal(0.0, noise_std);
        }
    }

    stream.channels.push_back(ChannelId::speech);
    stream.samples.push_back(std::move(speech));

    if (config.pulse_channel) {
        const std::size_t total = stream.samples[0].size();
        std::vector<double> pulse;
        pulse.reserve(total);
        PulseOptions popt;
        popt.snr_db = config.noise_snr_db ? std::optional<double>(25.0) : std::nullopt;
        for (std::size_t e = 0; e < edges.size(); ++e) {
            const std::size_t begin = edges[e].sample;
            const std::size_t end = (e + 1 < edges.size()) ? edges[e + 1].sample : total;
            if (end <= begin) continue;
            Rng span_rng(mix_seed(seed, 0x454D4F00 + e));
            auto span =
                pulse_core(emotion_profile(edges[e].label), end - begin, rate, span_rng, popt);
            pulse.insert(pulse.end(), span.begin(), span.end());
            IntervalAnnotation a;
            a.kind = IntervalAnnotation::Kind::emotion;
            a.start_s = static_cast<double>(begin) / rate;
            a.end_s = static_cast<double>(end) / rate;
            a.emotion = edges[e].label;
            stream.annotations.push_back(a);
        }
        pulse = inject_crosstalk(pulse, stream.samples[0], config.kappa);
        stream.channels.push_back(ChannelId::pulse);
        stream.samples.push_back(std::move(pulse));
    }
    stream.validate();
    return stream;
}

// ---------------------------------------------------------------------------

void append_session(TokenDataset& ds, const SignalStream& session, std::uint32_t group_id) {
    auto tokens = sigcore::tokenize(session, ChannelId::speech);
    sigcore::apply_labels(tokens, session.annotations, session.sample_rate_hz);
    const std::size_t tl = sigcore::token_len_samples(session.sample_rate_hz);
    require(ds.token_len == tl, Errc::shape_error, "session token length mismatch");
    auto samples = sigcore::assemble_samples(tokens, ds.n);
    for (const auto& s : samples) {
        require(s.label >= 0, Errc::invalid_label, "negative label");
        if (ds.class_count > 0)
            require(s.label < ds.class_count, Errc::invalid_label,
                    "label " + std::to_string(s.label) + " outside class count");
        ds.labels.push_back(static_cast<std::uint16_t>(s.label));
        ds.group_ids.push_back(group_id);
        for (const auto& t : s.tokens)
            for (double v : t.values) ds.values.push_back(static_cast<float>(v));
    }
}

TokenDataset build_token_dataset(const std::vector<SignalStream>& sessions, std::size_t n,
                                 std::size_t class_count) {
    require(n >= 1, Errc::invalid_argument, "n must be >= 1");
    require(!sessions.empty(), Errc::empty_input, "no sessions");
    TokenDataset ds;
    ds.n = static_cast<std::uint16_t>(n);
    ds.token_len =
        static_cast<std::uint32_t>(sigcore::token_len_samples(sessions.front().sample_rate_hz));
    ds.class_count = static_cast<std::uint16_t>(class_count);
    for (std::size_t i = 0; i < sessions.size(); ++i)
        append_session(ds, sessions[i], static_cast<std::uint32_t>(i));
    if (class_count == 0) {
        std::uint16_t max_label = 1;
        for (auto l : ds.labels) max_label = std::max(max_label, l);
        ds.class_count = static_cast<std::uint16_t>(max_label + 1);
    }
    std::uint64_t h = 0x49544453;
    h = mix_seed(h, ds.n);
    h = mix_seed(h, ds.token_len);
    h = mix_seed(h, ds.class_count);
    h = mix_seed(h, ds.sample_count());
    ds.provenance_hash = h;
    return ds;
}

static std::filesystem::path groups_sidecar(const std::filesystem::path& path) {
    auto p = path;
    p += ".groups";
    return p;
}

void write_dataset(const std::filesystem::path& path, const TokenDataset& ds) {
    require(ds.values.size() == ds.sample_count() * ds.sample_len(), Errc::shape_error,
            "dataset value buffer inconsistent with sample count");
    ByteWriter w;
    w.str("ITDS");
    w.u16(1);
    w.u16(ds.n);
    w.u32(ds.token_len);
    w.u16(ds.class_count);
    w.u64(ds.sample_count());
    for (std::size_t i = 0; i < ds.sample_count(); ++i) {
        w.u16(ds.labels[i]);
        const float* row = ds.sample(i);
        for (std::size_t k = 0; k < ds.sample_len(); ++k) w.f32(row[k]);
    }
    w.u32(crc32(w.buffer().data(), w.size()));
    write_file(path, w.buffer());

    // utterance group metadata rides in a sidecar so the .itds layout stays fixed
    if (ds.group_ids.size() == ds.sample_count() && !ds.group_ids.empty()) {
        ByteWriter g;
        g.str("ITGR");
        g.u64(ds.group_ids.size());
        for (auto id : ds.group_ids) g.u32(id);
        g.u32(crc32(g.buffer().data(), g.size()));
        write_file(groups_sidecar(path), g.buffer());
    }
}

TokenDataset read_dataset(const std::filesystem::path& path) {
    ByteReader r(read_file(path));
    require(r.remaining() >= 4, Errc::format_error, "file too short for magic");
    require(r.str(4) == "ITDS", Errc::format_error, "bad magic, expected ITDS");
    require(r.u16() == 1, Errc::format_error, "unsupported ITDS version");
    TokenDataset ds;
    ds.n = r.u16();
    ds.token_len = r.u32();
    ds.class_count = r.u16();
    const std::uint64_t count = r.u64();
    const std::size_t row = static_cast<std::size_t>(ds.n) * ds.token_len;
    require(r.remaining() == count * (2 + row * 4) + 4, Errc::corrupt_file,
            "payload size mismatch");
    ds.labels.reserve(count);
    ds.values.reserve(count * row);
    for (std::uint64_t i = 0; i < count; ++i) {
        ds.labels.push_back(r.u16());
        for (std::size_t k = 0; k < row; ++k) ds.values.push_back(r.f32());
    }
    const std::uint32_t stored = r.u32();
    const std::uint32_t computed = crc32(r.buffer().data(), r.buffer().size() - 4);
    require(stored == computed, Errc::corrupt_file, "CRC mismatch");

    const auto sidecar = groups_sidecar(path);
    if (std::filesystem::exists(sidecar)) {
        ByteReader g(read_file(sidecar));
        require(g.str(4) == "ITGR", Errc::format_error, "bad group sidecar magic");
        const std::uint64_t n = g.u64();
        if (n == count) {
            ds.group_ids.reserve(n);
            for (std::uint64_t i = 0; i < n; ++i) ds.group_ids.push_back(g.u32());
            const std::uint32_t gstored = g.u32();
            require(gstored == crc32(g.buffer().data(), g.buffer().size() - 4),
                    Errc::corrupt_file, "group sidecar CRC mismatch");
        }
    }
    return ds;
}

}  // namespace ithroat::synthdata
