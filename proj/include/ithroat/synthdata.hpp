#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ithroat/sigcore.hpp"

namespace ithroat::synthdata {

using sigcore::Emotion;
using sigcore::SignalStream;

// One Gabor atom of a word template. Frequencies live in the 4-40 Hz
// silent-speech band; durations within [0.08, 0.20] s.
struct ArticulationUnit {
    double center_freq_hz = 0.0;
    double amplitude = 0.0;  // (0, 1]
    double duration_s = 0.0;
    double phase_rad = 0.0;
};

struct Word {
    int id = 0;  // 1..V; 0 is reserved for blank
    std::string text;
    std::vector<ArticulationUnit> units;
    double nominal_duration_s = 0.0;
};

struct Vocabulary {
    std::vector<Word> words;  // ordered by id, contiguous from 1

    std::size_t size() const { return words.size(); }
    bool contains(int word_id) const {
        return word_id >= 1 && word_id <= static_cast<int>(words.size());
    }
    const Word& word(int word_id) const;  // not-in-vocabulary
    std::optional<int> id_of(const std::string& text) const;
};

enum class Domain : std::uint8_t { healthy = 0, patient = 1 };

struct SpeakerProfile {
    Domain domain = Domain::healthy;
    double amplitude_scale = 1.0;
    double jitter_scale = 1.0;
    double tremor_amp = 0.0;  // patient domain adds a 4-6 Hz tremor sinusoid
    std::uint64_t seed = 0;
};

SpeakerProfile healthy_profile(std::uint64_t seed);
SpeakerProfile patient_profile(std::uint64_t seed);

struct EmotionProfile {
    Emotion label = Emotion::neutral;
    double f0_mean_hz = 0.0;  // within [0.5, 2.0]
    double f0_std_hz = 0.0;
    double harmonic_ratios[3] = {1.0, 0.0, 0.0};  // non-increasing after the first
};

// Simulator defaults; separable but not trivially so.
EmotionProfile emotion_profile(Emotion label);

// ---------------------------------------------------------------------------

Vocabulary make_vocab(std::uint64_t seed, std::size_t v);

void write_vocab(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary read_vocab(const std::filesystem::path& path);

struct Utterance {
    std::vector<double> samples;
    double duration_s = 0.0;
};

Utterance synth_utterance(int word_id, const Vocabulary& vocab, const SpeakerProfile& profile,
                          std::uint32_t sample_rate_hz, std::uint64_t seed);

struct PulseOptions {
    std::optional<double> snr_db = 25.0;  // nullopt -> noiseless
    bool respiratory_am = true;
};

std::vector<double> synth_pulse(const EmotionProfile& profile, double duration_s,
                                std::uint32_t sample_rate_hz, std::uint64_t seed,
                                const PulseOptions& options = {});

// out = pulse + kappa * speech, elementwise.
std::vector<double> inject_crosstalk(const std::vector<double>& pulse,
                                     const std::vector<double>& speech, double kappa);

// Script items play left to right. SetEmotion switches the pulse generator's
// state from the current time onward (sessions start neutral).
struct SayWord {
    int word_id = 0;
};
struct Pause {
    double seconds = 0.0;
};
struct NodPair {};
struct SetEmotion {
    Emotion label = Emotion::neutral;
};
using ScriptItem = std::variant<SayWord, Pause, NodPair, SetEmotion>;
using Script = std::vector<ScriptItem>;

struct SessionConfig {
    std::uint32_t sample_rate_hz = 500;
    std::optional<double> noise_snr_db = 20.0;  // nullopt -> noiseless
    double kappa = 0.01;                        // speech-to-pulse crosstalk fraction
    bool pulse_channel = true;
};

SignalStream synth_session(const Script& script, const Vocabulary& vocab,
                           const SpeakerProfile& profile, const SessionConfig& config,
                           std::uint64_t seed);

// ---------------------------------------------------------------------------

struct TokenDataset {
    std::uint16_t n = 0;
    std::uint32_t token_len = 0;
    std::uint16_t class_count = 0;
    std::vector<float> values;  // sample_count x (n * token_len), row major
    std::vector<std::uint16_t> labels;
    std::uint64_t provenance_hash = 0;      // generator config hash, in-memory only
    std::vector<std::uint32_t> group_ids;   // per-sample utterance/session group, in-memory only

    std::size_t sample_count() const { return labels.size(); }
    std::size_t sample_len() const { return static_cast<std::size_t>(n) * token_len; }
    const float* sample(std::size_t i) const { return values.data() + i * sample_len(); }
};

// tokenize -> label -> assemble over all sessions, concatenated in order.
// class_count 0 means infer from the max label seen.
TokenDataset build_token_dataset(const std::vector<SignalStream>& sessions, std::size_t n,
                                 std::size_t class_count = 0);

void append_session(TokenDataset& ds, const SignalStream& session, std::uint32_t group_id);

// .itds container with CRC32 footer; round trips are bit exact.
void write_dataset(const std::filesystem::path& path, const TokenDataset& ds);
TokenDataset read_dataset(const std::filesystem::path& path);

}  // namespace ithroat::synthdata
