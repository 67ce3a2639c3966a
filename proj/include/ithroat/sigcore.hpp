#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ithroat/common.hpp"

namespace ithroat::sigcore {

// Tokens are 144 ms of signal; the atomic classification unit.
inline constexpr double kTokenSeconds = 0.144;
// Pulse windows for emotion decoding cover exactly 5 s.
inline constexpr double kPulseWindowSeconds = 5.0;

enum class ChannelId : std::uint8_t { speech = 0, pulse = 1 };
enum class Emotion : std::uint8_t { neutral = 0, relieved = 1, frustrated = 2 };

const char* emotion_name(Emotion e);
Emotion emotion_from_name(const std::string& name);

struct IntervalAnnotation {
    enum class Kind : std::uint8_t { word = 0, nod = 1, emotion = 2 };
    Kind kind = Kind::word;
    double start_s = 0.0;
    double end_s = 0.0;
    int word_id = 0;                       // kind == word
    Emotion emotion = Emotion::neutral;    // kind == emotion
};

// Multi-channel fixed-rate sample stream plus ground-truth interval
// annotations. All channels share one length and rate.
struct SignalStream {
    std::uint32_t sample_rate_hz = 0;
    std::vector<ChannelId> channels;
    std::vector<std::vector<double>> samples;  // parallel to channels
    std::vector<IntervalAnnotation> annotations;

    std::size_t length() const { return samples.empty() ? 0 : samples.front().size(); }
    double duration_s() const {
        return sample_rate_hz ? static_cast<double>(length()) / sample_rate_hz : 0.0;
    }
    bool has_channel(ChannelId id) const;
    const std::vector<double>& channel(ChannelId id) const;  // channel-not-found
    std::vector<double>& channel(ChannelId id);

    void validate() const;  // invariant check: equal lengths, rate > 0, annotations in range
};

struct Token {
    std::vector<double> values;  // exactly token_len_samples
    std::size_t index = 0;       // ordinal position in the stream
    int label = 0;               // 0 = blank, 1..V = words
};

// N tokens in stream order: N-1 context + the current token (last).
struct TokenSample {
    std::vector<Token> tokens;
    int label = 0;

    const Token& current() const { return tokens.back(); }
};

struct PulseWindow {
    std::vector<double> values;  // exactly 5 s at the window's rate
    std::optional<Emotion> emotion_label;
    double start_s = 0.0;
};

inline std::size_t token_len_samples(std::uint32_t sample_rate_hz) {
    return static_cast<std::size_t>(std::llround(kTokenSeconds * sample_rate_hz));
}

// Non-overlapping consecutive 144 ms tokens; a trailing remainder shorter
// than one token is discarded.
std::vector<Token> tokenize(const SignalStream& stream, ChannelId channel);

// Label rule: a token takes the word id of the word interval covering more
// than half of its span, else 0 (blank). Word annotations must not overlap.
std::vector<int> label_tokens(const std::vector<Token>& tokens,
                              const std::vector<IntervalAnnotation>& annotations,
                              std::uint32_t sample_rate_hz);

// Convenience: apply label_tokens in place on the tokens' label fields.
void apply_labels(std::vector<Token>& tokens, const std::vector<IntervalAnnotation>& annotations,
                  std::uint32_t sample_rate_hz);

// One TokenSample per token; sample i holds tokens i-n+1..i with missing
// leading positions padded with all-zero blank tokens.
std::vector<TokenSample> assemble_samples(const std::vector<Token>& tokens, std::size_t n);

// Mean decimation: output[i] = mean(input[i*factor .. (i+1)*factor)).
std::vector<double> decimate(const std::vector<double>& input, std::size_t factor);

// Single-channel stream with one channel mean-decimated (annotations carry
// over unchanged; sample rate divides by factor).
SignalStream decimate_channel(const SignalStream& stream, ChannelId channel, std::size_t factor);

// 5 s windows over the pulse channel at the given hop, labeled from the
// emotion annotation with the largest overlap. Streams shorter than 5 s
// produce an empty result.
std::vector<PulseWindow> window_pulse(const SignalStream& stream, double hop_s);

// .itss container (interleaved float32) + ".ann" sidecar with the
// tab-separated annotation records.
void write_stream(const std::filesystem::path& path, const SignalStream& stream);
SignalStream read_stream(const std::filesystem::path& path);

}  // namespace ithroat::sigcore
