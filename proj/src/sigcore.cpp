#include "ithroat/sigcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ithroat::sigcore {

const char* emotion_name(Emotion e) {
    switch (e) {
        case Emotion::neutral: return "neutral";
        case Emotion::relieved: return "relieved";
        case Emotion::frustrated: return "frustrated";
    }
    return "neutral";
}

Emotion emotion_from_name(const std::string& name) {
    if (name == "neutral") return Emotion::neutral;
    if (name == "relieved") return Emotion::relieved;
    if (name == "frustrated") return Emotion::frustrated;
    fail(Errc::invalid_argument, "unknown emotion '" + name + "'");
}

bool SignalStream::has_channel(ChannelId id) const {
    return std::find(channels.begin(), channels.end(), id) != channels.end();
}

const std::vector<double>& SignalStream::channel(ChannelId id) const {
    for (std::size_t i = 0; i < channels.size(); ++i)
        if (channels[i] == id) return samples[i];
    fail(Errc::channel_not_found, std::string("stream has no channel ") +
                                      (id == ChannelId::speech ? "speech" : "pulse"));
}

std::vector<double>& SignalStream::channel(ChannelId id) {
    return const_cast<std::vector<double>&>(static_cast<const SignalStream*>(this)->channel(id));
}

void SignalStream::validate() const {
    require(sample_rate_hz > 0, Errc::invalid_argument, "sample_rate_hz must be positive");
    require(channels.size() == samples.size(), Errc::shape_error,
            "channel id / sample vector count mismatch");
    for (const auto& s : samples)
        require(s.size() == length(), Errc::shape_error, "channels must have equal length");
    const double dur = duration_s();
    for (const auto& a : annotations) {
        require(a.start_s < a.end_s, Errc::invalid_annotations, "annotation start >= end");
        require(a.start_s >= 0.0 && a.end_s <= dur + 1e-9, Errc::invalid_annotations,
                "annotation outside [0, duration]");
    }
}

std::vector<Token> tokenize(const SignalStream& stream, ChannelId channel) {
    const auto& data = stream.channel(channel);
    require(!data.empty(), Errc::empty_input, "empty stream");
    const std::size_t tl = token_len_samples(stream.sample_rate_hz);
    require(tl > 0, Errc::invalid_argument, "sample rate too low for 144 ms tokens");
    const std::size_t count = data.size() / tl;
    std::vector<Token> tokens;
    tokens.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Token t;
        t.index = i;
        t.values.assign(data.begin() + static_cast<std::ptrdiff_t>(i * tl),
                        data.begin() + static_cast<std::ptrdiff_t>((i + 1) * tl));
        tokens.push_back(std::move(t));
    }
    return tokens;
}

std::vector<int> label_tokens(const std::vector<Token>& tokens,
                              const std::vector<IntervalAnnotation>& annotations,
                              std::uint32_t sample_rate_hz) {
    const std::size_t tl = token_len_samples(sample_rate_hz);
    // word intervals in sample units, sorted; order of the input list never matters
    struct WordSpan {
        std::int64_t begin, end;
        int word_id;
    };
    std::vector<WordSpan> words;
    for (const auto& a : annotations) {
        if (a.kind != IntervalAnnotation::Kind::word) continue;
        WordSpan w;
        w.begin = std::llround(a.start_s * sample_rate_hz);
        w.end = std::llround(a.end_s * sample_rate_hz);
        w.word_id = a.word_id;
        words.push_back(w);
    }
    std::sort(words.begin(), words.end(),
              [](const WordSpan& a, const WordSpan& b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < words.size(); ++i)
        require(words[i].begin >= words[i - 1].end, Errc::invalid_annotations,
                "word annotations overlap");

    std::vector<int> labels(tokens.size(), 0);
    std::size_t w = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::int64_t t0 = static_cast<std::int64_t>(tokens[i].index * tl);
        const std::int64_t t1 = t0 + static_cast<std::int64_t>(tl);
        while (w < words.size() && words[w].end <= t0) ++w;
        for (std::size_t j = w; j < words.size() && words[j].begin < t1; ++j) {
            const std::int64_t overlap =
                std::min(t1, words[j].end) - std::max(t0, words[j].begin);
            if (2 * overlap > static_cast<std::int64_t>(tl)) {
                labels[i] = words[j].word_id;
                break;
            }
        }
    }
    return labels;
}

void apply_labels(std::vector<Token>& tokens, const std::vector<IntervalAnnotation>& annotations,
                  std::uint32_t sample_rate_hz) {
    auto labels = label_tokens(tokens, annotations, sample_rate_hz);
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i].label = labels[i];
}

std::vector<TokenSample> assemble_samples(const std::vector<Token>& tokens, std::size_t n) {
    require(n >= 1, Errc::invalid_argument, "token count per sample must be >= 1");
    std::vector<TokenSample> out;
    if (tokens.empty()) return out;
    const std::size_t tl = tokens.front().values.size();
    out.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        TokenSample s;
        s.tokens.reserve(n);
        for (std::size_t k = 0; k < n; ++k) {
            const std::ptrdiff_t src =
                static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(n - 1 - k);
            if (src < 0) {
                Token pad;
                pad.values.assign(tl, 0.0);
                pad.index = 0;
                pad.label = 0;
                s.tokens.push_back(std::move(pad));
            } else {
                s.tokens.push_back(tokens[static_cast<std::size_t>(src)]);
            }
        }
        s.label = tokens[i].label;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<double> decimate(const std::vector<double>& input, std::size_t factor) {
    require(factor >= 1, Errc::invalid_argument, "decimation factor must be >= 1");
    if (factor == 1) return input;
    std::vector<double> out(input.size() / factor);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < factor; ++k) acc += input[i * factor + k];
        out[i] = acc / static_cast<double>(factor);
    }
    return out;
}

SignalStream decimate_channel(const SignalStream& stream, ChannelId channel, std::size_t factor) {
    require(factor >= 1, Errc::invalid_argument, "decimation factor must be >= 1");
    require(stream.sample_rate_hz % factor == 0, Errc::invalid_argument,
            "sample rate not divisible by decimation factor");
    SignalStream out;
    out.sample_rate_hz = stream.sample_rate_hz / static_cast<std::uint32_t>(factor);
    out.channels = {channel};
    out.samples = {decimate(stream.channel(channel), factor)};
    out.annotations = stream.annotations;
    return out;
}

std::vector<PulseWindow> window_pulse(const SignalStream& stream, double hop_s) {
    const auto& data = stream.channel(ChannelId::pulse);
    require(hop_s > 0.0, Errc::invalid_argument, "hop must be positive");
    const std::size_t win = static_cast<std::size_t>(
        std::llround(kPulseWindowSeconds * stream.sample_rate_hz));
    const std::size_t hop =
        static_cast<std::size_t>(std::llround(hop_s * stream.sample_rate_hz));
    require(hop > 0, Errc::invalid_argument, "hop shorter than one sample");

    std::vector<PulseWindow> windows;
    for (std::size_t start = 0; start + win <= data.size(); start += hop) {
        PulseWindow w;
        w.start_s = static_cast<double>(start) / stream.sample_rate_hz;
        w.values.assign(data.begin() + static_cast<std::ptrdiff_t>(start),
                        data.begin() + static_cast<std::ptrdiff_t>(start + win));
        const double w0 = w.start_s;
        const double w1 = w0 + kPulseWindowSeconds;
        double best_overlap = 0.0;
        for (const auto& a : stream.annotations) {
            if (a.kind != IntervalAnnotation::Kind::emotion) continue;
            const double overlap = std::min(w1, a.end_s) - std::max(w0, a.start_s);
            if (overlap > best_overlap) {
                best_overlap = overlap;
                w.emotion_label = a.emotion;
            }
        }
        windows.push_back(std::move(w));
    }
    return windows;
}

// ---------------------------------------------------------------------------
// .itss: magic "ITSS", version u16=1, sample_rate u32, channel_count u8,
// channel ids u8 each, sample_count u64, interleaved float32, CRC32 footer.
// Annotations go to "<path>.ann" as tab-separated (kind, start, end, payload).

static std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".ann";
    return p;
}

void write_stream(const std::filesystem::path& path, const SignalStream& stream) {
    stream.validate();
    ByteWriter w;
    w.str("ITSS");
    w.u16(1);
    w.u32(stream.sample_rate_hz);
    w.u8(static_cast<std::uint8_t>(stream.channels.size()));
    for (auto c : stream.channels) w.u8(static_cast<std::uint8_t>(c));
    w.u64(stream.length());
    for (std::size_t i = 0; i < stream.length(); ++i)
        for (std::size_t c = 0; c < stream.channels.size(); ++c)
            w.f32(static_cast<float>(stream.samples[c][i]));
    const std::uint32_t crc = crc32(w.buffer().data(), w.size());
    w.u32(crc);
    write_file(path, w.buffer());

    std::ostringstream ann;
    for (const auto& a : stream.annotations) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f\t%.6f", a.start_s, a.end_s);
        switch (a.kind) {
            case IntervalAnnotation::Kind::word:
                ann << "word\t" << buf << '\t' << a.word_id << '\n';
                break;
            case IntervalAnnotation::Kind::nod:
                ann << "nod\t" << buf << "\t\n";
                break;
            case IntervalAnnotation::Kind::emotion:
                ann << "emotion\t" << buf << '\t' << emotion_name(a.emotion) << '\n';
                break;
        }
    }
    std::ofstream out(sidecar_path(path), std::ios::trunc);
    require(out.good(), Errc::io_error, "cannot write " + sidecar_path(path).string());
    out << ann.str();
}

SignalStream read_stream(const std::filesystem::path& path) {
    ByteReader r(read_file(path));
    require(r.remaining() >= 4, Errc::format_error, "file too short for magic");
    require(r.str(4) == "ITSS", Errc::format_error, "bad magic, expected ITSS");
    const std::uint16_t version = r.u16();
    require(version == 1, Errc::format_error, "unsupported ITSS version");

    SignalStream s;
    s.sample_rate_hz = r.u32();
    const std::uint8_t channel_count = r.u8();
    for (std::uint8_t i = 0; i < channel_count; ++i) {
        const std::uint8_t id = r.u8();
        require(id <= 1, Errc::format_error, "unknown channel id");
        s.channels.push_back(static_cast<ChannelId>(id));
    }
    const std::uint64_t sample_count = r.u64();
    require(r.remaining() == sample_count * channel_count * 4 + 4, Errc::corrupt_file,
            "payload size mismatch");
    s.samples.assign(channel_count, std::vector<double>(sample_count));
    for (std::uint64_t i = 0; i < sample_count; ++i)
        for (std::uint8_t c = 0; c < channel_count; ++c) s.samples[c][i] = r.f32();
    const std::uint32_t stored = r.u32();
    const std::uint32_t computed = crc32(r.buffer().data(), r.buffer().size() - 4);
    require(stored == computed, Errc::corrupt_file, "CRC mismatch");

    std::ifstream ann(sidecar_path(path));
    if (ann.good()) {
        std::string line;
        while (std::getline(ann, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string kind, start, end, payload;
            std::getline(ls, kind, '\t');
            std::getline(ls, start, '\t');
            std::getline(ls, end, '\t');
            std::getline(ls, payload, '\t');
            IntervalAnnotation a;
            a.start_s = std::stod(start);
            a.end_s = std::stod(end);
            if (kind == "word") {
                a.kind = IntervalAnnotation::Kind::word;
                a.word_id = std::stoi(payload);
            } else if (kind == "nod") {
                a.kind = IntervalAnnotation::Kind::nod;
            } else if (kind == "emotion") {
                a.kind = IntervalAnnotation::Kind::emotion;
                a.emotion = emotion_from_name(payload);
            } else {
                fail(Errc::format_error, "unknown annotation kind '" + kind + "'");
            }
            s.annotations.push_back(a);
        }
    }
    s.validate();
    return s;
}

}  // namespace ithroat::sigcore
