#include "ithroat/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace ithroat::runtime {

using sigcore::ChannelId;
using sigcore::SignalStream;

const char* event_kind_name(TranscriptEvent::Kind kind) {
    switch (kind) {
        case TranscriptEvent::Kind::word: return "word";
        case TranscriptEvent::Kind::sentence: return "sentence";
        case TranscriptEvent::Kind::expanded_sentence: return "expanded_sentence";
        case TranscriptEvent::Kind::mode_switch: return "mode_switch";
        case TranscriptEvent::Kind::emotion: return "emotion";
    }
    return "word";
}

Pipeline make_pipeline(tinynet::Model token_model,
                       std::optional<emotion::EmotionModel> emotion_model,
                       synthdata::Vocabulary vocab, const PipelineConfig& config) {
    Pipeline p{std::move(token_model), std::move(emotion_model), std::move(vocab), {}, config};
    p.constraints = agents::build_constraint_table(p.vocab);
    require(p.config.blank_boundary_tokens >= 1, Errc::config_error,
            "blank_boundary_tokens must be >= 1");
    require(p.config.latency_budget_s > 0.0, Errc::config_error,
            "latency budget must be positive");
    require(p.config.n >= 1, Errc::config_error, "n must be >= 1");
    require(p.token_model.config.classes == p.vocab.size() + 1, Errc::config_error,
            "token model classes must equal vocabulary size + 1");
    return p;
}

Pipeline load_pipeline(const PipelineConfig& config) {
    tinynet::Model token_model = tinynet::load_checkpoint(config.token_checkpoint);
    std::optional<emotion::EmotionModel> emo;
    if (!config.emotion_checkpoint.empty())
        emo = emotion::load_emotion_model(config.emotion_checkpoint);
    auto vocab = synthdata::read_vocab(config.vocab_path);
    return make_pipeline(std::move(token_model), std::move(emo), std::move(vocab), config);
}

// ---------------------------------------------------------------------------

std::vector<double> detect_double_nod(const std::vector<double>& speech,
                                      std::uint32_t sample_rate_hz, const NodParams& params) {
    std::vector<double> events;
    if (speech.empty() || sample_rate_hz == 0) return events;
    const std::size_t n = speech.size();

    // moving-average envelope keeps the near-DC nod bumps and knocks down the
    // oscillating speech band before thresholding
    const std::size_t win =
        std::max<std::size_t>(1, static_cast<std::size_t>(params.envelope_s * sample_rate_hz));
    std::vector<double> env(n, 0.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += std::abs(speech[i]);
        if (i >= win) acc -= std::abs(speech[i - win]);
        env[i] = acc / static_cast<double>(std::min(i + 1, win));
    }

    // Running 95th percentile of the envelope as the background reference.
    // Samples enter the pool one second late and samples inside detected
    // gesture neighbourhoods never enter it, so the rare high-amplitude nods
    // cannot inflate their own threshold.
    const std::size_t block =
        std::max<std::size_t>(1, static_cast<std::size_t>(0.1 * sample_rate_hz));
    const std::size_t lag = sample_rate_hz;  // 1 s
    const std::size_t warmup =
        std::max<std::size_t>(1, static_cast<std::size_t>(params.warmup_s * sample_rate_hz));
    const std::size_t back =
        static_cast<std::size_t>(0.35 * sample_rate_hz);  // exclusion before a peak
    const std::size_t ahead =
        static_cast<std::size_t>(0.6 * sample_rate_hz);  // exclusion after a peak

    std::vector<double> pool;
    pool.reserve(n);
    std::vector<std::size_t> peak_samples;
    std::vector<double> peaks;
    std::size_t refractory_until = 0;
    double threshold = std::numeric_limits<double>::infinity();

    auto excluded = [&](std::size_t j) {
        for (auto it = peak_samples.rbegin(); it != peak_samples.rend(); ++it) {
            if (*it + ahead < j) break;
            if (j + back >= *it && j <= *it + ahead) return true;
        }
        return false;
    };

    for (std::size_t start = 0; start < n; start += block) {
        const std::size_t end = std::min(n, start + block);
        // lagged pool insertion
        const std::size_t ins_end = end > lag ? end - lag : 0;
        const std::size_t ins_start = start > lag ? start - lag : 0;
        for (std::size_t j = ins_start; j < ins_end; ++j)
            if (!excluded(j)) pool.push_back(env[j]);
        if (pool.size() >= warmup) {
            std::vector<double> copy = pool;
            const std::size_t q =
                std::min(copy.size() - 1,
                         static_cast<std::size_t>(0.95 * static_cast<double>(copy.size())));
            std::nth_element(copy.begin(), copy.begin() + static_cast<std::ptrdiff_t>(q),
                             copy.end());
            threshold = params.threshold_mult * copy[q];
        }
        if (!std::isfinite(threshold) || threshold <= 0.0) continue;
        // crests: strict local maxima over a +/- 0.15 s window, above threshold,
        // at least one refractory apart
        const std::size_t w = std::max<std::size_t>(1, static_cast<std::size_t>(0.15 * sample_rate_hz));
        for (std::size_t i = start; i < end; ++i) {
            if (i < refractory_until || env[i] < threshold) continue;
            bool crest = true;
            const std::size_t lo = i > w ? i - w : 0;
            const std::size_t hi = std::min(n, i + w + 1);
            for (std::size_t j = lo; j < i && crest; ++j)
                if (env[j] > env[i]) crest = false;
            for (std::size_t j = i + 1; j < hi && crest; ++j)
                if (env[j] >= env[i]) crest = false;  // plateaus keep their first index
            if (!crest) continue;
            peak_samples.push_back(i);
            peaks.push_back(static_cast<double>(i) / sample_rate_hz);
            refractory_until =
                i + static_cast<std::size_t>(params.refractory_s * sample_rate_hz);
        }
    }

    // greedy left-to-right pairing
    std::size_t i = 0;
    while (i + 1 < peaks.size()) {
        const double gap = peaks[i + 1] - peaks[i];
        if (gap >= params.min_gap_s && gap <= params.max_gap_s) {
            events.push_back(peaks[i + 1]);
            i += 2;
        } else {
            i += 1;
        }
    }
    return events;
}

// ---------------------------------------------------------------------------

namespace {

struct SentenceState {
    std::vector<int> labels;
    std::size_t start_token = 0;
    bool seen_word = false;
    std::size_t blank_run = 0;
    double pending_latency = 0.0;  // compute time accumulated after the last word token
};

}  // namespace

std::vector<TranscriptEvent> run_pipeline(const Pipeline& pipeline,
                                          const sigcore::SignalStream& stream) {
    const auto& cfg = pipeline.config;
    const std::uint32_t rate = stream.sample_rate_hz;
    const std::size_t tl = sigcore::token_len_samples(rate);
    require(cfg.n * tl == pipeline.token_model.config.input_len, Errc::config_error,
            "stream rate incompatible with the token checkpoint input length");
    const double token_s = static_cast<double>(tl) / rate;

    auto tokens = sigcore::tokenize(stream, ChannelId::speech);

    // nod gestures: mode switches; overlapping tokens are forced blank so the
    // gesture is not decoded as speech
    auto nod_times = detect_double_nod(stream.channel(ChannelId::speech), rate, cfg.nod);
    std::vector<char> suppressed(tokens.size(), 0);
    for (double t : nod_times) {
        const double lo = t - 1.2, hi = t + 0.2;
        const std::size_t first =
            static_cast<std::size_t>(std::max(0.0, std::floor(lo / token_s)));
        for (std::size_t i = first; i < tokens.size(); ++i) {
            const double t0 = static_cast<double>(i) * token_s;
            if (t0 > hi) break;
            if (t0 + token_s > lo) suppressed[i] = 1;
        }
    }

    // emotion windows from the decimated pulse channel
    struct EmotionWindowResult {
        double end_s;
        sigcore::Emotion label;
    };
    std::vector<EmotionWindowResult> emotion_results;
    if (pipeline.emotion_model && stream.has_channel(ChannelId::pulse)) {
        require(rate % emotion::kWorkingRateHz == 0, Errc::config_error,
                "stream rate must be divisible by the 50 Hz pulse working rate");
        auto pulse50 =
            sigcore::decimate_channel(stream, ChannelId::pulse, rate / emotion::kWorkingRateHz);
        auto windows = sigcore::window_pulse(pulse50, sigcore::kPulseWindowSeconds);
        for (const auto& w : windows) {
            emotion::PulseWindow clean = w;
            clean.emotion_label.reset();
            const auto result = emotion::classify_emotion(*pipeline.emotion_model, clean);
            emotion_results.push_back(
                {w.start_s + sigcore::kPulseWindowSeconds, result.label});
        }
    }

    std::vector<TranscriptEvent> events;
    Mode mode = cfg.mode;
    agents::ContextRecord ctx = cfg.context;
    agents::EndpointConfig endpoint =
        cfg.use_llm ? agents::EndpointConfig::from_env() : agents::EndpointConfig{};

    std::size_t next_nod = 0;
    std::size_t next_emotion = 0;
    SentenceState sentence;
    std::vector<double> ring(cfg.n * tl, 0.0);  // oldest-first flattened context window

    auto flush_sentence = [&](std::size_t boundary_token) {
        if (!sentence.seen_word) return;
        const auto t0 = std::chrono::steady_clock::now();
        auto runs = agents::merge_tokens(sentence.labels, pipeline.constraints);
        for (auto& r : runs) {
            r.begin += sentence.start_token;
            r.end += sentence.start_token;
        }
        if (!runs.empty()) {
            auto decoded = agents::synthesize_sentence(runs, pipeline.vocab);
            for (std::size_t i = 0; i < runs.size(); ++i) {
                TranscriptEvent w;
                w.kind = TranscriptEvent::Kind::word;
                w.payload = decoded.words[i];
                w.stream_time_s = static_cast<double>(runs[i].end + 1) * token_s;
                events.push_back(std::move(w));
            }
            const double boundary_time = static_cast<double>(boundary_token + 1) * token_s;
            TranscriptEvent s;
            s.kind = TranscriptEvent::Kind::sentence;
            s.payload = decoded.text();
            s.stream_time_s = boundary_time;
            const double agent_s = std::chrono::duration<double>(
                                       std::chrono::steady_clock::now() - t0)
                                       .count();
            s.wall_latency_s = sentence.pending_latency + agent_s;
            events.push_back(s);
            if (mode == Mode::expanded) {
                const auto t1 = std::chrono::steady_clock::now();
                TranscriptEvent x;
                x.kind = TranscriptEvent::Kind::expanded_sentence;
                x.payload = agents::expand_sentence(
                    decoded, ctx,
                    cfg.use_llm ? agents::ExpandMode::llm : agents::ExpandMode::template_mode,
                    endpoint);
                x.stream_time_s = boundary_time;
                x.wall_latency_s =
                    s.wall_latency_s +
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t1)
                        .count();
                events.push_back(std::move(x));
            }
        }
        sentence = SentenceState{};
    };

    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto tick = std::chrono::steady_clock::now();
        const double token_end = static_cast<double>(i + 1) * token_s;

        while (next_emotion < emotion_results.size() &&
               emotion_results[next_emotion].end_s <= token_end) {
            ctx.emotion = emotion_results[next_emotion].label;
            TranscriptEvent e;
            e.kind = TranscriptEvent::Kind::emotion;
            e.payload = sigcore::emotion_name(ctx.emotion);
            e.stream_time_s = emotion_results[next_emotion].end_s;
            events.push_back(std::move(e));
            ++next_emotion;
        }
        while (next_nod < nod_times.size() && nod_times[next_nod] <= token_end) {
            mode = mode == Mode::direct ? Mode::expanded : Mode::direct;
            TranscriptEvent e;
            e.kind = TranscriptEvent::Kind::mode_switch;
            e.payload = mode == Mode::direct ? "direct" : "expanded";
            e.stream_time_s = nod_times[next_nod];
            events.push_back(std::move(e));
            ++next_nod;
        }

        std::copy(ring.begin() + static_cast<std::ptrdiff_t>(tl), ring.end(), ring.begin());
        std::copy(tokens[i].values.begin(), tokens[i].values.end(), ring.end() - tl);

        int label = 0;
        if (!suppressed[i]) {
            tinynet::Batch b{1, ring.size(), ring};
            auto logits = tinynet::forward(pipeline.token_model, b);
            std::size_t best = 0;
            for (std::size_t k = 1; k < logits.size(); ++k)
                if (logits[k] > logits[best]) best = k;
            label = static_cast<int>(best);
        }

        if (sentence.labels.empty()) sentence.start_token = i;
        sentence.labels.push_back(label);
        const double tick_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - tick).count();
        if (label != 0) {
            sentence.seen_word = true;
            sentence.blank_run = 0;
            sentence.pending_latency = 0.0;
        } else {
            sentence.blank_run += 1;
            sentence.pending_latency += tick_s;
        }
        if (sentence.seen_word && sentence.blank_run >= cfg.blank_boundary_tokens)
            flush_sentence(i);
    }
    // end of stream closes any open sentence
    if (!tokens.empty()) flush_sentence(tokens.size() - 1);

    std::stable_sort(events.begin(), events.end(),
                     [](const TranscriptEvent& a, const TranscriptEvent& b) {
                         return a.stream_time_s < b.stream_time_s;
                     });
    return events;
}

std::vector<TranscriptEvent> run_pipeline_file(const Pipeline& pipeline,
                                               const std::filesystem::path& itss_path) {
    return run_pipeline(pipeline, sigcore::read_stream(itss_path));
}

LatencyStats measure_latency(const std::vector<TranscriptEvent>& events,
                             const PipelineConfig& config) {
    LatencyStats stats;
    stats.decision_delay_s =
        static_cast<double>(config.blank_boundary_tokens) * sigcore::kTokenSeconds;
    for (const auto& e : events)
        if (e.kind == TranscriptEvent::Kind::sentence)
            stats.per_sentence.push_back(e.wall_latency_s);
    if (stats.per_sentence.empty()) return stats;
    double sum = 0.0;
    for (double v : stats.per_sentence) sum += v;
    stats.mean = sum / static_cast<double>(stats.per_sentence.size());
    std::vector<double> sorted = stats.per_sentence;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(0.95 * static_cast<double>(sorted.size())));
    stats.p95 = sorted[std::min(sorted.size() - 1, rank == 0 ? 0 : rank - 1)];
    return stats;
}

std::string transcript_to_jsonl(const std::vector<TranscriptEvent>& events,
                                bool include_wall_latency) {
    std::string out;
    for (const auto& e : events) {
        nlohmann::json j;
        j["kind"] = event_kind_name(e.kind);
        j["payload"] = e.payload;
        j["stream_time_s"] = e.stream_time_s;
        if (include_wall_latency)
            j["wall_latency_s"] = e.wall_latency_s;
        else
            j["wall_latency_s"] = nullptr;
        out += j.dump();
        out += '\n';
    }
    return out;
}

void write_transcript(const std::filesystem::path& path,
                      const std::vector<TranscriptEvent>& events, bool include_wall_latency) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    require(out.good(), Errc::io_error, "cannot write " + path.string());
    out << transcript_to_jsonl(events, include_wall_latency);
}

}  // namespace ithroat::runtime
