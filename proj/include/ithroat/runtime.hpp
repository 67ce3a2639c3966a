#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ithroat/agents.hpp"
#include "ithroat/emotion.hpp"
#include "ithroat/sigcore.hpp"
#include "ithroat/synthdata.hpp"
#include "ithroat/tinynet.hpp"
#include "ithroat/tokendec.hpp"

namespace ithroat::runtime {

struct NodParams {
    double threshold_mult = 2.0;   // times the running 95th percentile
    double refractory_s = 0.2;
    double min_gap_s = 0.2;        // peak-to-peak pairing window
    double max_gap_s = 1.5;
    double envelope_s = 0.2;       // moving-average envelope ahead of the detector
    double warmup_s = 1.0;         // no detection until the percentile has history
};

enum class Mode { direct, expanded };

struct PipelineConfig {
    std::filesystem::path token_checkpoint;
    std::filesystem::path emotion_checkpoint;  // empty -> no emotion decoding
    std::filesystem::path vocab_path;
    std::size_t n = 15;
    std::size_t blank_boundary_tokens = 7;
    NodParams nod;
    Mode mode = Mode::direct;
    agents::ContextRecord context;
    double latency_budget_s = 1.0;
    std::uint64_t seed = 0;
    bool use_llm = false;  // template expansion unless explicitly enabled
};

struct TranscriptEvent {
    enum class Kind { word, sentence, expanded_sentence, mode_switch, emotion };
    Kind kind = Kind::word;
    std::string payload;
    double stream_time_s = 0.0;
    double wall_latency_s = 0.0;
};

const char* event_kind_name(TranscriptEvent::Kind kind);

// Models + vocab resolved from a PipelineConfig.
struct Pipeline {
    tinynet::Model token_model;
    std::optional<emotion::EmotionModel> emotion_model;
    synthdata::Vocabulary vocab;
    agents::ConstraintTable constraints;
    PipelineConfig config;
};

Pipeline load_pipeline(const PipelineConfig& config);

// Make a pipeline from in-memory parts (no files involved).
Pipeline make_pipeline(tinynet::Model token_model,
                       std::optional<emotion::EmotionModel> emotion_model,
                       synthdata::Vocabulary vocab, const PipelineConfig& config);

// Offline streaming decode: per token classify, sentence boundary after
// blank_boundary_tokens consecutive blanks, double nods toggle direct/expanded,
// emotion labels refresh per completed 5 s pulse window. Deterministic given
// (input, config, seed); events ordered by stream time.
std::vector<TranscriptEvent> run_pipeline(const Pipeline& pipeline,
                                          const sigcore::SignalStream& stream);
std::vector<TranscriptEvent> run_pipeline_file(const Pipeline& pipeline,
                                               const std::filesystem::path& itss_path);

// Double-nod event times (seconds of the second peak).
std::vector<double> detect_double_nod(const std::vector<double>& speech,
                                      std::uint32_t sample_rate_hz, const NodParams& params);

struct LatencyStats {
    std::vector<double> per_sentence;  // compute latency per sentence event
    double mean = 0.0;
    double p95 = 0.0;
    double decision_delay_s = 0.0;  // blank_boundary_tokens * 0.144, structural
};

LatencyStats measure_latency(const std::vector<TranscriptEvent>& events,
                             const PipelineConfig& config);

// JSON-lines transcript. wall_latency_s is written as null unless requested:
// measured latencies vary run to run and would break replay byte-identity.
std::string transcript_to_jsonl(const std::vector<TranscriptEvent>& events,
                                bool include_wall_latency = false);
void write_transcript(const std::filesystem::path& path,
                      const std::vector<TranscriptEvent>& events,
                      bool include_wall_latency = false);

}  // namespace ithroat::runtime
