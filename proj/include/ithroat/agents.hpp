#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ithroat/sigcore.hpp"
#include "ithroat/synthdata.hpp"

namespace ithroat::agents {

using sigcore::Emotion;
using synthdata::Vocabulary;

// Per-word decoding constraints derived from nominal word durations.
struct WordConstraint {
    std::size_t expected_tokens = 1;  // round(nominal_duration_s / 0.144)
    std::size_t min_run = 2;          // max(2, ceil(expected_tokens / 2))
};

struct ConstraintTable {
    std::map<int, WordConstraint> words;
    std::size_t max_blank_gap = 1;

    const WordConstraint& at(int word_id) const;
};

ConstraintTable build_constraint_table(const Vocabulary& vocab);

struct WordRun {
    int word_id = 0;
    std::size_t begin = 0;  // token indices, inclusive
    std::size_t end = 0;    // inclusive
};

struct DecodedSentence {
    std::vector<std::string> words;
    std::vector<int> word_ids;
    std::vector<WordRun> spans;
    double end_timestamp_s = 0.0;

    std::string text() const;
};

// Width-3 sliding majority filter; three-way ties keep the centre value,
// endpoints pass through.
std::vector<int> smooth_labels(const std::vector<int>& seq);

// Token Synthesis Agent core: smooth, collapse runs, bridge gaps up to
// max_blank_gap, drop runs shorter than min_run.
std::vector<WordRun> merge_tokens(const std::vector<int>& seq, const ConstraintTable& table);

DecodedSentence synthesize_sentence(const std::vector<WordRun>& runs, const Vocabulary& vocab);

// (S + D + I) / |reference| via minimal edit distance; may exceed 1.
double wer(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis);
// Fraction of sentence pairs with any word-level difference.
double ser(const std::vector<std::string>& references, const std::vector<std::string>& hypotheses);

std::vector<std::string> split_words(const std::string& text);

// ---------------------------------------------------------------------------

struct PromptExample {
    std::vector<int> labels;
    std::string corrected;
};

struct PromptSpec {
    std::string instruction;
    std::vector<PromptExample> examples;  // default five
    bool include_examples = true;
    bool include_constraints = true;
    std::size_t budget_words = 400;
};

PromptSpec default_prompt_spec(const Vocabulary& vocab, std::uint64_t seed = 0);

struct Prompt {
    std::string text;
    std::size_t word_count = 0;
};

Prompt build_tsa_prompt(const std::vector<int>& labels, const PromptSpec& spec,
                        const ConstraintTable& table, const Vocabulary& vocab);

// ---------------------------------------------------------------------------

struct EndpointConfig {
    std::string endpoint;  // e.g. http://host:port/v1/chat/completions
    std::string model;
    std::string api_key;
    bool offline = true;  // IT_OFFLINE=1 is the default
    double timeout_s = 30.0;

    static EndpointConfig from_env();
};

// Single chat-completion POST; offline-error when networking is disabled,
// transport-error on timeouts/non-2xx, protocol-error on malformed payloads.
// Never retries.
std::string llm_complete(const std::string& prompt, const EndpointConfig& config);

// ---------------------------------------------------------------------------

enum class TimeOfDay { morning, afternoon, evening, night };
enum class Weather { sunny, cloudy, rainy, snowy, windy };

const char* time_of_day_name(TimeOfDay t);
const char* weather_name(Weather w);
TimeOfDay time_of_day_from_name(const std::string& name);
Weather weather_from_name(const std::string& name);

struct ContextRecord {
    Emotion emotion = Emotion::neutral;
    TimeOfDay time_of_day = TimeOfDay::morning;
    Weather weather = Weather::sunny;
    std::string location = "home";
};

enum class ExpandMode { template_mode, llm };

// Fixed lexicon, four phrases per non-neutral class.
const std::vector<std::string>& emotion_lexicon(Emotion e);

// Sentence Expansion Agent. Template mode is deterministic; llm mode builds a
// chain-of-thought prompt and falls back to the template on any error.
std::string expand_sentence(const DecodedSentence& basic, const ContextRecord& ctx,
                            ExpandMode mode, const EndpointConfig& endpoint = EndpointConfig{});

struct ExpansionCheck {
    bool pass = false;
    std::vector<std::string> violations;
};

// Content preservation: every basic word present in order, emotion phrase
// present iff emotion != neutral, length <= 4x basic + 12 words.
ExpansionCheck check_expansion(const DecodedSentence& basic, const std::string& expanded,
                               const ContextRecord& ctx);

}  // namespace ithroat::agents
