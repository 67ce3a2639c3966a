#include "ithroat/agents.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

namespace ithroat::agents {

const WordConstraint& ConstraintTable::at(int word_id) const {
    auto it = words.find(word_id);
    require(it != words.end(), Errc::not_in_vocabulary,
            "no constraints for word " + std::to_string(word_id));
    return it->second;
}

ConstraintTable build_constraint_table(const Vocabulary& vocab) {
    ConstraintTable table;
    for (const auto& w : vocab.words) {
        WordConstraint c;
        c.expected_tokens = static_cast<std::size_t>(
            std::max<long long>(1, std::llround(w.nominal_duration_s / sigcore::kTokenSeconds)));
        c.min_run = std::max<std::size_t>(2, (c.expected_tokens + 1) / 2);
        table.words[w.id] = c;
    }
    return table;
}

std::string DecodedSentence::text() const {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

std::vector<int> smooth_labels(const std::vector<int>& seq) {
    if (seq.size() < 3) return seq;
    std::vector<int> out = seq;
    for (std::size_t i = 1; i + 1 < seq.size(); ++i) {
        const int a = seq[i - 1], b = seq[i], c = seq[i + 1];
        if (a == b || b == c) continue;
        if (a == c) out[i] = a;  // majority of the two ends; three-way ties keep the centre
    }
    return out;
}

std::vector<WordRun> merge_tokens(const std::vector<int>& seq, const ConstraintTable& table) {
    const auto smoothed = smooth_labels(seq);
    struct RawRun {
        int label;
        std::size_t begin, end;
    };
    std::vector<RawRun> runs;
    for (std::size_t i = 0; i < smoothed.size();) {
        const int label = smoothed[i];
        std::size_t j = i;
        while (j + 1 < smoothed.size() && smoothed[j + 1] == label) ++j;
        if (label > 0) runs.push_back({label, i, j});
        i = j + 1;
    }

    // bridge same-label runs separated by at most max_blank_gap tokens; runs
    // swallowed by a bridge are consumed
    std::vector<RawRun> merged;
    std::size_t i = 0;
    while (i < runs.size()) {
        RawRun cur = runs[i];
        std::size_t last_absorbed = i;
        for (std::size_t j = i + 1; j < runs.size(); ++j) {
            if (runs[j].begin > cur.end + table.max_blank_gap + 1) break;
            if (runs[j].label == cur.label) {
                cur.end = runs[j].end;
                last_absorbed = j;
            }
        }
        merged.push_back(cur);
        i = last_absorbed + 1;
    }

    std::vector<WordRun> out;
    for (const auto& r : merged) {
        std::size_t min_run = 2;
        if (auto it = table.words.find(r.label); it != table.words.end())
            min_run = it->second.min_run;
        if (r.end - r.begin + 1 < min_run) continue;
        out.push_back({r.label, r.begin, r.end});
    }
    return out;
}

DecodedSentence synthesize_sentence(const std::vector<WordRun>& runs, const Vocabulary& vocab) {
    DecodedSentence s;
    for (const auto& r : runs) {
        const auto& w = vocab.word(r.word_id);
        s.words.push_back(w.text);
        s.word_ids.push_back(r.word_id);
        s.spans.push_back(r);
        s.end_timestamp_s = static_cast<double>(r.end + 1) * sigcore::kTokenSeconds;
    }
    return s;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

double wer(const std::vector<std::string>& reference,
           const std::vector<std::string>& hypothesis) {
    require(!reference.empty(), Errc::empty_reference, "reference word list is empty");
    const std::size_t n = reference.size();
    const std::size_t m = hypothesis.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[m]) / static_cast<double>(n);
}

double ser(const std::vector<std::string>& references,
           const std::vector<std::string>& hypotheses) {
    require(references.size() == hypotheses.size(), Errc::length_mismatch,
            "reference/hypothesis sentence counts differ");
    if (references.empty()) return 0.0;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < references.size(); ++i)
        if (split_words(references[i]) != split_words(hypotheses[i])) ++wrong;
    return static_cast<double>(wrong) / static_cast<double>(references.size());
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string lowercase(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// lowercase word tokens with punctuation stripped from the edges
std::vector<std::string> content_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    for (auto& w : split_words(text)) {
        std::size_t b = 0, e = w.size();
        while (b < e && !std::isalnum(static_cast<unsigned char>(w[b]))) ++b;
        while (e > b && !std::isalnum(static_cast<unsigned char>(w[e - 1]))) --e;
        if (e > b) tokens.push_back(lowercase(w.substr(b, e - b)));
    }
    return tokens;
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

const char* kInstructionCore =
    "You convert decoded token label sequences from a silent speech interface into the "
    "sentence the speaker intended. Labels are integers; 0 marks blank tokens between "
    "words, other ids map to vocabulary words. Merge consecutive identical labels into "
    "one word, repair isolated blanks inside a word, drop spurious single-token labels, "
    "and output only the final sentence.";

const char* kInstructionDetail1 =
    "Most recognition errors sit at word boundaries: the first or last token of a word "
    "may be misread as blank, or a blank next to a word may take the word's label. Treat "
    "a gap of a single blank token inside an otherwise steady run as part of the word. "
    "Never invent words that lack a sustained run of tokens.";

const char* kInstructionDetail2 =
    "A word whose nominal duration predicts many tokens should appear as a proportionally "
    "long run. When a run is much shorter than expected for that word, treat it as noise "
    "unless neighbouring context supports it. When two different labels alternate inside "
    "one region, prefer the label with the longer total run.";

const char* kInstructionDetail3 =
    "Return the words in time order, separated by single spaces, without punctuation or "
    "commentary. Do not reorder words. Do not output label numbers. If no label run "
    "survives the cleanup rules, return an empty line. Keep the output strictly on one "
    "line.";

}  // namespace

PromptSpec default_prompt_spec(const Vocabulary& vocab, std::uint64_t seed) {
    PromptSpec spec;
    spec.instruction = kInstructionCore;
    Rng rng(mix_seed(seed, 0x505333));
    for (std::size_t e = 0; e < 5; ++e) {
        PromptExample ex;
        const int a = static_cast<int>(1 + rng.below(vocab.size()));
        const int b = static_cast<int>(1 + rng.below(vocab.size()));
        // a boundary error pattern: leading blank flip inside the first word
        ex.labels = {0, a, 0, a, a, 0, 0, b, b, b, 0};
        ex.corrected = vocab.word(a).text + " " + vocab.word(b).text;
        spec.examples.push_back(std::move(ex));
    }
    return spec;
}

Prompt build_tsa_prompt(const std::vector<int>& labels, const PromptSpec& spec,
                        const ConstraintTable& table, const Vocabulary& vocab) {
    require(spec.budget_words > 0, Errc::invalid_argument, "prompt budget must be positive");

    auto count_words = [](const std::string& text) { return split_words(text).size(); };

    std::ostringstream payload;
    payload << "Token labels: ";
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i) payload << ' ';
        payload << labels[i];
    }
    payload << "\nSentence:";

    const std::size_t payload_words = count_words(payload.str());
    std::size_t used = count_words(spec.instruction) + payload_words;
    require(used <= spec.budget_words, Errc::budget_error,
            "instruction and token payload need " + std::to_string(used) +
                " words, budget is " + std::to_string(spec.budget_words));

    std::ostringstream text;
    text << spec.instruction << "\n";
    for (const char* detail : {kInstructionDetail1, kInstructionDetail2, kInstructionDetail3}) {
        const std::size_t extra = count_words(detail);
        if (used + extra > spec.budget_words) break;
        text << "\n" << detail << "\n";
        used += extra;
    }

    if (spec.include_examples && !spec.examples.empty()) {
        std::ostringstream block;
        block << "\nExamples:\n";
        for (const auto& ex : spec.examples) {
            block << "Labels:";
            for (int l : ex.labels) block << ' ' << l;
            block << " -> " << ex.corrected << "\n";
        }
        const std::size_t extra = count_words(block.str());
        if (used + extra <= spec.budget_words) {
            text << block.str();
            used += extra;
        }
    }

    if (spec.include_constraints) {
        std::ostringstream block;
        block << "\nTypical token counts per word:\n";
        for (const auto& [word_id, c] : table.words)
            block << vocab.word(word_id).text << " (id " << word_id << "): "
                  << c.expected_tokens << " tokens\n";
        block << "Runs shorter than half the typical count are noise; blanks of length "
              << table.max_blank_gap << " inside a word are gaps to bridge.\n";
        const std::size_t extra = count_words(block.str());
        if (used + extra <= spec.budget_words) {
            text << block.str();
            used += extra;
        }
    }

    text << "\n" << payload.str();
    Prompt prompt;
    prompt.text = text.str();
    prompt.word_count = count_words(prompt.text);
    return prompt;
}

// ---------------------------------------------------------------------------

EndpointConfig EndpointConfig::from_env() {
    EndpointConfig cfg;
    if (const char* v = std::getenv("IT_LLM_ENDPOINT")) cfg.endpoint = v;
    if (const char* v = std::getenv("IT_LLM_MODEL")) cfg.model = v;
    if (const char* v = std::getenv("IT_LLM_KEY")) cfg.api_key = v;
    cfg.offline = true;
    if (const char* v = std::getenv("IT_OFFLINE")) cfg.offline = std::string(v) != "0";
    return cfg;
}

std::string llm_complete(const std::string& prompt, const EndpointConfig& config) {
    require(!config.offline, Errc::offline_error,
            "networking disabled (IT_OFFLINE); use the deterministic agent path");
    require(!config.endpoint.empty(), Errc::invalid_argument, "no LLM endpoint configured");

    std::string url = config.endpoint;
    const std::string scheme = "http://";
    require(url.rfind(scheme, 0) == 0, Errc::invalid_argument,
            "only http:// endpoints are supported");
    url = url.substr(scheme.size());
    std::string host_port = url;
    std::string path = "/";
    if (auto slash = url.find('/'); slash != std::string::npos) {
        host_port = url.substr(0, slash);
        path = url.substr(slash);
    }
    std::string host = host_port;
    int port = 80;
    if (auto colon = host_port.find(':'); colon != std::string::npos) {
        host = host_port.substr(0, colon);
        port = std::stoi(host_port.substr(colon + 1));
    }

    nlohmann::json body;
    body["model"] = config.model;
    body["messages"] = {{{"role", "user"}, {"content", prompt}}};

    httplib::Client client(host, port);
    client.set_connection_timeout(static_cast<int>(config.timeout_s));
    client.set_read_timeout(static_cast<int>(config.timeout_s));
    httplib::Headers headers;
    if (!config.api_key.empty())
        headers.emplace("Authorization", "Bearer " + config.api_key);

    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) fail(Errc::transport_error, "request failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        fail(Errc::transport_error, "HTTP status " + std::to_string(res->status));
    try {
        auto j = nlohmann::json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::protocol_error, std::string("malformed completion response: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

const char* time_of_day_name(TimeOfDay t) {
    switch (t) {
        case TimeOfDay::morning: return "morning";
        case TimeOfDay::afternoon: return "afternoon";
        case TimeOfDay::evening: return "evening";
        case TimeOfDay::night: return "night";
    }
    return "morning";
}

const char* weather_name(Weather w) {
    switch (w) {
        case Weather::sunny: return "sunny";
        case Weather::cloudy: return "cloudy";
        case Weather::rainy: return "rainy";
        case Weather::snowy: return "snowy";
        case Weather::windy: return "windy";
    }
    return "sunny";
}

TimeOfDay time_of_day_from_name(const std::string& name) {
    for (auto t : {TimeOfDay::morning, TimeOfDay::afternoon, TimeOfDay::evening,
                   TimeOfDay::night})
        if (name == time_of_day_name(t)) return t;
    fail(Errc::invalid_argument, "unknown time of day '" + name + "'");
}

Weather weather_from_name(const std::string& name) {
    for (auto w : {Weather::sunny, Weather::cloudy, Weather::rainy, Weather::snowy,
                   Weather::windy})
        if (name == weather_name(w)) return w;
    fail(Errc::invalid_argument, "unknown weather '" + name + "'");
}

const std::vector<std::string>& emotion_lexicon(Emotion e) {
    static const std::vector<std::string> neutral{};
    static const std::vector<std::string> relieved{
        "what a relief", "i feel relieved", "thank goodness", "i can relax now"};
    static const std::vector<std::string> frustrated{
        "i feel frustrated", "this is frustrating", "i am upset", "how frustrating"};
    switch (e) {
        case Emotion::neutral: return neutral;
        case Emotion::relieved: return relieved;
        case Emotion::frustrated: return frustrated;
    }
    return neutral;
}

namespace {

std::string capitalized(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

std::string template_expansion(const DecodedSentence& basic, const ContextRecord& ctx) {
    std::ostringstream out;
    if (ctx.emotion != Emotion::neutral) {
        const auto& lexicon = emotion_lexicon(ctx.emotion);
        const auto pick = fnv1a(basic.text()) % lexicon.size();
        out << capitalized(lexicon[pick]) << ". ";
    }
    out << capitalized(basic.text()) << ".";
    auto loc_words = split_words(ctx.location);
    if (loc_words.size() > 3) loc_words.resize(3);
    out << " This " << time_of_day_name(ctx.time_of_day) << ", " << weather_name(ctx.weather)
        << " weather, at " << (loc_words.empty() ? std::string("home") : join(loc_words))
        << ".";
    return out.str();
}

std::string build_sea_prompt(const DecodedSentence& basic, const ContextRecord& ctx) {
    std::ostringstream out;
    out << "You expand terse decoded speech into one natural sentence for the speaker.\n"
        << "Think step by step:\n"
        << "1. Read the decoded words and identify the subject, verb and object.\n"
        << "2. Note the speaker's emotional state and the surroundings.\n"
        << "3. Write one fluent sentence that keeps every decoded word in order and\n"
        << "   weaves in the emotion and context naturally.\n"
        << "Decoded words: " << basic.text() << "\n"
        << "Emotion: " << sigcore::emotion_name(ctx.emotion) << "\n"
        << "Time of day: " << time_of_day_name(ctx.time_of_day) << "\n"
        << "Weather: " << weather_name(ctx.weather) << "\n"
        << "Location: " << ctx.location << "\n"
        << "Expanded sentence:";
    return out.str();
}

}  // namespace

std::string expand_sentence(const DecodedSentence& basic, const ContextRecord& ctx,
                            ExpandMode mode, const EndpointConfig& endpoint) {
    require(!basic.words.empty(), Errc::empty_input, "cannot expand an empty sentence");
    if (mode == ExpandMode::llm) {
        try {
            return llm_complete(build_sea_prompt(basic, ctx), endpoint);
        } catch (const Error&) {
            // deterministic fallback on offline/transport/protocol errors
        }
    }
    return template_expansion(basic, ctx);
}

ExpansionCheck check_expansion(const DecodedSentence& basic, const std::string& expanded,
                               const ContextRecord& ctx) {
    ExpansionCheck result;
    const auto tokens = content_tokens(expanded);

    // (a) every basic word, in order, as whole words
    std::size_t pos = 0;
    for (const auto& word : basic.words) {
        const std::string needle = lowercase(word);
        bool found = false;
        for (std::size_t i = pos; i < tokens.size(); ++i)
            if (tokens[i] == needle) {
                pos = i + 1;
                found = true;
                break;
            }
        if (!found) {
            const bool anywhere =
                std::find(tokens.begin(), tokens.end(), needle) != tokens.end();
            result.violations.push_back(
                (anywhere ? "order-violation: " : "missing-content-word: ") + word);
        }
    }

    // (b) emotion phrase present iff emotion != neutral
    const std::string haystack = join(tokens);
    auto phrase_present = [&](Emotion e) {
        for (const auto& phrase : emotion_lexicon(e))
            if (haystack.find(phrase) != std::string::npos) return true;
        return false;
    };
    if (ctx.emotion == Emotion::neutral) {
        if (phrase_present(Emotion::relieved) || phrase_present(Emotion::frustrated))
            result.violations.push_back("unexpected-emotion-phrase");
    } else if (!phrase_present(ctx.emotion)) {
        result.violations.push_back("missing-emotion-phrase");
    }

    // (c) length bound
    if (tokens.size() > 4 * basic.words.size() + 12)
        result.violations.push_back("length-exceeded");

    result.pass = result.violations.empty();
    return result;
}

}  // namespace ithroat::agents
