#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "ithroat/agents.hpp"
#include "oracles.hpp"

using namespace ithroat;
using namespace ithroat::agents;
using synthdata::Vocabulary;
using synthdata::Word;

namespace {

Vocabulary tiny_vocab() {
    Vocabulary v;
    const char* texts[] = {"we", "go", "hospital", "water", "help"};
    const double durations[] = {0.42, 0.45, 0.82, 0.55, 0.48};
    for (int i = 0; i < 5; ++i) {
        Word w;
        w.id = i + 1;
        w.text = texts[i];
        w.nominal_duration_s = durations[i];
        v.words.push_back(w);
    }
    return v;
}

DecodedSentence sentence_of(const Vocabulary& vocab, std::vector<int> ids) {
    std::vector<WordRun> runs;
    std::size_t t = 0;
    for (int id : ids) {
        runs.push_back({id, t, t + 3});
        t += 6;
    }
    return synthesize_sentence(runs, vocab);
}

}  // namespace

TEST_SUITE("agents") {

TEST_CASE("constraint table derives token counts from durations") {
    auto table = build_constraint_table(tiny_vocab());
    CHECK(table.at(1).expected_tokens == 3);  // round(0.42 / 0.144)
    CHECK(table.at(3).expected_tokens == 6);  // round(0.82 / 0.144)
    CHECK(table.at(1).min_run == 2);
    CHECK(table.at(3).min_run == 3);
    CHECK(table.max_blank_gap == 1);
}

TEST_CASE("smooth_labels is a width-3 majority filter") {
    CHECK(smooth_labels({5, 0, 5}) == std::vector<int>{5, 5, 5});
    CHECK(smooth_labels({5, 5, 5}) == std::vector<int>{5, 5, 5});
    CHECK(smooth_labels({0, 5, 7}) == std::vector<int>{0, 5, 7});
    CHECK(smooth_labels({}) == std::vector<int>{});
    CHECK(smooth_labels({3, 3}) == std::vector<int>{3, 3});
}

TEST_CASE("merge_tokens collapses, bridges and prunes runs") {
    auto table = build_constraint_table(tiny_vocab());

    SUBCASE("separate runs stay separate") {
        auto runs = merge_tokens({0, 0, 1, 1, 1, 0, 2, 2, 2, 2, 0}, table);
        REQUIRE(runs.size() == 2);
        CHECK(runs[0].word_id == 1);
        CHECK(runs[0].begin == 2);
        CHECK(runs[0].end == 4);
        CHECK(runs[1].word_id == 2);
        CHECK(runs[1].begin == 6);
        CHECK(runs[1].end == 9);
    }
    SUBCASE("a single-token blank gap is bridged") {
        auto runs = merge_tokens({1, 1, 0, 1, 1}, table);
        REQUIRE(runs.size() == 1);
        CHECK(runs[0].begin == 0);
        CHECK(runs[0].end == 4);
    }
    SUBCASE("spurious single tokens are dropped") {
        CHECK(merge_tokens({0, 4, 0, 0}, table).empty());
    }
    SUBCASE("bridging also works when smoothing cannot repair the gap") {
        auto runs = merge_tokens({1, 1, 0, 0, 1, 1}, table);
        // gap of two exceeds max_blank_gap; two separate runs of length 2
        REQUIRE(runs.size() == 2);
    }
    SUBCASE("spans never overlap and stay ordered") {
        Rng rng(77);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<int> seq(40);
            for (auto& v : seq) v = static_cast<int>(rng.below(6));
            auto runs = merge_tokens(seq, table);
            for (std::size_t i = 0; i < runs.size(); ++i) {
                CHECK(runs[i].begin <= runs[i].end);
                if (i) CHECK(runs[i].begin > runs[i - 1].end);
            }
        }
    }
}

TEST_CASE("synthesize_sentence joins word texts in time order") {
    auto vocab = tiny_vocab();
    auto s = sentence_of(vocab, {1, 2, 3});
    CHECK(s.text() == "we go hospital");
    CHECK(s.end_timestamp_s == doctest::Approx((12 + 4) * 0.144));

    CHECK(synthesize_sentence({}, vocab).text().empty());
    try {
        synthesize_sentence({{9, 0, 3}}, vocab);
        FAIL("expected not-in-vocabulary");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::not_in_vocabulary);
    }
}

TEST_CASE("wer equals the edit-distance oracle") {
    CHECK(wer({"we", "go", "hospital"}, {"we", "go", "hospital"}) == 0.0);
    CHECK(wer({"we", "go", "hospital"}, {"we", "hospital"}) == doctest::Approx(1.0 / 3.0));
    CHECK(wer({"a", "b"}, {"x", "y", "z"}) == doctest::Approx(1.5));
    try {
        wer({}, {"x"});
        FAIL("expected empty-reference");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::empty_reference);
    }

    Rng rng(123);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::string> ref, hyp;
        const std::size_t n = 1 + rng.below(10);
        const std::size_t m = rng.below(11);
        for (std::size_t i = 0; i < n; ++i) ref.push_back(std::to_string(rng.below(8)));
        for (std::size_t j = 0; j < m; ++j) hyp.push_back(std::to_string(rng.below(8)));
        const double expect = static_cast<double>(oracles::edit_distance(ref, hyp)) /
                              static_cast<double>(n);
        CHECK(wer(ref, hyp) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("ser counts differing sentence pairs after whitespace normalization") {
    CHECK(ser({"a b", "c d"}, {"a b", "c d"}) == 0.0);
    CHECK(ser({"a", "b", "c", "d"}, {"a", "b", "c", "x"}) == doctest::Approx(0.25));
    CHECK(ser({"a  b "}, {" a b"}) == 0.0);
    try {
        ser({"a"}, {"a", "b"});
        FAIL("expected length-mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::length_mismatch);
    }
}

TEST_CASE("build_tsa_prompt respects its budget and flags") {
    auto vocab = tiny_vocab();
    auto table = build_constraint_table(vocab);
    auto spec = default_prompt_spec(vocab);
    std::vector<int> labels{0, 1, 1, 0, 2, 2, 2, 0};

    auto p400 = build_tsa_prompt(labels, spec, table, vocab);
    CHECK(p400.word_count <= 400);
    CHECK(p400.text.find("Examples:") != std::string::npos);
    CHECK(p400.text.find("token counts") != std::string::npos);

    auto again = build_tsa_prompt(labels, spec, table, vocab);
    CHECK(again.text == p400.text);

    spec.include_examples = false;
    auto no_examples = build_tsa_prompt(labels, spec, table, vocab);
    CHECK(no_examples.text.find("Examples:") == std::string::npos);

    spec.include_constraints = false;
    auto bare = build_tsa_prompt(labels, spec, table, vocab);
    CHECK(bare.text.find("token counts") == std::string::npos);

    for (std::size_t budget : {100u, 200u, 400u, 800u}) {
        PromptSpec s = default_prompt_spec(vocab);
        s.budget_words = budget;
        auto p = build_tsa_prompt(labels, s, table, vocab);
        CHECK(p.word_count <= budget);
    }

    spec.budget_words = 10;
    try {
        build_tsa_prompt(labels, spec, table, vocab);
        FAIL("expected budget-error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::budget_error);
    }
}

TEST_CASE("llm_complete is offline by default and maps transport failures") {
    EndpointConfig offline;
    offline.offline = true;
    try {
        llm_complete("hi", offline);
        FAIL("expected offline-error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::offline_error);
    }

    // local mock server: echo fixed text, then a 500
    httplib::Server server;
    server.Post("/v1/chat/completions", [](const httplib::Request& req, httplib::Response& res) {
        if (req.body.find("fail") != std::string::npos) {
            res.status = 500;
            return;
        }
        res.set_content(R"({"choices":[{"message":{"content":"mocked reply"}}]})",
                        "application/json");
    });
    server.Post("/broken", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("not json", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    EndpointConfig cfg;
    cfg.offline = false;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.model = "mock";
    cfg.api_key = "key";
    CHECK(llm_complete("hello", cfg) == "mocked reply");
    try {
        llm_complete("please fail", cfg);
        FAIL("expected transport-error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::transport_error);
    }
    EndpointConfig broken = cfg;
    broken.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/broken";
    try {
        llm_complete("x", broken);
        FAIL("expected protocol-error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::protocol_error);
    }
    server.stop();
    worker.join();
}

TEST_CASE("template expansion keeps content and passes its own validator") {
    auto vocab = tiny_vocab();
    auto basic = sentence_of(vocab, {1, 2, 3});

    ContextRecord ctx;
    ctx.emotion = sigcore::Emotion::frustrated;
    ctx.time_of_day = TimeOfDay::morning;
    ctx.weather = Weather::rainy;
    ctx.location = "home";

    auto expanded = expand_sentence(basic, ctx, ExpandMode::template_mode);
    auto check = check_expansion(basic, expanded, ctx);
    CHECK(check.pass);
    CHECK(expanded.find("rainy") != std::string::npos);
    CHECK(expand_sentence(basic, ctx, ExpandMode::template_mode) == expanded);

    SUBCASE("neutral emotion carries no lexicon phrase") {
        ContextRecord neutral = ctx;
        neutral.emotion = sigcore::Emotion::neutral;
        auto text = expand_sentence(basic, neutral, ExpandMode::template_mode);
        for (auto e : {sigcore::Emotion::relieved, sigcore::Emotion::frustrated})
            for (const auto& phrase : emotion_lexicon(e))
                CHECK(text.find(phrase) == std::string::npos);
        CHECK(check_expansion(basic, text, neutral).pass);
    }
    SUBCASE("llm mode falls back to the template offline") {
        EndpointConfig offline;
        offline.offline = true;
        auto text = expand_sentence(basic, ctx, ExpandMode::llm, offline);
        CHECK(text == expanded);
    }
    SUBCASE("empty sentences cannot be expanded") {
        DecodedSentence empty;
        try {
            expand_sentence(empty, ctx, ExpandMode::template_mode);
            FAIL("expected empty-input");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::empty_input);
        }
    }
}

TEST_CASE("template expansion satisfies the validator over the whole context grid") {
    auto vocab = tiny_vocab();
    for (int ids = 0; ids < 3; ++ids) {
        auto basic = sentence_of(vocab, ids == 0   ? std::vector<int>{4}
                                        : ids == 1 ? std::vector<int>{1, 2, 3}
                                                   : std::vector<int>{5, 4, 3, 2, 1});
        for (auto emotion : {sigcore::Emotion::neutral, sigcore::Emotion::relieved,
                             sigcore::Emotion::frustrated})
            for (auto tod : {TimeOfDay::morning, TimeOfDay::afternoon, TimeOfDay::evening,
                             TimeOfDay::night})
                for (auto weather : {Weather::sunny, Weather::cloudy, Weather::rainy,
                                     Weather::snowy, Weather::windy}) {
                    ContextRecord ctx;
                    ctx.emotion = emotion;
                    ctx.time_of_day = tod;
                    ctx.weather = weather;
                    ctx.location = "the garden";
                    auto text = expand_sentence(basic, ctx, ExpandMode::template_mode);
                    auto result = check_expansion(basic, text, ctx);
                    if (!result.pass)
                        for (const auto& v : result.violations) MESSAGE(v << ": " << text);
                    CHECK(result.pass);
                }
    }
}

TEST_CASE("check_expansion flags missing words, order swaps and length blowups") {
    auto vocab = tiny_vocab();
    auto basic = sentence_of(vocab, {1, 2, 3});
    ContextRecord ctx;  // neutral

    auto dropped = check_expansion(basic, "We go somewhere. This morning, sunny weather.", ctx);
    CHECK(!dropped.pass);
    bool missing = false;
    for (const auto& v : dropped.violations)
        if (v.find("missing-content-word") != std::string::npos) missing = true;
    CHECK(missing);

    auto swapped = check_expansion(basic, "Hospital go we, this morning.", ctx);
    CHECK(!swapped.pass);
    bool order = false;
    for (const auto& v : swapped.violations)
        if (v.find("order-violation") != std::string::npos) order = true;
    CHECK(order);

    std::string bloated = "we go hospital";
    for (int i = 0; i < 30; ++i) bloated += " and more words keep arriving here";
    auto long_check = check_expansion(basic, bloated, ctx);
    CHECK(!long_check.pass);

    auto phantom = check_expansion(basic, "What a relief. We go hospital.", ctx);
    CHECK(!phantom.pass);  // neutral context must not carry a lexicon phrase
}

}  // TEST_SUITE
