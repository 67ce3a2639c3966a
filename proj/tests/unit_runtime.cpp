#include <doctest.h>

#include <cmath>

#include "ithroat/runtime.hpp"

using namespace ithroat;
using namespace ithroat::runtime;
using sigcore::ChannelId;
using sigcore::Emotion;

namespace {

// model that always predicts blank, for deterministic plumbing tests
tinynet::Model blank_model(std::size_t input_len, std::size_t classes) {
    tinynet::ArchConfig arch;
    arch.input_len = input_len;
    arch.stem_width = 4;
    arch.blocks = {{4, 1}, {6, 2}};
    arch.classes = classes;
    arch.role = "blank";
    auto model = tinynet::build_model(arch, 1);
    for (auto& [name, t] : model.tensors)
        for (auto& v : t.data) v = 0.0;
    model.tensor("head.b").data[0] = 1.0;
    return model;
}

// nods are rare events against a long background; keep them a small fraction
// of the stream so the running percentile tracks the background
std::vector<double> bump_train(std::uint32_t rate, const std::vector<double>& centers,
                               double amp) {
    std::vector<double> v(static_cast<std::size_t>(rate) * 30, 0.0);
    const std::size_t width = static_cast<std::size_t>(0.3 * rate);
    for (double c : centers) {
        const std::size_t start = static_cast<std::size_t>((c - 0.15) * rate);
        for (std::size_t i = 0; i < width && start + i < v.size(); ++i)
            v[start + i] += amp * std::sin(M_PI * static_cast<double>(i) / width);
    }
    return v;
}

}  // namespace

TEST_SUITE("runtime") {

TEST_CASE("detect_double_nod pairs bumps greedily") {
    const std::uint32_t rate = 250;
    NodParams params;

    SUBCASE("two bumps 0.7 s apart make one event") {
        auto v = bump_train(rate, {2.0, 2.7}, 3.0);
        // noise floor so the percentile has signal
        Rng rng(4);
        for (auto& x : v) x += 0.02 * rng.normal(0.0, 1.0);
        auto events = detect_double_nod(v, rate, params);
        REQUIRE(events.size() == 1);
        CHECK(events[0] == doctest::Approx(2.7).epsilon(0.05));
    }
    SUBCASE("a single bump makes no event") {
        auto v = bump_train(rate, {2.0}, 3.0);
        Rng rng(4);
        for (auto& x : v) x += 0.02 * rng.normal(0.0, 1.0);
        CHECK(detect_double_nod(v, rate, params).empty());
    }
    SUBCASE("three bumps at 0.4 s gaps pair greedily into one event") {
        auto v = bump_train(rate, {2.0, 2.4, 2.8}, 3.0);
        Rng rng(4);
        for (auto& x : v) x += 0.02 * rng.normal(0.0, 1.0);
        auto events = detect_double_nod(v, rate, params);
        CHECK(events.size() == 1);
    }
    SUBCASE("nod pairs from the synthesizer are found amid speech") {
        auto vocab = synthdata::make_vocab(3, 5);
        auto profile = synthdata::healthy_profile(9);
        synthdata::SessionConfig cfg;
        cfg.sample_rate_hz = rate;
        cfg.noise_snr_db = 20.0;
        cfg.pulse_channel = false;
        synthdata::Script script{synthdata::Pause{1.0}};
        for (int round = 0; round < 3; ++round)
            for (int w = 1; w <= 5; ++w) {
                script.push_back(synthdata::SayWord{w});
                script.push_back(synthdata::Pause{0.5});
            }
        script.push_back(synthdata::NodPair{});
        script.push_back(synthdata::Pause{1.0});
        script.push_back(synthdata::SayWord{3});
        script.push_back(synthdata::Pause{1.0});
        auto stream = synthdata::synth_session(script, vocab, profile, cfg, 21);
        auto events = detect_double_nod(stream.channel(ChannelId::speech), rate, params);
        CHECK(events.size() == 1);
    }
}

TEST_CASE("run_pipeline emits no sentences for a wordless stream and is replayable") {
    const std::uint32_t rate = 250;
    auto vocab = synthdata::make_vocab(5, 4);
    PipelineConfig cfg;
    cfg.n = 4;
    auto pipeline = make_pipeline(blank_model(4 * 36, 5), std::nullopt, vocab, cfg);

    sigcore::SignalStream stream;
    stream.sample_rate_hz = rate;
    stream.channels = {ChannelId::speech};
    Rng rng(5);
    stream.samples.resize(1);
    for (int i = 0; i < 250 * 6; ++i) stream.samples[0].push_back(0.01 * rng.normal(0.0, 1.0));

    auto events = run_pipeline(pipeline, stream);
    for (const auto& e : events) {
        CHECK(e.kind != TranscriptEvent::Kind::sentence);
        CHECK(e.kind != TranscriptEvent::Kind::word);
    }
    auto again = run_pipeline(pipeline, stream);
    CHECK(transcript_to_jsonl(events) == transcript_to_jsonl(again));
}

TEST_CASE("transcript events are ordered and serialize stably") {
    std::vector<TranscriptEvent> events;
    TranscriptEvent a;
    a.kind = TranscriptEvent::Kind::word;
    a.payload = "hello";
    a.stream_time_s = 1.0;
    a.wall_latency_s = 0.5;
    TranscriptEvent b;
    b.kind = TranscriptEvent::Kind::sentence;
    b.payload = "hello there";
    b.stream_time_s = 2.0;
    b.wall_latency_s = 0.125;
    events = {a, b};

    auto jsonl = transcript_to_jsonl(events);
    CHECK(jsonl ==
          "{\"kind\":\"word\",\"payload\":\"hello\",\"stream_time_s\":1.0,\"wall_latency_s\":null}\n"
          "{\"kind\":\"sentence\",\"payload\":\"hello there\",\"stream_time_s\":2.0,"
          "\"wall_latency_s\":null}\n");
    auto with_latency = transcript_to_jsonl(events, true);
    CHECK(with_latency.find("0.5") != std::string::npos);
}

TEST_CASE("measure_latency reports the structural decision delay separately") {
    PipelineConfig cfg;
    cfg.blank_boundary_tokens = 7;
    std::vector<TranscriptEvent> events;
    for (double v : {0.01, 0.02, 0.03}) {
        TranscriptEvent e;
        e.kind = TranscriptEvent::Kind::sentence;
        e.wall_latency_s = v;
        events.push_back(e);
    }
    auto stats = measure_latency(events, cfg);
    CHECK(stats.decision_delay_s == doctest::Approx(1.008));
    CHECK(stats.per_sentence.size() == 3);
    CHECK(stats.mean == doctest::Approx(0.02));
    CHECK(stats.p95 == doctest::Approx(0.03));

    auto empty = measure_latency({}, cfg);
    CHECK(empty.per_sentence.empty());
    CHECK(empty.decision_delay_s == doctest::Approx(1.008));
}

}  // TEST_SUITE
